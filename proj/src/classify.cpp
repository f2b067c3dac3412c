#include "rrgcn/classify.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>

namespace rrgcn {

namespace {

// Standardised double copy of the feature rows.
MatD standardise(const MatF& x, const VecD& mean, const VecD& scale) {
    MatD out = x.cast<double>();
    out.rowwise() -= mean.transpose();
    out.array().rowwise() /= scale.transpose().array();
    return out;
}

// Row-wise softmax of logits, in place.
void softmax_rows(MatD& z) {
    for (Eigen::Index i = 0; i < z.rows(); ++i) {
        double m = z.row(i).maxCoeff();
        z.row(i) = (z.row(i).array() - m).exp();
        z.row(i) /= z.row(i).sum();
    }
}

double cross_entropy(const MatD& proba, const std::vector<std::uint32_t>& y) {
    double loss = 0.0;
    for (Eigen::Index i = 0; i < proba.rows(); ++i)
        loss -= std::log(std::max(proba(i, y[std::size_t(i)]), 1e-15));
    return loss / double(proba.rows());
}

MatD forward(const MatD& x, const MatD& w, const VecD& b) {
    MatD z = x * w.transpose();
    z.rowwise() += b.transpose();
    softmax_rows(z);
    return z;
}

}  // namespace

ClassifierModel train_classifier(const MatF& x_train, const std::vector<std::uint32_t>& y_train,
                                 const MatF& x_val, const std::vector<std::uint32_t>& y_val,
                                 std::uint32_t class_count, const TrainOptions& opts) {
    if (class_count < 2) throw DataError("train_classifier: need at least 2 classes");
    if (x_train.rows() != Eigen::Index(y_train.size()) ||
        x_val.rows() != Eigen::Index(y_val.size()))
        throw DataError("train_classifier: feature/label row mismatch");
    {
        std::uint32_t first = y_train.empty() ? 0 : y_train[0];
        bool single = std::all_of(y_train.begin(), y_train.end(),
                                  [&](std::uint32_t y) { return y == first; });
        if (y_train.empty() || single)
            throw DataError("train_classifier: single-class training set");
    }

    const Eigen::Index d = x_train.cols();
    ClassifierModel model;
    model.feature_mean = x_train.cast<double>().colwise().mean();
    VecD var = (x_train.cast<double>().rowwise() - model.feature_mean.transpose())
                   .array()
                   .square()
                   .colwise()
                   .mean();
    model.feature_scale = (var.array() + 1e-12).sqrt();
    const MatD xt = standardise(x_train, model.feature_mean, model.feature_scale);
    const MatD xv = standardise(x_val, model.feature_mean, model.feature_scale);

    MatD w = MatD::Zero(class_count, d);
    VecD b = VecD::Zero(class_count);
    MatD one_hot = MatD::Zero(xt.rows(), class_count);
    for (Eigen::Index i = 0; i < xt.rows(); ++i) one_hot(i, y_train[std::size_t(i)]) = 1.0;

    MatD best_w = w;
    VecD best_b = b;
    double best_loss = std::numeric_limits<double>::infinity();
    std::uint32_t best_iter = 0;
    std::uint32_t stale_evals = 0;
    const double inv_n = 1.0 / double(xt.rows());

    std::uint32_t iter = 0;
    for (; iter < opts.max_iterations; ++iter) {
        MatD proba = forward(xt, w, b);
        if (!proba.allFinite()) {
            throw DataError("train_classifier: NaN loss at iteration " +
                            std::to_string(iter) + " (lr=" +
                            std::to_string(opts.learning_rate) + ")");
        }
        MatD delta = proba - one_hot;  // n x C
        MatD grad_w = inv_n * delta.transpose() * xt + opts.l2 * w;
        VecD grad_b = inv_n * delta.colwise().sum();
        w -= opts.learning_rate * grad_w;
        b -= opts.learning_rate * grad_b;

        if ((iter + 1) % opts.eval_every == 0 || iter + 1 == opts.max_iterations) {
            double val_loss = xv.rows() > 0 ? cross_entropy(forward(xv, w, b), y_val)
                                            : cross_entropy(forward(xt, w, b), y_train);
            if (val_loss < best_loss) {
                best_loss = val_loss;
                best_w = w;
                best_b = b;
                best_iter = iter + 1;
                stale_evals = 0;
            } else if (++stale_evals >= opts.patience) {
                break;
            }
        }
    }

    model.weights = std::move(best_w);
    model.bias = std::move(best_b);
    model.iterations = best_iter;
    model.best_val_logloss = best_loss;
    return model;
}

MatD predict_proba(const ClassifierModel& model, const MatF& x) {
    return forward(standardise(x, model.feature_mean, model.feature_scale), model.weights,
                   model.bias);
}

std::vector<std::uint32_t> predict(const ClassifierModel& model, const MatF& x) {
    MatD proba = predict_proba(model, x);
    std::vector<std::uint32_t> out(std::size_t(proba.rows()));
    for (Eigen::Index i = 0; i < proba.rows(); ++i) {
        Eigen::Index arg;
        proba.row(i).maxCoeff(&arg);
        out[std::size_t(i)] = std::uint32_t(arg);
    }
    return out;
}

EvalReport evaluate(const ClassifierModel& model, const MatF& x_test,
                    const std::vector<std::uint32_t>& y_test, std::uint32_t class_count) {
    EvalReport rep;
    rep.per_class_correct.assign(class_count, 0);
    rep.per_class_total.assign(class_count, 0);
    MatD proba = predict_proba(model, x_test);
    rep.logloss = cross_entropy(proba, y_test);
    std::size_t correct = 0;
    for (Eigen::Index i = 0; i < proba.rows(); ++i) {
        Eigen::Index arg;
        proba.row(i).maxCoeff(&arg);
        std::uint32_t truth = y_test[std::size_t(i)];
        ++rep.per_class_total[truth];
        if (std::uint32_t(arg) == truth) {
            ++correct;
            ++rep.per_class_correct[truth];
        }
    }
    rep.accuracy = y_test.empty() ? 0.0 : double(correct) / double(y_test.size());
    return rep;
}

// ---- grid search -----------------------------------------------------------

std::vector<std::uint32_t> stratified_folds(const std::vector<std::uint32_t>& y,
                                            std::uint32_t folds, std::uint64_t seed) {
    std::uint32_t classes = y.empty() ? 0 : *std::max_element(y.begin(), y.end()) + 1;
    std::vector<std::vector<std::uint32_t>> by_class(classes);
    for (std::uint32_t i = 0; i < y.size(); ++i) by_class[y[i]].push_back(i);

    SplitMix64 rng(seed);
    std::vector<std::uint32_t> fold_of(y.size(), 0);
    for (auto& members : by_class) {
        // Fisher-Yates with the pipeline PRNG, then round-robin assignment.
        for (std::size_t i = members.size(); i > 1; --i)
            std::swap(members[i - 1], members[rng.next() % i]);
        for (std::size_t i = 0; i < members.size(); ++i)
            fold_of[members[i]] = std::uint32_t(i % folds);
    }
    return fold_of;
}

namespace {

struct CellRun {
    double logloss;
    double accuracy;
};

MatF gather_rows(const MatF& emb, const std::vector<LabeledNode>& nodes,
                 const std::vector<NodeId>& old_to_new) {
    MatF out(Eigen::Index(nodes.size()), emb.cols());
    for (std::size_t i = 0; i < nodes.size(); ++i) {
        NodeId id = old_to_new.empty() ? nodes[i].node : old_to_new[nodes[i].node];
        if (id == PruneResult::kNoNode)
            throw DataError("grid_search: labelled node pruned away");
        out.row(Eigen::Index(i)) = emb.row(Eigen::Index(id));
    }
    return out;
}

std::vector<std::uint32_t> gather_labels(const std::vector<LabeledNode>& nodes) {
    std::vector<std::uint32_t> out(nodes.size());
    for (std::size_t i = 0; i < nodes.size(); ++i) out[i] = nodes[i].label;
    return out;
}

}  // namespace

GridSearchReport grid_search(const GraphIndex& g, const LabeledSplit& labels,
                             const GridSearchOptions& opts) {
    if (opts.layer_grid.empty() || opts.dim_grid.empty())
        throw DataError("grid_search: empty grid");
    const bool has_val = !labels.val.empty();

    std::unordered_set<NodeId> targets;
    for (const auto& ln : labels.train) targets.insert(ln.node);
    for (const auto& ln : labels.val) targets.insert(ln.node);
    for (const auto& ln : labels.test) targets.insert(ln.node);

    GridSearchReport report;
    for (std::uint32_t n : opts.layer_grid) {
        // Nodes further than n hops from any labelled node cannot influence
        // the target embeddings; prune once per layer-count row.
        PruneResult pruned = prune_khop(g, targets, n);
        for (std::uint32_t e : opts.dim_grid) {
            GridCell cell{n, e};
            std::uint64_t peak = estimate_memory(
                MemoryModel::RrgcnPeak,
                {.entities = pruned.graph.entity_count(), .dim = e});
            if (opts.memory_budget_bytes > 0 && peak > opts.memory_budget_bytes) {
                cell.over_budget = true;
                report.cells.push_back(cell);
                continue;
            }

            std::vector<CellRun> runs;
            if (has_val) {
                auto y_tr = gather_labels(labels.train);
                auto y_val = gather_labels(labels.val);
                for (std::uint64_t seed : opts.seeds) {
                    NodeEmbeddings emb = embed(
                        pruned.graph,
                        {.dim = e, .layers = n, .seed = seed, .ppv = opts.ppv});
                    MatF x_tr = gather_rows(emb.data, labels.train, pruned.old_to_new);
                    MatF x_val = gather_rows(emb.data, labels.val, pruned.old_to_new);
                    ClassifierModel m = train_classifier(x_tr, y_tr, x_val, y_val,
                                                         labels.class_count, opts.train);
                    EvalReport ev = evaluate(m, x_val, y_val, labels.class_count);
                    runs.push_back({ev.logloss, ev.accuracy});
                }
            } else {
                auto y_all = gather_labels(labels.train);
                auto folds = stratified_folds(y_all, opts.folds, opts.seeds.front());
                for (std::uint32_t fold = 0; fold < opts.folds; ++fold) {
                    std::uint64_t seed = opts.seeds[fold % opts.seeds.size()];
                    NodeEmbeddings emb = embed(
                        pruned.graph,
                        {.dim = e, .layers = n, .seed = seed, .ppv = opts.ppv});
                    std::vector<LabeledNode> tr, va;
                    for (std::size_t i = 0; i < labels.train.size(); ++i)
                        (folds[i] == fold ? va : tr).push_back(labels.train[i]);
                    MatF x_tr = gather_rows(emb.data, tr, pruned.old_to_new);
                    MatF x_va = gather_rows(emb.data, va, pruned.old_to_new);
                    ClassifierModel m =
                        train_classifier(x_tr, gather_labels(tr), x_va, gather_labels(va),
                                         labels.class_count, opts.train);
                    EvalReport ev =
                        evaluate(m, x_va, gather_labels(va), labels.class_count);
                    runs.push_back({ev.logloss, ev.accuracy});
                }
            }

            double mean_ll = 0.0, mean_acc = 0.0;
            for (const auto& r : runs) {
                mean_ll += r.logloss;
                mean_acc += r.accuracy;
            }
            mean_ll /= double(runs.size());
            mean_acc /= double(runs.size());
            double var = 0.0;
            for (const auto& r : runs) var += (r.logloss - mean_ll) * (r.logloss - mean_ll);
            cell.mean_logloss = mean_ll;
            cell.se_logloss =
                runs.size() > 1 ? std::sqrt(var / double(runs.size() - 1) /
                                            double(runs.size()))
                                : 0.0;
            cell.mean_accuracy = mean_acc;
            report.cells.push_back(cell);
        }
    }

    const GridCell* best = nullptr;
    for (const auto& c : report.cells) {
        if (c.over_budget) continue;
        if (!best || c.mean_logloss < best->mean_logloss) best = &c;
    }
    if (!best) throw CapacityError("grid_search: all cells over memory budget");

    // Within one standard error of the best, prefer the smallest (n, e).
    const double cutoff = best->mean_logloss + best->se_logloss;
    const GridCell* chosen = best;
    for (const auto& c : report.cells) {
        if (c.over_budget || c.mean_logloss > cutoff) continue;
        if (std::tie(c.layers, c.dim) < std::tie(chosen->layers, chosen->dim)) chosen = &c;
    }
    report.chosen_layers = chosen->layers;
    report.chosen_dim = chosen->dim;
    return report;
}

// ---- model snapshot --------------------------------------------------------

namespace {
constexpr char kModelMagic[4] = {'R', 'R', 'C', 'M'};
constexpr std::uint16_t kModelVersion = 1;

void write_vec(std::ostream& out, const VecD& v) {
    std::uint64_t n = std::uint64_t(v.size());
    out.write(reinterpret_cast<const char*>(&n), 8);
    out.write(reinterpret_cast<const char*>(v.data()), std::streamsize(8 * n));
}

VecD read_vec(std::istream& in) {
    std::uint64_t n = 0;
    in.read(reinterpret_cast<char*>(&n), 8);
    VecD v;
    v.resize(Eigen::Index(n));
    in.read(reinterpret_cast<char*>(v.data()), std::streamsize(8 * n));
    if (!in) throw DataError("truncated classifier snapshot");
    return v;
}
}  // namespace

void write_classifier(std::ostream& out, const ClassifierModel& model) {
    out.write(kModelMagic, 4);
    out.write(reinterpret_cast<const char*>(&kModelVersion), 2);
    std::uint64_t rows = std::uint64_t(model.weights.rows()),
                  cols = std::uint64_t(model.weights.cols());
    out.write(reinterpret_cast<const char*>(&rows), 8);
    out.write(reinterpret_cast<const char*>(&cols), 8);
    out.write(reinterpret_cast<const char*>(model.weights.data()),
              std::streamsize(8 * rows * cols));
    write_vec(out, model.bias);
    write_vec(out, model.feature_mean);
    write_vec(out, model.feature_scale);
    out.write(reinterpret_cast<const char*>(&model.iterations), 4);
    out.write(reinterpret_cast<const char*>(&model.best_val_logloss), 8);
}

ClassifierModel read_classifier(std::istream& in) {
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kModelMagic, 4) != 0)
        throw DataError("not a classifier snapshot (bad magic)");
    std::uint16_t version = 0;
    in.read(reinterpret_cast<char*>(&version), 2);
    if (version != kModelVersion)
        throw DataError("unsupported classifier snapshot version");
    std::uint64_t rows = 0, cols = 0;
    in.read(reinterpret_cast<char*>(&rows), 8);
    in.read(reinterpret_cast<char*>(&cols), 8);
    ClassifierModel model;
    model.weights.resize(Eigen::Index(rows), Eigen::Index(cols));
    in.read(reinterpret_cast<char*>(model.weights.data()),
            std::streamsize(8 * rows * cols));
    model.bias = read_vec(in);
    model.feature_mean = read_vec(in);
    model.feature_scale = read_vec(in);
    in.read(reinterpret_cast<char*>(&model.iterations), 4);
    in.read(reinterpret_cast<char*>(&model.best_val_logloss), 8);
    if (!in) throw DataError("truncated classifier snapshot");
    return model;
}

}  // namespace rrgcn
