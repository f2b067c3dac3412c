#include "rrgcn/linkpred.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <istream>
#include <limits>
#include <ostream>

namespace rrgcn {

// ---- PCA -------------------------------------------------------------------

PcaModel fit_pca(const MatF& x, std::uint32_t k) {
    if (k > x.cols()) throw DataError("fit_pca: k exceeds input dimensionality");
    if (x.rows() < Eigen::Index(k)) throw DataError("fit_pca: fewer rows than components");

    PcaModel pca;
    MatD xs = x.cast<double>();
    pca.mean = xs.colwise().mean();
    xs.rowwise() -= pca.mean.transpose();
    VecD var = xs.array().square().colwise().mean();
    pca.scale = (var.array() + 1e-12).sqrt();
    xs.array().rowwise() /= pca.scale.transpose().array();

    MatD cov = xs.transpose() * xs / double(std::max<Eigen::Index>(x.rows() - 1, 1));
    Eigen::SelfAdjointEigenSolver<MatD> eig(cov);
    if (eig.info() != Eigen::Success) throw DataError("fit_pca: eigensolver failed");

    // Eigenvalues ascend; take the top k, descending.
    const Eigen::Index d = x.cols();
    pca.components.resize(d, k);
    pca.explained_variance.resize(k);
    for (std::uint32_t c = 0; c < k; ++c) {
        Eigen::Index src = d - 1 - Eigen::Index(c);
        VecD col = eig.eigenvectors().col(src);
        // Deterministic sign: largest-magnitude entry positive.
        Eigen::Index arg;
        col.cwiseAbs().maxCoeff(&arg);
        if (col(arg) < 0) col = -col;
        pca.components.col(c) = col;
        pca.explained_variance(c) = std::max(eig.eigenvalues()(src), 0.0);
    }
    return pca;
}

MatD pca_transform(const PcaModel& pca, const MatF& x) {
    if (x.cols() != pca.input_dim()) throw DataError("pca_transform: dimension mismatch");
    MatD xs = x.cast<double>();
    xs.rowwise() -= pca.mean.transpose();
    xs.array().rowwise() /= pca.scale.transpose().array();
    return xs * pca.components;
}

// ---- decoder ----------------------------------------------------------------

namespace {

MatD glorot_matrix(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed) {
    MatD m(rows, cols);
    const double bound = std::sqrt(6.0 / double(rows + cols));
    SplitMix64 rng(seed);
    for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index j = 0; j < cols; ++j)
            m(i, j) = (2.0 * rng.uniform() - 1.0) * bound;
    return m;
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

struct ForwardCache {
    MatD z;            // input rows
    MatD a1, a2, a3;   // activations
};

ForwardCache forward_cached(const Decoder& dec, MatD z) {
    ForwardCache c;
    c.a1 = (z * dec.w1.transpose()).rowwise() + dec.b1.transpose();
    c.a1 = c.a1.cwiseMax(0.0);
    c.a2 = (c.a1 * dec.w2.transpose()).rowwise() + dec.b2.transpose();
    c.a2 = c.a2.cwiseMax(0.0);
    c.a3 = (c.a2 * dec.w3.transpose()).rowwise() + dec.b3.transpose();
    c.z = std::move(z);
    return c;
}

MatD gather(const MatD& z, const std::vector<LabeledTriple>& batch, bool head) {
    MatD out(Eigen::Index(batch.size()), z.cols());
    for (std::size_t i = 0; i < batch.size(); ++i) {
        NodeId id = head ? batch[i].triple.head : batch[i].triple.tail;
        out.row(Eigen::Index(i)) = z.row(Eigen::Index(id));
    }
    return out;
}

}  // namespace

Decoder init_decoder(std::uint32_t input_dim, std::uint32_t width,
                     std::uint32_t relation_count, std::uint64_t seed) {
    SeedSchedule s = derive_seeds(seed, 7);
    Decoder dec;
    dec.w1 = glorot_matrix(width, input_dim, s.derived_seeds[0]);
    dec.w2 = glorot_matrix(width, width, s.derived_seeds[1]);
    dec.w3 = glorot_matrix(width, width, s.derived_seeds[2]);
    dec.b1 = VecD::Zero(width);
    dec.b2 = VecD::Zero(width);
    dec.b3 = VecD::Zero(width);
    dec.relation_weights = glorot_matrix(relation_count, width, s.derived_seeds[3]);
    return dec;
}

MatD decoder_transform(const Decoder& dec, const MatD& z) {
    return forward_cached(dec, z).a3;
}

double score(const Decoder& dec, const Eigen::Ref<const VecD>& z_head,
             const Eigen::Ref<const VecD>& z_tail, RelationId r) {
    if (r >= dec.relation_weights.rows()) throw DataError("score: unknown relation id");
    MatD zh(1, z_head.size()), zt(1, z_tail.size());
    zh.row(0) = z_head.transpose();
    zt.row(0) = z_tail.transpose();
    VecD fh = decoder_transform(dec, zh).row(0);
    VecD ft = decoder_transform(dec, zt).row(0);
    return (fh.array() * dec.relation_weights.row(r).transpose().array() * ft.array())
        .sum();
}

namespace {

struct BatchGrad {
    Decoder grad;  // same shapes as the decoder, zero-initialised
    double loss = 0.0;
};

BatchGrad batch_loss_grad(const Decoder& dec, const std::vector<LabeledTriple>& batch,
                          const MatD& z, bool want_grad) {
    const Eigen::Index n = Eigen::Index(batch.size());
    ForwardCache head = forward_cached(dec, gather(z, batch, true));
    ForwardCache tail = forward_cached(dec, gather(z, batch, false));

    MatD wr(n, dec.width());
    for (Eigen::Index i = 0; i < n; ++i)
        wr.row(i) = dec.relation_weights.row(batch[std::size_t(i)].triple.relation);

    VecD scores = (head.a3.array() * wr.array() * tail.a3.array()).rowwise().sum();

    BatchGrad out;
    VecD dscore(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        double p = sigmoid(scores(i));
        double y = batch[std::size_t(i)].label;
        out.loss -= y * std::log(std::max(p, 1e-15)) +
                    (1.0 - y) * std::log(std::max(1.0 - p, 1e-15));
        dscore(i) = (p - y) / double(n);
    }
    out.loss /= double(n);
    if (!want_grad) return out;

    Decoder& g = out.grad;
    g.w1 = MatD::Zero(dec.w1.rows(), dec.w1.cols());
    g.w2 = MatD::Zero(dec.w2.rows(), dec.w2.cols());
    g.w3 = MatD::Zero(dec.w3.rows(), dec.w3.cols());
    g.b1 = VecD::Zero(dec.b1.size());
    g.b2 = VecD::Zero(dec.b2.size());
    g.b3 = VecD::Zero(dec.b3.size());
    g.relation_weights = MatD::Zero(dec.relation_weights.rows(),
                                    dec.relation_weights.cols());

    MatD prod = head.a3.array() * tail.a3.array();
    for (Eigen::Index i = 0; i < n; ++i)
        g.relation_weights.row(batch[std::size_t(i)].triple.relation) +=
            dscore(i) * prod.row(i);

    MatD d_head3 = dscore.asDiagonal() * MatD(wr.array() * tail.a3.array());
    MatD d_tail3 = dscore.asDiagonal() * MatD(wr.array() * head.a3.array());

    auto backprop = [&](const ForwardCache& c, const MatD& d_a3) {
        g.w3.noalias() += d_a3.transpose() * c.a2;
        g.b3 += d_a3.colwise().sum();
        MatD d_a2 = (d_a3 * dec.w3).array() * (c.a2.array() > 0.0).cast<double>();
        g.w2.noalias() += d_a2.transpose() * c.a1;
        g.b2 += d_a2.colwise().sum();
        MatD d_a1 = (d_a2 * dec.w2).array() * (c.a1.array() > 0.0).cast<double>();
        g.w1.noalias() += d_a1.transpose() * c.z;
        g.b1 += d_a1.colwise().sum();
    };
    backprop(head, d_head3);
    backprop(tail, d_tail3);
    return out;
}

double grad_norm(const Decoder& g) {
    double sq = g.w1.squaredNorm() + g.w2.squaredNorm() + g.w3.squaredNorm() +
                g.b1.squaredNorm() + g.b2.squaredNorm() + g.b3.squaredNorm() +
                g.relation_weights.squaredNorm();
    return std::sqrt(sq);
}

void apply_step(Decoder& dec, const Decoder& g, double step) {
    dec.w1 -= step * g.w1;
    dec.w2 -= step * g.w2;
    dec.w3 -= step * g.w3;
    dec.b1 -= step * g.b1;
    dec.b2 -= step * g.b2;
    dec.b3 -= step * g.b3;
    dec.relation_weights -= step * g.relation_weights;
}

bool decoder_finite(const Decoder& d) {
    return d.w1.allFinite() && d.w2.allFinite() && d.w3.allFinite() &&
           d.b1.allFinite() && d.b2.allFinite() && d.b3.allFinite() &&
           d.relation_weights.allFinite();
}

std::uint64_t triple_key(const Triple& t, std::uint64_t relation_count,
                         std::uint64_t entity_count) {
    return (std::uint64_t(t.head) * relation_count + t.relation) * entity_count + t.tail;
}

}  // namespace

double decoder_loss(const Decoder& dec, const std::vector<LabeledTriple>& batch,
                    const MatD& entity_z) {
    return batch_loss_grad(dec, batch, entity_z, false).loss;
}

Decoder decoder_gradient(const Decoder& dec, const std::vector<LabeledTriple>& batch,
                         const MatD& entity_z) {
    return batch_loss_grad(dec, batch, entity_z, true).grad;
}

RankingReport rank_filtered(const Decoder& dec, const std::vector<Triple>& test,
                            const std::vector<Triple>& all_known, const MatD& entity_z,
                            std::uint32_t relation_count) {
    const std::uint64_t v = std::uint64_t(entity_z.rows());
    std::unordered_set<std::uint64_t> known;
    known.reserve(all_known.size() * 2);
    for (const Triple& t : all_known) known.insert(triple_key(t, relation_count, v));

    // Transform all entities once; ranking only needs f(z).
    MatD f = decoder_transform(dec, entity_z);

    RankingReport rep;
    rep.per_relation_fmrr.assign(relation_count, 0.0);
    rep.per_relation_count.assign(relation_count, 0);

    auto rank_direction = [&](const Triple& t, bool corrupt_tail) {
        VecD anchor = corrupt_tail ? f.row(Eigen::Index(t.head)).transpose()
                                   : f.row(Eigen::Index(t.tail)).transpose();
        VecD query =
            anchor.array() * dec.relation_weights.row(t.relation).transpose().array();
        VecD scores = f * query;
        NodeId truth = corrupt_tail ? t.tail : t.head;
        double s_true = scores(Eigen::Index(truth));
        std::uint64_t rank = 1;
        for (std::uint64_t j = 0; j < v; ++j) {
            if (j == truth) continue;
            if (scores(Eigen::Index(j)) < s_true) continue;  // ties count against us
            Triple cand = corrupt_tail ? Triple{t.head, t.relation, NodeId(j)}
                                       : Triple{NodeId(j), t.relation, t.tail};
            if (known.contains(triple_key(cand, relation_count, v))) continue;
            ++rank;
        }
        double rr = 1.0 / double(rank);
        rep.fmrr += rr;
        rep.hits1 += rank <= 1;
        rep.hits3 += rank <= 3;
        rep.hits10 += rank <= 10;
        rep.per_relation_fmrr[t.relation] += rr;
        ++rep.per_relation_count[t.relation];
        ++rep.ranked;
    };

    for (const Triple& t : test) {
        rank_direction(t, true);
        rank_direction(t, false);
    }
    if (rep.ranked > 0) {
        rep.fmrr /= double(rep.ranked);
        rep.hits1 /= double(rep.ranked);
        rep.hits3 /= double(rep.ranked);
        rep.hits10 /= double(rep.ranked);
    }
    for (RelationId r = 0; r < relation_count; ++r) {
        if (rep.per_relation_count[r] > 0)
            rep.per_relation_fmrr[r] /= double(rep.per_relation_count[r]);
    }
    return rep;
}

Decoder train_decoder(Decoder dec, const TripleSplit& triples, const MatD& entity_z,
                      const DecoderTrainOptions& opts) {
    const std::uint64_t v = std::uint64_t(entity_z.rows());
    const std::uint32_t relation_count = std::uint32_t(dec.relation_weights.rows());
    SplitMix64 rng(opts.seed);

    std::unordered_set<std::uint64_t> train_set;
    if (opts.strict_negatives) {
        for (const Triple& t : triples.train)
            train_set.insert(triple_key(t, relation_count, v));
    }

    // Validation subsample and its filter set (train + validation triples).
    std::vector<Triple> val_sample = triples.val;
    if (val_sample.size() > opts.val_sample) {
        for (std::size_t i = val_sample.size(); i > 1; --i)
            std::swap(val_sample[i - 1], val_sample[rng.next() % i]);
        val_sample.resize(opts.val_sample);
    }
    std::vector<Triple> val_filter = triples.train;
    val_filter.insert(val_filter.end(), triples.val.begin(), triples.val.end());

    std::vector<Triple> order = triples.train;
    Decoder best = dec;
    double best_fmrr = -1.0;
    std::uint32_t stale = 0;

    for (std::uint32_t epoch = 0; epoch < opts.max_epochs; ++epoch) {
        for (std::size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[rng.next() % i]);

        for (std::size_t start = 0; start < order.size(); start += opts.batch_size) {
            std::size_t stop = std::min(start + opts.batch_size, order.size());
            std::vector<LabeledTriple> batch;
            batch.reserve((stop - start) * (1 + opts.neg_per_pos));
            for (std::size_t i = start; i < stop; ++i) {
                batch.push_back({order[i], 1.0});
                for (std::uint32_t neg = 0; neg < opts.neg_per_pos; ++neg) {
                    Triple corrupted = order[i];
                    do {
                        if (rng.next() & 1)
                            corrupted.head = NodeId(rng.next() % v);
                        else
                            corrupted.tail = NodeId(rng.next() % v);
                    } while (opts.strict_negatives &&
                             train_set.contains(
                                 triple_key(corrupted, relation_count, v)));
                    batch.push_back({corrupted, 0.0});
                }
            }
            BatchGrad bg = batch_loss_grad(dec, batch, entity_z, true);
            if (!std::isfinite(bg.loss)) {
                if (best_fmrr < 0.0)
                    throw DataError("train_decoder: diverged before first snapshot");
                return best;  // abort with last-good snapshot
            }
            double norm = grad_norm(bg.grad);
            double step = opts.learning_rate;
            if (opts.clip_norm > 0.0 && norm > opts.clip_norm)
                step *= opts.clip_norm / norm;
            apply_step(dec, bg.grad, step);
        }
        if (!decoder_finite(dec)) {
            if (best_fmrr < 0.0)
                throw DataError("train_decoder: diverged before first snapshot");
            return best;
        }

        double fmrr = val_sample.empty()
                          ? 0.0
                          : rank_filtered(dec, val_sample, val_filter, entity_z,
                                          relation_count)
                                .fmrr;
        if (fmrr > best_fmrr) {
            best_fmrr = fmrr;
            best = dec;
            stale = 0;
        } else if (++stale >= opts.patience) {
            break;
        }
        if (val_sample.empty()) best = dec;  // no validation: keep last
    }
    return best;
}

// ---- checkpoint --------------------------------------------------------------

namespace {
constexpr char kDecoderMagic[4] = {'R', 'R', 'L', 'D'};
constexpr std::uint16_t kDecoderVersion = 1;

void write_mat(std::ostream& out, const MatD& m) {
    std::uint64_t rows = std::uint64_t(m.rows()), cols = std::uint64_t(m.cols());
    out.write(reinterpret_cast<const char*>(&rows), 8);
    out.write(reinterpret_cast<const char*>(&cols), 8);
    out.write(reinterpret_cast<const char*>(m.data()), std::streamsize(8 * rows * cols));
}

MatD read_mat(std::istream& in) {
    std::uint64_t rows = 0, cols = 0;
    in.read(reinterpret_cast<char*>(&rows), 8);
    in.read(reinterpret_cast<char*>(&cols), 8);
    MatD m;
    m.resize(Eigen::Index(rows), Eigen::Index(cols));
    in.read(reinterpret_cast<char*>(m.data()), std::streamsize(8 * rows * cols));
    if (!in) throw DataError("truncated decoder checkpoint");
    return m;
}
}  // namespace

void write_decoder(std::ostream& out, const Decoder& dec) {
    out.write(kDecoderMagic, 4);
    out.write(reinterpret_cast<const char*>(&kDecoderVersion), 2);
    write_mat(out, dec.w1);
    write_mat(out, dec.w2);
    write_mat(out, dec.w3);
    write_mat(out, dec.b1);
    write_mat(out, dec.b2);
    write_mat(out, dec.b3);
    write_mat(out, dec.relation_weights);
}

Decoder read_decoder(std::istream& in) {
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kDecoderMagic, 4) != 0)
        throw DataError("not a decoder checkpoint (bad magic)");
    std::uint16_t version = 0;
    in.read(reinterpret_cast<char*>(&version), 2);
    if (version != kDecoderVersion)
        throw DataError("unsupported decoder checkpoint version");
    Decoder dec;
    dec.w1 = read_mat(in);
    dec.w2 = read_mat(in);
    dec.w3 = read_mat(in);
    dec.b1 = read_mat(in);
    dec.b2 = read_mat(in);
    dec.b3 = read_mat(in);
    dec.relation_weights = read_mat(in);
    return dec;
}

}  // namespace rrgcn
