// rrgcn — command-line front end for the frozen relational embedding engine.
//
// Subcommands: ingest, stats, prune, cut, filter-relations, embed, classify,
// grid, linkpred, estimate-memory, verify, run. Exit codes: 0 success,
// 2 validation error, 3 capacity error, 4 data error.

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <CLI11.hpp>
#include <Eigen/Core>
#include <array>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "rrgcn/classify.hpp"
#include "rrgcn/embedder.hpp"
#include "rrgcn/graph.hpp"
#include "rrgcn/linkpred.hpp"
#include "rrgcn/sha256.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace rrgcn;

namespace {

constexpr int kExitValidation = 2;
constexpr int kExitCapacity = 3;
constexpr int kExitData = 4;

struct ValidationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// ---- provenance -------------------------------------------------------------
//
// Every run resolves its full configuration into a manifest (JSON), writes it
// next to the outputs, and embeds the manifest's SHA-256 in each artifact:
// embedding files carry it in their header; other binary artifacts get a
// trailing `RRPV` + 32-byte block; TSV outputs a `# manifest_sha256` comment.

using Hash = std::array<std::uint8_t, 32>;

std::string hex(const Hash& h) {
    static const char* digits = "0123456789abcdef";
    std::string s;
    s.reserve(64);
    for (std::uint8_t b : h) {
        s.push_back(digits[b >> 4]);
        s.push_back(digits[b & 0xf]);
    }
    return s;
}

Hash hash_bytes(const std::string& bytes) {
    return Sha256::digest(bytes.data(), bytes.size());
}

Hash manifest_hash(const json& manifest) { return hash_bytes(manifest.dump(2)); }

void write_manifest(const fs::path& output, const json& manifest) {
    fs::path path = output;
    path += ".manifest.json";
    std::ofstream out(path);
    out << manifest.dump(2) << '\n';
    if (!out) throw DataError("cannot write " + path.string());
    // Wall-clock stamp lives outside the manifest so reruns stay byte-identical.
    fs::path stamp = output;
    stamp += ".stamp";
    std::ofstream st(stamp);
    st << std::time(nullptr) << '\n';
}

void append_provenance(std::ostream& out, const Hash& h) {
    out.write("RRPV", 4);
    out.write(reinterpret_cast<const char*>(h.data()), 32);
}

std::optional<Hash> read_provenance_trailer(const fs::path& path) {
    std::ifstream in(path, std::ios::binary | std::ios::ate);
    if (!in) throw DataError("cannot open " + path.string());
    auto size = in.tellg();
    if (size < 36) return std::nullopt;
    in.seekg(size - std::streamoff(36));
    char magic[4];
    in.read(magic, 4);
    if (std::string_view(magic, 4) != "RRPV") return std::nullopt;
    Hash h;
    in.read(reinterpret_cast<char*>(h.data()), 32);
    return h;
}

// ---- directory lock ---------------------------------------------------------

class DirLock {
public:
    explicit DirLock(const fs::path& dir) : path_(dir / ".rrgcn.lock") {
        fs::create_directories(dir);
        fd_ = ::open(path_.c_str(), O_CREAT | O_RDWR, 0644);
        if (fd_ < 0 || ::flock(fd_, LOCK_EX | LOCK_NB) != 0)
            throw ValidationError("output directory is locked by another run: " +
                                  dir.string());
    }
    ~DirLock() {
        if (fd_ >= 0) {
            ::flock(fd_, LOCK_UN);
            ::close(fd_);
            std::error_code ec;
            fs::remove(path_, ec);
        }
    }
    DirLock(const DirLock&) = delete;
    DirLock& operator=(const DirLock&) = delete;

private:
    fs::path path_;
    int fd_ = -1;
};

// ---- small IO helpers ---------------------------------------------------------

GraphIndex load_graph(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open graph file " + path.string());
    return read_graph_cache(in);
}

void save_graph(const fs::path& path, const GraphIndex& g, const json& manifest) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path.string());
    write_graph_cache(out, g);
    append_provenance(out, manifest_hash(manifest));
    write_manifest(path, manifest);
}

LabeledSplit load_labels_checked(const fs::path& path, const GraphIndex& g) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open label file " + path.string());
    return load_labels(in, g);
}

std::unordered_set<NodeId> labelled_nodes(const LabeledSplit& labels) {
    std::unordered_set<NodeId> ids;
    for (const auto* part : {&labels.train, &labels.val, &labels.test})
        for (const LabeledNode& n : *part) ids.insert(n.node);
    return ids;
}

std::uint64_t gb_to_bytes(double gb) { return std::uint64_t(gb * 1e9); }

// Gathers feature rows and labels for one labelled subset.
std::pair<MatF, std::vector<std::uint32_t>> gather_rows(const MatF& x,
                                                        const std::vector<LabeledNode>& part) {
    MatF rows(Eigen::Index(part.size()), x.cols());
    std::vector<std::uint32_t> y(part.size());
    for (std::size_t i = 0; i < part.size(); ++i) {
        rows.row(Eigen::Index(i)) = x.row(Eigen::Index(part[i].node));
        y[i] = part[i].label;
    }
    return {std::move(rows), std::move(y)};
}

// ---- embed ---------------------------------------------------------------------

struct EmbedFlags {
    std::uint64_t seed = 0;
    std::uint32_t layers = 2;
    std::uint32_t dim = 512;
    bool ppv = true;
    bool residual = false;
    double memory_budget_gb = 0.0;
    int threads = 1;

    void attach(CLI::App* cmd) {
        cmd->add_option("--seed", seed, "master seed");
        cmd->add_option("--layers", layers, "message-passing layers n")
            ->check(CLI::PositiveNumber);
        cmd->add_option("--dim", dim, "embedding size e")->check(CLI::PositiveNumber);
        cmd->add_flag("--ppv,!--no-ppv", ppv, "append proportion-of-positives features");
        cmd->add_flag("--residual", residual, "literal-pseudocode residual variant");
        cmd->add_option("--memory-budget-gb", memory_budget_gb,
                        "refuse to embed above this estimated peak (decimal GB)");
        cmd->add_option("--threads", threads, "dense-kernel threads")
            ->check(CLI::PositiveNumber);
    }

    EmbedConfig config() const {
        return {.dim = dim,
                .layers = layers,
                .seed = seed,
                .ppv = ppv,
                .residual = residual,
                .memory_budget_bytes = memory_budget_gb > 0 ? gb_to_bytes(memory_budget_gb)
                                                            : 0};
    }

    json to_json() const {
        return {{"seed", seed},       {"layers", layers},
                {"dim", dim},         {"ppv", ppv},
                {"residual", residual}, {"memory_budget_gb", memory_budget_gb}};
    }
};

NodeEmbeddings embed_with_flags(const GraphIndex& g, const EmbedFlags& flags) {
    Eigen::setNbThreads(flags.threads);
    return embed(g, flags.config());
}

void save_embeddings(const fs::path& path, const NodeEmbeddings& emb, const json& manifest) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path.string());
    write_embeddings(out, emb, manifest_hash(manifest));
    write_manifest(path, manifest);
}

NodeEmbeddings load_embeddings(const fs::path& path, Hash* provenance = nullptr) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open embeddings file " + path.string());
    return read_embeddings(in, provenance);
}

// ---- metrics TSV ----------------------------------------------------------------

void write_metrics(const fs::path& path, const json& manifest,
                   const std::vector<std::pair<std::string, std::string>>& rows) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path.string());
    out << "# manifest_sha256\t" << hex(manifest_hash(manifest)) << '\n';
    out << "metric\tvalue\n";
    for (const auto& [k, v] : rows) out << k << '\t' << v << '\n';
    write_manifest(path, manifest);
}

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

// ---- subcommand bodies ------------------------------------------------------------

json base_manifest(const std::string& subcommand) {
    return {{"schema_version", 1}, {"tool", "rrgcn"}, {"subcommand", subcommand}};
}

int cmd_ingest(const fs::path& input, const fs::path& output) {
    DirLock lock(output.parent_path().empty() ? "." : output.parent_path());
    GraphIndex g = ingest_ntriples_file(input.string());
    json manifest = base_manifest("ingest");
    manifest["input"] = input.string();
    manifest["graph_sha256"] = hex(graph_content_hash(g));
    save_graph(output, g, manifest);
    std::cout << "ingested " << g.entity_count() << " entities, " << g.relation_count()
              << " relations, " << g.edge_count() << " edges -> " << output.string()
              << '\n';
    return 0;
}

int cmd_stats(const fs::path& input) {
    GraphIndex g = load_graph(input);
    const double v = std::max<double>(g.entity_count(), 1);
    std::cout << "entities\t" << g.entity_count() << '\n'
              << "relations\t" << g.relation_count() << '\n'
              << "edges\t" << g.edge_count() << '\n'
              << "mean_degree_incident\t" << fmt(2.0 * double(g.edge_count()) / v) << '\n'
              << "mean_degree_edges_per_entity\t" << fmt(double(g.edge_count()) / v)
              << '\n'
              << "max_degree\t" << g.max_degree() << '\n';
    return 0;
}

int cmd_prune(const fs::path& input, const fs::path& output, const fs::path& labels_path,
              std::uint32_t hops) {
    DirLock lock(output.parent_path().empty() ? "." : output.parent_path());
    GraphIndex g = load_graph(input);
    LabeledSplit labels = load_labels_checked(labels_path, g);
    PruneResult res = prune_khop(g, labelled_nodes(labels), hops);
    json manifest = base_manifest("prune");
    manifest["input"] = input.string();
    manifest["labels"] = labels_path.string();
    manifest["hops"] = hops;
    save_graph(output, res.graph, manifest);
    std::cout << "kept " << res.graph.entity_count() << " of " << g.entity_count()
              << " entities within " << hops << " hops\n";
    return 0;
}

int cmd_cut(const fs::path& input, const fs::path& output, std::uint32_t threshold,
            const std::string& labels_path) {
    DirLock lock(output.parent_path().empty() ? "." : output.parent_path());
    GraphIndex g = load_graph(input);
    std::unordered_set<NodeId> protected_nodes;
    if (!labels_path.empty())
        protected_nodes = labelled_nodes(load_labels_checked(labels_path, g));
    PruneResult res = cut_low_degree(g, threshold, protected_nodes);
    json manifest = base_manifest("cut");
    manifest["input"] = input.string();
    manifest["threshold"] = threshold;
    manifest["protected_labels"] = labels_path;
    save_graph(output, res.graph, manifest);
    std::cout << "kept " << res.graph.entity_count() << " of " << g.entity_count()
              << " entities above degree " << threshold << '\n';
    return 0;
}

int cmd_filter_relations(const fs::path& input, const fs::path& output,
                         const fs::path& scores_path, double keep_fraction) {
    DirLock lock(output.parent_path().empty() ? "." : output.parent_path());
    GraphIndex g = load_graph(input);
    std::ifstream scores(scores_path);
    if (!scores) throw DataError("cannot open score file " + scores_path.string());
    auto keep = load_relation_filter(scores, g, keep_fraction);
    GraphIndex filtered = filter_relations(g, keep);
    json manifest = base_manifest("filter-relations");
    manifest["input"] = input.string();
    manifest["scores"] = scores_path.string();
    manifest["keep_fraction"] = keep_fraction;
    save_graph(output, filtered, manifest);
    std::cout << "kept " << filtered.relation_count() << " of " << g.relation_count()
              << " relations\n";
    return 0;
}

int cmd_embed(const fs::path& input, const fs::path& output, const std::string& tsv,
              const EmbedFlags& flags) {
    DirLock lock(output.parent_path().empty() ? "." : output.parent_path());
    GraphIndex g = load_graph(input);
    NodeEmbeddings emb = embed_with_flags(g, flags);
    json manifest = base_manifest("embed");
    manifest["input"] = input.string();
    manifest["embed"] = flags.to_json();
    save_embeddings(output, emb, manifest);
    if (!tsv.empty()) {
        std::ofstream t(tsv);
        if (!t) throw DataError("cannot write " + tsv);
        write_embeddings_tsv(t, emb, g);
    }
    std::cout << "embedded " << emb.data.rows() << " nodes x " << emb.data.cols()
              << " dims -> " << output.string() << '\n';
    return 0;
}

int cmd_classify(const fs::path& graph_path, const fs::path& emb_path,
                 const fs::path& labels_path, const fs::path& model_out,
                 const fs::path& metrics_out) {
    DirLock lock(model_out.parent_path().empty() ? "." : model_out.parent_path());
    GraphIndex g = load_graph(graph_path);
    NodeEmbeddings emb = load_embeddings(emb_path);
    if (std::uint64_t(emb.data.rows()) != g.entity_count())
        throw ValidationError("embeddings row count does not match graph entity count");
    LabeledSplit labels = load_labels_checked(labels_path, g);
    if (labels.train.empty()) throw DataError("label file has no train rows");

    auto [x_train, y_train] = gather_rows(emb.data, labels.train);
    auto [x_val, y_val] = gather_rows(emb.data, labels.val);
    ClassifierModel model =
        train_classifier(x_train, y_train, x_val, y_val, labels.class_count);

    json manifest = base_manifest("classify");
    manifest["graph"] = graph_path.string();
    manifest["embeddings"] = emb_path.string();
    manifest["labels"] = labels_path.string();

    std::ofstream mout(model_out, std::ios::binary);
    if (!mout) throw DataError("cannot write " + model_out.string());
    write_classifier(mout, model);
    append_provenance(mout, manifest_hash(manifest));
    write_manifest(model_out, manifest);

    std::vector<std::pair<std::string, std::string>> rows;
    rows.emplace_back("train_iterations", std::to_string(model.iterations));
    rows.emplace_back("val_logloss", fmt(model.best_val_logloss));
    if (!labels.test.empty()) {
        auto [x_test, y_test] = gather_rows(emb.data, labels.test);
        EvalReport rep = evaluate(model, x_test, y_test, labels.class_count);
        rows.emplace_back("test_accuracy", fmt(rep.accuracy));
        rows.emplace_back("test_logloss", fmt(rep.logloss));
    }
    write_metrics(metrics_out, manifest, rows);
    for (const auto& [k, v] : rows) std::cout << k << '\t' << v << '\n';
    return 0;
}

int cmd_grid(const fs::path& graph_path, const fs::path& labels_path,
             const fs::path& report_out, std::vector<std::uint32_t> layer_grid,
             std::vector<std::uint32_t> dim_grid, std::vector<std::uint64_t> seeds,
             double budget_gb, bool ppv, int threads) {
    DirLock lock(report_out.parent_path().empty() ? "." : report_out.parent_path());
    Eigen::setNbThreads(threads);
    GraphIndex g = load_graph(graph_path);
    LabeledSplit labels = load_labels_checked(labels_path, g);

    GridSearchOptions opts;
    if (!layer_grid.empty()) opts.layer_grid = std::move(layer_grid);
    if (!dim_grid.empty()) opts.dim_grid = std::move(dim_grid);
    if (!seeds.empty()) opts.seeds = std::move(seeds);
    opts.memory_budget_bytes = budget_gb > 0 ? gb_to_bytes(budget_gb) : 0;
    opts.ppv = ppv;
    GridSearchReport report = grid_search(g, labels, opts);

    json manifest = base_manifest("grid");
    manifest["graph"] = graph_path.string();
    manifest["labels"] = labels_path.string();
    manifest["layer_grid"] = opts.layer_grid;
    manifest["dim_grid"] = opts.dim_grid;
    manifest["seeds"] = opts.seeds;
    manifest["memory_budget_gb"] = budget_gb;
    manifest["ppv"] = ppv;

    std::ofstream out(report_out);
    if (!out) throw DataError("cannot write " + report_out.string());
    out << "# manifest_sha256\t" << hex(manifest_hash(manifest)) << '\n';
    out << "layers\tdim\tmean_logloss\tse_logloss\tmean_accuracy\tover_budget\n";
    for (const GridCell& c : report.cells)
        out << c.layers << '\t' << c.dim << '\t' << fmt(c.mean_logloss) << '\t'
            << fmt(c.se_logloss) << '\t' << fmt(c.mean_accuracy) << '\t'
            << (c.over_budget ? 1 : 0) << '\n';
    write_manifest(report_out, manifest);
    std::cout << "chosen layers=" << report.chosen_layers
              << " dim=" << report.chosen_dim << '\n';
    return 0;
}

int cmd_linkpred(const fs::path& graph_path, const fs::path& emb_path,
                 const fs::path& train_path, const fs::path& val_path,
                 const fs::path& test_path, const fs::path& decoder_out,
                 const fs::path& metrics_out, std::uint32_t pca_k, std::uint32_t width,
                 std::uint64_t seed, std::uint32_t epochs, double lr,
                 std::uint32_t neg_per_pos, int threads) {
    DirLock lock(decoder_out.parent_path().empty() ? "." : decoder_out.parent_path());
    Eigen::setNbThreads(threads);
    GraphIndex g = load_graph(graph_path);
    NodeEmbeddings emb = load_embeddings(emb_path);
    if (std::uint64_t(emb.data.rows()) != g.entity_count())
        throw ValidationError("embeddings row count does not match graph entity count");
    TripleSplit split = load_triple_split(train_path.string(), val_path.string(),
                                          test_path.string(), g);
    if (split.train.empty()) throw DataError("empty training triple file");

    PcaModel pca = fit_pca(emb.data, pca_k);
    MatD z = pca_transform(pca, emb.data);

    Decoder dec = init_decoder(pca_k, width, g.relation_count(), seed);
    DecoderTrainOptions opts;
    opts.seed = seed;
    opts.max_epochs = epochs;
    opts.learning_rate = lr;
    opts.neg_per_pos = neg_per_pos;
    dec = train_decoder(std::move(dec), split, z, opts);

    std::vector<Triple> known = split.train;
    known.insert(known.end(), split.val.begin(), split.val.end());
    known.insert(known.end(), split.test.begin(), split.test.end());
    RankingReport rep = rank_filtered(dec, split.test, known, z, g.relation_count());

    json manifest = base_manifest("linkpred");
    manifest["graph"] = graph_path.string();
    manifest["embeddings"] = emb_path.string();
    manifest["splits"] = {{"train", train_path.string()},
                          {"val", val_path.string()},
                          {"test", test_path.string()}};
    manifest["pca"] = pca_k;
    manifest["width"] = width;
    manifest["seed"] = seed;
    manifest["epochs"] = epochs;
    manifest["learning_rate"] = lr;
    manifest["neg_per_pos"] = neg_per_pos;

    std::ofstream dout(decoder_out, std::ios::binary);
    if (!dout) throw DataError("cannot write " + decoder_out.string());
    write_decoder(dout, dec);
    append_provenance(dout, manifest_hash(manifest));
    write_manifest(decoder_out, manifest);

    write_metrics(metrics_out, manifest,
                  {{"fmrr", fmt(rep.fmrr)},
                   {"hits@1", fmt(rep.hits1)},
                   {"hits@3", fmt(rep.hits3)},
                   {"hits@10", fmt(rep.hits10)},
                   {"ranked_directions", std::to_string(rep.ranked)}});
    std::cout << "fmrr\t" << fmt(rep.fmrr) << "\nhits@1\t" << fmt(rep.hits1)
              << "\nhits@3\t" << fmt(rep.hits3) << "\nhits@10\t" << fmt(rep.hits10)
              << '\n';
    return 0;
}

int cmd_estimate_memory(const std::string& model, std::uint64_t entities,
                        std::uint64_t dim, std::uint64_t bases,
                        std::uint64_t directed_relations, std::uint64_t layers) {
    MemoryModel m;
    if (model == "rgcn-params")
        m = MemoryModel::RgcnParams;
    else if (model == "rgcn-activations")
        m = MemoryModel::RgcnActivations;
    else if (model == "rrgcn-peak")
        m = MemoryModel::RrgcnPeak;
    else
        throw ValidationError("unknown memory model: " + model);
    std::uint64_t bytes = estimate_memory(m, {.entities = entities,
                                              .bases = bases,
                                              .directed_relations = directed_relations,
                                              .layers = layers,
                                              .dim = dim});
    std::cout << format_gb(bytes) << " GB\n";
    return 0;
}

int cmd_verify(const fs::path& artifact) {
    fs::path manifest_path = artifact;
    manifest_path += ".manifest.json";
    std::ifstream min(manifest_path);
    if (!min) throw DataError("missing manifest " + manifest_path.string());
    std::ostringstream buf;
    buf << min.rdbuf();
    json manifest;
    try {
        manifest = json::parse(buf.str());
    } catch (const json::exception& e) {
        throw DataError("unreadable manifest " + manifest_path.string() + ": " + e.what());
    }
    Hash expected = manifest_hash(manifest);

    std::optional<Hash> embedded;
    std::ifstream probe(artifact, std::ios::binary);
    if (!probe) throw DataError("cannot open " + artifact.string());
    char magic[4] = {};
    probe.read(magic, 4);
    std::string_view m(magic, 4);
    if (m == "RREM") {
        Hash h{};
        probe.seekg(0);
        read_embeddings(probe, &h);
        embedded = h;
    } else if (m == "RRGX" || m == "RRCM" || m == "RRLD") {
        embedded = read_provenance_trailer(artifact);
    } else {
        // TSV outputs carry the hash in their first comment line.
        std::ifstream t(artifact);
        std::string line;
        std::getline(t, line);
        const std::string prefix = "# manifest_sha256\t";
        if (line.rfind(prefix, 0) == 0) {
            std::string want = line.substr(prefix.size());
            if (want == hex(expected)) {
                std::cout << "ok\t" << artifact.string() << '\n';
                return 0;
            }
            std::cerr << "manifest hash mismatch for " << artifact.string() << '\n';
            return kExitValidation;
        }
        throw DataError("no provenance found in " + artifact.string());
    }
    if (!embedded) throw DataError("no provenance found in " + artifact.string());
    if (*embedded != expected) {
        std::cerr << "manifest hash mismatch for " << artifact.string() << '\n';
        return kExitValidation;
    }
    std::cout << "ok\t" << artifact.string() << '\n';
    return 0;
}

// ---- run: manifest-driven pipeline ------------------------------------------------

const json& require(const json& obj, const std::string& key) {
    if (!obj.contains(key))
        throw ValidationError("manifest: missing required field \"" + key + "\"");
    return obj.at(key);
}

int cmd_run(const fs::path& manifest_path) {
    std::ifstream min(manifest_path);
    if (!min) throw DataError("cannot open manifest " + manifest_path.string());
    json m;
    try {
        m = json::parse(min);
    } catch (const json::exception& e) {
        throw ValidationError(std::string("manifest: invalid JSON: ") + e.what());
    }

    // Schema validation happens before any work starts.
    if (require(m, "schema_version").get<int>() != 1)
        throw ValidationError("manifest: unsupported schema_version");
    const std::string task = require(m, "task").get<std::string>();
    if (task != "classify" && task != "linkpred")
        throw ValidationError("manifest: task must be \"classify\" or \"linkpred\"");
    const json& dataset = require(m, "dataset");
    const std::string triples_path = require(dataset, "triples").get<std::string>();
    fs::path outdir = require(m, "output_dir").get<std::string>();
    json embed_cfg = m.value("embed", json::object());
    json preprocess = m.value("preprocess", json::object());
    std::vector<std::uint64_t> seeds =
        m.value("seeds", std::vector<std::uint64_t>{embed_cfg.value("seed", 0ull)});
    if (seeds.empty()) throw ValidationError("manifest: seed list is empty");
    if (task == "classify" && !dataset.contains("labels"))
        throw ValidationError("manifest: classify task needs dataset.labels");
    if (task == "linkpred")
        for (const char* k : {"train", "val", "test"})
            if (!dataset.contains(k))
                throw ValidationError(std::string("manifest: linkpred task needs dataset.") +
                                      k);

    EmbedFlags flags;
    flags.seed = seeds.front();
    flags.layers = embed_cfg.value("layers", 2u);
    flags.dim = embed_cfg.value("dim", 512u);
    flags.ppv = embed_cfg.value("ppv", true);
    flags.residual = embed_cfg.value("residual", false);
    flags.memory_budget_gb = embed_cfg.value("memory_budget_gb", 0.0);
    flags.threads = m.value("threads", 1);

    DirLock lock(outdir);
    json resolved = base_manifest("run");
    resolved["task"] = task;
    resolved["dataset"] = dataset;
    resolved["preprocess"] = preprocess;
    resolved["embed"] = flags.to_json();
    resolved["seeds"] = seeds;
    resolved["output_dir"] = outdir.string();

    // Stage 1: ingest.
    GraphIndex g = ingest_ntriples_file(triples_path);

    // Stage 2: preprocessing, in fixed order: relation filter, degree cut, k-hop.
    std::optional<LabeledSplit> labels;
    auto ensure_labels = [&]() -> const LabeledSplit& {
        if (!labels) labels = load_labels_checked(dataset.at("labels").get<std::string>(), g);
        return *labels;
    };
    if (preprocess.contains("relation_scores")) {
        std::ifstream scores(preprocess.at("relation_scores").get<std::string>());
        if (!scores) throw DataError("cannot open relation score file");
        g = filter_relations(g, load_relation_filter(scores, g));
        labels.reset();
    }
    if (preprocess.contains("cut_threshold")) {
        std::unordered_set<NodeId> protect;
        if (task == "classify") protect = labelled_nodes(ensure_labels());
        g = cut_low_degree(g, preprocess.at("cut_threshold").get<std::uint32_t>(), protect)
                .graph;
        labels.reset();
    }
    if (preprocess.contains("khop") && task == "classify") {
        g = prune_khop(g, labelled_nodes(ensure_labels()),
                       preprocess.at("khop").get<std::uint32_t>())
                .graph;
        labels.reset();
    }
    {
        std::ofstream gout(outdir / "graph.rrgx", std::ios::binary);
        write_graph_cache(gout, g);
        append_provenance(gout, manifest_hash(resolved));
    }

    // Stage 3: embed (budget enforced inside, citing the peak-memory estimate).
    NodeEmbeddings emb = embed_with_flags(g, flags);
    save_embeddings(outdir / "embeddings.rrem", emb, resolved);

    // Stage 4: task head.
    std::vector<std::pair<std::string, std::string>> rows;
    if (task == "classify") {
        const LabeledSplit& ls = ensure_labels();
        double acc_sum = 0.0;
        std::size_t acc_n = 0;
        for (std::size_t si = 0; si < seeds.size(); ++si) {
            EmbedFlags sf = flags;
            sf.seed = seeds[si];
            NodeEmbeddings e = si == 0 ? std::move(emb) : embed_with_flags(g, sf);
            auto [x_train, y_train] = gather_rows(e.data, ls.train);
            auto [x_val, y_val] = gather_rows(e.data, ls.val);
            ClassifierModel model =
                train_classifier(x_train, y_train, x_val, y_val, ls.class_count);
            if (si == 0) {
                std::ofstream mout(outdir / "model.rrcm", std::ios::binary);
                write_classifier(mout, model);
                append_provenance(mout, manifest_hash(resolved));
            }
            std::string tag = "seed" + std::to_string(seeds[si]);
            if (!ls.test.empty()) {
                auto [x_test, y_test] = gather_rows(e.data, ls.test);
                EvalReport rep = evaluate(model, x_test, y_test, ls.class_count);
                rows.emplace_back(tag + "_test_accuracy", fmt(rep.accuracy));
                rows.emplace_back(tag + "_test_logloss", fmt(rep.logloss));
                acc_sum += rep.accuracy;
                ++acc_n;
            } else {
                rows.emplace_back(tag + "_val_logloss", fmt(model.best_val_logloss));
            }
        }
        if (acc_n > 0)
            rows.emplace_back("mean_test_accuracy", fmt(acc_sum / double(acc_n)));
    } else {
        TripleSplit split = load_triple_split(dataset.at("train").get<std::string>(),
                                              dataset.at("val").get<std::string>(),
                                              dataset.at("test").get<std::string>(), g);
        json lp = m.value("linkpred", json::object());
        std::uint32_t pca_k = lp.value("pca", 512u);
        if (Eigen::Index(pca_k) > emb.data.cols()) pca_k = std::uint32_t(emb.data.cols());
        PcaModel pca = fit_pca(emb.data, pca_k);
        MatD z = pca_transform(pca, emb.data);
        Decoder dec = init_decoder(pca_k, lp.value("width", 256u), g.relation_count(),
                                   seeds.front());
        DecoderTrainOptions opts;
        opts.seed = seeds.front();
        opts.max_epochs = lp.value("epochs", 50u);
        opts.learning_rate = lp.value("learning_rate", 1e-3);
        opts.neg_per_pos = lp.value("neg_per_pos", 1u);
        dec = train_decoder(std::move(dec), split, z, opts);
        std::vector<Triple> known = split.train;
        known.insert(known.end(), split.val.begin(), split.val.end());
        known.insert(known.end(), split.test.begin(), split.test.end());
        RankingReport rep = rank_filtered(dec, split.test, known, z, g.relation_count());
        std::ofstream dout(outdir / "decoder.rrld", std::ios::binary);
        write_decoder(dout, dec);
        append_provenance(dout, manifest_hash(resolved));
        rows = {{"fmrr", fmt(rep.fmrr)},
                {"hits@1", fmt(rep.hits1)},
                {"hits@3", fmt(rep.hits3)},
                {"hits@10", fmt(rep.hits10)}};
    }
    write_metrics(outdir / "metrics.tsv", resolved, rows);
    for (const auto& [k, v] : rows) std::cout << k << '\t' << v << '\n';
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"frozen relational graph embeddings: ingest, embed, classify, rank"};
    app.require_subcommand(1);

    // ingest
    auto* ingest = app.add_subcommand("ingest", "parse N-Triples into a graph cache");
    std::string in_path, out_path;
    ingest->add_option("input", in_path, "N-Triples file (.nt or .nt.gz)")->required();
    ingest->add_option("-o,--output", out_path, "graph cache output (.rrgx)")->required();

    // stats
    auto* stats = app.add_subcommand("stats", "dataset statistics");
    std::string stats_in;
    stats->add_option("input", stats_in, "graph cache")->required();

    // prune
    auto* prune = app.add_subcommand("prune", "k-hop subgraph around labelled nodes");
    std::string prune_in, prune_out, prune_labels;
    std::uint32_t prune_hops = 2;
    prune->add_option("input", prune_in)->required();
    prune->add_option("-o,--output", prune_out)->required();
    prune->add_option("--labels", prune_labels, "label TSV; its nodes seed the BFS")
        ->required();
    prune->add_option("--hops", prune_hops)->required();

    // cut
    auto* cut = app.add_subcommand("cut", "remove low-degree nodes");
    std::string cut_in, cut_out, cut_labels;
    std::uint32_t cut_threshold = 5;
    cut->add_option("input", cut_in)->required();
    cut->add_option("-o,--output", cut_out)->required();
    cut->add_option("--threshold", cut_threshold)->required();
    cut->add_option("--protect-labels", cut_labels, "label TSV; its nodes are kept");

    // filter-relations
    auto* filt = app.add_subcommand("filter-relations",
                                    "keep relations scoring >= fraction of the max");
    std::string filt_in, filt_out, filt_scores;
    double filt_fraction = 0.6;
    filt->add_option("input", filt_in)->required();
    filt->add_option("-o,--output", filt_out)->required();
    filt->add_option("--scores", filt_scores, "TSV relation_iri<TAB>score")->required();
    filt->add_option("--keep-fraction", filt_fraction);

    // embed
    auto* embed_cmd = app.add_subcommand("embed", "compute frozen node embeddings");
    std::string embed_in, embed_out, embed_tsv;
    EmbedFlags embed_flags;
    embed_cmd->add_option("input", embed_in)->required();
    embed_cmd->add_option("-o,--output", embed_out, "embedding file (.rrem)")->required();
    embed_cmd->add_option("--tsv", embed_tsv, "also export TSV");
    embed_flags.attach(embed_cmd);

    // classify
    auto* cls = app.add_subcommand("classify", "train and evaluate the node classifier");
    std::string cls_graph, cls_emb, cls_labels, cls_model = "model.rrcm",
                                                cls_metrics = "metrics.tsv";
    cls->add_option("--graph", cls_graph)->required();
    cls->add_option("--embeddings", cls_emb)->required();
    cls->add_option("--labels", cls_labels)->required();
    cls->add_option("-o,--model", cls_model);
    cls->add_option("--metrics", cls_metrics);

    // grid
    auto* grid = app.add_subcommand("grid", "hyperparameter grid search");
    std::string grid_graph, grid_labels, grid_out = "grid.tsv";
    std::vector<std::uint32_t> grid_layers, grid_dims;
    std::vector<std::uint64_t> grid_seeds;
    double grid_budget = 0.0;
    bool grid_ppv = true;
    int grid_threads = 1;
    grid->add_option("--graph", grid_graph)->required();
    grid->add_option("--labels", grid_labels)->required();
    grid->add_option("-o,--report", grid_out);
    grid->add_option("--layers-grid", grid_layers);
    grid->add_option("--dims-grid", grid_dims);
    grid->add_option("--seeds", grid_seeds);
    grid->add_option("--memory-budget-gb", grid_budget);
    grid->add_flag("--ppv,!--no-ppv", grid_ppv);
    grid->add_option("--threads", grid_threads);

    // linkpred
    auto* lp = app.add_subcommand("linkpred", "train the ranking decoder and evaluate");
    std::string lp_graph, lp_emb, lp_train, lp_val, lp_test,
        lp_out = "decoder.rrld", lp_metrics = "metrics.tsv";
    std::uint32_t lp_pca = 512, lp_width = 256, lp_epochs = 50, lp_neg = 1;
    std::uint64_t lp_seed = 0;
    double lp_lr = 1e-3;
    int lp_threads = 1;
    lp->add_option("--graph", lp_graph)->required();
    lp->add_option("--embeddings", lp_emb)->required();
    lp->add_option("--train", lp_train)->required();
    lp->add_option("--val", lp_val)->required();
    lp->add_option("--test", lp_test)->required();
    lp->add_option("-o,--decoder", lp_out);
    lp->add_option("--metrics", lp_metrics);
    lp->add_option("--pca", lp_pca);
    lp->add_option("--width", lp_width);
    lp->add_option("--seed", lp_seed);
    lp->add_option("--epochs", lp_epochs);
    lp->add_option("--learning-rate", lp_lr);
    lp->add_option("--neg-per-pos", lp_neg);
    lp->add_option("--threads", lp_threads);

    // estimate-memory
    auto* est = app.add_subcommand("estimate-memory", "peak-memory models, decimal GB");
    std::string est_model;
    std::uint64_t est_entities = 0, est_dim = 0, est_bases = 0, est_rels = 0,
                  est_layers = 1;
    est->add_option("--model", est_model,
                    "rgcn-params | rgcn-activations | rrgcn-peak")
        ->required();
    est->add_option("--entities", est_entities)->required();
    est->add_option("--dim", est_dim)->required();
    est->add_option("--bases", est_bases);
    est->add_option("--directed-relations", est_rels);
    est->add_option("--layers", est_layers);

    // verify
    auto* verify = app.add_subcommand("verify",
                                      "check an artifact against its manifest hash");
    std::string verify_path;
    verify->add_option("artifact", verify_path)->required();

    // run
    auto* run = app.add_subcommand("run", "execute a full pipeline manifest");
    std::string run_manifest;
    run->add_option("manifest", run_manifest, "experiment manifest (JSON)")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : kExitValidation;
    }

    try {
        if (*ingest) return cmd_ingest(in_path, out_path);
        if (*stats) return cmd_stats(stats_in);
        if (*prune) return cmd_prune(prune_in, prune_out, prune_labels, prune_hops);
        if (*cut) return cmd_cut(cut_in, cut_out, cut_threshold, cut_labels);
        if (*filt) return cmd_filter_relations(filt_in, filt_out, filt_scores,
                                               filt_fraction);
        if (*embed_cmd) return cmd_embed(embed_in, embed_out, embed_tsv, embed_flags);
        if (*cls) return cmd_classify(cls_graph, cls_emb, cls_labels, cls_model,
                                      cls_metrics);
        if (*grid)
            return cmd_grid(grid_graph, grid_labels, grid_out, grid_layers, grid_dims,
                            grid_seeds, grid_budget, grid_ppv, grid_threads);
        if (*lp)
            return cmd_linkpred(lp_graph, lp_emb, lp_train, lp_val, lp_test, lp_out,
                                lp_metrics, lp_pca, lp_width, lp_seed, lp_epochs, lp_lr,
                                lp_neg, lp_threads);
        if (*est)
            return cmd_estimate_memory(est_model, est_entities, est_dim, est_bases,
                                       est_rels, est_layers);
        if (*verify) return cmd_verify(verify_path);
        if (*run) return cmd_run(run_manifest);
    } catch (const ValidationError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitValidation;
    } catch (const CapacityError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitCapacity;
    } catch (const ParseError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitData;
    } catch (const DataError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitData;
    }
    return 0;
}
