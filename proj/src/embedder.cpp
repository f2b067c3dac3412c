#include "rrgcn/embedder.hpp"

#include <algorithm>
#include <bit>
#include <cstdio>
#include <cstring>
#include <istream>
#include <ostream>

static_assert(std::endian::native == std::endian::little,
              "embedding file I/O assumes a little-endian host");

namespace rrgcn {

// ---- memory gauge ----------------------------------------------------------

namespace {
thread_local std::uint64_t g_gauge_current = 0;
thread_local std::uint64_t g_gauge_peak = 0;
}  // namespace

void MemoryGauge::reset() { g_gauge_current = g_gauge_peak = 0; }
void MemoryGauge::add(std::uint64_t bytes) {
    g_gauge_current += bytes;
    g_gauge_peak = std::max(g_gauge_peak, g_gauge_current);
}
void MemoryGauge::remove(std::uint64_t bytes) { g_gauge_current -= bytes; }
std::uint64_t MemoryGauge::peak() { return g_gauge_peak; }
std::uint64_t MemoryGauge::current() { return g_gauge_current; }

namespace {

// RAII registration of a state matrix with the gauge.
class TrackedMat {
public:
    TrackedMat() = default;
    TrackedMat(Eigen::Index rows, Eigen::Index cols) { allocate(rows, cols); }
    ~TrackedMat() { release(); }
    TrackedMat(const TrackedMat&) = delete;
    TrackedMat& operator=(const TrackedMat&) = delete;

    void allocate(Eigen::Index rows, Eigen::Index cols) {
        release();
        mat_.resize(rows, cols);
        bytes_ = std::uint64_t(rows) * std::uint64_t(cols) * sizeof(float);
        MemoryGauge::add(bytes_);
    }
    void release() {
        if (bytes_ > 0) {
            mat_.resize(0, 0);
            MemoryGauge::remove(bytes_);
            bytes_ = 0;
        }
    }
    MatF& get() { return mat_; }
    void swap(TrackedMat& other) {
        mat_.swap(other.mat_);
        std::swap(bytes_, other.bytes_);
    }
    /// Hands the matrix to the caller; gauge keeps counting it.
    MatF take() {
        bytes_ = 0;
        return std::move(mat_);
    }

private:
    MatF mat_;
    std::uint64_t bytes_ = 0;
};

// Rows processed per relation-product chunk; bounds the scratch buffers that
// make up the fixed overhead on top of the four state matrices.
constexpr Eigen::Index kChunkRows = 2048;

// X += A_r * H * W^T for one directed relation, chunked over the nonzero
// rows of A_r so only O(kChunkRows * e) scratch is live at once.
void accumulate_relation(const Csr& csr, const MatF& h, const MatF& weight, MatF& x,
                         MatF& chunk_in, MatF& chunk_out) {
    const Eigen::Index e = h.cols();
    std::vector<NodeId> rows;
    rows.reserve(kChunkRows);
    NodeId node = 0;
    const NodeId n_nodes = NodeId(h.rows());
    while (node < n_nodes) {
        rows.clear();
        for (; node < n_nodes && Eigen::Index(rows.size()) < kChunkRows; ++node) {
            if (csr.degree(node) > 0) rows.push_back(node);
        }
        if (rows.empty()) continue;
        const Eigen::Index m = Eigen::Index(rows.size());
        for (Eigen::Index k = 0; k < m; ++k) {
            NodeId i = rows[std::size_t(k)];
            auto row = chunk_in.row(k);
            row.setZero();
            for (const NodeId* j = csr.begin(i); j != csr.end(i); ++j) row += h.row(*j);
            row *= 1.0f / float(csr.degree(i));
        }
        chunk_out.topRows(m).noalias() = chunk_in.topRows(m) * weight.transpose();
        for (Eigen::Index k = 0; k < m; ++k)
            x.row(rows[std::size_t(k)]) += chunk_out.row(k);
    }
    (void)e;
}

// Pre-activation layer into a caller-provided accumulator.
void conv_into(const GraphIndex& g, const MatF& h, const SeedSchedule& seeds,
               bool residual, MatF& x, MatF& chunk_in, MatF& chunk_out) {
    const auto e = std::uint32_t(h.cols());
    if (h.rows() != Eigen::Index(g.entity_count()))
        throw DataError("conv_layer: state row count does not match entity count");
    x.setZero();
    for (RelationId d = 0; d < g.directed_relation_count(); ++d) {
        MatF w = materialize({e, e, WeightInit::GlorotUniform, 1.0,
                              seeds.relation_seed(d)});
        accumulate_relation(g.adjacency(d), h, w, x, chunk_in, chunk_out);
        if (residual) x += h;
    }
    MatF w0 = materialize({e, e, WeightInit::GlorotUniform, 1.0, seeds.self_loop_seed()});
    x.noalias() += h * w0.transpose();
    if (residual) x += h;
}

void ppv_into(const GraphIndex& g, const MatF& src, MatF& dst) {
    dst.setZero();
    const Eigen::Index e = src.cols();
    for (NodeId i = 0; i < g.entity_count(); ++i) {
        std::vector<NodeId> nb = g.undirected_neighbors(i);
        if (nb.empty()) continue;  // isolated: zero row
        auto row = dst.row(Eigen::Index(i));
        for (NodeId j : nb) {
            for (Eigen::Index k = 0; k < e; ++k)
                if (src(Eigen::Index(j), k) > 0.0f) row(k) += 1.0f;
        }
        row /= float(nb.size());
    }
}

}  // namespace

MatF conv_layer(const GraphIndex& g, const MatF& h, const SeedSchedule& seeds,
                bool residual) {
    MatF x(h.rows(), h.cols());
    MatF chunk_in(kChunkRows, h.cols()), chunk_out(kChunkRows, h.cols());
    conv_into(g, h, seeds, residual, x, chunk_in, chunk_out);
    return x;
}

MatF ppv(const GraphIndex& g, const MatF& h) {
    MatF p(h.rows(), h.cols());
    ppv_into(g, h, p);
    return p;
}

NodeEmbeddings embed(const GraphIndex& g, const EmbedConfig& cfg) {
    if (cfg.dim < 1 || cfg.layers < 1)
        throw DataError("embed: dim and layers must be >= 1");
    const std::uint64_t peak =
        estimate_memory(MemoryModel::RrgcnPeak, {.entities = g.entity_count(),
                                                 .dim = cfg.dim});
    if (cfg.memory_budget_bytes > 0 && peak > cfg.memory_budget_bytes) {
        throw CapacityError("embed: estimated peak " + format_gb(peak) +
                            " GB exceeds budget " + format_gb(cfg.memory_budget_bytes) +
                            " GB (4 state matrices of " +
                            std::to_string(g.entity_count()) + "x" +
                            std::to_string(cfg.dim) + " floats)");
    }

    const Eigen::Index v = g.entity_count();
    const Eigen::Index e = cfg.dim;
    const SeedSchedule seeds = derive_seeds(cfg.seed, 2 * g.relation_count() + 1);

    MatF chunk_in(std::min<Eigen::Index>(kChunkRows, std::max<Eigen::Index>(v, 1)), e);
    MatF chunk_out(chunk_in.rows(), e);

    TrackedMat h_buf, x_buf, p_buf;
    h_buf.allocate(v, e);
    h_buf.get() = materialize({std::uint32_t(v), cfg.dim, WeightInit::Normal,
                               1.0 / double(cfg.dim), cfg.seed});

    x_buf.allocate(v, e);
    conv_into(g, h_buf.get(), seeds, cfg.residual, x_buf.get(), chunk_in, chunk_out);
    x_buf.get() = x_buf.get().cwiseMax(0.0f);  // ReLU
    h_buf.swap(x_buf);

    if (cfg.ppv) {
        p_buf.allocate(v, e);
        ppv_into(g, h_buf.get(), p_buf.get());
    }

    for (std::uint32_t layer = 1; layer < cfg.layers; ++layer) {
        conv_into(g, h_buf.get(), seeds, cfg.residual, x_buf.get(), chunk_in, chunk_out);
        x_buf.get() = x_buf.get().cwiseMax(0.0f);
        h_buf.swap(x_buf);
        if (cfg.ppv) {
            // PPV features are convoluted independently with the same seeds,
            // then re-aggregated; no activation on this path.
            conv_into(g, p_buf.get(), seeds, cfg.residual, x_buf.get(), chunk_in,
                      chunk_out);
            ppv_into(g, x_buf.get(), p_buf.get());
        }
    }

    NodeEmbeddings out;
    out.seed = cfg.seed;
    out.dim = cfg.dim;
    out.layers = cfg.layers;
    out.ppv = cfg.ppv;
    out.graph_hash = graph_content_hash(g);
    if (cfg.ppv) {
        x_buf.release();
        TrackedMat result(v, 2 * e);
        result.get().leftCols(e) = h_buf.get();
        h_buf.release();
        result.get().rightCols(e) = p_buf.get();
        p_buf.release();
        out.data = result.take();
        MemoryGauge::remove(std::uint64_t(v) * std::uint64_t(2 * e) * sizeof(float));
    } else {
        x_buf.release();
        out.data = h_buf.take();
        MemoryGauge::remove(std::uint64_t(v) * std::uint64_t(e) * sizeof(float));
    }
    return out;
}

// ---- memory model ----------------------------------------------------------

namespace {

std::uint64_t checked_mul(std::uint64_t a, std::uint64_t b) {
    std::uint64_t r;
    if (__builtin_mul_overflow(a, b, &r))
        throw CapacityError("estimate_memory: 64-bit overflow");
    return r;
}

}  // namespace

std::uint64_t estimate_memory(MemoryModel model, const MemoryEstimateInput& in) {
    const std::uint64_t cell = checked_mul(checked_mul(in.entities, in.dim), 4);
    switch (model) {
        case MemoryModel::RgcnParams:
            return checked_mul(checked_mul(2, in.bases), cell);
        case MemoryModel::RgcnActivations:
            return checked_mul(checked_mul(in.directed_relations + 1, in.layers), cell);
        case MemoryModel::RrgcnPeak:
            return checked_mul(4, cell);
    }
    throw DataError("estimate_memory: unknown model");
}

std::string format_gb(std::uint64_t bytes) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", double(bytes) / 1e9);
    return buf;
}

// ---- embedding file --------------------------------------------------------

namespace {

constexpr char kEmbMagic[4] = {'R', 'R', 'E', 'M'};
constexpr std::uint16_t kEmbVersion = 1;

template <typename T>
void write_le(std::ostream& out, T v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_le(std::istream& in) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw DataError("truncated embedding file");
    return v;
}

}  // namespace

void write_embeddings(std::ostream& out, const NodeEmbeddings& emb,
                      const std::array<std::uint8_t, 32>& provenance_hash) {
    out.write(kEmbMagic, 4);
    write_le<std::uint16_t>(out, kEmbVersion);
    write_le<std::uint64_t>(out, emb.seed);
    write_le<std::uint32_t>(out, emb.dim);
    write_le<std::uint32_t>(out, emb.layers);
    write_le<std::uint8_t>(out, emb.ppv ? 1 : 0);
    out.write(reinterpret_cast<const char*>(emb.graph_hash.data()), 32);
    out.write(reinterpret_cast<const char*>(provenance_hash.data()), 32);
    write_le<std::uint64_t>(out, std::uint64_t(emb.data.rows()));
    write_le<std::uint32_t>(out, std::uint32_t(emb.data.cols()));
    out.write(reinterpret_cast<const char*>(emb.data.data()),
              std::streamsize(sizeof(float) * std::size_t(emb.data.size())));
}

NodeEmbeddings read_embeddings(std::istream& in,
                               std::array<std::uint8_t, 32>* provenance_hash) {
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kEmbMagic, 4) != 0)
        throw DataError("not an embedding file (bad magic)");
    auto version = read_le<std::uint16_t>(in);
    if (version != kEmbVersion)
        throw DataError("unsupported embedding file version " + std::to_string(version));
    NodeEmbeddings emb;
    emb.seed = read_le<std::uint64_t>(in);
    emb.dim = read_le<std::uint32_t>(in);
    emb.layers = read_le<std::uint32_t>(in);
    emb.ppv = read_le<std::uint8_t>(in) != 0;
    in.read(reinterpret_cast<char*>(emb.graph_hash.data()), 32);
    std::array<std::uint8_t, 32> prov{};
    in.read(reinterpret_cast<char*>(prov.data()), 32);
    if (provenance_hash) *provenance_hash = prov;
    auto rows = read_le<std::uint64_t>(in);
    auto cols = read_le<std::uint32_t>(in);
    emb.data.resize(Eigen::Index(rows), Eigen::Index(cols));
    in.read(reinterpret_cast<char*>(emb.data.data()),
            std::streamsize(sizeof(float) * std::size_t(emb.data.size())));
    if (!in) throw DataError("truncated embedding file");
    return emb;
}

void write_embeddings_tsv(std::ostream& out, const NodeEmbeddings& emb,
                          const GraphIndex& g) {
    for (Eigen::Index i = 0; i < emb.data.rows(); ++i) {
        out << g.entity_name(NodeId(i));
        for (Eigen::Index k = 0; k < emb.data.cols(); ++k) out << '\t' << emb.data(i, k);
        out << '\n';
    }
}

}  // namespace rrgcn
