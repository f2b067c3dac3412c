#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <string>

#include "rrgcn/graph.hpp"
#include "rrgcn/rng.hpp"

namespace rrgcn {

struct EmbedConfig {
    std::uint32_t dim = 512;        // embedding size e
    std::uint32_t layers = 2;       // n
    std::uint64_t seed = 0;         // master seed s
    bool ppv = true;
    bool residual = false;          // literal-pseudocode ablation, see conv_layer
    std::uint64_t memory_budget_bytes = 0;  // 0 = unlimited
};

struct NodeEmbeddings {
    MatF data;  // |V| x dim (ppv off) or |V| x 2*dim (ppv on, [h || p])
    std::uint64_t seed = 0;
    std::uint32_t dim = 0;
    std::uint32_t layers = 0;
    bool ppv = false;
    std::array<std::uint8_t, 32> graph_hash{};
};

/// One frozen message-passing layer, pre-activation:
///   X = sum_r A_r * H * W_r^T + H * W_0^T
/// with A_r the 1/|N_r(i)| row-normalised adjacency of directed relation r.
/// Weights are regenerated from `seeds` one relation at a time (W_r Glorot
/// uniform e x e). With `residual`, the literal pseudocode variant: H is
/// additionally added to X once per directed relation and once at the
/// self-loop step.
MatF conv_layer(const GraphIndex& g, const MatF& h, const SeedSchedule& seeds,
                bool residual = false);

/// Proportion of strictly positive values per dimension over the relation-
/// agnostic neighbourhood (forward and inverse edges, distinct neighbours,
/// self excluded). Isolated nodes get all-zero rows.
MatF ppv(const GraphIndex& g, const MatF& h);

/// Full n-layer pipeline: H0 ~ normal(sigma^2 = 1/e); H = relu(conv(H));
/// P = ppv(H); then (n-1) times H = relu(conv(H)), P = ppv(conv(P)), all
/// convolutions reusing the same seed schedule. No activation on P.
NodeEmbeddings embed(const GraphIndex& g, const EmbedConfig& cfg);

enum class MemoryModel {
    RgcnParams,        // 2 * B * |V| * e * 4 bytes (weights + gradients)
    RgcnActivations,   // (R_directed + 1) * |V| * e * 4 bytes per layer
    RrgcnPeak,         // 4 * |V| * e * 4 bytes
};

struct MemoryEstimateInput {
    std::uint64_t entities = 0;
    std::uint64_t bases = 0;              // RgcnParams
    std::uint64_t directed_relations = 0; // RgcnActivations
    std::uint64_t layers = 1;             // RgcnActivations
    std::uint64_t dim = 0;
};

std::uint64_t estimate_memory(MemoryModel model, const MemoryEstimateInput& in);

/// Formats a byte count as decimal gigabytes with two digits, e.g. "22.89".
std::string format_gb(std::uint64_t bytes);

// ---- instrumentation ------------------------------------------------------

/// Tracks live bytes of the dense state matrices inside embed(); used by the
/// memory invariant tests. Thread-local free-running counters.
struct MemoryGauge {
    static void reset();
    static void add(std::uint64_t bytes);
    static void remove(std::uint64_t bytes);
    static std::uint64_t peak();
    static std::uint64_t current();
};

// ---- embedding file -------------------------------------------------------

/// Embedding file, magic `RREM`: header (seed, e, n, ppv, graph hash,
/// provenance hash) then |V| x d_out little-endian f32 rows.
void write_embeddings(std::ostream& out, const NodeEmbeddings& emb,
                      const std::array<std::uint8_t, 32>& provenance_hash);
NodeEmbeddings read_embeddings(std::istream& in,
                               std::array<std::uint8_t, 32>* provenance_hash = nullptr);

/// TSV export: node_iri<TAB>v1<TAB>...
void write_embeddings_tsv(std::ostream& out, const NodeEmbeddings& emb,
                          const GraphIndex& g);

}  // namespace rrgcn
