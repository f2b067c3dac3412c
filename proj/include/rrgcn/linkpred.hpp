#pragma once

#include <cstdint>
#include <iosfwd>
#include <unordered_set>
#include <vector>

#include "rrgcn/classify.hpp"
#include "rrgcn/embedder.hpp"
#include "rrgcn/graph.hpp"

namespace rrgcn {

// ---- PCA -------------------------------------------------------------------

struct PcaModel {
    VecD mean, scale;   // per-dimension normalisation, from the fitted data
    MatD components;    // d_in x k, orthonormal columns
    VecD explained_variance;  // length k, descending

    Eigen::Index input_dim() const { return components.rows(); }
    Eigen::Index output_dim() const { return components.cols(); }
};

/// Top-k principal directions of the normalised data (dense eigensolver on
/// the covariance; exact up to floating point).
PcaModel fit_pca(const MatF& x, std::uint32_t k);

/// Normalise and project: (x - mean) / scale * components.
MatD pca_transform(const PcaModel& pca, const MatF& x);

// ---- decoder ----------------------------------------------------------------

/// Three affine layers (ReLU after the first two) mapping projected entity
/// embeddings into the DistMult space, plus per-relation diagonal factors.
/// score(h, r, t) = <f(z_h) . w_r, f(z_t)>, symmetric in head/tail.
struct Decoder {
    MatD w1, w2, w3;          // width x d_in, width x width, width x width
    VecD b1, b2, b3;          // width
    MatD relation_weights;    // |R_original| x width

    Eigen::Index input_dim() const { return w1.cols(); }
    Eigen::Index width() const { return w1.rows(); }
};

/// Glorot-initialised decoder, deterministic from the seed.
Decoder init_decoder(std::uint32_t input_dim, std::uint32_t width,
                     std::uint32_t relation_count, std::uint64_t seed);

/// f(z): the three-layer transform of a batch of rows.
MatD decoder_transform(const Decoder& dec, const MatD& z);

double score(const Decoder& dec, const Eigen::Ref<const VecD>& z_head,
             const Eigen::Ref<const VecD>& z_tail, RelationId r);

struct DecoderTrainOptions {
    std::uint32_t neg_per_pos = 1;
    std::uint32_t batch_size = 1024;
    std::uint32_t max_epochs = 50;
    std::uint32_t patience = 3;        // epochs without validation FMRR gain
    std::uint32_t val_sample = 500;    // validation triples scored per epoch
    double learning_rate = 1e-3;
    double clip_norm = 1.0;
    std::uint64_t seed = 0;
    bool strict_negatives = false;     // resample negatives found in train
};

struct RankingReport {
    double fmrr = 0.0;
    double hits1 = 0.0, hits3 = 0.0, hits10 = 0.0;
    std::uint64_t ranked = 0;  // ranked directions (2 per test triple)
    std::vector<double> per_relation_fmrr;
    std::vector<std::uint64_t> per_relation_count;
};

/// BCE over positives and uniformly corrupted negatives (head or tail with
/// probability 1/2), plain SGD with gradient clipping, explicit backprop.
/// Epoch count picked by validation FMRR; returns the best snapshot.
Decoder train_decoder(Decoder dec, const TripleSplit& triples, const MatD& entity_z,
                      const DecoderTrainOptions& opts);

/// Filtered ranking over all entities, both corruption directions,
/// pessimistic tie-breaking.
RankingReport rank_filtered(const Decoder& dec, const std::vector<Triple>& test,
                            const std::vector<Triple>& all_known, const MatD& entity_z,
                            std::uint32_t relation_count);

// Exposed for gradient tests: mean BCE loss of a batch, and its gradient
// accumulated into a decoder-shaped struct.
struct LabeledTriple {
    Triple triple;
    double label;  // 1 true, 0 corrupted
};

double decoder_loss(const Decoder& dec, const std::vector<LabeledTriple>& batch,
                    const MatD& entity_z);
Decoder decoder_gradient(const Decoder& dec, const std::vector<LabeledTriple>& batch,
                         const MatD& entity_z);

/// Checkpoint, magic `RRLD`.
void write_decoder(std::ostream& out, const Decoder& dec);
Decoder read_decoder(std::istream& in);

}  // namespace rrgcn
