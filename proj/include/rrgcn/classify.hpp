#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <vector>

#include "rrgcn/embedder.hpp"
#include "rrgcn/graph.hpp"

namespace rrgcn {

using MatD = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using VecD = Eigen::VectorXd;

/// Multinomial logistic regression with L2 penalty, trained by full-batch
/// gradient descent with early stopping on validation log-loss.
struct ClassifierModel {
    MatD weights;  // class_count x d_in
    VecD bias;     // class_count
    VecD feature_mean, feature_scale;  // standardisation, from training rows
    std::uint32_t iterations = 0;
    double best_val_logloss = 0.0;
};

struct TrainOptions {
    double learning_rate = 0.5;
    double l2 = 1e-4;
    std::uint32_t max_iterations = 2000;
    std::uint32_t eval_every = 10;
    std::uint32_t patience = 10;  // evaluations without improvement
};

ClassifierModel train_classifier(const MatF& x_train, const std::vector<std::uint32_t>& y_train,
                                 const MatF& x_val, const std::vector<std::uint32_t>& y_val,
                                 std::uint32_t class_count, const TrainOptions& opts = {});

/// Class probabilities, rows sum to 1.
MatD predict_proba(const ClassifierModel& model, const MatF& x);
std::vector<std::uint32_t> predict(const ClassifierModel& model, const MatF& x);

struct EvalReport {
    double accuracy = 0.0;
    double logloss = 0.0;
    std::vector<std::uint32_t> per_class_correct, per_class_total;
};

EvalReport evaluate(const ClassifierModel& model, const MatF& x_test,
                    const std::vector<std::uint32_t>& y_test, std::uint32_t class_count);

// ---- grid search -----------------------------------------------------------

struct GridCell {
    std::uint32_t layers = 0;
    std::uint32_t dim = 0;
    double mean_logloss = 0.0;
    double se_logloss = 0.0;
    double mean_accuracy = 0.0;
    bool over_budget = false;
};

struct GridSearchReport {
    std::vector<GridCell> cells;
    std::uint32_t chosen_layers = 0;
    std::uint32_t chosen_dim = 0;
};

struct GridSearchOptions {
    std::vector<std::uint32_t> layer_grid{1, 2, 3, 4, 5};
    std::vector<std::uint32_t> dim_grid{256, 384, 512, 768, 1024};
    std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
    std::uint64_t memory_budget_bytes = 0;  // 0 = unlimited
    bool ppv = true;
    std::uint32_t folds = 5;  // used when labels carry no validation split
    TrainOptions train;
};

/// Evaluates every (layers, dim) cell. With a validation split, each seed
/// trains on the train nodes and scores the validation nodes; without one,
/// stratified k-fold CV over the train nodes with one seed per fold. The
/// graph is pruned to the cell's hop radius around all labelled nodes before
/// embedding. Cells whose peak-memory estimate exceeds the budget are
/// skipped and marked.
GridSearchReport grid_search(const GraphIndex& g, const LabeledSplit& labels,
                             const GridSearchOptions& opts);

/// Stratified fold assignment: fold id per sample, class proportions
/// preserved within one sample per class. Deterministic given seed.
std::vector<std::uint32_t> stratified_folds(const std::vector<std::uint32_t>& y,
                                            std::uint32_t folds, std::uint64_t seed);

/// Model snapshot, magic `RRCM`.
void write_classifier(std::ostream& out, const ClassifierModel& model);
ClassifierModel read_classifier(std::istream& in);

}  // namespace rrgcn
