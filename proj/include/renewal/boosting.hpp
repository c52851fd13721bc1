#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "renewal/losses.hpp"
#include "renewal/matrix.hpp"
#include "renewal/parallel.hpp"

namespace renewal {

enum class BoostMode { FirstOrder, SecondOrder };

struct BoostConfig {
    double eta = 0.1;               // shrinkage, (0, 1]
    int max_depth = 6;              // d >= 0; 0 grows a single leaf
    int min_child_weight = 1;       // nu: minimum instance count per node
    double subsample = 1.0;         // delta, fraction of rows per round
    double colsample = 1.0;         // kappa, fraction of features per tree (SecondOrder)
    double gamma = 0.0;             // per-leaf complexity penalty (SecondOrder)
    double lambda = 0.0;            // squared-L2 penalty on leaf weights (SecondOrder)
    double alpha = 0.0;             // L1 penalty on leaf weights (SecondOrder)
    int max_rounds = 100;           // L
    int early_stop_patience = 0;    // 0 disables early stopping
    BoostMode mode = BoostMode::SecondOrder;
    std::uint64_t seed = 0;
    Exec exec = Exec::Parallel;

    void validate() const;
};

struct TreeNode {
    int feature = -1;        // split feature, -1 for a leaf
    double threshold = 0.0;  // goes left when x[feature] <= threshold
    int left = -1;
    int right = -1;
    double weight = 0.0;     // leaf prediction before eta scaling

    bool is_leaf() const { return feature < 0; }
};

struct DecisionTree {
    std::vector<TreeNode> nodes;  // nodes[0] is the root

    double predict(const double* x) const {
        int idx = 0;
        while (!nodes[static_cast<std::size_t>(idx)].is_leaf()) {
            const TreeNode& n = nodes[static_cast<std::size_t>(idx)];
            idx = x[n.feature] <= n.threshold ? n.left : n.right;
        }
        return nodes[static_cast<std::size_t>(idx)].weight;
    }
    int leaf_count() const {
        int c = 0;
        for (const auto& n : nodes) c += n.is_leaf() ? 1 : 0;
        return c;
    }
};

struct FitDiagnostics {
    std::vector<double> train_loss;    // mean loss per round (after the update)
    std::vector<double> metric;        // callback metric per round (index 0 = base score)
    int best_round = 0;                // rounds kept after truncation
    std::size_t hess_clamped = 0;      // truncated-Gaussian hessian floor hits
};

struct Ensemble {
    std::vector<double> base_score;                   // one per score class
    std::vector<std::vector<DecisionTree>> trees;     // [round][class]
    double eta = 0.1;
    std::string loss_name;
    int num_features = 0;
    BoostConfig config;
    FitDiagnostics diagnostics;

    int rounds() const { return static_cast<int>(trees.size()); }
    int num_classes() const { return static_cast<int>(base_score.size()); }

    // Raw scores (per class) for one feature row.
    void predict_row(const double* x, double* scores) const;
    Matrix predict(const Matrix& x, Exec exec = Exec::Parallel) const;
};

// Minimizer of G*w + H*w^2/2 + alpha*|w| + lambda*w^2:
//   w = -sign(G) * max(|G| - alpha, 0) / (H + 2*lambda).
// Throws "unbounded leaf solve" when the denominator vanishes with |G| > alpha.
double leaf_weight(double grad_sum, double hess_sum, double lambda, double alpha);

struct SplitCandidate {
    int feature = -1;
    double threshold = 0.0;
    double gain = 0.0;
};

struct NodeInstances {
    const Matrix* x = nullptr;
    std::vector<int> rows;
    const std::vector<double>* grad = nullptr;  // indexed by row id
    const std::vector<double>* hess = nullptr;
};

// Exact greedy search over sorted unique feature values. Gain is
// score(left) + score(right) - score(parent) - gamma with
// score(S) = max(|G|-alpha, 0)^2 / (2 (H + 2 lambda)). Returns the best
// candidate with positive gain, ties broken by (lowest feature index,
// lowest threshold); std::nullopt when no split qualifies.
std::optional<SplitCandidate> best_split(const NodeInstances& node,
                                         const std::vector<int>& candidate_features,
                                         const BoostConfig& config);

// Metric hook evaluated each round; lower is better. Receives the training
// scores and the partial ensemble fitted so far (round 0 is the base score).
// Fitting stops once the metric has not improved for early_stop_patience
// consecutive rounds and the ensemble is truncated at the best round.
struct Ensemble;
using RoundCallback =
    std::function<double(int round, const Matrix& scores, const Ensemble& partial)>;

Ensemble fit_boosted(const Matrix& x, const std::vector<double>& targets, Loss& loss,
                     const BoostConfig& config, const RoundCallback& callback = nullptr);

}  // namespace renewal
