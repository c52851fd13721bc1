#include "renewal/boosting.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "renewal/prng.hpp"

namespace renewal {

void BoostConfig::validate() const {
    if (eta <= 0.0 || eta > 1.0) throw std::invalid_argument("BoostConfig: eta outside (0,1]");
    if (max_depth < 0) throw std::invalid_argument("BoostConfig: max_depth < 0");
    if (min_child_weight < 0) throw std::invalid_argument("BoostConfig: min_child_weight < 0");
    if (subsample <= 0.0 || subsample > 1.0)
        throw std::invalid_argument("BoostConfig: subsample outside (0,1]");
    if (colsample <= 0.0 || colsample > 1.0)
        throw std::invalid_argument("BoostConfig: colsample outside (0,1]");
    if (gamma < 0.0 || lambda < 0.0 || alpha < 0.0)
        throw std::invalid_argument("BoostConfig: negative regularization penalty");
    if (max_rounds < 1) throw std::invalid_argument("BoostConfig: max_rounds < 1");
    if (early_stop_patience < 0)
        throw std::invalid_argument("BoostConfig: early_stop_patience < 0");
}

double leaf_weight(double grad_sum, double hess_sum, double lambda, double alpha) {
    if (hess_sum < 0.0) throw std::invalid_argument("leaf_weight: negative hessian sum");
    const double shrunk = std::max(std::abs(grad_sum) - alpha, 0.0);
    if (shrunk == 0.0) return 0.0;
    const double denom = hess_sum + 2.0 * lambda;
    if (denom <= 0.0) throw std::runtime_error("unbounded leaf solve");
    return -(grad_sum > 0.0 ? 1.0 : -1.0) * shrunk / denom;
}

namespace {

// -max_w objective: larger is a better node fit.
double node_score(double grad_sum, double hess_sum, double lambda, double alpha) {
    const double shrunk = std::max(std::abs(grad_sum) - alpha, 0.0);
    if (shrunk == 0.0) return 0.0;
    const double denom = hess_sum + 2.0 * lambda;
    if (denom <= 0.0) return 0.0;
    return 0.5 * shrunk * shrunk / denom;
}

struct FeatureBest {
    bool found = false;
    double threshold = 0.0;
    double gain = -std::numeric_limits<double>::infinity();
};

FeatureBest scan_feature(const NodeInstances& node, int feature, const BoostConfig& config,
                         std::vector<std::pair<double, int>>& scratch) {
    const auto& rows = node.rows;
    scratch.clear();
    scratch.reserve(rows.size());
    for (int r : rows) scratch.emplace_back((*node.x)(static_cast<std::size_t>(r),
                                                      static_cast<std::size_t>(feature)),
                                            r);
    std::sort(scratch.begin(), scratch.end());

    double total_g = 0.0, total_h = 0.0;
    for (int r : rows) {
        total_g += (*node.grad)[static_cast<std::size_t>(r)];
        total_h += (*node.hess)[static_cast<std::size_t>(r)];
    }
    const double parent = node_score(total_g, total_h, config.lambda, config.alpha);

    FeatureBest best;
    double left_g = 0.0, left_h = 0.0;
    std::size_t left_n = 0;
    const std::size_t n = scratch.size();
    for (std::size_t k = 0; k + 1 < n; ++k) {
        left_g += (*node.grad)[static_cast<std::size_t>(scratch[k].second)];
        left_h += (*node.hess)[static_cast<std::size_t>(scratch[k].second)];
        ++left_n;
        if (scratch[k].first == scratch[k + 1].first) continue;  // not a value boundary
        if (left_n < static_cast<std::size_t>(config.min_child_weight)) continue;
        if (n - left_n < static_cast<std::size_t>(config.min_child_weight)) continue;
        const double gain = node_score(left_g, left_h, config.lambda, config.alpha) +
                            node_score(total_g - left_g, total_h - left_h, config.lambda,
                                       config.alpha) -
                            parent - config.gamma;
        if (gain > best.gain) {
            best.found = true;
            best.gain = gain;
            best.threshold = scratch[k].first;
        }
    }
    return best;
}

}  // namespace

std::optional<SplitCandidate> best_split(const NodeInstances& node,
                                         const std::vector<int>& candidate_features,
                                         const BoostConfig& config) {
    if (node.rows.size() < 2 * static_cast<std::size_t>(std::max(config.min_child_weight, 1)))
        return std::nullopt;

    const std::size_t nf = candidate_features.size();
    std::vector<FeatureBest> per_feature(nf);
    if (config.exec == Exec::Parallel) {
#pragma omp parallel
        {
            std::vector<std::pair<double, int>> scratch;
#pragma omp for schedule(static)
            for (std::ptrdiff_t f = 0; f < static_cast<std::ptrdiff_t>(nf); ++f)
                per_feature[static_cast<std::size_t>(f)] =
                    scan_feature(node, candidate_features[static_cast<std::size_t>(f)], config,
                                 scratch);
        }
    } else {
        std::vector<std::pair<double, int>> scratch;
        for (std::size_t f = 0; f < nf; ++f)
            per_feature[f] = scan_feature(node, candidate_features[f], config, scratch);
    }

    // Deterministic merge: higher gain, then lower feature index, then lower
    // threshold. candidate_features is ascending, so scanning in order keeps
    // the tie-break exact regardless of thread schedule.
    SplitCandidate best;
    bool found = false;
    for (std::size_t f = 0; f < nf; ++f) {
        const FeatureBest& fb = per_feature[f];
        if (!fb.found || fb.gain <= 0.0) continue;
        const bool better =
            !found || fb.gain > best.gain ||
            (fb.gain == best.gain && (candidate_features[f] < best.feature ||
                                      (candidate_features[f] == best.feature &&
                                       fb.threshold < best.threshold)));
        if (better) {
            found = true;
            best.feature = candidate_features[f];
            best.threshold = fb.threshold;
            best.gain = fb.gain;
        }
    }
    if (!found) return std::nullopt;
    return best;
}

namespace {

// 1-D Newton minimization of sum_i L(y_i, f_i + w) over the leaf, used by
// the first-order algorithm where leaf constants re-minimize the true loss.
double first_order_leaf_weight(const std::vector<int>& rows, const std::vector<double>& targets,
                               const Matrix& scores, const Loss& loss, int k) {
    double w = 0.0;
    for (int iter = 0; iter < 30; ++iter) {
        double g = 0.0, h = 0.0;
        for (int r : rows) {
            double gi = 0.0, hi = 0.0;
            loss.grad_hess_shifted(targets[static_cast<std::size_t>(r)],
                                   scores.row(static_cast<std::size_t>(r)), k, w, gi, hi);
            g += gi;
            h += hi;
        }
        // Step cap keeps pure-leaf logit solves from running to infinity.
        const double step = std::clamp(g / std::max(h, 1e-12), -10.0, 10.0);
        w -= step;
        if (std::abs(step) < 1e-13) break;
    }
    return w;
}

struct TreeGrower {
    const Matrix& x;
    const std::vector<double>& targets;
    const Matrix& scores;
    const std::vector<double>& grad;
    const std::vector<double>& hess;
    const std::vector<int>& features;
    const BoostConfig& config;
    const Loss& loss;
    int class_index;

    DecisionTree tree;

    void grow(std::vector<int> rows) {
        build_node(std::move(rows), 0);
    }

    int build_node(std::vector<int> rows, int depth) {
        const int idx = static_cast<int>(tree.nodes.size());
        tree.nodes.emplace_back();

        std::optional<SplitCandidate> split;
        if (depth < config.max_depth) {
            NodeInstances node{&x, rows, &grad, &hess};
            split = best_split(node, features, config);
        }
        if (!split) {
            double w;
            if (config.mode == BoostMode::FirstOrder) {
                w = first_order_leaf_weight(rows, targets, scores, loss, class_index);
            } else {
                double g = 0.0, h = 0.0;
                for (int r : rows) {
                    g += grad[static_cast<std::size_t>(r)];
                    h += hess[static_cast<std::size_t>(r)];
                }
                w = leaf_weight(g, h, config.lambda, config.alpha);
            }
            tree.nodes[static_cast<std::size_t>(idx)].weight = w;
            return idx;
        }

        std::vector<int> left_rows, right_rows;
        left_rows.reserve(rows.size());
        right_rows.reserve(rows.size());
        for (int r : rows) {
            if (x(static_cast<std::size_t>(r), static_cast<std::size_t>(split->feature)) <=
                split->threshold)
                left_rows.push_back(r);
            else
                right_rows.push_back(r);
        }
        rows.clear();
        rows.shrink_to_fit();

        const int left = build_node(std::move(left_rows), depth + 1);
        const int right = build_node(std::move(right_rows), depth + 1);
        TreeNode& n = tree.nodes[static_cast<std::size_t>(idx)];
        n.feature = split->feature;
        n.threshold = split->threshold;
        n.left = left;
        n.right = right;
        return idx;
    }
};

}  // namespace

void Ensemble::predict_row(const double* x, double* scores) const {
    const int s = num_classes();
    for (int k = 0; k < s; ++k) scores[k] = base_score[static_cast<std::size_t>(k)];
    for (const auto& round : trees)
        for (int k = 0; k < s; ++k) scores[k] += eta * round[static_cast<std::size_t>(k)].predict(x);
}

Matrix Ensemble::predict(const Matrix& x, Exec exec) const {
    if (static_cast<int>(x.cols()) != num_features)
        throw std::invalid_argument("Ensemble::predict: feature count mismatch (got " +
                                    std::to_string(x.cols()) + ", trained on " +
                                    std::to_string(num_features) + ")");
    Matrix out(x.rows(), static_cast<std::size_t>(num_classes()));
    parallel_for(static_cast<std::ptrdiff_t>(x.rows()), exec, [&](std::ptrdiff_t i) {
        predict_row(x.row(static_cast<std::size_t>(i)), out.row(static_cast<std::size_t>(i)));
    });
    return out;
}

Ensemble fit_boosted(const Matrix& x, const std::vector<double>& targets, Loss& loss,
                     const BoostConfig& config, const RoundCallback& callback) {
    config.validate();
    const std::size_t n = x.rows();
    const int k_features = static_cast<int>(x.cols());
    const int s = loss.num_scores();
    if (n < 2) throw std::invalid_argument("fit_boosted: need at least 2 rows");
    if (targets.size() != n) throw std::invalid_argument("fit_boosted: target size mismatch");
    for (double t : targets) {
        if (s > 1 && (t < 0.0 || t >= s || t != std::floor(t)))
            throw std::invalid_argument("fit_boosted: target incompatible with loss arity");
    }

    Ensemble ens;
    ens.eta = config.eta;
    ens.loss_name = loss.name();
    ens.num_features = k_features;
    ens.config = config;
    ens.base_score = loss.base_score(targets);

    Matrix scores(n, static_cast<std::size_t>(s));
    for (std::size_t i = 0; i < n; ++i)
        for (int k = 0; k < s; ++k) scores(i, k) = ens.base_score[static_cast<std::size_t>(k)];

    double best_metric = std::numeric_limits<double>::infinity();
    int best_round = 0;
    int since_best = 0;
    if (callback) {
        best_metric = callback(0, scores);
        ens.diagnostics.metric.push_back(best_metric);
    }

    const int sampled_rows = std::clamp(
        static_cast<int>(std::llround(config.subsample * static_cast<double>(n))), 1,
        static_cast<int>(n));
    const int sampled_cols =
        config.mode == BoostMode::SecondOrder
            ? std::clamp(static_cast<int>(std::llround(config.colsample *
                                                       static_cast<double>(k_features))),
                         1, k_features)
            : k_features;

    std::vector<double> grad(n), hess(n), row_loss(n);
    std::vector<int> all_rows(n);
    std::iota(all_rows.begin(), all_rows.end(), 0);

    // The first-order algorithm fits a plain regression tree to the
    // pseudo-residuals: unit hessians and no second-order penalties.
    BoostConfig grow_config = config;
    if (config.mode == BoostMode::FirstOrder) {
        grow_config.gamma = 0.0;
        grow_config.lambda = 0.0;
        grow_config.alpha = 0.0;
        grow_config.colsample = 1.0;
    }

    for (int round = 1; round <= config.max_rounds; ++round) {
        loss.begin_round(targets, scores);

        std::vector<int> rows;
        if (sampled_rows == static_cast<int>(n)) {
            rows = all_rows;
        } else {
            Prng rng(config.seed, 0x524f5753ULL, static_cast<std::uint64_t>(round));
            rows = sample_without_replacement(rng, static_cast<int>(n), sampled_rows);
        }

        std::vector<DecisionTree> round_trees(static_cast<std::size_t>(s));
        for (int k = 0; k < s; ++k) {
            std::vector<int> features(static_cast<std::size_t>(k_features));
            std::iota(features.begin(), features.end(), 0);
            if (sampled_cols < k_features) {
                Prng rng(config.seed, 0x434f4c53ULL,
                         static_cast<std::uint64_t>(round) * static_cast<std::uint64_t>(s) +
                             static_cast<std::uint64_t>(k));
                features = sample_without_replacement(rng, k_features, sampled_cols);
            }

            parallel_for(static_cast<std::ptrdiff_t>(rows.size()), config.exec,
                         [&](std::ptrdiff_t j) {
                             const int r = rows[static_cast<std::size_t>(j)];
                             loss.grad_hess(targets[static_cast<std::size_t>(r)],
                                            scores.row(static_cast<std::size_t>(r)), k,
                                            grad[static_cast<std::size_t>(r)],
                                            hess[static_cast<std::size_t>(r)]);
                         });
            if (loss.name() == "truncated_gaussian") {
                for (int r : rows)
                    if (hess[static_cast<std::size_t>(r)] <= kTruncHessFloor)
                        ++ens.diagnostics.hess_clamped;
            }
            if (config.mode == BoostMode::FirstOrder)
                for (int r : rows) hess[static_cast<std::size_t>(r)] = 1.0;

            TreeGrower grower{x, targets, scores, grad, hess, features, grow_config, loss, k};
            grower.grow(rows);
            round_trees[static_cast<std::size_t>(k)] = std::move(grower.tree);
        }

        for (int k = 0; k < s; ++k) {
            const DecisionTree& tree = round_trees[static_cast<std::size_t>(k)];
            parallel_for(static_cast<std::ptrdiff_t>(n), config.exec, [&](std::ptrdiff_t i) {
                scores(static_cast<std::size_t>(i), static_cast<std::size_t>(k)) +=
                    config.eta * tree.predict(x.row(static_cast<std::size_t>(i)));
            });
        }
        ens.trees.push_back(std::move(round_trees));

        parallel_for(static_cast<std::ptrdiff_t>(n), config.exec, [&](std::ptrdiff_t i) {
            row_loss[static_cast<std::size_t>(i)] =
                loss.value(targets[static_cast<std::size_t>(i)],
                           scores.row(static_cast<std::size_t>(i)));
        });
        double total = 0.0;
        for (double v : row_loss) total += v;
        ens.diagnostics.train_loss.push_back(total / static_cast<double>(n));

        if (callback) {
            const double metric = callback(round, scores);
            ens.diagnostics.metric.push_back(metric);
            if (metric < best_metric) {
                best_metric = metric;
                best_round = round;
                since_best = 0;
            } else {
                ++since_best;
                if (config.early_stop_patience > 0 && since_best >= config.early_stop_patience)
                    break;
            }
        } else {
            best_round = round;
        }
    }

    if (callback) ens.trees.resize(static_cast<std::size_t>(best_round));
    ens.diagnostics.best_round = best_round;
    return ens;
}

}  // namespace renewal
