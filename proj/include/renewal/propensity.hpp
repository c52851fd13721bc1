#pragma once

#include <string>
#include <vector>

#include "renewal/boosting.hpp"
#include "renewal/losses.hpp"
#include "renewal/portfolio.hpp"

namespace renewal {

enum class PropensityKind { Discrete, Continuous };

// Treatment-assignment model. Discrete: multinoulli ensemble over the C
// intervals, probabilities via softmax. Continuous: boosted mean model with
// per-interval scales; the density is piecewise truncated Gaussian per
// interval, with piece masses taken from the homoskedastic model so the
// total mass over [lower, upper] is exactly one.
struct PropensityModel {
    PropensityKind kind = PropensityKind::Discrete;
    TreatmentGrid grid;
    Ensemble ensemble;                    // multinoulli scores or mean model
    double sigma = 0.0;                   // homoskedastic scale (continuous)
    std::vector<double> interval_sigma;   // heteroskedastic scales (continuous)
    TruncationBounds bounds;              // continuous support

    // P[T in interval c | X]: softmax probability (discrete) or the
    // model-implied interval mass (continuous).
    std::vector<double> interval_probs(const double* covariates) const;
    // Density of the continuous model at dose t.
    double gps_density(double t, const double* covariates) const;
    // Conditional mean of the continuous model.
    double mean_dose(const double* covariates) const;

    Matrix interval_prob_matrix(const Matrix& covariates, Exec exec = Exec::Parallel) const;
};

struct PsFitConfig {
    BoostConfig boost;
    bool asam_stopping = true;  // early stop on training-set ASAM each round
};

// Multinoulli boosted model on the covariates with interval indices as
// targets, stopped on the ASAM balance metric. Throws if an interval is empty.
PropensityModel fit_discrete_ps(const Portfolio& portfolio, const TreatmentGrid& grid,
                                const PsFitConfig& config);

// Boosted mean model under the truncated Gaussian likelihood with the scale
// re-estimated each round; per-interval scales from the interval residuals
// after the fit. Throws if bounds do not cover all doses or an interval has
// fewer than 2 observations.
PropensityModel fit_continuous_gps(const Portfolio& portfolio, const TreatmentGrid& grid,
                                   TruncationBounds bounds, const PsFitConfig& config);

struct BalanceCell {
    double mean_before = 0.0;  // unweighted treated mean
    double mean_after = 0.0;   // propensity-weighted treated mean
    double sam_before = 0.0;
    double sam_after = 0.0;
};

struct BalanceReport {
    std::vector<std::string> covariates;
    std::vector<std::vector<BalanceCell>> cells;  // [interval][covariate]
    std::vector<double> asam_before;              // per interval
    std::vector<double> asam_after;
    double overall_before = 0.0;
    double overall_after = 0.0;
    std::vector<std::size_t> interval_counts;
    std::size_t floored_weights = 0;  // probabilities raised to the floor

    std::string to_json() const;
    std::string to_tsv() const;
};

inline constexpr double kPropensityFloor = 1e-6;

// Average Standardized Absolute Mean difference per interval and overall,
// weighting treated units by 1 / P[T in t_c | X]. Exact-zero probability on a
// treated unit is a common-support violation and throws "no overlap";
// probabilities below kPropensityFloor are floored and counted.
BalanceReport asam_report(const Portfolio& portfolio, const PropensityModel& model,
                          Exec exec = Exec::Parallel);

// Same metric from an externally supplied probability matrix (row i, interval
// c). Used for oracle weights and for the per-round stopping callback.
BalanceReport asam_report_from_probs(const Matrix& covariates,
                                     const std::vector<int>& categories,
                                     const std::vector<std::string>& names, const Matrix& probs,
                                     Exec exec = Exec::Parallel);

struct ConvergencePoint {
    int intervals = 0;
    double diff_q1 = 0.0, diff_median = 0.0, diff_q3 = 0.0;
    double asam_discrete_mean = 0.0, asam_continuous_mean = 0.0;
    std::vector<double> asam_discrete;    // per interval
    std::vector<double> asam_continuous;  // per interval
};

// Discrete-to-continuous convergence study: per interval count C, fit a
// discrete model with C quantile intervals, compare its probability at the
// observed category with the continuous interval mass, and report both
// models' per-interval ASAM distributions. The continuous mean model is
// fitted once; only its interval scales depend on C.
std::vector<ConvergencePoint> convergence_study(const Portfolio& portfolio,
                                                const std::vector<int>& interval_counts,
                                                const PsFitConfig& discrete_config,
                                                const PsFitConfig& continuous_config);

}  // namespace renewal
