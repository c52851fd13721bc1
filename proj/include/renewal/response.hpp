#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "renewal/boosting.hpp"
#include "renewal/matching.hpp"
#include "renewal/matrix.hpp"
#include "renewal/portfolio.hpp"
#include "renewal/propensity.hpp"

namespace renewal {

// Design for the discrete global response model: treatment-category
// indicators (reference = middle interval), competitiveness and its square,
// risk-factor terms with squared numeric terms, and all pairwise
// interactions of the risk-factor terms with competitiveness and with the
// treatment indicators. Column 0 is the unpenalized intercept; the remaining
// columns are sorted by name.
struct DesignSpec {
    TreatmentGrid grid;
    int reference_category = 0;
    std::vector<std::string> column_names;  // includes "(intercept)" at 0

    static DesignSpec build(const TreatmentGrid& grid);
    std::size_t columns() const { return column_names.size(); }

    // Row for policy record r assigned to treatment category c, optionally
    // overriding competitiveness / premium scale (multi-period evaluation).
    void fill_row(const PolicyRecord& r, int category, double* out) const;
    void fill_row_state(const PolicyRecord& r, int category, double competitiveness,
                        double premium_multiplier, double* out) const;

    // Long-format design over all N x C (policy, category) rows.
    Matrix long_design(const Portfolio& portfolio) const;
};

struct LassoResult {
    std::vector<double> penalties;          // descending grid
    Matrix path;                            // [penalty][column] coefficients
    std::vector<double> cv_mean;            // CV negative Bernoulli log-likelihood
    std::vector<double> cv_se;
    std::size_t min_index = 0;              // CV minimizer
    std::size_t selected_index = 0;         // one-standard-error rule
    double selected_penalty = 0.0;
    std::vector<double> coefficients;       // full-data fit at the selected penalty
};

struct LassoControl {
    int max_outer = 200;       // IRLS iterations
    int max_inner = 2000;      // coordinate soft-threshold sweeps per IRLS step
    double tol = 1e-10;
    bool standardize = true;   // internal standardization, coefficients on raw scale
};

// Penalized logistic regression: IRLS outer loop with coordinate-wise
// soft-threshold updates on the weighted quadratic subproblem, intercept
// unpenalized, warm starts down the penalty grid. y may be fractional
// (averaged potential responses). K-fold CV of the negative Bernoulli
// log-likelihood; selection by the one-standard-error rule.
LassoResult fit_logistic_lasso(const Matrix& design, const std::vector<double>& y,
                               const std::vector<double>& penalty_grid, int folds,
                               std::uint64_t seed, const LassoControl& control = {});

// Single fit at one penalty (no CV). Returns coefficients.
std::vector<double> logistic_lasso_single(const Matrix& design, const std::vector<double>& y,
                                          double penalty, const LassoControl& control = {},
                                          const std::vector<double>* warm_start = nullptr);

// The paper's LASSO penalty grid {e^x : x in {-20, -19.99, ..., 5}}, descending.
std::vector<double> paper_penalty_grid();

enum class ResponseKind { PooledLogistic, QuadraticDR, BoostedDR };

struct ResponseModel {
    ResponseKind kind = ResponseKind::PooledLogistic;

    // PooledLogistic
    DesignSpec design;
    PooledEstimate pooled;

    // QuadraticDR: churn ~ b0 + b1 gps + b2 gps^2 + b3 t + b4 t^2 + b5 gps t,
    // clamped to [0,1] at evaluation.
    std::vector<double> beta;

    // BoostedDR: Bernoulli ensemble over the features (t, gps).
    Ensemble ensemble;
};

// One logistic fit per imputation at the shared penalty; per-imputation
// covariance from the observed information restricted to the active set;
// pooled with Rubin's rule over the union of active sets (zeros imputed for
// inactive coefficients, occurrences logged in active_set_unions).
struct PooledFitInfo {
    std::size_t union_active = 0;
    std::size_t zero_filled = 0;  // (imputation, coefficient) pairs imputed as zero
};
ResponseModel fit_pooled_response(const Portfolio& portfolio, const ImputedResponseSet& imputed,
                                  const DesignSpec& design, double selected_penalty,
                                  const LassoControl& control = {}, PooledFitInfo* info = nullptr,
                                  Exec exec = Exec::Parallel);

// OLS of Y on [1, gps, gps^2, t, t^2, gps*t]. Throws on rank deficiency,
// naming the collinear columns.
ResponseModel fit_quadratic_dr(const std::vector<double>& doses, const std::vector<double>& churn,
                               const std::vector<double>& gps_values);

// Bernoulli-loss boosted model on the features (t, gps(t, X)); early stopping
// on held-out log-loss (fraction holdout_fraction of rows, seeded split).
struct BoostedDrConfig {
    BoostConfig boost;
    double holdout_fraction = 0.2;
};
ResponseModel fit_boosted_dr(const Portfolio& portfolio, const PropensityModel& gps,
                             const BoostedDrConfig& config);

// Average dose-response at dose t: mean over policies of the model evaluated
// at (t, gps(t, X_i)), clamped to [0,1]. Works for QuadraticDR and BoostedDR.
double avg_dose_response(const ResponseModel& model, const Portfolio& portfolio,
                         const PropensityModel& gps, double t, Exec exec = Exec::Parallel);

struct DoseResponseCurve {
    std::vector<double> doses;
    std::vector<double> estimate;
    std::vector<double> lower;   // 2.5 percentile over bootstrap refits
    std::vector<double> upper;   // 97.5 percentile
};

// Nonparametric bootstrap over policies with a full refit (the supplied
// pipeline) per resample; percentile bands per grid point. A resample that
// leaves a treatment interval with fewer than 2 observations is redrawn (at
// most 10 attempts). disable_resampling fits the original data B times.
using RefitPipeline = std::function<std::vector<double>(const Portfolio&, const std::vector<double>&)>;

DoseResponseCurve bootstrap_dr(const Portfolio& portfolio, const TreatmentGrid& grid,
                               const RefitPipeline& refit, const std::vector<double>& dose_grid,
                               int resamples, std::uint64_t seed, bool disable_resampling = false,
                               Exec exec = Exec::Parallel);

}  // namespace renewal
