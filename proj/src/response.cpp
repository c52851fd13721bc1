#include "renewal/response.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include <Eigen/Dense>

#include "renewal/prng.hpp"
#include "renewal/stats.hpp"

namespace renewal {

// ---------------------------------------------------------------------------
// Design
// ---------------------------------------------------------------------------

namespace {

// Primitive term values per (record, category, state). Indices:
// 0 comp, 1 comp^2, 2..12 risk-factor terms, 13.. treatment indicators.
constexpr int kCompIdx = 0;
constexpr int kComp2Idx = 1;
constexpr int kCovBase = 2;
constexpr int kCovCount = 11;
constexpr int kTreatBase = kCovBase + kCovCount;

const std::array<const char*, kCovCount> kCovTermNames = {
    "premium_new_base",     "premium_new_base^2", "undershooting_1", "undershooting_1^2",
    "undershooting_2",      "undershooting_2^2",  "risk_level=Low",  "risk_level=Medium",
    "risk_level=High",      "policy_type=Employee", "policy_type=SecondCar"};

void primitive_values(const PolicyRecord& r, int category, double comp, double premium_multiplier,
                      int intervals, int reference, double* out) {
    out[kCompIdx] = comp;
    out[kComp2Idx] = comp * comp;
    const double pnb = r.premium_new_base * premium_multiplier;
    out[kCovBase + 0] = pnb;
    out[kCovBase + 1] = pnb * pnb;
    out[kCovBase + 2] = r.undershooting_1;
    out[kCovBase + 3] = r.undershooting_1 * r.undershooting_1;
    out[kCovBase + 4] = r.undershooting_2;
    out[kCovBase + 5] = r.undershooting_2 * r.undershooting_2;
    out[kCovBase + 6] = r.risk_level == RiskLevel::Low ? 1.0 : 0.0;
    out[kCovBase + 7] = r.risk_level == RiskLevel::Medium ? 1.0 : 0.0;
    out[kCovBase + 8] = r.risk_level == RiskLevel::High ? 1.0 : 0.0;
    out[kCovBase + 9] = r.policy_type == PolicyType::Employee ? 1.0 : 0.0;
    out[kCovBase + 10] = r.policy_type == PolicyType::SecondCar ? 1.0 : 0.0;
    int slot = kTreatBase;
    for (int c = 0; c < intervals; ++c) {
        if (c == reference) continue;
        out[slot++] = c == category ? 1.0 : 0.0;
    }
}

std::string treat_name(int c) { return "treatment=q" + std::to_string(c); }

}  // namespace

DesignSpec DesignSpec::build(const TreatmentGrid& grid) {
    DesignSpec spec;
    spec.grid = grid;
    spec.reference_category = grid.intervals() / 2;

    // Primitive slot names aligned with primitive_values.
    std::vector<std::string> prim_names = {"competitiveness", "competitiveness^2"};
    for (const char* n : kCovTermNames) prim_names.emplace_back(n);
    for (int c = 0; c < grid.intervals(); ++c)
        if (c != spec.reference_category) prim_names.push_back(treat_name(c));
    const int n_prims = static_cast<int>(prim_names.size());
    const int n_treat = n_prims - kTreatBase;

    // (name, first factor, second factor); -1 means no factor.
    std::vector<std::tuple<std::string, int, int>> terms;
    for (int p = 0; p < n_prims; ++p) terms.emplace_back(prim_names[static_cast<std::size_t>(p)], p, -1);
    for (int k = 0; k < kCovCount; ++k) {
        const int cov = kCovBase + k;
        terms.emplace_back(prim_names[static_cast<std::size_t>(cov)] + "*competitiveness", cov,
                           kCompIdx);
        terms.emplace_back(prim_names[static_cast<std::size_t>(cov)] + "*competitiveness^2", cov,
                           kComp2Idx);
        for (int t = 0; t < n_treat; ++t)
            terms.emplace_back(prim_names[static_cast<std::size_t>(cov)] + "*" +
                                   prim_names[static_cast<std::size_t>(kTreatBase + t)],
                               cov, kTreatBase + t);
    }
    for (int t = 0; t < n_treat; ++t) {
        terms.emplace_back("competitiveness*" + prim_names[static_cast<std::size_t>(kTreatBase + t)],
                           kCompIdx, kTreatBase + t);
        terms.emplace_back(
            "competitiveness^2*" + prim_names[static_cast<std::size_t>(kTreatBase + t)], kComp2Idx,
            kTreatBase + t);
    }
    std::sort(terms.begin(), terms.end(),
              [](const auto& a, const auto& b) { return std::get<0>(a) < std::get<0>(b); });

    spec.column_names.push_back("(intercept)");
    spec.factors_.emplace_back(-1, -1);
    for (const auto& [name, f1, f2] : terms) {
        spec.column_names.push_back(name);
        spec.factors_.emplace_back(f1, f2);
    }
    return spec;
}

void DesignSpec::fill_row_state(const PolicyRecord& r, int category, double competitiveness,
                                double premium_multiplier, double* out) const {
    std::vector<double> prims(static_cast<std::size_t>(kTreatBase + grid.intervals() - 1));
    primitive_values(r, category, competitiveness, premium_multiplier, grid.intervals(),
                     reference_category, prims.data());
    for (std::size_t j = 0; j < factors_.size(); ++j) {
        const auto [f1, f2] = factors_[j];
        double v = 1.0;
        if (f1 >= 0) v *= prims[static_cast<std::size_t>(f1)];
        if (f2 >= 0) v *= prims[static_cast<std::size_t>(f2)];
        out[j] = v;
    }
}

void DesignSpec::fill_row(const PolicyRecord& r, int category, double* out) const {
    fill_row_state(r, category, r.competitiveness, 1.0, out);
}

Matrix DesignSpec::long_design(const Portfolio& portfolio) const {
    const int c = grid.intervals();
    Matrix x(portfolio.size() * static_cast<std::size_t>(c), columns());
    for (std::size_t i = 0; i < portfolio.size(); ++i)
        for (int k = 0; k < c; ++k)
            fill_row(portfolio[i], k,
                     x.row(i * static_cast<std::size_t>(c) + static_cast<std::size_t>(k)));
    return x;
}

// ---------------------------------------------------------------------------
// LASSO logistic regression
// ---------------------------------------------------------------------------

std::vector<double> paper_penalty_grid() {
    std::vector<double> grid;
    grid.reserve(2501);
    for (int k = 500; k >= -2000; --k) grid.push_back(std::exp(static_cast<double>(k) / 100.0));
    return grid;
}

namespace {

struct Standardized {
    std::vector<double> mu, sd;  // per column; intercept slots unused
};

Standardized standardize(Matrix& x) {
    const std::size_t n = x.rows(), p = x.cols();
    Standardized s;
    s.mu.assign(p, 0.0);
    s.sd.assign(p, 1.0);
    for (std::size_t j = 1; j < p; ++j) {
        double m = 0.0;
        for (std::size_t i = 0; i < n; ++i) m += x(i, j);
        m /= static_cast<double>(n);
        double v = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double d = x(i, j) - m;
            v += d * d;
        }
        v /= static_cast<double>(n);
        const double sd = std::sqrt(v);
        s.mu[j] = m;
        s.sd[j] = sd > 0.0 ? sd : 1.0;
        for (std::size_t i = 0; i < n; ++i) x(i, j) = (x(i, j) - s.mu[j]) / s.sd[j];
    }
    return s;
}

double soft_threshold(double z, double t) {
    if (z > t) return z - t;
    if (z < -t) return z + t;
    return 0.0;
}

// Penalized weighted least squares by cyclic coordinate soft-thresholding;
// one IRLS quadratic subproblem. Returns sweeps used.
int solve_wls_subproblem(const Matrix& x, const std::vector<double>& w, std::vector<double>& resid,
                         std::vector<double>& beta, double penalty, const LassoControl& control,
                         int budget) {
    const std::size_t n = x.rows(), p = x.cols();
    std::vector<double> wx2(p, 0.0);
    double wsum = 0.0;
    for (std::size_t i = 0; i < n; ++i) wsum += w[i];
    for (std::size_t j = 0; j < p; ++j) {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) s += w[i] * x(i, j) * x(i, j);
        wx2[j] = s / static_cast<double>(n);
    }

    auto sweep = [&](bool active_only) {
        double max_change = 0.0;
        for (std::size_t j = 0; j < p; ++j) {
            if (active_only && j > 0 && beta[j] == 0.0) continue;
            double num = 0.0;
            if (j == 0) {
                for (std::size_t i = 0; i < n; ++i) num += w[i] * resid[i];
                const double nb = beta[0] + num / wsum;
                const double d = nb - beta[0];
                if (d != 0.0) {
                    for (std::size_t i = 0; i < n; ++i) resid[i] -= d;
                    beta[0] = nb;
                    max_change = std::max(max_change, std::abs(d));
                }
                continue;
            }
            for (std::size_t i = 0; i < n; ++i) num += w[i] * x(i, j) * resid[i];
            num = num / static_cast<double>(n) + wx2[j] * beta[j];
            const double nb = wx2[j] > 0.0 ? soft_threshold(num, penalty) / wx2[j] : 0.0;
            const double d = nb - beta[j];
            if (d != 0.0) {
                for (std::size_t i = 0; i < n; ++i) resid[i] -= d * x(i, j);
                beta[j] = nb;
                max_change = std::max(max_change, std::abs(d));
            }
        }
        return max_change;
    };

    int used = 0;
    while (used < budget) {
        ++used;
        if (sweep(false) < control.tol) break;
        // Iterate the active set until stable, then re-check all columns.
        while (used < budget) {
            ++used;
            if (sweep(true) < control.tol) break;
        }
    }
    return used;
}

std::vector<double> lasso_fit_standardized(const Matrix& x, const std::vector<double>& y,
                                           double penalty, const LassoControl& control,
                                           const std::vector<double>* warm) {
    const std::size_t n = x.rows(), p = x.cols();
    std::vector<double> beta(p, 0.0);
    if (warm && warm->size() == p) beta = *warm;
    if (beta[0] == 0.0) {
        double m = std::clamp(mean(y), 1e-9, 1.0 - 1e-9);
        beta[0] = logit(m);
    }

    std::vector<double> eta(n), w(n), z(n), resid(n);
    double prev_change = std::numeric_limits<double>::infinity();
    for (int outer = 0; outer < control.max_outer; ++outer) {
        for (std::size_t i = 0; i < n; ++i) {
            double e = beta[0];
            for (std::size_t j = 1; j < p; ++j)
                if (beta[j] != 0.0) e += x(i, j) * beta[j];
            eta[i] = e;
            const double pi = sigmoid(e);
            w[i] = std::max(pi * (1.0 - pi), 1e-8);
            z[i] = e + (y[i] - pi) / w[i];
            resid[i] = z[i] - e;
        }
        std::vector<double> before = beta;
        solve_wls_subproblem(x, w, resid, beta, penalty, control, control.max_inner);
        double change = 0.0;
        for (std::size_t j = 0; j < p; ++j) change = std::max(change, std::abs(beta[j] - before[j]));
        if (change < control.tol * 10.0) return beta;
        prev_change = change;
    }
    throw std::runtime_error(
        "fit_logistic_lasso: IRLS did not converge after " + std::to_string(control.max_outer) +
        " iterations (last max coefficient change " + std::to_string(prev_change) + ")");
}

std::vector<double> destandardize(const std::vector<double>& beta, const Standardized& s) {
    std::vector<double> out = beta;
    double shift = 0.0;
    for (std::size_t j = 1; j < beta.size(); ++j) {
        out[j] = beta[j] / s.sd[j];
        shift += beta[j] * s.mu[j] / s.sd[j];
    }
    out[0] = beta[0] - shift;
    return out;
}

double heldout_nll(const Matrix& x, const std::vector<double>& y, const std::vector<int>& rows,
                   const std::vector<double>& beta_raw) {
    double total = 0.0;
    for (int i : rows) {
        double e = beta_raw[0];
        for (std::size_t j = 1; j < beta_raw.size(); ++j)
            if (beta_raw[j] != 0.0) e += x(static_cast<std::size_t>(i), j) * beta_raw[j];
        total += log1pexp(e) - y[static_cast<std::size_t>(i)] * e;
    }
    return total / static_cast<double>(rows.size());
}

}  // namespace

std::vector<double> logistic_lasso_single(const Matrix& design, const std::vector<double>& y,
                                          double penalty, const LassoControl& control,
                                          const std::vector<double>* warm_start) {
    if (design.rows() != y.size()) throw std::invalid_argument("lasso: row count mismatch");
    Matrix x = design;
    Standardized st;
    if (control.standardize) st = standardize(x);
    else {
        st.mu.assign(x.cols(), 0.0);
        st.sd.assign(x.cols(), 1.0);
    }
    const std::vector<double> beta = lasso_fit_standardized(x, y, penalty, control, warm_start);
    return destandardize(beta, st);
}

LassoResult fit_logistic_lasso(const Matrix& design, const std::vector<double>& y,
                               const std::vector<double>& penalty_grid, int folds,
                               std::uint64_t seed, const LassoControl& control) {
    const std::size_t n = design.rows();
    if (n != y.size()) throw std::invalid_argument("fit_logistic_lasso: row count mismatch");
    if (folds < 2) throw std::invalid_argument("fit_logistic_lasso: need at least 2 folds");
    if (penalty_grid.empty()) throw std::invalid_argument("fit_logistic_lasso: empty penalty grid");
    for (std::size_t g = 0; g < penalty_grid.size(); ++g) {
        if (penalty_grid[g] <= 0.0)
            throw std::invalid_argument("fit_logistic_lasso: penalties must be positive");
        if (g > 0 && penalty_grid[g] >= penalty_grid[g - 1])
            throw std::invalid_argument("fit_logistic_lasso: penalty grid must be descending");
    }

    Matrix x = design;
    Standardized st;
    if (control.standardize) st = standardize(x);
    else {
        st.mu.assign(x.cols(), 0.0);
        st.sd.assign(x.cols(), 1.0);
    }
    const std::size_t n_pen = penalty_grid.size();

    // Full-data path with warm starts down the grid.
    LassoResult result;
    result.penalties = penalty_grid;
    result.path = Matrix(n_pen, design.cols());
    {
        std::vector<double> beta;
        for (std::size_t g = 0; g < n_pen; ++g) {
            beta = lasso_fit_standardized(x, y, penalty_grid[g], control,
                                          g == 0 ? nullptr : &beta);
            const std::vector<double> raw = destandardize(beta, st);
            std::copy(raw.begin(), raw.end(), result.path.row(g));
        }
    }

    // Seeded fold assignment.
    Prng rng(seed, 0x43564644ULL);
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t i = 0; i + 1 < n; ++i) {
        const std::size_t j = i + rng.next_below(n - i);
        std::swap(order[i], order[j]);
    }
    std::vector<std::vector<int>> fold_rows(static_cast<std::size_t>(folds));
    for (std::size_t i = 0; i < n; ++i)
        fold_rows[i % static_cast<std::size_t>(folds)].push_back(order[i]);

    Matrix fold_err(static_cast<std::size_t>(folds), n_pen);
    parallel_for_dynamic(folds, Exec::Parallel, [&](std::ptrdiff_t f) {
        const std::vector<int>& held = fold_rows[static_cast<std::size_t>(f)];
        std::vector<char> in_held(n, 0);
        for (int i : held) in_held[static_cast<std::size_t>(i)] = 1;
        Matrix xtrain(n - held.size(), design.cols());
        std::vector<double> ytrain;
        ytrain.reserve(n - held.size());
        std::size_t r = 0;
        for (std::size_t i = 0; i < n; ++i) {
            if (in_held[i]) continue;
            std::copy(x.row(i), x.row(i) + x.cols(), xtrain.row(r));
            ytrain.push_back(y[i]);
            ++r;
        }
        std::vector<double> beta;
        for (std::size_t g = 0; g < n_pen; ++g) {
            beta = lasso_fit_standardized(xtrain, ytrain, penalty_grid[g], control,
                                          g == 0 ? nullptr : &beta);
            fold_err(static_cast<std::size_t>(f), g) = heldout_nll(x, y, held, beta);
        }
    });

    result.cv_mean.assign(n_pen, 0.0);
    result.cv_se.assign(n_pen, 0.0);
    for (std::size_t g = 0; g < n_pen; ++g) {
        std::vector<double> errs(static_cast<std::size_t>(folds));
        for (int f = 0; f < folds; ++f) errs[static_cast<std::size_t>(f)] = fold_err(static_cast<std::size_t>(f), g);
        result.cv_mean[g] = mean(errs);
        result.cv_se[g] = folds > 1 ? stddev(errs) / std::sqrt(static_cast<double>(folds)) : 0.0;
    }

    result.min_index = static_cast<std::size_t>(
        std::min_element(result.cv_mean.begin(), result.cv_mean.end()) - result.cv_mean.begin());
    const double limit = result.cv_mean[result.min_index] + result.cv_se[result.min_index];
    result.selected_index = result.min_index;
    for (std::size_t g = 0; g <= result.min_index; ++g) {
        if (result.cv_mean[g] <= limit) {
            result.selected_index = g;
            break;
        }
    }
    result.selected_penalty = penalty_grid[result.selected_index];
    result.coefficients.assign(result.path.row(result.selected_index),
                               result.path.row(result.selected_index) + design.cols());
    return result;
}

// ---------------------------------------------------------------------------
// Pooled response model
// ---------------------------------------------------------------------------

ResponseModel fit_pooled_response(const Portfolio& portfolio, const ImputedResponseSet& imputed,
                                  const DesignSpec& design, double selected_penalty,
                                  const LassoControl& control, PooledFitInfo* info, Exec exec) {
    if (imputed.imputations < 2)
        throw std::invalid_argument("fit_pooled_response: need at least 2 imputations");
    if (imputed.n != portfolio.size())
        throw std::invalid_argument("fit_pooled_response: imputation set size mismatch");
    const int c = design.grid.intervals();
    if (imputed.categories != c)
        throw std::invalid_argument("fit_pooled_response: category count mismatch");

    const Matrix x = design.long_design(portfolio);
    const std::size_t p = design.columns();
    const int m_count = imputed.imputations;

    std::vector<std::vector<double>> estimates(static_cast<std::size_t>(m_count));
    std::vector<Matrix> variances(static_cast<std::size_t>(m_count));

    parallel_for_dynamic(m_count, exec, [&](std::ptrdiff_t m) {
        std::vector<double> ym(x.rows());
        for (std::size_t i = 0; i < imputed.n; ++i)
            for (int k = 0; k < c; ++k)
                ym[i * static_cast<std::size_t>(c) + static_cast<std::size_t>(k)] =
                    imputed.draw(i, k, static_cast<int>(m));
        const std::vector<double> beta =
            logistic_lasso_single(x, ym, selected_penalty, control);

        // Observed information on the active set (intercept always active).
        std::vector<std::size_t> active;
        for (std::size_t j = 0; j < p; ++j)
            if (j == 0 || beta[j] != 0.0) active.push_back(j);
        const std::size_t pa = active.size();
        Eigen::MatrixXd information = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(pa),
                                                            static_cast<Eigen::Index>(pa));
        std::vector<double> row(pa);
        for (std::size_t i = 0; i < x.rows(); ++i) {
            double e = 0.0;
            for (std::size_t a = 0; a < pa; ++a) {
                row[a] = x(i, active[a]);
                e += row[a] * beta[active[a]];
            }
            const double pi = sigmoid(e);
            const double w = pi * (1.0 - pi);
            for (std::size_t a = 0; a < pa; ++a)
                for (std::size_t b = a; b < pa; ++b)
                    information(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) +=
                        w * row[a] * row[b];
        }
        for (std::size_t a = 0; a < pa; ++a)
            for (std::size_t b = 0; b < a; ++b)
                information(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) =
                    information(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(a));
        const Eigen::MatrixXd cov =
            information.ldlt().solve(Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(pa),
                                                               static_cast<Eigen::Index>(pa)));

        Matrix w_full(p, p);
        for (std::size_t a = 0; a < pa; ++a)
            for (std::size_t b = 0; b < pa; ++b)
                w_full(active[a], active[b]) =
                    cov(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b));
        estimates[static_cast<std::size_t>(m)] = beta;
        variances[static_cast<std::size_t>(m)] = std::move(w_full);
    });

    if (info) {
        std::vector<char> in_union(p, 0);
        for (const auto& e : estimates)
            for (std::size_t j = 0; j < p; ++j)
                if (j == 0 || e[j] != 0.0) in_union[j] = 1;
        info->union_active = static_cast<std::size_t>(
            std::count(in_union.begin(), in_union.end(), 1));
        info->zero_filled = 0;
        for (const auto& e : estimates)
            for (std::size_t j = 0; j < p; ++j)
                if (in_union[j] && !(j == 0 || e[j] != 0.0)) ++info->zero_filled;
    }

    ResponseModel model;
    model.kind = ResponseKind::PooledLogistic;
    model.design = design;
    model.pooled = rubin_combine(estimates, variances);
    return model;
}

// ---------------------------------------------------------------------------
// Dose-response models
// ---------------------------------------------------------------------------

ResponseModel fit_quadratic_dr(const std::vector<double>& doses, const std::vector<double>& churn,
                               const std::vector<double>& gps_values) {
    const std::size_t n = doses.size();
    if (churn.size() != n || gps_values.size() != n)
        throw std::invalid_argument("fit_quadratic_dr: input size mismatch");
    if (n < 7) throw std::invalid_argument("fit_quadratic_dr: need at least 7 observations");

    static const std::array<const char*, 6> col_names = {"1", "gps", "gps^2", "t", "t^2", "gps*t"};
    Eigen::MatrixXd x(static_cast<Eigen::Index>(n), 6);
    Eigen::VectorXd y(static_cast<Eigen::Index>(n));
    for (std::size_t i = 0; i < n; ++i) {
        const double g = gps_values[i], t = doses[i];
        x(static_cast<Eigen::Index>(i), 0) = 1.0;
        x(static_cast<Eigen::Index>(i), 1) = g;
        x(static_cast<Eigen::Index>(i), 2) = g * g;
        x(static_cast<Eigen::Index>(i), 3) = t;
        x(static_cast<Eigen::Index>(i), 4) = t * t;
        x(static_cast<Eigen::Index>(i), 5) = g * t;
        y(static_cast<Eigen::Index>(i)) = churn[i];
    }
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(x);
    qr.setThreshold(1e-10);
    if (qr.rank() < 6) {
        // Dropped columns are the trailing entries of the pivot permutation.
        std::string dropped;
        const auto perm = qr.colsPermutation().indices();
        for (Eigen::Index k = qr.rank(); k < 6; ++k) {
            if (!dropped.empty()) dropped += ", ";
            dropped += col_names[static_cast<std::size_t>(perm(k))];
        }
        throw std::runtime_error("fit_quadratic_dr: rank-deficient design, collinear columns: " +
                                 dropped);
    }
    const Eigen::VectorXd beta = qr.solve(y);
    ResponseModel model;
    model.kind = ResponseKind::QuadraticDR;
    model.beta.assign(beta.data(), beta.data() + 6);
    return model;
}

namespace {

double quadratic_eval(const std::vector<double>& beta, double t, double g) {
    return beta[0] + beta[1] * g + beta[2] * g * g + beta[3] * t + beta[4] * t * t +
           beta[5] * g * t;
}

}  // namespace

ResponseModel fit_boosted_dr(const Portfolio& portfolio, const PropensityModel& gps,
                             const BoostedDrConfig& config) {
    if (gps.kind != PropensityKind::Continuous)
        throw std::invalid_argument("fit_boosted_dr: continuous propensity model required");
    const std::size_t n = portfolio.size();
    const Matrix cov = portfolio.covariates();

    Matrix features(n, 2);
    std::vector<double> y(n);
    parallel_for(static_cast<std::ptrdiff_t>(n), config.boost.exec, [&](std::ptrdiff_t i) {
        const auto& r = portfolio[static_cast<std::size_t>(i)];
        features(static_cast<std::size_t>(i), 0) = r.rate_change;
        features(static_cast<std::size_t>(i), 1) =
            gps.gps_density(r.rate_change, cov.row(static_cast<std::size_t>(i)));
        y[static_cast<std::size_t>(i)] = r.churn;
    });

    // Seeded holdout split for the early-stopping metric.
    const std::size_t n_val = std::min(
        n - 1, std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(
                                            config.holdout_fraction * static_cast<double>(n)))));
    Prng rng(config.boost.seed, 0x44524853ULL);
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t i = 0; i + 1 < n; ++i) {
        const std::size_t j = i + rng.next_below(n - i);
        std::swap(order[i], order[j]);
    }
    std::vector<int> val_rows(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
    std::vector<int> train_rows(order.begin() + static_cast<std::ptrdiff_t>(n_val), order.end());
    std::sort(val_rows.begin(), val_rows.end());
    std::sort(train_rows.begin(), train_rows.end());

    Matrix xtrain(train_rows.size(), 2), xval(val_rows.size(), 2);
    std::vector<double> ytrain(train_rows.size()), yval(val_rows.size());
    for (std::size_t i = 0; i < train_rows.size(); ++i) {
        std::copy(features.row(static_cast<std::size_t>(train_rows[i])),
                  features.row(static_cast<std::size_t>(train_rows[i])) + 2, xtrain.row(i));
        ytrain[i] = y[static_cast<std::size_t>(train_rows[i])];
    }
    for (std::size_t i = 0; i < val_rows.size(); ++i) {
        std::copy(features.row(static_cast<std::size_t>(val_rows[i])),
                  features.row(static_cast<std::size_t>(val_rows[i])) + 2, xval.row(i));
        yval[i] = y[static_cast<std::size_t>(val_rows[i])];
    }

    // Incremental held-out log-loss: apply only the newest round's trees.
    Matrix val_scores(val_rows.size(), 1);
    int seen_rounds = 0;
    auto callback = [&](int round, const Matrix&, const Ensemble& partial) {
        if (round == 0) {
            for (std::size_t i = 0; i < val_rows.size(); ++i)
                val_scores(i, 0) = partial.base_score[0];
            seen_rounds = 0;
        }
        while (seen_rounds < partial.rounds()) {
            const DecisionTree& tree =
                partial.trees[static_cast<std::size_t>(seen_rounds)][0];
            for (std::size_t i = 0; i < val_rows.size(); ++i)
                val_scores(i, 0) += partial.eta * tree.predict(xval.row(i));
            ++seen_rounds;
        }
        double nll = 0.0;
        for (std::size_t i = 0; i < val_rows.size(); ++i)
            nll += log1pexp(val_scores(i, 0)) - yval[i] * val_scores(i, 0);
        return nll / static_cast<double>(val_rows.size());
    };

    BernoulliLoss loss;
    ResponseModel model;
    model.kind = ResponseKind::BoostedDR;
    model.ensemble = fit_boosted(xtrain, ytrain, loss, config.boost, callback);
    return model;
}

double avg_dose_response(const ResponseModel& model, const Portfolio& portfolio,
                         const PropensityModel& gps, double t, Exec exec) {
    if (model.kind == ResponseKind::PooledLogistic)
        throw std::invalid_argument("avg_dose_response: dose-response model required");
    if (t < gps.bounds.lower || t > gps.bounds.upper)
        throw std::invalid_argument("avg_dose_response: dose outside bounds");
    const Matrix cov = portfolio.covariates();
    std::vector<double> values(portfolio.size());
    parallel_for(static_cast<std::ptrdiff_t>(portfolio.size()), exec, [&](std::ptrdiff_t i) {
        const double g = gps.gps_density(t, cov.row(static_cast<std::size_t>(i)));
        if (model.kind == ResponseKind::QuadraticDR) {
            values[static_cast<std::size_t>(i)] = quadratic_eval(model.beta, t, g);
        } else {
            const double feats[2] = {t, g};
            double score = 0.0;
            model.ensemble.predict_row(feats, &score);
            values[static_cast<std::size_t>(i)] = sigmoid(score);
        }
    });
    return std::clamp(mean(values), 0.0, 1.0);
}

// ---------------------------------------------------------------------------
// Bootstrap
// ---------------------------------------------------------------------------

DoseResponseCurve bootstrap_dr(const Portfolio& portfolio, const TreatmentGrid& grid,
                               const RefitPipeline& refit, const std::vector<double>& dose_grid,
                               int resamples, std::uint64_t seed, bool disable_resampling,
                               Exec exec) {
    if (resamples < 2) throw std::invalid_argument("bootstrap_dr: need at least 2 resamples");
    const std::size_t n = portfolio.size();

    DoseResponseCurve curve;
    curve.doses = dose_grid;
    curve.estimate = refit(portfolio, dose_grid);

    Matrix replicate(static_cast<std::size_t>(resamples), dose_grid.size());
    parallel_for_dynamic(resamples, exec, [&](std::ptrdiff_t b) {
        std::vector<double> est;
        if (disable_resampling) {
            est = refit(portfolio, dose_grid);
        } else {
            bool drawn = false;
            for (int attempt = 0; attempt < 10 && !drawn; ++attempt) {
                Prng rng(seed, 0x424f4f54ULL,
                         static_cast<std::uint64_t>(b) * 16 + static_cast<std::uint64_t>(attempt));
                std::vector<PolicyRecord> records(n);
                std::vector<std::size_t> counts(static_cast<std::size_t>(grid.intervals()), 0);
                for (std::size_t i = 0; i < n; ++i) {
                    records[i] = portfolio[rng.next_below(n)];
                    records[i].id = static_cast<std::int64_t>(i) + 1;
                    ++counts[static_cast<std::size_t>(grid.category_of(records[i].rate_change))];
                }
                if (*std::min_element(counts.begin(), counts.end()) < 2) continue;
                est = refit(Portfolio(std::move(records)), dose_grid);
                drawn = true;
            }
            if (!drawn)
                throw std::runtime_error(
                    "bootstrap_dr: could not draw a resample with nonempty intervals");
        }
        std::copy(est.begin(), est.end(), replicate.row(static_cast<std::size_t>(b)));
    });

    curve.lower.resize(dose_grid.size());
    curve.upper.resize(dose_grid.size());
    for (std::size_t k = 0; k < dose_grid.size(); ++k) {
        std::vector<double> col(static_cast<std::size_t>(resamples));
        for (int b = 0; b < resamples; ++b) col[static_cast<std::size_t>(b)] =
            replicate(static_cast<std::size_t>(b), k);
        std::sort(col.begin(), col.end());
        curve.lower[k] = quantile_sorted(col, 0.025);
        curve.upper[k] = quantile_sorted(col, 0.975);
    }
    return curve;
}

}  // namespace renewal
