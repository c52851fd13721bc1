#include "renewal/propensity.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "renewal/stats.hpp"

namespace renewal {

using json = nlohmann::json;

namespace {

std::vector<int> interval_categories(const Portfolio& portfolio, const TreatmentGrid& grid) {
    std::vector<int> cats(portfolio.size());
    for (std::size_t i = 0; i < portfolio.size(); ++i)
        cats[i] = grid.category_of(portfolio[i].rate_change);
    return cats;
}

void require_nonempty_intervals(const std::vector<int>& cats, int c, std::size_t min_count,
                                const char* who) {
    std::vector<std::size_t> counts(static_cast<std::size_t>(c), 0);
    for (int k : cats) ++counts[static_cast<std::size_t>(k)];
    for (int k = 0; k < c; ++k)
        if (counts[static_cast<std::size_t>(k)] < min_count)
            throw std::invalid_argument(std::string(who) + ": interval " + std::to_string(k) +
                                        " has " + std::to_string(counts[static_cast<std::size_t>(k)]) +
                                        " observations, need " + std::to_string(min_count));
}

// Interval masses of the homoskedastic truncated Gaussian centered at f.
void homoskedastic_masses(const TreatmentGrid& grid, TruncationBounds bounds, double f,
                          double sigma, double* out) {
    const int c = grid.intervals();
    const double z_total = norm_cdf((bounds.upper - f) / sigma) - norm_cdf((bounds.lower - f) / sigma);
    if (!(z_total > 1e-300)) throw std::runtime_error("degenerate truncation");
    for (int k = 0; k < c; ++k) {
        const double lo = grid.boundaries[static_cast<std::size_t>(k)];
        const double hi = grid.boundaries[static_cast<std::size_t>(k) + 1];
        const double mass = (norm_cdf((hi - f) / sigma) - norm_cdf((lo - f) / sigma)) / z_total;
        out[k] = std::max(mass, 0.0);
    }
}

}  // namespace

std::vector<double> PropensityModel::interval_probs(const double* covariates) const {
    const int c = grid.intervals();
    std::vector<double> probs(static_cast<std::size_t>(c));
    if (kind == PropensityKind::Discrete) {
        std::vector<double> scores(static_cast<std::size_t>(c));
        ensemble.predict_row(covariates, scores.data());
        const double mx = *std::max_element(scores.begin(), scores.end());
        double z = 0.0;
        for (double s : scores) z += std::exp(s - mx);
        for (int k = 0; k < c; ++k)
            probs[static_cast<std::size_t>(k)] = std::exp(scores[static_cast<std::size_t>(k)] - mx) / z;
    } else {
        double f = 0.0;
        ensemble.predict_row(covariates, &f);
        homoskedastic_masses(grid, bounds, f, sigma, probs.data());
    }
    return probs;
}

double PropensityModel::mean_dose(const double* covariates) const {
    if (kind != PropensityKind::Continuous)
        throw std::logic_error("mean_dose: discrete propensity model");
    double f = 0.0;
    ensemble.predict_row(covariates, &f);
    return f;
}

double PropensityModel::gps_density(double t, const double* covariates) const {
    if (kind != PropensityKind::Continuous)
        throw std::logic_error("gps_density: discrete propensity model");
    if (t < bounds.lower || t > bounds.upper)
        throw std::invalid_argument("gps_density: dose outside truncation bounds");
    double f = 0.0;
    ensemble.predict_row(covariates, &f);

    const int c = grid.category_of(t);
    std::vector<double> mass(static_cast<std::size_t>(grid.intervals()));
    homoskedastic_masses(grid, bounds, f, sigma, mass.data());

    // Piece density: truncated Gaussian on the interval with its own scale,
    // carrying the homoskedastic interval mass.
    const double sc = interval_sigma[static_cast<std::size_t>(c)];
    const double lo = grid.boundaries[static_cast<std::size_t>(c)];
    const double hi = grid.boundaries[static_cast<std::size_t>(c) + 1];
    const double z_piece = norm_cdf((hi - f) / sc) - norm_cdf((lo - f) / sc);
    if (!(z_piece > 1e-300)) throw std::runtime_error("degenerate truncation");
    return mass[static_cast<std::size_t>(c)] * norm_pdf((t - f) / sc) / (sc * z_piece);
}

Matrix PropensityModel::interval_prob_matrix(const Matrix& covariates, Exec exec) const {
    Matrix probs(covariates.rows(), static_cast<std::size_t>(grid.intervals()));
    parallel_for(static_cast<std::ptrdiff_t>(covariates.rows()), exec, [&](std::ptrdiff_t i) {
        const std::vector<double> p = interval_probs(covariates.row(static_cast<std::size_t>(i)));
        std::copy(p.begin(), p.end(), probs.row(static_cast<std::size_t>(i)));
    });
    return probs;
}

// ---------------------------------------------------------------------------
// ASAM (balance metric and stopping criterion)
// ---------------------------------------------------------------------------

BalanceReport asam_report_from_probs(const Matrix& covariates, const std::vector<int>& categories,
                                     const std::vector<std::string>& names, const Matrix& probs,
                                     Exec exec) {
    const std::size_t n = covariates.rows();
    const std::size_t k_cov = covariates.cols();
    const int c = static_cast<int>(probs.cols());
    if (categories.size() != n || probs.rows() != n)
        throw std::invalid_argument("asam: dimension mismatch");

    // Full-sample means and unbiased standard deviations per covariate.
    std::vector<double> mu(k_cov, 0.0), sd(k_cov, 0.0);
    for (std::size_t k = 0; k < k_cov; ++k) {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) s += covariates(i, k);
        mu[k] = s / static_cast<double>(n);
        double ss = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double d = covariates(i, k) - mu[k];
            ss += d * d;
        }
        sd[k] = n > 1 ? std::sqrt(ss / static_cast<double>(n - 1)) : 0.0;
    }

    // Overlap check and weight flooring happen once, serially.
    std::size_t floored = 0;
    std::vector<double> weight(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        const double p = probs(i, static_cast<std::size_t>(categories[i]));
        if (p == 0.0)
            throw std::runtime_error("no overlap: zero propensity for treated unit " +
                                     std::to_string(i));
        const double fp = std::max(p, kPropensityFloor);
        if (fp != p) ++floored;
        weight[i] = 1.0 / fp;
    }

    BalanceReport report;
    report.covariates = names;
    report.cells.assign(static_cast<std::size_t>(c),
                        std::vector<BalanceCell>(k_cov));
    report.asam_before.assign(static_cast<std::size_t>(c), 0.0);
    report.asam_after.assign(static_cast<std::size_t>(c), 0.0);
    report.interval_counts.assign(static_cast<std::size_t>(c), 0);
    report.floored_weights = floored;
    for (std::size_t i = 0; i < n; ++i)
        ++report.interval_counts[static_cast<std::size_t>(categories[i])];

    // One (interval, covariate) cell per task; each cell sums serially over
    // rows, so results are independent of the schedule.
    parallel_for(static_cast<std::ptrdiff_t>(c) * static_cast<std::ptrdiff_t>(k_cov), exec,
                 [&](std::ptrdiff_t cell) {
                     const int ci = static_cast<int>(cell / static_cast<std::ptrdiff_t>(k_cov));
                     const std::size_t k = static_cast<std::size_t>(
                         cell % static_cast<std::ptrdiff_t>(k_cov));
                     double wsum = 0.0, wx = 0.0, usum = 0.0, ux = 0.0;
                     for (std::size_t i = 0; i < n; ++i) {
                         if (categories[i] != ci) continue;
                         wsum += weight[i];
                         wx += weight[i] * covariates(i, k);
                         usum += 1.0;
                         ux += covariates(i, k);
                     }
                     BalanceCell& b = report.cells[static_cast<std::size_t>(ci)][k];
                     b.mean_before = usum > 0.0 ? ux / usum : 0.0;
                     b.mean_after = wsum > 0.0 ? wx / wsum : 0.0;
                     if (sd[k] > 0.0) {
                         b.sam_before = std::abs(b.mean_before - mu[k]) / sd[k];
                         b.sam_after = std::abs(b.mean_after - mu[k]) / sd[k];
                     }
                 });

    for (int ci = 0; ci < c; ++ci) {
        double sb = 0.0, sa = 0.0;
        for (std::size_t k = 0; k < k_cov; ++k) {
            sb += report.cells[static_cast<std::size_t>(ci)][k].sam_before;
            sa += report.cells[static_cast<std::size_t>(ci)][k].sam_after;
        }
        report.asam_before[static_cast<std::size_t>(ci)] = sb / static_cast<double>(k_cov);
        report.asam_after[static_cast<std::size_t>(ci)] = sa / static_cast<double>(k_cov);
    }
    report.overall_before =
        mean(report.asam_before.empty() ? std::vector<double>{0.0} : report.asam_before);
    report.overall_after =
        mean(report.asam_after.empty() ? std::vector<double>{0.0} : report.asam_after);
    return report;
}

BalanceReport asam_report(const Portfolio& portfolio, const PropensityModel& model, Exec exec) {
    const Matrix x = portfolio.covariates();
    const std::vector<int> cats = interval_categories(portfolio, model.grid);
    const Matrix probs = model.interval_prob_matrix(x, exec);
    return asam_report_from_probs(x, cats, Portfolio::covariate_names(), probs, exec);
}

std::string BalanceReport::to_json() const {
    json j;
    j["covariates"] = covariates;
    j["overall_asam_before"] = overall_before;
    j["overall_asam_after"] = overall_after;
    j["asam_before"] = asam_before;
    j["asam_after"] = asam_after;
    j["interval_counts"] = interval_counts;
    j["floored_weights"] = floored_weights;
    json cell_rows = json::array();
    for (std::size_t c = 0; c < cells.size(); ++c) {
        for (std::size_t k = 0; k < cells[c].size(); ++k) {
            const BalanceCell& b = cells[c][k];
            cell_rows.push_back({{"interval", c},
                                 {"covariate", covariates[k]},
                                 {"mean_before", b.mean_before},
                                 {"mean_after", b.mean_after},
                                 {"sam_before", b.sam_before},
                                 {"sam_after", b.sam_after}});
        }
    }
    j["cells"] = cell_rows;
    return j.dump(2);
}

std::string BalanceReport::to_tsv() const {
    std::ostringstream out;
    out << "covariate";
    for (std::size_t c = 0; c < cells.size(); ++c)
        out << "\tbefore_" << c << "\tafter_" << c;
    out << '\n';
    for (std::size_t k = 0; k < covariates.size(); ++k) {
        out << covariates[k];
        for (std::size_t c = 0; c < cells.size(); ++c)
            out << '\t' << cells[c][k].mean_before << '\t' << cells[c][k].mean_after;
        out << '\n';
    }
    out << "ASAM";
    for (std::size_t c = 0; c < cells.size(); ++c)
        out << '\t' << asam_before[c] << '\t' << asam_after[c];
    out << '\n';
    out << "observations";
    for (std::size_t c = 0; c < cells.size(); ++c)
        out << '\t' << interval_counts[c] << '\t';
    out << '\n';
    return out.str();
}

// ---------------------------------------------------------------------------
// Fitting
// ---------------------------------------------------------------------------

namespace {

// Training-set ASAM from the current scores; used as the stopping metric.
class AsamCallback {
  public:
    AsamCallback(const Matrix& covariates, std::vector<int> categories, int intervals,
                 PropensityKind kind, const TreatmentGrid* grid, const TruncationBounds* bounds,
                 const TruncatedGaussianLoss* loss, Exec exec)
        : x_(covariates),
          cats_(std::move(categories)),
          intervals_(intervals),
          kind_(kind),
          grid_(grid),
          bounds_(bounds),
          loss_(loss),
          exec_(exec) {}

    double operator()(int, const Matrix& scores) const {
        const std::size_t n = x_.rows();
        Matrix probs(n, static_cast<std::size_t>(intervals_));
        if (kind_ == PropensityKind::Discrete) {
            parallel_for(static_cast<std::ptrdiff_t>(n), exec_, [&](std::ptrdiff_t i) {
                const double* s = scores.row(static_cast<std::size_t>(i));
                double mx = s[0];
                for (int k = 1; k < intervals_; ++k) mx = std::max(mx, s[k]);
                double z = 0.0;
                for (int k = 0; k < intervals_; ++k) z += std::exp(s[k] - mx);
                for (int k = 0; k < intervals_; ++k)
                    probs(static_cast<std::size_t>(i), static_cast<std::size_t>(k)) =
                        std::exp(s[k] - mx) / z;
            });
        } else {
            const double sigma = loss_->sigma();
            parallel_for(static_cast<std::ptrdiff_t>(n), exec_, [&](std::ptrdiff_t i) {
                homoskedastic_masses(*grid_, *bounds_, scores(static_cast<std::size_t>(i), 0),
                                     sigma, probs.row(static_cast<std::size_t>(i)));
            });
        }
        return asam_report_from_probs(x_, cats_, Portfolio::covariate_names(), probs, exec_)
            .overall_after;
    }

  private:
    const Matrix& x_;
    std::vector<int> cats_;
    int intervals_;
    PropensityKind kind_;
    const TreatmentGrid* grid_;
    const TruncationBounds* bounds_;
    const TruncatedGaussianLoss* loss_;
    Exec exec_;
};

}  // namespace

PropensityModel fit_discrete_ps(const Portfolio& portfolio, const TreatmentGrid& grid,
                                const PsFitConfig& config) {
    const int c = grid.intervals();
    const std::vector<int> cats = interval_categories(portfolio, grid);
    require_nonempty_intervals(cats, c, 1, "fit_discrete_ps");

    const Matrix x = portfolio.covariates();
    std::vector<double> targets(cats.begin(), cats.end());
    MultinoulliLoss loss(c);

    RoundCallback callback;
    if (config.asam_stopping)
        callback = AsamCallback(x, cats, c, PropensityKind::Discrete, nullptr, nullptr, nullptr,
                                config.boost.exec);

    PropensityModel model;
    model.kind = PropensityKind::Discrete;
    model.grid = grid;
    model.ensemble = fit_boosted(x, targets, loss, config.boost, callback);
    return model;
}

PropensityModel fit_continuous_gps(const Portfolio& portfolio, const TreatmentGrid& grid,
                                   TruncationBounds bounds, const PsFitConfig& config) {
    if (!bounds.valid()) throw std::invalid_argument("fit_continuous_gps: invalid bounds");
    for (const auto& r : portfolio.records())
        if (r.rate_change < bounds.lower || r.rate_change > bounds.upper)
            throw std::invalid_argument("fit_continuous_gps: dose outside bounds for policy " +
                                        std::to_string(r.id));
    const std::vector<int> cats = interval_categories(portfolio, grid);
    require_nonempty_intervals(cats, grid.intervals(), 2, "fit_continuous_gps");

    const Matrix x = portfolio.covariates();
    const std::vector<double> targets = portfolio.rate_changes();
    TruncatedGaussianLoss loss(bounds);

    RoundCallback callback;
    if (config.asam_stopping)
        callback = AsamCallback(x, cats, grid.intervals(), PropensityKind::Continuous, &grid,
                                &bounds, &loss, config.boost.exec);

    PropensityModel model;
    model.kind = PropensityKind::Continuous;
    model.grid = grid;
    model.bounds = bounds;
    model.ensemble = fit_boosted(x, targets, loss, config.boost, callback);

    // Post-fit scales: homoskedastic from all residuals, one per interval
    // from the interval's own residuals.
    const Matrix fitted = model.ensemble.predict(x, config.boost.exec);
    std::vector<double> all_res(portfolio.size());
    for (std::size_t i = 0; i < portfolio.size(); ++i) all_res[i] = targets[i] - fitted(i, 0);
    model.sigma = sigma_hat(all_res);
    model.interval_sigma.assign(static_cast<std::size_t>(grid.intervals()), 0.0);
    for (int k = 0; k < grid.intervals(); ++k) {
        std::vector<double> res;
        for (std::size_t i = 0; i < portfolio.size(); ++i)
            if (cats[i] == k) res.push_back(all_res[i]);
        model.interval_sigma[static_cast<std::size_t>(k)] = sigma_hat(res);
    }
    return model;
}

// ---------------------------------------------------------------------------
// Convergence study
// ---------------------------------------------------------------------------

std::vector<ConvergencePoint> convergence_study(const Portfolio& portfolio,
                                                const std::vector<int>& interval_counts,
                                                const PsFitConfig& discrete_config,
                                                const PsFitConfig& continuous_config) {
    const std::vector<double> doses = portfolio.rate_changes();
    const double lo = *std::min_element(doses.begin(), doses.end());
    const double hi = *std::max_element(doses.begin(), doses.end());
    const TruncationBounds bounds{lo, hi};

    std::vector<ConvergencePoint> out;
    for (int c : interval_counts) {
        const TreatmentGrid grid = quantile_grid(doses, c);
        const PropensityModel discrete = fit_discrete_ps(portfolio, grid, discrete_config);
        const PropensityModel continuous =
            fit_continuous_gps(portfolio, grid, bounds, continuous_config);

        const Matrix x = portfolio.covariates();
        const Matrix pd = discrete.interval_prob_matrix(x);
        const Matrix pc = continuous.interval_prob_matrix(x);
        const std::vector<int> cats = interval_categories(portfolio, grid);

        std::vector<double> diffs(portfolio.size());
        for (std::size_t i = 0; i < portfolio.size(); ++i) {
            const std::size_t ci = static_cast<std::size_t>(cats[i]);
            diffs[i] = std::abs(pd(i, ci) - pc(i, ci));
        }
        std::sort(diffs.begin(), diffs.end());

        const BalanceReport rd = asam_report_from_probs(x, cats, Portfolio::covariate_names(), pd);
        const BalanceReport rc = asam_report_from_probs(x, cats, Portfolio::covariate_names(), pc);

        ConvergencePoint point;
        point.intervals = c;
        point.diff_q1 = quantile_sorted(diffs, 0.25);
        point.diff_median = quantile_sorted(diffs, 0.5);
        point.diff_q3 = quantile_sorted(diffs, 0.75);
        point.asam_discrete = rd.asam_after;
        point.asam_continuous = rc.asam_after;
        point.asam_discrete_mean = rd.overall_after;
        point.asam_continuous_mean = rc.overall_after;
        out.push_back(std::move(point));
    }
    return out;
}

}  // namespace renewal
