#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "renewal/matrix.hpp"

namespace renewal {

enum class RiskLevel : int { VeryLow = 0, Low = 1, Medium = 2, High = 3 };
enum class PolicyType : int { Regular = 0, Employee = 1, SecondCar = 2 };

const char* to_string(RiskLevel r);
const char* to_string(PolicyType p);
std::optional<RiskLevel> parse_risk_level(const std::string& s);
std::optional<PolicyType> parse_policy_type(const std::string& s);

// One policy renewal. Fractions are stored as decimals (0.0606, not 6.06);
// currency fields are plain doubles in portfolio units.
struct PolicyRecord {
    std::int64_t id = 0;
    int churn = 0;                    // Y_i in {0,1}
    double rate_change = 0.0;         // T_i, may be negative
    double expenses = 0.0;            // E_i >= 0
    double competitiveness = 0.0;     // (B - A) / A, may be negative
    double premium_old = 0.0;         // > 0
    double premium_new_base = 0.0;    // > 0
    double undershooting_1 = 0.0;     // (D1 - C)^+ >= 0
    double undershooting_2 = 0.0;     // (D2 - C)^+ >= 0
    RiskLevel risk_level = RiskLevel::VeryLow;
    PolicyType policy_type = PolicyType::Regular;

    bool operator==(const PolicyRecord&) const = default;
};

struct DerivedCovariates {
    double competitiveness = 0.0;
    double undershooting_1 = 0.0;
    double undershooting_2 = 0.0;
};

// competitiveness = (B - A)/A, u1 = (D1 - C)^+, u2 = (D2 - C)^+. Requires A > 0.
DerivedCovariates derive_covariates(double offer_before_changes, double cheapest,
                                    double base_offer, double cheapest_vs_base,
                                    double second_cheapest_vs_base);

class Portfolio {
  public:
    Portfolio() = default;
    explicit Portfolio(std::vector<PolicyRecord> records);

    const std::vector<PolicyRecord>& records() const { return records_; }
    std::size_t size() const { return records_.size(); }
    const PolicyRecord& operator[](std::size_t i) const { return records_[i]; }

    // Model covariates: numeric risk factors plus one-hot indicators with the
    // first level (VeryLow / Regular) as reference. Fixed order, K columns.
    static const std::vector<std::string>& covariate_names();
    Matrix covariates() const;

    std::vector<double> rate_changes() const;
    std::vector<double> churn() const;

    bool operator==(const Portfolio&) const = default;

  private:
    std::vector<PolicyRecord> records_;
};

// Maps record fields to CSV column names; defaults to the canonical header.
struct CsvSchema {
    std::map<std::string, std::string> columns;  // field -> column name
    static CsvSchema canonical();
};

Portfolio load_csv(const std::string& path, const CsvSchema& schema = CsvSchema::canonical());
void save_csv(const Portfolio& portfolio, const std::string& path);

struct TrimReport {
    std::size_t input_count = 0;
    std::size_t retained_count = 0;
    double rate_change_low = 0.0, rate_change_high = 0.0;
    double competitiveness_low = 0.0, competitiveness_high = 0.0;
    std::string to_json() const;
};

// Keeps records whose rate change AND competitiveness both lie within
// [Q1 - 1.5 IQR, Q3 + 1.5 IQR] of their marginal distributions. A record
// failing either criterion is dropped. Requires N >= 4.
std::pair<Portfolio, TrimReport> trim_outliers(const Portfolio& portfolio);

// C treatment intervals with quantile boundaries. The first interval is
// closed on both ends, the rest are left-open/right-closed.
struct TreatmentGrid {
    std::vector<double> boundaries;  // C+1 ascending values
    std::vector<double> medians;     // C per-interval medians

    int intervals() const { return static_cast<int>(medians.size()); }
    double lower() const { return boundaries.front(); }
    double upper() const { return boundaries.back(); }
    int category_of(double t) const;

    bool operator==(const TreatmentGrid&) const = default;
};

// Boundaries at the 0, 1/C, ..., 1 type-7 empirical quantiles; per-interval
// medians. Throws when fewer than C distinct values or an interval is empty.
TreatmentGrid quantile_grid(const std::vector<double>& rate_changes, int intervals);

// ---------------------------------------------------------------------------
// Synthetic portfolio generator. Stands in for the proprietary data: the
// treatment is confounded through the risk factors and the churn curve has
// an inflection bump at small positive rate changes plus elevated churn at
// high competitiveness. All ground-truth parameters are recorded in
// SynthTruth so tests can check recovery.
// ---------------------------------------------------------------------------

enum class ChurnKind { Bump, CategoricalLogistic };

struct SynthConfig {
    int n = 20000;
    double confounding = 1.0;

    // Covariate mixture weights.
    std::array<double, 4> risk_probs = {0.72, 0.20, 0.07, 0.01};
    std::array<double, 3> policy_probs = {0.89, 0.045, 0.065};

    // Treatment assignment: T = t_base + confounding * shift(X) + t_sd * N(0,1).
    double t_base = 0.055;
    double t_sd = 0.055;
    std::array<double, 4> t_risk_shift = {0.0, 0.025, 0.055, 0.09};
    double t_premium_shift = 0.02;   // times (premium_new_base/500 - 1)
    double t_under_shift = 0.0004;   // times undershooting_2

    // Churn curve: logit p = b0 + b_rate*T + bump*exp(-(T-c)^2/(2w^2))
    //              + b_comp*comp + b_comp2*comp^2 + risk_add[risk].
    ChurnKind churn_kind = ChurnKind::Bump;
    double churn_b0 = -1.6;
    double churn_b_rate = 6.0;
    double churn_bump = 0.9;
    double churn_bump_center = 0.01;
    double churn_bump_width = 0.012;
    double churn_b_comp = 1.5;
    double churn_b_comp2 = 0.6;
    std::array<double, 4> churn_risk_add = {0.0, 0.12, 0.3, 0.7};
    // CategoricalLogistic mode: treatment enters through interval indicators
    // on fixed breakpoints instead of b_rate/bump terms.
    std::vector<double> churn_cat_breaks;    // interior breakpoints
    std::vector<double> churn_cat_effects;   // one per interval

    std::string to_json() const;
    static SynthConfig from_json(const std::string& text);
};

struct SynthTruth {
    SynthConfig config;
    std::uint64_t seed = 0;

    // True conditional interval probability P[T in (lo, hi] | X_i].
    double interval_prob(const PolicyRecord& r, double lo, double hi) const;
    // True churn probability for a policy at rate change t with the record's
    // competitiveness replaced by comp.
    double churn_prob(const PolicyRecord& r, double t, double comp) const;
    double churn_prob(const PolicyRecord& r, double t) const {
        return churn_prob(r, t, r.competitiveness);
    }
    // Conditional mean/sd of the assignment distribution.
    double assignment_mean(const PolicyRecord& r) const;
    double assignment_sd() const { return config.t_sd; }

    std::string to_json() const;
    static SynthTruth from_json(const std::string& text);
};

struct SynthResult {
    Portfolio portfolio;
    SynthTruth truth;
};

SynthResult synth_generate(const SynthConfig& config, std::uint64_t seed);

// Sidecar IO: `<name>.meta.json` next to the portfolio CSV.
void save_meta(const SynthTruth& truth, const std::string& path);
SynthTruth load_meta(const std::string& path);

}  // namespace renewal
