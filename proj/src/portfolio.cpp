#include "renewal/portfolio.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "renewal/prng.hpp"
#include "renewal/stats.hpp"

namespace renewal {

using json = nlohmann::json;

const char* to_string(RiskLevel r) {
    switch (r) {
        case RiskLevel::VeryLow: return "VeryLow";
        case RiskLevel::Low: return "Low";
        case RiskLevel::Medium: return "Medium";
        case RiskLevel::High: return "High";
    }
    return "?";
}

const char* to_string(PolicyType p) {
    switch (p) {
        case PolicyType::Regular: return "Regular";
        case PolicyType::Employee: return "Employee";
        case PolicyType::SecondCar: return "SecondCar";
    }
    return "?";
}

std::optional<RiskLevel> parse_risk_level(const std::string& s) {
    if (s == "VeryLow") return RiskLevel::VeryLow;
    if (s == "Low") return RiskLevel::Low;
    if (s == "Medium") return RiskLevel::Medium;
    if (s == "High") return RiskLevel::High;
    return std::nullopt;
}

std::optional<PolicyType> parse_policy_type(const std::string& s) {
    if (s == "Regular") return PolicyType::Regular;
    if (s == "Employee") return PolicyType::Employee;
    if (s == "SecondCar") return PolicyType::SecondCar;
    return std::nullopt;
}

DerivedCovariates derive_covariates(double offer_before_changes, double cheapest,
                                    double base_offer, double cheapest_vs_base,
                                    double second_cheapest_vs_base) {
    if (offer_before_changes <= 0.0)
        throw std::invalid_argument("derive_covariates: offer before changes must be > 0");
    DerivedCovariates d;
    d.competitiveness = (cheapest - offer_before_changes) / offer_before_changes;
    d.undershooting_1 = std::max(cheapest_vs_base - base_offer, 0.0);
    d.undershooting_2 = std::max(second_cheapest_vs_base - base_offer, 0.0);
    return d;
}

Portfolio::Portfolio(std::vector<PolicyRecord> records) : records_(std::move(records)) {
    std::set<std::int64_t> ids;
    for (const auto& r : records_) {
        if (!ids.insert(r.id).second)
            throw std::invalid_argument("Portfolio: duplicate policy id " + std::to_string(r.id));
    }
}

const std::vector<std::string>& Portfolio::covariate_names() {
    static const std::vector<std::string> names = {
        "premium_new_base",   "undershooting_1",      "undershooting_2",
        "risk_level=Low",     "risk_level=Medium",    "risk_level=High",
        "policy_type=Employee", "policy_type=SecondCar"};
    return names;
}

Matrix Portfolio::covariates() const {
    Matrix x(records_.size(), covariate_names().size());
    for (std::size_t i = 0; i < records_.size(); ++i) {
        const auto& r = records_[i];
        x(i, 0) = r.premium_new_base;
        x(i, 1) = r.undershooting_1;
        x(i, 2) = r.undershooting_2;
        x(i, 3) = r.risk_level == RiskLevel::Low ? 1.0 : 0.0;
        x(i, 4) = r.risk_level == RiskLevel::Medium ? 1.0 : 0.0;
        x(i, 5) = r.risk_level == RiskLevel::High ? 1.0 : 0.0;
        x(i, 6) = r.policy_type == PolicyType::Employee ? 1.0 : 0.0;
        x(i, 7) = r.policy_type == PolicyType::SecondCar ? 1.0 : 0.0;
    }
    return x;
}

std::vector<double> Portfolio::rate_changes() const {
    std::vector<double> t(records_.size());
    for (std::size_t i = 0; i < records_.size(); ++i) t[i] = records_[i].rate_change;
    return t;
}

std::vector<double> Portfolio::churn() const {
    std::vector<double> y(records_.size());
    for (std::size_t i = 0; i < records_.size(); ++i) y[i] = records_[i].churn;
    return y;
}

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

CsvSchema CsvSchema::canonical() {
    CsvSchema s;
    for (const char* name :
         {"id", "churn", "rate_change", "expenses", "competitiveness", "premium_old",
          "premium_new_base", "undershooting_1", "undershooting_2", "risk_level", "policy_type"})
        s.columns[name] = name;
    return s;
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : line) {
        if (ch == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (ch != '\r') {
            cur.push_back(ch);
        }
    }
    out.push_back(cur);
    return out;
}

double parse_double_cell(const std::string& cell, const std::string& column, std::size_t row) {
    double v = 0.0;
    const char* first = cell.data();
    const char* last = cell.data() + cell.size();
    auto [ptr, ec] = std::from_chars(first, last, v);
    if (ec != std::errc() || ptr != last)
        throw std::invalid_argument("load_csv: unparseable numeric '" + cell + "' in column '" +
                                    column + "' on row " + std::to_string(row));
    return v;
}

std::string format_double(double v) {
    char buf[32];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    (void)ec;
    return std::string(buf, ptr);
}

}  // namespace

Portfolio load_csv(const std::string& path, const CsvSchema& schema) {
    std::ifstream in(path);
    if (!in) throw std::invalid_argument("load_csv: cannot open " + path);
    std::string line;
    if (!std::getline(in, line)) throw std::invalid_argument("load_csv: empty file " + path);

    const std::vector<std::string> header = split_csv_line(line);
    std::map<std::string, std::size_t> field_to_index;
    for (const auto& [field, column] : schema.columns) {
        auto it = std::find(header.begin(), header.end(), column);
        if (it == header.end())
            throw std::invalid_argument("load_csv: missing column '" + column + "' in " + path);
        field_to_index[field] = static_cast<std::size_t>(it - header.begin());
    }

    std::vector<PolicyRecord> records;
    std::size_t row = 1;  // header is row 1
    while (std::getline(in, line)) {
        ++row;
        if (line.empty()) continue;
        const std::vector<std::string> cells = split_csv_line(line);
        if (cells.size() != header.size())
            throw std::invalid_argument("load_csv: row " + std::to_string(row) + " has " +
                                        std::to_string(cells.size()) + " cells, expected " +
                                        std::to_string(header.size()));
        auto cell = [&](const std::string& field) -> const std::string& {
            return cells[field_to_index.at(field)];
        };
        PolicyRecord r;
        r.id = static_cast<std::int64_t>(parse_double_cell(cell("id"), "id", row));
        const double churn = parse_double_cell(cell("churn"), "churn", row);
        if (churn != 0.0 && churn != 1.0)
            throw std::invalid_argument("load_csv: churn must be 0 or 1 on row " +
                                        std::to_string(row));
        r.churn = static_cast<int>(churn);
        r.rate_change = parse_double_cell(cell("rate_change"), "rate_change", row);
        r.expenses = parse_double_cell(cell("expenses"), "expenses", row);
        r.competitiveness = parse_double_cell(cell("competitiveness"), "competitiveness", row);
        r.premium_old = parse_double_cell(cell("premium_old"), "premium_old", row);
        r.premium_new_base = parse_double_cell(cell("premium_new_base"), "premium_new_base", row);
        r.undershooting_1 = parse_double_cell(cell("undershooting_1"), "undershooting_1", row);
        r.undershooting_2 = parse_double_cell(cell("undershooting_2"), "undershooting_2", row);
        const auto risk = parse_risk_level(cell("risk_level"));
        if (!risk)
            throw std::invalid_argument("load_csv: unknown risk_level '" + cell("risk_level") +
                                        "' on row " + std::to_string(row));
        r.risk_level = *risk;
        const auto ptype = parse_policy_type(cell("policy_type"));
        if (!ptype)
            throw std::invalid_argument("load_csv: unknown policy_type '" + cell("policy_type") +
                                        "' on row " + std::to_string(row));
        r.policy_type = *ptype;
        if (r.expenses < 0.0 || r.premium_old <= 0.0 || r.premium_new_base <= 0.0 ||
            r.undershooting_1 < 0.0 || r.undershooting_2 < 0.0)
            throw std::invalid_argument("load_csv: domain violation on row " + std::to_string(row));
        records.push_back(r);
    }
    return Portfolio(std::move(records));
}

void save_csv(const Portfolio& portfolio, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("save_csv: cannot write " + path);
    out << "id,churn,rate_change,expenses,competitiveness,premium_old,premium_new_base,"
           "undershooting_1,undershooting_2,risk_level,policy_type\n";
    for (const auto& r : portfolio.records()) {
        out << r.id << ',' << r.churn << ',' << format_double(r.rate_change) << ','
            << format_double(r.expenses) << ',' << format_double(r.competitiveness) << ','
            << format_double(r.premium_old) << ',' << format_double(r.premium_new_base) << ','
            << format_double(r.undershooting_1) << ',' << format_double(r.undershooting_2) << ','
            << to_string(r.risk_level) << ',' << to_string(r.policy_type) << '\n';
    }
}

// ---------------------------------------------------------------------------
// Trimming and treatment grid
// ---------------------------------------------------------------------------

namespace {

std::pair<double, double> iqr_fence(std::vector<double> values) {
    std::sort(values.begin(), values.end());
    const double q1 = quantile_sorted(values, 0.25);
    const double q3 = quantile_sorted(values, 0.75);
    const double iqr = q3 - q1;
    return {q1 - 1.5 * iqr, q3 + 1.5 * iqr};
}

}  // namespace

std::pair<Portfolio, TrimReport> trim_outliers(const Portfolio& portfolio) {
    if (portfolio.size() < 4) throw std::invalid_argument("trim_outliers: need at least 4 records");
    std::vector<double> rates, comps;
    rates.reserve(portfolio.size());
    comps.reserve(portfolio.size());
    for (const auto& r : portfolio.records()) {
        rates.push_back(r.rate_change);
        comps.push_back(r.competitiveness);
    }
    const auto [rate_lo, rate_hi] = iqr_fence(rates);
    const auto [comp_lo, comp_hi] = iqr_fence(comps);

    std::vector<PolicyRecord> kept;
    for (const auto& r : portfolio.records()) {
        const bool rate_ok = r.rate_change >= rate_lo && r.rate_change <= rate_hi;
        const bool comp_ok = r.competitiveness >= comp_lo && r.competitiveness <= comp_hi;
        if (rate_ok && comp_ok) kept.push_back(r);
    }

    TrimReport report;
    report.input_count = portfolio.size();
    report.retained_count = kept.size();
    if (!kept.empty()) {
        auto [rmin, rmax] = std::minmax_element(kept.begin(), kept.end(),
                                                [](const PolicyRecord& a, const PolicyRecord& b) {
                                                    return a.rate_change < b.rate_change;
                                                });
        auto [cmin, cmax] = std::minmax_element(kept.begin(), kept.end(),
                                                [](const PolicyRecord& a, const PolicyRecord& b) {
                                                    return a.competitiveness < b.competitiveness;
                                                });
        report.rate_change_low = rmin->rate_change;
        report.rate_change_high = rmax->rate_change;
        report.competitiveness_low = cmin->competitiveness;
        report.competitiveness_high = cmax->competitiveness;
    }
    return {Portfolio(std::move(kept)), report};
}

std::string TrimReport::to_json() const {
    json j;
    j["input_count"] = input_count;
    j["retained_count"] = retained_count;
    j["retained_fraction"] =
        input_count == 0 ? 0.0 : static_cast<double>(retained_count) / static_cast<double>(input_count);
    j["rate_change_range"] = {rate_change_low, rate_change_high};
    j["competitiveness_range"] = {competitiveness_low, competitiveness_high};
    return j.dump(2);
}

int TreatmentGrid::category_of(double t) const {
    const int c = intervals();
    if (t <= boundaries[1]) return 0;
    for (int k = 1; k < c; ++k) {
        if (t <= boundaries[static_cast<std::size_t>(k) + 1]) return k;
    }
    return c - 1;
}

TreatmentGrid quantile_grid(const std::vector<double>& rate_changes, int intervals) {
    if (intervals < 2) throw std::invalid_argument("quantile_grid: need at least 2 intervals");
    std::vector<double> sorted = rate_changes;
    std::sort(sorted.begin(), sorted.end());
    std::vector<double> distinct = sorted;
    distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
    if (static_cast<int>(distinct.size()) < intervals)
        throw std::invalid_argument("quantile_grid: fewer distinct values than intervals");

    TreatmentGrid grid;
    grid.boundaries.resize(static_cast<std::size_t>(intervals) + 1);
    for (int c = 0; c <= intervals; ++c)
        grid.boundaries[static_cast<std::size_t>(c)] =
            quantile_sorted(sorted, static_cast<double>(c) / static_cast<double>(intervals));
    for (int c = 0; c + 1 <= intervals; ++c) {
        if (grid.boundaries[static_cast<std::size_t>(c)] >=
            grid.boundaries[static_cast<std::size_t>(c) + 1])
            throw std::invalid_argument(
                "quantile_grid: too few distinct values to form " + std::to_string(intervals) +
                " nonempty intervals");
    }

    grid.medians.resize(static_cast<std::size_t>(intervals));
    for (int c = 0; c < intervals; ++c) {
        std::vector<double> members;
        for (double t : sorted) {
            const double lo = grid.boundaries[static_cast<std::size_t>(c)];
            const double hi = grid.boundaries[static_cast<std::size_t>(c) + 1];
            const bool in = (c == 0) ? (t >= lo && t <= hi) : (t > lo && t <= hi);
            if (in) members.push_back(t);
        }
        if (members.empty())
            throw std::invalid_argument("quantile_grid: empty interval " + std::to_string(c));
        grid.medians[static_cast<std::size_t>(c)] = quantile_sorted(members, 0.5);
    }
    return grid;
}

// ---------------------------------------------------------------------------
// Synthetic generator
// ---------------------------------------------------------------------------

namespace {

template <std::size_t N>
int draw_categorical(Prng& rng, const std::array<double, N>& probs) {
    const double u = rng.next_double();
    double acc = 0.0;
    for (std::size_t k = 0; k + 1 < N; ++k) {
        acc += probs[k];
        if (u < acc) return static_cast<int>(k);
    }
    return static_cast<int>(N) - 1;
}

void validate(const SynthConfig& cfg) {
    if (cfg.n <= 0) throw std::invalid_argument("synth_generate: n must be > 0");
    auto check_probs = [](const auto& probs, const char* what) {
        double s = 0.0;
        for (double p : probs) {
            if (p < 0.0 || p > 1.0)
                throw std::invalid_argument(std::string("synth_generate: ") + what +
                                            " probability outside [0,1]");
            s += p;
        }
        if (std::abs(s - 1.0) > 1e-9)
            throw std::invalid_argument(std::string("synth_generate: ") + what +
                                        " probabilities must sum to 1");
    };
    check_probs(cfg.risk_probs, "risk_level");
    check_probs(cfg.policy_probs, "policy_type");
    if (cfg.t_sd <= 0.0) throw std::invalid_argument("synth_generate: t_sd must be > 0");
    if (cfg.churn_kind == ChurnKind::CategoricalLogistic &&
        cfg.churn_cat_effects.size() != cfg.churn_cat_breaks.size() + 1)
        throw std::invalid_argument("synth_generate: categorical effects must be breaks+1");
}

double assignment_shift(const SynthConfig& cfg, const PolicyRecord& r) {
    return cfg.confounding *
           (cfg.t_risk_shift[static_cast<std::size_t>(r.risk_level)] +
            cfg.t_premium_shift * (r.premium_new_base / 500.0 - 1.0) +
            cfg.t_under_shift * r.undershooting_2);
}

double churn_logit(const SynthConfig& cfg, const PolicyRecord& r, double t, double comp) {
    double eta = cfg.churn_b0 + cfg.churn_b_comp * comp + cfg.churn_b_comp2 * comp * comp +
                 cfg.churn_risk_add[static_cast<std::size_t>(r.risk_level)];
    if (cfg.churn_kind == ChurnKind::Bump) {
        const double z = (t - cfg.churn_bump_center) / cfg.churn_bump_width;
        eta += cfg.churn_b_rate * t + cfg.churn_bump * std::exp(-0.5 * z * z);
    } else {
        std::size_t c = 0;
        while (c < cfg.churn_cat_breaks.size() && t > cfg.churn_cat_breaks[c]) ++c;
        eta += cfg.churn_cat_effects[c];
    }
    return eta;
}

}  // namespace

SynthResult synth_generate(const SynthConfig& config, std::uint64_t seed) {
    validate(config);
    const int n = config.n;
    std::vector<PolicyRecord> records(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        // One substream per policy: records are independent of portfolio size.
        Prng rng(seed, static_cast<std::uint64_t>(i));
        PolicyRecord& r = records[static_cast<std::size_t>(i)];
        r.id = i + 1;
        r.risk_level = static_cast<RiskLevel>(draw_categorical(rng, config.risk_probs));
        r.policy_type = static_cast<PolicyType>(draw_categorical(rng, config.policy_probs));

        const double premium_old = 450.0 * std::exp(0.45 * rng.next_normal());
        static constexpr std::array<double, 4> risk_loading = {-0.02, 0.02, 0.08, 0.2};
        const double base =
            premium_old *
            (1.0 + risk_loading[static_cast<std::size_t>(r.risk_level)] + 0.05 * rng.next_normal());
        r.premium_old = premium_old;
        r.premium_new_base = std::max(base, 25.0);
        r.expenses = r.premium_new_base * (0.55 + 0.25 * rng.next_double());

        // Competitor prices: cheapest of the market versus our offers.
        const double offer_before_changes = premium_old;
        const double cheapest = offer_before_changes *
                                (1.0 + std::clamp(-0.05 + 0.28 * rng.next_normal(), -0.9, 1.5));
        const double cheapest_vs_base = r.premium_new_base * (1.0 + 0.18 * rng.next_normal());
        const double second_cheapest_vs_base =
            cheapest_vs_base * (1.0 + 0.08 * std::abs(rng.next_normal()));
        const DerivedCovariates d =
            derive_covariates(offer_before_changes, cheapest, r.premium_new_base, cheapest_vs_base,
                              second_cheapest_vs_base);
        r.competitiveness = d.competitiveness;
        r.undershooting_1 = d.undershooting_1;
        r.undershooting_2 = d.undershooting_2;

        r.rate_change = config.t_base + assignment_shift(config, r) + config.t_sd * rng.next_normal();

        const double p = sigmoid(churn_logit(config, r, r.rate_change, r.competitiveness));
        r.churn = rng.next_double() < p ? 1 : 0;
    }
    SynthResult out;
    out.portfolio = Portfolio(std::move(records));
    out.truth.config = config;
    out.truth.seed = seed;
    return out;
}

double SynthTruth::assignment_mean(const PolicyRecord& r) const {
    return config.t_base + assignment_shift(config, r);
}

double SynthTruth::interval_prob(const PolicyRecord& r, double lo, double hi) const {
    const double mu = assignment_mean(r);
    const double s = config.t_sd;
    return norm_cdf((hi - mu) / s) - norm_cdf((lo - mu) / s);
}

double SynthTruth::churn_prob(const PolicyRecord& r, double t, double comp) const {
    return sigmoid(churn_logit(config, r, t, comp));
}

// ---------------------------------------------------------------------------
// Config / truth serialization
// ---------------------------------------------------------------------------

namespace {

json config_to_json(const SynthConfig& c) {
    json j;
    j["n"] = c.n;
    j["confounding"] = c.confounding;
    j["risk_probs"] = c.risk_probs;
    j["policy_probs"] = c.policy_probs;
    j["t_base"] = c.t_base;
    j["t_sd"] = c.t_sd;
    j["t_risk_shift"] = c.t_risk_shift;
    j["t_premium_shift"] = c.t_premium_shift;
    j["t_under_shift"] = c.t_under_shift;
    j["churn_kind"] = c.churn_kind == ChurnKind::Bump ? "bump" : "categorical_logistic";
    j["churn_b0"] = c.churn_b0;
    j["churn_b_rate"] = c.churn_b_rate;
    j["churn_bump"] = c.churn_bump;
    j["churn_bump_center"] = c.churn_bump_center;
    j["churn_bump_width"] = c.churn_bump_width;
    j["churn_b_comp"] = c.churn_b_comp;
    j["churn_b_comp2"] = c.churn_b_comp2;
    j["churn_risk_add"] = c.churn_risk_add;
    j["churn_cat_breaks"] = c.churn_cat_breaks;
    j["churn_cat_effects"] = c.churn_cat_effects;
    return j;
}

SynthConfig config_from_json(const json& j) {
    SynthConfig c;
    c.n = j.at("n").get<int>();
    c.confounding = j.at("confounding").get<double>();
    c.risk_probs = j.at("risk_probs").get<std::array<double, 4>>();
    c.policy_probs = j.at("policy_probs").get<std::array<double, 3>>();
    c.t_base = j.at("t_base").get<double>();
    c.t_sd = j.at("t_sd").get<double>();
    c.t_risk_shift = j.at("t_risk_shift").get<std::array<double, 4>>();
    c.t_premium_shift = j.at("t_premium_shift").get<double>();
    c.t_under_shift = j.at("t_under_shift").get<double>();
    c.churn_kind = j.at("churn_kind").get<std::string>() == "bump"
                       ? ChurnKind::Bump
                       : ChurnKind::CategoricalLogistic;
    c.churn_b0 = j.at("churn_b0").get<double>();
    c.churn_b_rate = j.at("churn_b_rate").get<double>();
    c.churn_bump = j.at("churn_bump").get<double>();
    c.churn_bump_center = j.at("churn_bump_center").get<double>();
    c.churn_bump_width = j.at("churn_bump_width").get<double>();
    c.churn_b_comp = j.at("churn_b_comp").get<double>();
    c.churn_b_comp2 = j.at("churn_b_comp2").get<double>();
    c.churn_risk_add = j.at("churn_risk_add").get<std::array<double, 4>>();
    c.churn_cat_breaks = j.at("churn_cat_breaks").get<std::vector<double>>();
    c.churn_cat_effects = j.at("churn_cat_effects").get<std::vector<double>>();
    return c;
}

}  // namespace

std::string SynthConfig::to_json() const { return config_to_json(*this).dump(2); }

SynthConfig SynthConfig::from_json(const std::string& text) {
    return config_from_json(json::parse(text));
}

std::string SynthTruth::to_json() const {
    json j;
    j["seed"] = seed;
    j["config"] = config_to_json(config);
    return j.dump(2);
}

SynthTruth SynthTruth::from_json(const std::string& text) {
    const json j = json::parse(text);
    SynthTruth t;
    t.seed = j.at("seed").get<std::uint64_t>();
    t.config = config_from_json(j.at("config"));
    return t;
}

void save_meta(const SynthTruth& truth, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("save_meta: cannot write " + path);
    out << truth.to_json() << '\n';
}

SynthTruth load_meta(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::invalid_argument("load_meta: cannot open " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return SynthTruth::from_json(ss.str());
}

}  // namespace renewal
