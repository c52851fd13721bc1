#include "renewal/matching.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "renewal/prng.hpp"

namespace renewal {

using json = nlohmann::json;

std::vector<std::int32_t> find_donors(std::size_t policy, int category, const Matrix& scores,
                                      const std::vector<std::vector<std::int32_t>>& members,
                                      int donor_count) {
    const auto& pool = members[static_cast<std::size_t>(category)];
    std::size_t available = pool.size();
    for (std::int32_t j : pool)
        if (static_cast<std::size_t>(j) == policy) --available;
    if (available < static_cast<std::size_t>(donor_count))
        throw std::invalid_argument("find_donors: interval " + std::to_string(category) +
                                    " has only " + std::to_string(available) +
                                    " candidate donors, need " + std::to_string(donor_count));

    const double target = scores(policy, static_cast<std::size_t>(category));
    // Lexicographic (distance, index) order realizes the lower-index tie-break.
    std::vector<std::pair<double, std::int32_t>> candidates;
    candidates.reserve(pool.size());
    for (std::int32_t j : pool) {
        if (static_cast<std::size_t>(j) == policy) continue;
        candidates.emplace_back(
            std::abs(scores(static_cast<std::size_t>(j), static_cast<std::size_t>(category)) -
                     target),
            j);
    }
    std::nth_element(candidates.begin(), candidates.begin() + (donor_count - 1), candidates.end());
    std::sort(candidates.begin(), candidates.begin() + donor_count);

    std::vector<std::int32_t> out(static_cast<std::size_t>(donor_count));
    for (int d = 0; d < donor_count; ++d)
        out[static_cast<std::size_t>(d)] = candidates[static_cast<std::size_t>(d)].second;
    return out;
}

ImputedResponseSet impute(const Portfolio& portfolio, const PropensityModel& ps, int donor_count,
                          int imputations, std::uint64_t seed, Exec exec) {
    if (donor_count < 1) throw std::invalid_argument("impute: donor count must be >= 1");
    if (imputations < 1) throw std::invalid_argument("impute: imputations must be >= 1");
    const std::size_t n = portfolio.size();
    const int c = ps.grid.intervals();

    const Matrix x = portfolio.covariates();
    const Matrix scores = ps.interval_prob_matrix(x, exec);

    std::vector<std::vector<std::int32_t>> members(static_cast<std::size_t>(c));
    std::vector<int> cats(n);
    for (std::size_t i = 0; i < n; ++i) {
        cats[i] = ps.grid.category_of(portfolio[i].rate_change);
        members[static_cast<std::size_t>(cats[i])].push_back(static_cast<std::int32_t>(i));
    }
    for (int k = 0; k < c; ++k)
        if (members[static_cast<std::size_t>(k)].size() <=
            static_cast<std::size_t>(donor_count))
            throw std::invalid_argument("impute: interval " + std::to_string(k) +
                                        " too small for " + std::to_string(donor_count) +
                                        " donors");

    ImputedResponseSet set;
    set.n = n;
    set.categories = c;
    set.donors_per_cell = donor_count;
    set.imputations = imputations;
    set.seed = seed;
    set.draws.assign(n * static_cast<std::size_t>(c) * static_cast<std::size_t>(imputations), 0);
    set.donors.assign(n * static_cast<std::size_t>(c) * static_cast<std::size_t>(donor_count), -1);

    parallel_for_dynamic(static_cast<std::ptrdiff_t>(n) * c, exec, [&](std::ptrdiff_t cell) {
        const std::size_t i = static_cast<std::size_t>(cell) / static_cast<std::size_t>(c);
        const int k = static_cast<int>(cell % c);
        const std::size_t draw_base =
            (i * static_cast<std::size_t>(c) + static_cast<std::size_t>(k)) *
            static_cast<std::size_t>(imputations);
        const std::vector<std::int32_t> donors = find_donors(i, k, scores, members, donor_count);
        std::memcpy(set.donors.data() +
                        (i * static_cast<std::size_t>(c) + static_cast<std::size_t>(k)) *
                            static_cast<std::size_t>(donor_count),
                    donors.data(), donors.size() * sizeof(std::int32_t));
        if (cats[i] == k) {
            // Observed cell: the actual response in every slot.
            for (int m = 0; m < imputations; ++m)
                set.draws[draw_base + static_cast<std::size_t>(m)] =
                    static_cast<std::uint8_t>(portfolio[i].churn);
        } else {
            // Draw streams are keyed per (seed, policy id, category) so the
            // result is independent of scheduling and insertion order.
            Prng rng(seed, static_cast<std::uint64_t>(portfolio[i].id),
                     static_cast<std::uint64_t>(k));
            for (int m = 0; m < imputations; ++m) {
                const std::int32_t donor =
                    donors[rng.next_below(static_cast<std::uint64_t>(donor_count))];
                set.draws[draw_base + static_cast<std::size_t>(m)] =
                    static_cast<std::uint8_t>(portfolio[static_cast<std::size_t>(donor)].churn);
            }
        }
    });
    return set;
}

// ---------------------------------------------------------------------------
// Rubin's rule
// ---------------------------------------------------------------------------

PooledEstimate rubin_combine(const std::vector<std::vector<double>>& estimates,
                             const std::vector<Matrix>& variances) {
    const int m = static_cast<int>(estimates.size());
    if (m < 2) throw std::invalid_argument("rubin_combine: need at least 2 imputations");
    if (variances.size() != estimates.size())
        throw std::invalid_argument("rubin_combine: estimates/variances count mismatch");
    const std::size_t p = estimates[0].size();
    for (const auto& e : estimates)
        if (e.size() != p) throw std::invalid_argument("rubin_combine: inconsistent dimensions");
    for (const auto& v : variances)
        if (v.rows() != p || v.cols() != p)
            throw std::invalid_argument("rubin_combine: inconsistent covariance dimensions");

    PooledEstimate out;
    out.imputations = m;
    out.delta_bar.assign(p, 0.0);
    for (const auto& e : estimates)
        for (std::size_t j = 0; j < p; ++j) out.delta_bar[j] += e[j];
    for (std::size_t j = 0; j < p; ++j) out.delta_bar[j] /= static_cast<double>(m);

    out.within = Matrix(p, p);
    for (const auto& v : variances)
        for (std::size_t a = 0; a < p; ++a)
            for (std::size_t b = 0; b < p; ++b) out.within(a, b) += v(a, b);
    for (std::size_t a = 0; a < p; ++a)
        for (std::size_t b = 0; b < p; ++b) out.within(a, b) /= static_cast<double>(m);

    out.between = Matrix(p, p);
    for (const auto& e : estimates)
        for (std::size_t a = 0; a < p; ++a)
            for (std::size_t b = 0; b < p; ++b)
                out.between(a, b) +=
                    (e[a] - out.delta_bar[a]) * (e[b] - out.delta_bar[b]);
    for (std::size_t a = 0; a < p; ++a)
        for (std::size_t b = 0; b < p; ++b) out.between(a, b) /= static_cast<double>(m - 1);

    out.var = Matrix(p, p);
    const double inflation = 1.0 + 1.0 / static_cast<double>(m);
    for (std::size_t a = 0; a < p; ++a)
        for (std::size_t b = 0; b < p; ++b)
            out.var(a, b) = out.within(a, b) + inflation * out.between(a, b);
    return out;
}

// ---------------------------------------------------------------------------
// Persistence
// ---------------------------------------------------------------------------

namespace {
constexpr char kMagic[4] = {'R', 'I', 'M', 'P'};
}

void ImputedResponseSet::save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("ImputedResponseSet::save: cannot write " + path);
    json header;
    header["n"] = n;
    header["categories"] = categories;
    header["donors_per_cell"] = donors_per_cell;
    header["imputations"] = imputations;
    header["seed"] = seed;
    const std::string htext = header.dump();
    const std::uint64_t hlen = htext.size();
    out.write(kMagic, 4);
    out.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
    out.write(htext.data(), static_cast<std::streamsize>(htext.size()));
    out.write(reinterpret_cast<const char*>(draws.data()),
              static_cast<std::streamsize>(draws.size()));
    out.write(reinterpret_cast<const char*>(donors.data()),
              static_cast<std::streamsize>(donors.size() * sizeof(std::int32_t)));
}

ImputedResponseSet ImputedResponseSet::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::invalid_argument("ImputedResponseSet::load: cannot open " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kMagic, 4) != 0)
        throw std::invalid_argument("ImputedResponseSet::load: bad magic in " + path);
    std::uint64_t hlen = 0;
    in.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
    std::string htext(hlen, '\0');
    in.read(htext.data(), static_cast<std::streamsize>(hlen));
    const json header = json::parse(htext);

    ImputedResponseSet set;
    set.n = header.at("n").get<std::size_t>();
    set.categories = header.at("categories").get<int>();
    set.donors_per_cell = header.at("donors_per_cell").get<int>();
    set.imputations = header.at("imputations").get<int>();
    set.seed = header.at("seed").get<std::uint64_t>();
    set.draws.resize(set.n * static_cast<std::size_t>(set.categories) *
                     static_cast<std::size_t>(set.imputations));
    set.donors.resize(set.n * static_cast<std::size_t>(set.categories) *
                      static_cast<std::size_t>(set.donors_per_cell));
    in.read(reinterpret_cast<char*>(set.draws.data()),
            static_cast<std::streamsize>(set.draws.size()));
    in.read(reinterpret_cast<char*>(set.donors.data()),
            static_cast<std::streamsize>(set.donors.size() * sizeof(std::int32_t)));
    if (!in) throw std::invalid_argument("ImputedResponseSet::load: truncated file " + path);
    return set;
}

void ImputedResponseSet::export_csv(const Portfolio& portfolio, const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("ImputedResponseSet::export_csv: cannot write " + path);
    out << "policy_id,category,imputation,response\n";
    for (std::size_t i = 0; i < n; ++i)
        for (int c = 0; c < categories; ++c)
            for (int m = 0; m < imputations; ++m)
                out << portfolio[i].id << ',' << c << ',' << m << ','
                    << static_cast<int>(draw(i, c, m)) << '\n';
}

}  // namespace renewal
