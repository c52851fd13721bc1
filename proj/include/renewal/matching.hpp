#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "renewal/matrix.hpp"
#include "renewal/parallel.hpp"
#include "renewal/portfolio.hpp"
#include "renewal/propensity.hpp"

namespace renewal {

// N x C x M imputed binary responses plus the donor lists behind them. The
// observed cell of each policy carries its observed response in all M slots.
struct ImputedResponseSet {
    std::size_t n = 0;
    int categories = 0;
    int donors_per_cell = 0;  // I
    int imputations = 0;      // M
    std::uint64_t seed = 0;
    std::vector<std::uint8_t> draws;   // [i*C*M + c*M + m]
    std::vector<std::int32_t> donors;  // [i*C*I + c*I + d]

    std::uint8_t draw(std::size_t i, int c, int m) const {
        return draws[(i * static_cast<std::size_t>(categories) + static_cast<std::size_t>(c)) *
                         static_cast<std::size_t>(imputations) +
                     static_cast<std::size_t>(m)];
    }
    const std::int32_t* donor_list(std::size_t i, int c) const {
        return donors.data() +
               (i * static_cast<std::size_t>(categories) + static_cast<std::size_t>(c)) *
                   static_cast<std::size_t>(donors_per_cell);
    }

    void save(const std::string& path) const;
    static ImputedResponseSet load(const std::string& path);
    // Long-format audit export: policy_id, category, imputation, response.
    void export_csv(const Portfolio& portfolio, const std::string& path) const;
};

// The I units in interval c nearest to policy i in |pi(t_c, X_i) - pi(t_c, X_j)|,
// ties broken by lower index; i itself is excluded. scores is the N x C
// interval-probability matrix; members[c] lists the row indices in interval c.
std::vector<std::int32_t> find_donors(std::size_t policy, int category, const Matrix& scores,
                                      const std::vector<std::vector<std::int32_t>>& members,
                                      int donor_count);

// Full imputation: donor search per (policy, category) cell and M seeded
// draws with replacement from the donors' observed responses. The draw
// stream is keyed by (seed, policy id, category), so cells are independent.
ImputedResponseSet impute(const Portfolio& portfolio, const PropensityModel& ps, int donor_count,
                          int imputations, std::uint64_t seed, Exec exec = Exec::Parallel);

struct PooledEstimate {
    std::vector<double> delta_bar;       // pooled coefficients
    Matrix within;                       // W-bar
    Matrix between;                      // B
    Matrix var;                          // W-bar + (1 + 1/M) B
    int imputations = 0;

    double se(std::size_t j) const { return std::sqrt(var(j, j)); }
};

// Rubin's rule over M coefficient vectors with per-imputation covariances.
PooledEstimate rubin_combine(const std::vector<std::vector<double>>& estimates,
                             const std::vector<Matrix>& variances);

}  // namespace renewal
