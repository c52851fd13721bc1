#include "renewal/prng.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

namespace renewal {

std::vector<int> sample_without_replacement(Prng& rng, int n, int k) {
    if (k < 0 || k > n) throw std::invalid_argument("sample_without_replacement: k outside [0,n]");
    std::vector<int> idx(static_cast<std::size_t>(n));
    std::iota(idx.begin(), idx.end(), 0);
    for (int i = 0; i < k; ++i) {
        const int j = i + static_cast<int>(rng.next_below(static_cast<std::uint64_t>(n - i)));
        std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(j)]);
    }
    idx.resize(static_cast<std::size_t>(k));
    std::sort(idx.begin(), idx.end());
    return idx;
}

}  // namespace renewal
