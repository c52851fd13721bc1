#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

namespace renewal {

inline double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

inline double logit(double p) { return std::log(p / (1.0 - p)); }

// log(1 + exp(x)) without overflow.
inline double log1pexp(double x) {
    if (x > 37.0) return x + std::exp(-x);
    if (x < -37.0) return std::exp(x);
    return std::log1p(std::exp(x));
}

inline double norm_pdf(double x) {
    return 0.3989422804014326779399460599344 * std::exp(-0.5 * x * x);
}

inline double norm_cdf(double x) { return 0.5 * std::erfc(-x * 0.70710678118654752440084436210485); }

// Upper tail P[Z > x], accurate for large positive x.
inline double norm_cdf_upper(double x) { return 0.5 * std::erfc(x * 0.70710678118654752440084436210485); }

double mean(const std::vector<double>& x);

// Unbiased (N-1) sample variance / standard deviation.
double variance(const std::vector<double>& x);
double stddev(const std::vector<double>& x);

// Type-7 quantile (linear interpolation of order statistics) on sorted data.
double quantile_sorted(const std::vector<double>& sorted, double p);

// Convenience: copies, sorts, interpolates.
double quantile(std::vector<double> values, double p);

double median(std::vector<double> values);

}  // namespace renewal
