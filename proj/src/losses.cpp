#include "renewal/losses.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "renewal/stats.hpp"

namespace renewal {

LossEval bernoulli_loss(double y, double score) {
    if (y != 0.0 && y != 1.0) throw std::invalid_argument("bernoulli_loss: y must be 0 or 1");
    const double p = sigmoid(score);
    LossEval ev;
    ev.value = log1pexp(score) - y * score;
    ev.grad = p - y;
    ev.hess = p * (1.0 - p);
    return ev;
}

double multinoulli_loss(int t_index, const std::vector<double>& scores, std::vector<double>& grad,
                        std::vector<double>& hess) {
    const int c = static_cast<int>(scores.size());
    if (c < 2) throw std::invalid_argument("multinoulli_loss: need at least 2 categories");
    if (t_index < 0 || t_index >= c)
        throw std::invalid_argument("multinoulli_loss: t_index outside [0,C)");
    grad.resize(scores.size());
    hess.resize(scores.size());
    const double mx = *std::max_element(scores.begin(), scores.end());
    double z = 0.0;
    for (double s : scores) z += std::exp(s - mx);
    const double logz = mx + std::log(z);
    for (int k = 0; k < c; ++k) {
        const double f = std::exp(scores[static_cast<std::size_t>(k)] - logz);
        grad[static_cast<std::size_t>(k)] = f - (k == t_index ? 1.0 : 0.0);
        hess[static_cast<std::size_t>(k)] = f * (1.0 - f);
    }
    return logz - scores[static_cast<std::size_t>(t_index)];
}

namespace {

// Phi(beta) - Phi(alpha), computed in whichever tail keeps the difference
// away from catastrophic cancellation.
double cdf_difference(double alpha, double beta) {
    if (alpha > 0.0 && beta > 0.0) return norm_cdf_upper(alpha) - norm_cdf_upper(beta);
    return norm_cdf(beta) - norm_cdf(alpha);
}

}  // namespace

LossEval truncated_gaussian_loss(double t, double f, double sigma, TruncationBounds bounds) {
    if (sigma <= 0.0) throw std::invalid_argument("truncated_gaussian_loss: sigma must be > 0");
    if (!bounds.valid()) throw std::invalid_argument("truncated_gaussian_loss: invalid bounds");
    const double alpha = (bounds.lower - f) / sigma;
    const double beta = (bounds.upper - f) / sigma;
    const double z = cdf_difference(alpha, beta);
    if (!(z > 1e-300)) throw std::runtime_error("degenerate truncation");

    const double r = t - f;
    const double pa = norm_pdf(alpha);
    const double pb = norm_pdf(beta);
    const double ratio = (pa - pb) / z;

    LossEval ev;
    ev.value = 0.5 * std::log(6.283185307179586476925286766559 * sigma) +
               0.5 * r * r / (sigma * sigma) + std::log(z);
    ev.grad = -r / (sigma * sigma) + ratio / sigma;
    const double curvature =
        (1.0 + (alpha * pa - beta * pb) / z - ratio * ratio) / (sigma * sigma);
    ev.hess = std::max(curvature, kTruncHessFloor);
    return ev;
}

double sigma_hat(const std::vector<double>& residuals) {
    if (residuals.size() < 2) throw std::invalid_argument("sigma_hat: need at least 2 residuals");
    double ss = 0.0;
    for (double r : residuals) ss += r * r;
    const double s2 = ss / static_cast<double>(residuals.size() - 1);
    // Residuals are t - f around a fitted mean, so identical residuals mean a
    // degenerate scale only when they are all equal; catch the all-equal case.
    double lo = residuals[0], hi = residuals[0];
    for (double r : residuals) {
        lo = std::min(lo, r);
        hi = std::max(hi, r);
    }
    if (lo == hi) throw std::runtime_error("degenerate residuals");
    return std::sqrt(s2);
}

// ---------------------------------------------------------------------------

void Loss::grad_hess_shifted(double target, const double* scores, int k, double delta, double& g,
                             double& h) const {
    if (num_scores() == 1) {
        const double shifted = scores[0] + delta;
        grad_hess(target, &shifted, 0, g, h);
        return;
    }
    std::vector<double> buf(scores, scores + num_scores());
    buf[static_cast<std::size_t>(k)] += delta;
    grad_hess(target, buf.data(), k, g, h);
}

double BernoulliLoss::value(double target, const double* scores) const {
    return log1pexp(scores[0]) - target * scores[0];
}

void BernoulliLoss::grad_hess(double target, const double* scores, int k, double& g,
                              double& h) const {
    (void)k;
    const double p = sigmoid(scores[0]);
    g = p - target;
    h = p * (1.0 - p);
}

std::vector<double> BernoulliLoss::base_score(const std::vector<double>& targets) const {
    double m = mean(targets);
    m = std::clamp(m, 1e-12, 1.0 - 1e-12);
    return {logit(m)};
}

MultinoulliLoss::MultinoulliLoss(int num_categories) : categories_(num_categories) {
    if (num_categories < 2)
        throw std::invalid_argument("MultinoulliLoss: need at least 2 categories");
}

double MultinoulliLoss::value(double target, const double* scores) const {
    const int t = static_cast<int>(target);
    double mx = scores[0];
    for (int k = 1; k < categories_; ++k) mx = std::max(mx, scores[k]);
    double z = 0.0;
    for (int k = 0; k < categories_; ++k) z += std::exp(scores[k] - mx);
    return mx + std::log(z) - scores[t];
}

void MultinoulliLoss::grad_hess(double target, const double* scores, int k, double& g,
                                double& h) const {
    double mx = scores[0];
    for (int j = 1; j < categories_; ++j) mx = std::max(mx, scores[j]);
    double z = 0.0;
    for (int j = 0; j < categories_; ++j) z += std::exp(scores[j] - mx);
    const double f = std::exp(scores[k] - mx) / z;
    g = f - (static_cast<int>(target) == k ? 1.0 : 0.0);
    h = f * (1.0 - f);
}

void MultinoulliLoss::grad_hess_shifted(double target, const double* scores, int k, double delta,
                                        double& g, double& h) const {
    double mx = scores[0];
    for (int j = 1; j < categories_; ++j) mx = std::max(mx, scores[j]);
    mx = std::max(mx, scores[k] + delta);
    double z = 0.0;
    for (int j = 0; j < categories_; ++j)
        z += std::exp((j == k ? scores[j] + delta : scores[j]) - mx);
    const double f = std::exp(scores[k] + delta - mx) / z;
    g = f - (static_cast<int>(target) == k ? 1.0 : 0.0);
    h = f * (1.0 - f);
}

std::vector<double> MultinoulliLoss::base_score(const std::vector<double>& targets) const {
    std::vector<double> counts(static_cast<std::size_t>(categories_), 0.0);
    for (double t : targets) {
        const int c = static_cast<int>(t);
        if (c < 0 || c >= categories_)
            throw std::invalid_argument("multinoulli: target outside [0,C)");
        counts[static_cast<std::size_t>(c)] += 1.0;
    }
    const double n = static_cast<double>(targets.size());
    std::vector<double> base(static_cast<std::size_t>(categories_));
    for (int c = 0; c < categories_; ++c) {
        const double freq = std::max(counts[static_cast<std::size_t>(c)] / n, 1e-12);
        base[static_cast<std::size_t>(c)] = std::log(freq);
    }
    return base;
}

TruncatedGaussianLoss::TruncatedGaussianLoss(TruncationBounds bounds) : bounds_(bounds) {
    if (!bounds.valid()) throw std::invalid_argument("TruncatedGaussianLoss: invalid bounds");
}

void TruncatedGaussianLoss::begin_round(const std::vector<double>& targets, const Matrix& scores) {
    std::vector<double> residuals(targets.size());
    for (std::size_t i = 0; i < targets.size(); ++i) residuals[i] = targets[i] - scores(i, 0);
    sigma_ = sigma_hat(residuals);
}

double TruncatedGaussianLoss::value(double target, const double* scores) const {
    return truncated_gaussian_loss(target, scores[0], sigma_, bounds_).value;
}

void TruncatedGaussianLoss::grad_hess(double target, const double* scores, int k, double& g,
                                      double& h) const {
    (void)k;
    const LossEval ev = truncated_gaussian_loss(target, scores[0], sigma_, bounds_);
    g = ev.grad;
    h = ev.hess;
}

std::vector<double> TruncatedGaussianLoss::base_score(const std::vector<double>& targets) const {
    // Newton in the constant score, re-estimating sigma around the iterate.
    double w = mean(targets);
    for (int iter = 0; iter < 50; ++iter) {
        std::vector<double> residuals(targets.size());
        for (std::size_t i = 0; i < targets.size(); ++i) residuals[i] = targets[i] - w;
        const double s = sigma_hat(residuals);
        double g = 0.0, h = 0.0;
        for (double t : targets) {
            const LossEval ev = truncated_gaussian_loss(t, w, s, bounds_);
            g += ev.grad;
            h += ev.hess;
        }
        const double step = g / std::max(h, 1e-12);
        w -= step;
        if (std::abs(step) < 1e-12) break;
    }
    return {w};
}

}  // namespace renewal
