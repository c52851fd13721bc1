#pragma once

#include <string>
#include <vector>

#include "renewal/matrix.hpp"

namespace renewal {

// Per-observation loss contribution with first and second derivatives with
// respect to the raw ensemble score. Losses exclude the 1/N factor; the
// boosting engine averages where a mean is needed.
struct LossEval {
    double value = 0.0;
    double grad = 0.0;
    double hess = 0.0;
};

struct TruncationBounds {
    double lower = 0.0;
    double upper = 0.0;
    bool valid() const { return lower < upper; }
};

// Floor applied to the truncated-Gaussian second derivative so leaf solves
// stay well-posed; occurrences are counted in fit diagnostics.
inline constexpr double kTruncHessFloor = 1e-12;

// Negative Bernoulli log-likelihood on the logit scale.
// value = -[y log p + (1-y) log(1-p)], p = sigmoid(score).
LossEval bernoulli_loss(double y, double score);

// Negative multinoulli log-likelihood over C raw scores (softmax link).
// Fills grad[c] = f_c - 1[c == t_index] and the diagonal hess[c] = f_c (1 - f_c).
// Returns the loss value. t_index is 0-based.
double multinoulli_loss(int t_index, const std::vector<double>& scores,
                        std::vector<double>& grad, std::vector<double>& hess);

// Negative truncated Gaussian log-likelihood in the predicted mean f,
// holding the scale fixed:
//   value = ln(2*pi*sigma)/2 + (t-f)^2/(2 sigma^2) + ln(Phi(beta) - Phi(alpha))
// with alpha = (lower-f)/sigma, beta = (upper-f)/sigma. The first term keeps
// the printed ln(2*pi*sigma) normalization; it is constant in f.
// Throws on a degenerate truncation (Phi difference underflows).
LossEval truncated_gaussian_loss(double t, double f, double sigma, TruncationBounds bounds);

// Plug-in scale: sqrt( sum r_j^2 / (N-1) ). Throws for N < 2 or zero variance.
double sigma_hat(const std::vector<double>& residuals);

// ---------------------------------------------------------------------------
// Engine-facing adapters. The boosting engine sees losses through this
// interface: num_scores() raw scores per observation, per-round state update
// (the truncated Gaussian re-estimates sigma), and per-observation calculus.
// ---------------------------------------------------------------------------

class Loss {
  public:
    virtual ~Loss() = default;
    virtual std::string name() const = 0;
    virtual int num_scores() const { return 1; }

    // Called once per boosting round with all N current scores. Default: no state.
    virtual void begin_round(const std::vector<double>& targets, const Matrix& scores) {
        (void)targets;
        (void)scores;
    }

    virtual double value(double target, const double* scores) const = 0;

    // Gradient and second derivative with respect to score k.
    virtual void grad_hess(double target, const double* scores, int k, double& g,
                           double& h) const = 0;

    // Same, with score k shifted by delta (used by first-order leaf solves).
    virtual void grad_hess_shifted(double target, const double* scores, int k, double delta,
                                   double& g, double& h) const;

    // Closed-form (or Newton) minimizer of sum_i L(y_i, w) per score.
    virtual std::vector<double> base_score(const std::vector<double>& targets) const = 0;
};

class BernoulliLoss final : public Loss {
  public:
    std::string name() const override { return "bernoulli"; }
    double value(double target, const double* scores) const override;
    void grad_hess(double target, const double* scores, int k, double& g, double& h) const override;
    std::vector<double> base_score(const std::vector<double>& targets) const override;
};

class MultinoulliLoss final : public Loss {
  public:
    explicit MultinoulliLoss(int num_categories);
    std::string name() const override { return "multinoulli"; }
    int num_scores() const override { return categories_; }
    double value(double target, const double* scores) const override;
    void grad_hess(double target, const double* scores, int k, double& g, double& h) const override;
    void grad_hess_shifted(double target, const double* scores, int k, double delta, double& g,
                           double& h) const override;
    std::vector<double> base_score(const std::vector<double>& targets) const override;

  private:
    int categories_;
};

class TruncatedGaussianLoss final : public Loss {
  public:
    explicit TruncatedGaussianLoss(TruncationBounds bounds);
    std::string name() const override { return "truncated_gaussian"; }
    void begin_round(const std::vector<double>& targets, const Matrix& scores) override;
    double value(double target, const double* scores) const override;
    void grad_hess(double target, const double* scores, int k, double& g, double& h) const override;
    std::vector<double> base_score(const std::vector<double>& targets) const override;

    TruncationBounds bounds() const { return bounds_; }
    double sigma() const { return sigma_; }
    void set_sigma(double s) { sigma_ = s; }

  private:
    TruncationBounds bounds_;
    double sigma_ = 1.0;
};

}  // namespace renewal
