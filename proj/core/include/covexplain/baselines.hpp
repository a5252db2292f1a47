#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "covexplain/corpus.hpp"

namespace covexplain::baselines {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// Anti maps to -1, Pro to +1.
double signed_target(corpus::StanceLabel label) noexcept;
// Positive scores are Pro; zero and negative scores are Anti.
corpus::StanceLabel label_from_score(double score) noexcept;

struct LinearModel {
    Vector weight;
    double bias = 0.0;
    double lambda = 0.0;
};

inline constexpr double kDefaultRidge = 1.0;

// Ridge least squares on +-1 targets. The bias is fitted without penalty by
// centering; with lambda == 0 the minimum-norm solution is returned.
LinearModel fit_linear(const Matrix& x, std::span<const corpus::StanceLabel> y, double lambda = kDefaultRidge);
Vector decision_function(const LinearModel& model, const Matrix& x);
std::vector<corpus::StanceLabel> predict(const LinearModel& model, const Matrix& x);

inline constexpr double kVarianceFloor = 1e-9;

struct GaussianNBModel {
    std::array<double, corpus::kNumClasses> log_prior{};
    Matrix mean;      // classes x features
    Matrix variance;  // classes x features, floored
};

// Per-class maximum-likelihood means and variances (divisor n_c).
GaussianNBModel fit_gnb(const Matrix& x, std::span<const corpus::StanceLabel> y);
// Unnormalized log posterior per class, one row per sample.
Matrix joint_log_likelihood(const GaussianNBModel& model, const Matrix& x);
// Normalized class posteriors, one row per sample.
Matrix predict_proba(const GaussianNBModel& model, const Matrix& x);
std::vector<corpus::StanceLabel> predict(const GaussianNBModel& model, const Matrix& x);

struct SvmConfig {
    double c = 1.0;
    double gamma = 0.0;  // 0 selects 1 / feature count
    double tolerance = 1e-3;
    std::size_t max_iterations = 0;  // 0 selects max(10^7, 100 n)
    std::size_t cache_megabytes = 200;
};

struct SvmModel {
    Matrix support_vectors;  // support count x features
    Vector coefficients;     // alpha_i * y_i
    double bias = 0.0;
    double gamma = 0.0;
    double c = 0.0;
    std::size_t iterations = 0;
    // Training-row index of each support vector; empty for loaded models.
    std::vector<std::size_t> support_indices;
};

// Soft-margin dual solved by SMO with second-order working-set selection.
// Throws NumericError with the iteration count when the cap is hit.
SvmModel fit_svm_rbf(const Matrix& x, std::span<const corpus::StanceLabel> y, const SvmConfig& config = {});
Vector decision_function(const SvmModel& model, const Matrix& x);
std::vector<corpus::StanceLabel> predict(const SvmModel& model, const Matrix& x);

// Optimality check of a freshly fitted model against its training data:
// free vectors (0 < alpha < C) need y f(x) = 1, alpha = 0 needs y f(x) >= 1,
// alpha = C needs y f(x) <= 1. Violations are reported as distances.
struct KktReport {
    double max_free_residual = 0.0;
    double max_bound_violation = 0.0;
    std::size_t free_count = 0;
};
KktReport kkt_residuals(const SvmModel& model, const Matrix& x, std::span<const corpus::StanceLabel> y);

}  // namespace covexplain::baselines
