#include "covexplain/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <list>
#include <numbers>
#include <unordered_map>

#include <Eigen/Cholesky>
#include <Eigen/QR>

#include "covexplain/error.hpp"

namespace covexplain::baselines {

using corpus::StanceLabel;

double signed_target(StanceLabel label) noexcept { return label == StanceLabel::Pro ? 1.0 : -1.0; }

StanceLabel label_from_score(double score) noexcept { return score > 0.0 ? StanceLabel::Pro : StanceLabel::Anti; }

namespace {

void check_training_set(const Matrix& x, std::span<const StanceLabel> y, const char* who) {
    if (static_cast<std::size_t>(x.rows()) != y.size())
        throw InvalidArgument(std::string(who) + ": " + std::to_string(x.rows()) + " rows but " +
                              std::to_string(y.size()) + " labels");
    if (x.cols() == 0) throw InvalidArgument(std::string(who) + ": zero-width features");
    if (!x.allFinite()) throw InvalidArgument(std::string(who) + ": non-finite features");
}

std::array<std::size_t, 2> class_counts(std::span<const StanceLabel> y) {
    std::array<std::size_t, 2> counts{0, 0};
    for (const auto label : y) ++counts[static_cast<std::size_t>(label)];
    return counts;
}

void check_features(Eigen::Index expected, const Matrix& x, const char* who) {
    if (x.cols() != expected)
        throw InvalidArgument(std::string(who) + ": " + std::to_string(x.cols()) + " features, model expects " +
                              std::to_string(expected));
}

std::vector<StanceLabel> labels_from_scores(const Vector& scores) {
    std::vector<StanceLabel> out(static_cast<std::size_t>(scores.size()));
    for (Eigen::Index i = 0; i < scores.size(); ++i) out[static_cast<std::size_t>(i)] = label_from_score(scores[i]);
    return out;
}

}  // namespace

LinearModel fit_linear(const Matrix& x, std::span<const StanceLabel> y, double lambda) {
    check_training_set(x, y, "fit_linear");
    if (!(lambda >= 0.0)) throw InvalidArgument("fit_linear: ridge penalty must be non-negative");
    const auto counts = class_counts(y);
    if (counts[0] == 0 || counts[1] == 0) throw InvalidArgument("fit_linear: single-class data");

    const auto n = x.rows();
    const auto d = x.cols();
    Vector t(n);
    for (Eigen::Index i = 0; i < n; ++i) t[i] = signed_target(y[static_cast<std::size_t>(i)]);
    const Eigen::RowVectorXd x_mean = x.colwise().mean();
    const double t_mean = t.mean();
    const Matrix xc = x.rowwise() - x_mean;
    const Vector tc = t.array() - t_mean;

    LinearModel model;
    model.lambda = lambda;
    if (lambda == 0.0) {
        model.weight = xc.completeOrthogonalDecomposition().solve(tc);
    } else if (d <= n) {
        Matrix gram = xc.transpose() * xc;
        gram.diagonal().array() += lambda;
        model.weight = gram.ldlt().solve(xc.transpose() * tc);
    } else {
        Matrix gram = xc * xc.transpose();
        gram.diagonal().array() += lambda;
        model.weight = xc.transpose() * gram.ldlt().solve(tc);
    }
    model.bias = t_mean - x_mean.dot(model.weight);
    if (!model.weight.allFinite() || !std::isfinite(model.bias))
        throw NumericError("fit_linear: solution is not finite");
    return model;
}

Vector decision_function(const LinearModel& model, const Matrix& x) {
    check_features(model.weight.size(), x, "linear predict");
    return (x * model.weight).array() + model.bias;
}

std::vector<StanceLabel> predict(const LinearModel& model, const Matrix& x) {
    return labels_from_scores(decision_function(model, x));
}

GaussianNBModel fit_gnb(const Matrix& x, std::span<const StanceLabel> y) {
    check_training_set(x, y, "fit_gnb");
    const auto counts = class_counts(y);
    if (counts[0] == 0 || counts[1] == 0) throw InvalidArgument("fit_gnb: single-class data");
    if (counts[0] < 2 || counts[1] < 2) throw InvalidArgument("fit_gnb: need at least 2 samples per class");

    const auto d = x.cols();
    GaussianNBModel model;
    model.mean = Matrix::Zero(2, d);
    model.variance = Matrix::Zero(2, d);
    for (Eigen::Index i = 0; i < x.rows(); ++i) model.mean.row(static_cast<Eigen::Index>(y[static_cast<std::size_t>(i)])) += x.row(i);
    for (Eigen::Index c = 0; c < 2; ++c) model.mean.row(c) /= static_cast<double>(counts[static_cast<std::size_t>(c)]);
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        const auto c = static_cast<Eigen::Index>(y[static_cast<std::size_t>(i)]);
        model.variance.row(c) += (x.row(i) - model.mean.row(c)).array().square().matrix();
    }
    const double total = static_cast<double>(x.rows());
    for (Eigen::Index c = 0; c < 2; ++c) {
        const double nc = static_cast<double>(counts[static_cast<std::size_t>(c)]);
        model.variance.row(c) = (model.variance.row(c) / nc).cwiseMax(kVarianceFloor);
        model.log_prior[static_cast<std::size_t>(c)] = std::log(nc / total);
    }
    return model;
}

Matrix joint_log_likelihood(const GaussianNBModel& model, const Matrix& x) {
    check_features(model.mean.cols(), x, "gnb predict");
    Matrix out(x.rows(), 2);
    constexpr double log_two_pi = 1.8378770664093454836;
    for (Eigen::Index c = 0; c < 2; ++c) {
        const Eigen::ArrayXd var = model.variance.row(c).transpose().array();
        const double log_norm = -0.5 * (var.log() + log_two_pi).sum();
        for (Eigen::Index i = 0; i < x.rows(); ++i) {
            const Eigen::ArrayXd diff = (x.row(i) - model.mean.row(c)).transpose().array();
            out(i, c) = model.log_prior[static_cast<std::size_t>(c)] + log_norm - 0.5 * (diff.square() / var).sum();
        }
    }
    return out;
}

Matrix predict_proba(const GaussianNBModel& model, const Matrix& x) {
    Matrix jll = joint_log_likelihood(model, x);
    for (Eigen::Index i = 0; i < jll.rows(); ++i) {
        const double m = jll.row(i).maxCoeff();
        const double a = std::exp(jll(i, 0) - m);
        const double b = std::exp(jll(i, 1) - m);
        jll(i, 0) = a / (a + b);
        jll(i, 1) = b / (a + b);
    }
    return jll;
}

std::vector<StanceLabel> predict(const GaussianNBModel& model, const Matrix& x) {
    const Matrix jll = joint_log_likelihood(model, x);
    std::vector<StanceLabel> out(static_cast<std::size_t>(x.rows()));
    for (Eigen::Index i = 0; i < x.rows(); ++i)
        out[static_cast<std::size_t>(i)] = jll(i, 1) > jll(i, 0) ? StanceLabel::Pro : StanceLabel::Anti;
    return out;
}

namespace {

// Rows of Q_it = y_i y_t K(x_i, x_t), least-recently-used eviction.
class KernelRows {
public:
    KernelRows(const Matrix& x, const Vector& y, double gamma, std::size_t megabytes)
        : x_(x), y_(y), gamma_(gamma), norms_(x.rowwise().squaredNorm()) {
        const std::size_t row_bytes = static_cast<std::size_t>(x.rows()) * sizeof(double);
        capacity_ = std::max<std::size_t>(2, megabytes * 1024 * 1024 / std::max<std::size_t>(row_bytes, 1));
    }

    const Vector& row(Eigen::Index i) {
        const auto it = rows_.find(i);
        if (it != rows_.end()) {
            order_.splice(order_.begin(), order_, it->second.second);
            return it->second.first;
        }
        if (rows_.size() >= capacity_) {
            rows_.erase(order_.back());
            order_.pop_back();
        }
        order_.push_front(i);
        auto& entry = rows_[i];
        entry.second = order_.begin();
        const Vector dots = x_ * x_.row(i).transpose();
        entry.first.resize(x_.rows());
        for (Eigen::Index t = 0; t < x_.rows(); ++t) {
            const double dist = std::max(0.0, norms_[i] + norms_[t] - 2.0 * dots[t]);
            entry.first[t] = y_[i] * y_[t] * std::exp(-gamma_ * dist);
        }
        return entry.first;
    }

private:
    const Matrix& x_;
    const Vector& y_;
    double gamma_;
    Vector norms_;
    std::size_t capacity_;
    std::list<Eigen::Index> order_;
    std::unordered_map<Eigen::Index, std::pair<Vector, std::list<Eigen::Index>::iterator>> rows_;
};

constexpr double kTau = 1e-12;

}  // namespace

SvmModel fit_svm_rbf(const Matrix& x, std::span<const StanceLabel> labels, const SvmConfig& config) {
    check_training_set(x, labels, "fit_svm_rbf");
    const auto counts = class_counts(labels);
    if (counts[0] == 0 || counts[1] == 0) throw InvalidArgument("fit_svm_rbf: single-class data");
    if (!(config.c > 0.0)) throw InvalidArgument("fit_svm_rbf: C must be positive");
    if (config.gamma < 0.0) throw InvalidArgument("fit_svm_rbf: gamma must be positive");
    if (!(config.tolerance > 0.0)) throw InvalidArgument("fit_svm_rbf: tolerance must be positive");

    const auto n = x.rows();
    const double c = config.c;
    const double gamma = config.gamma > 0.0 ? config.gamma : 1.0 / static_cast<double>(x.cols());
    const std::size_t cap = config.max_iterations > 0
                                ? config.max_iterations
                                : std::max<std::size_t>(10'000'000, 100 * static_cast<std::size_t>(n));
    Vector y(n);
    for (Eigen::Index i = 0; i < n; ++i) y[i] = signed_target(labels[static_cast<std::size_t>(i)]);

    KernelRows q(x, y, gamma, config.cache_megabytes);
    Vector alpha = Vector::Zero(n);
    Vector grad = Vector::Constant(n, -1.0);
    const auto upper = [&](Eigen::Index t) { return alpha[t] >= c; };
    const auto lower = [&](Eigen::Index t) { return alpha[t] <= 0.0; };

    std::size_t iter = 0;
    for (;; ++iter) {
        if (iter >= cap)
            throw NumericError("fit_svm_rbf: SMO did not converge after " + std::to_string(iter) + " iterations");

        double gmax = -std::numeric_limits<double>::infinity();
        Eigen::Index i = -1;
        for (Eigen::Index t = 0; t < n; ++t) {
            if (y[t] > 0) {
                if (!upper(t) && -grad[t] >= gmax) gmax = -grad[t], i = t;
            } else if (!lower(t) && grad[t] >= gmax) {
                gmax = grad[t], i = t;
            }
        }
        if (i < 0) break;
        const Vector& qi = q.row(i);
        double gmax2 = -std::numeric_limits<double>::infinity();
        double obj_min = std::numeric_limits<double>::infinity();
        Eigen::Index j = -1;
        for (Eigen::Index t = 0; t < n; ++t) {
            if (y[t] > 0) {
                if (lower(t)) continue;
                const double diff = gmax + grad[t];
                gmax2 = std::max(gmax2, grad[t]);
                if (diff > 0) {
                    const double quad = 2.0 - 2.0 * y[i] * qi[t];
                    const double obj = -(diff * diff) / (quad > 0 ? quad : kTau);
                    if (obj <= obj_min) obj_min = obj, j = t;
                }
            } else {
                if (upper(t)) continue;
                const double diff = gmax - grad[t];
                gmax2 = std::max(gmax2, -grad[t]);
                if (diff > 0) {
                    const double quad = 2.0 + 2.0 * y[i] * qi[t];
                    const double obj = -(diff * diff) / (quad > 0 ? quad : kTau);
                    if (obj <= obj_min) obj_min = obj, j = t;
                }
            }
        }
        if (gmax + gmax2 < config.tolerance || j < 0) break;

        const Vector& qj = q.row(j);
        const Vector& qi_now = q.row(i);
        const double old_ai = alpha[i];
        const double old_aj = alpha[j];
        double ai = old_ai;
        double aj = old_aj;
        if (y[i] != y[j]) {
            double quad = 2.0 + 2.0 * qi_now[j];
            if (quad <= 0) quad = kTau;
            const double delta = (-grad[i] - grad[j]) / quad;
            const double diff = ai - aj;
            ai += delta;
            aj += delta;
            if (diff > 0) {
                if (aj < 0) aj = 0, ai = diff;
            } else if (ai < 0) {
                ai = 0, aj = -diff;
            }
            if (diff > 0) {
                if (ai > c) ai = c, aj = c - diff;
            } else if (aj > c) {
                aj = c, ai = c + diff;
            }
        } else {
            double quad = 2.0 - 2.0 * qi_now[j];
            if (quad <= 0) quad = kTau;
            const double delta = (grad[i] - grad[j]) / quad;
            const double sum = ai + aj;
            ai -= delta;
            aj += delta;
            if (sum > c) {
                if (ai > c) ai = c, aj = sum - c;
            } else if (aj < 0) {
                aj = 0, ai = sum;
            }
            if (sum > c) {
                if (aj > c) aj = c, ai = sum - c;
            } else if (ai < 0) {
                ai = 0, aj = sum;
            }
        }
        alpha[i] = ai;
        alpha[j] = aj;
        grad += qi_now * (ai - old_ai) + qj * (aj - old_aj);
    }

    double ub = std::numeric_limits<double>::infinity();
    double lb = -std::numeric_limits<double>::infinity();
    double sum_free = 0.0;
    std::size_t free = 0;
    for (Eigen::Index t = 0; t < n; ++t) {
        const double yg = y[t] * grad[t];
        if (upper(t)) {
            if (y[t] < 0) ub = std::min(ub, yg);
            else lb = std::max(lb, yg);
        } else if (lower(t)) {
            if (y[t] > 0) ub = std::min(ub, yg);
            else lb = std::max(lb, yg);
        } else {
            ++free;
            sum_free += yg;
        }
    }
    const double rho = free > 0 ? sum_free / static_cast<double>(free) : (ub + lb) / 2.0;

    SvmModel model;
    model.gamma = gamma;
    model.c = c;
    model.bias = -rho;
    model.iterations = iter;
    for (Eigen::Index t = 0; t < n; ++t)
        if (alpha[t] > 0.0) model.support_indices.push_back(static_cast<std::size_t>(t));
    const auto sv = static_cast<Eigen::Index>(model.support_indices.size());
    model.support_vectors.resize(sv, x.cols());
    model.coefficients.resize(sv);
    for (Eigen::Index s = 0; s < sv; ++s) {
        const auto t = static_cast<Eigen::Index>(model.support_indices[static_cast<std::size_t>(s)]);
        model.support_vectors.row(s) = x.row(t);
        model.coefficients[s] = alpha[t] * y[t];
    }
    return model;
}

Vector decision_function(const SvmModel& model, const Matrix& x) {
    check_features(model.support_vectors.cols(), x, "svm predict");
    Vector out = Vector::Constant(x.rows(), model.bias);
    if (model.support_vectors.rows() == 0) return out;
    const Vector sv_norms = model.support_vectors.rowwise().squaredNorm();
    const Matrix dots = x * model.support_vectors.transpose();
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        const double xn = x.row(i).squaredNorm();
        double f = 0.0;
        for (Eigen::Index s = 0; s < sv_norms.size(); ++s) {
            const double dist = std::max(0.0, xn + sv_norms[s] - 2.0 * dots(i, s));
            f += model.coefficients[s] * std::exp(-model.gamma * dist);
        }
        out[i] += f;
    }
    return out;
}

std::vector<StanceLabel> predict(const SvmModel& model, const Matrix& x) {
    return labels_from_scores(decision_function(model, x));
}

KktReport kkt_residuals(const SvmModel& model, const Matrix& x, std::span<const StanceLabel> y) {
    if (static_cast<std::size_t>(x.rows()) != y.size())
        throw InvalidArgument("kkt_residuals: row and label counts differ");
    if (model.support_indices.size() != static_cast<std::size_t>(model.coefficients.size()))
        throw InvalidArgument("kkt_residuals: model carries no training indices");
    Vector alpha = Vector::Zero(x.rows());
    for (std::size_t s = 0; s < model.support_indices.size(); ++s) {
        const auto t = model.support_indices[s];
        if (t >= y.size()) throw InvalidArgument("kkt_residuals: support index out of range");
        alpha[static_cast<Eigen::Index>(t)] = std::abs(model.coefficients[static_cast<Eigen::Index>(s)]);
    }
    const Vector f = decision_function(model, x);
    KktReport report;
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        const double margin = signed_target(y[static_cast<std::size_t>(i)]) * f[i];
        if (alpha[i] <= 0.0) {
            report.max_bound_violation = std::max(report.max_bound_violation, 1.0 - margin);
        } else if (alpha[i] >= model.c) {
            report.max_bound_violation = std::max(report.max_bound_violation, margin - 1.0);
        } else {
            ++report.free_count;
            report.max_free_residual = std::max(report.max_free_residual, std::abs(margin - 1.0));
        }
    }
    return report;
}

}  // namespace covexplain::baselines
