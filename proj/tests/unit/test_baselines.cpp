#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "covexplain/baselines.hpp"
#include "covexplain/error.hpp"

using namespace covexplain;
using namespace covexplain::baselines;
using corpus::StanceLabel;

namespace {

constexpr auto A = StanceLabel::Anti;
constexpr auto P = StanceLabel::Pro;

// Dense Gaussian elimination with partial pivoting; the oracle for ridge.
std::vector<double> solve_dense(std::vector<std::vector<double>> a, std::vector<double> b) {
    const std::size_t n = b.size();
    for (std::size_t c = 0; c < n; ++c) {
        std::size_t piv = c;
        for (std::size_t r = c + 1; r < n; ++r)
            if (std::abs(a[r][c]) > std::abs(a[piv][c])) piv = r;
        std::swap(a[c], a[piv]);
        std::swap(b[c], b[piv]);
        for (std::size_t r = c + 1; r < n; ++r) {
            const double f = a[r][c] / a[c][c];
            for (std::size_t k = c; k < n; ++k) a[r][k] -= f * a[c][k];
            b[r] -= f * b[c];
        }
    }
    std::vector<double> x(n);
    for (std::size_t i = n; i-- > 0;) {
        double s = b[i];
        for (std::size_t k = i + 1; k < n; ++k) s -= a[i][k] * x[k];
        x[i] = s / a[i][i];
    }
    return x;
}

// Ridge on [X 1] with the intercept left unpenalized, via the normal equations.
std::vector<double> hand_ridge(const Matrix& x, const std::vector<StanceLabel>& y, double lambda) {
    const auto n = static_cast<std::size_t>(x.rows());
    const auto d = static_cast<std::size_t>(x.cols());
    std::vector<std::vector<double>> a(d + 1, std::vector<double>(d + 1, 0.0));
    std::vector<double> b(d + 1, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<double> row(d + 1, 1.0);
        for (std::size_t j = 0; j < d; ++j) row[j] = x(i, j);
        const double t = y[i] == P ? 1.0 : -1.0;
        for (std::size_t r = 0; r <= d; ++r) {
            b[r] += row[r] * t;
            for (std::size_t c = 0; c <= d; ++c) a[r][c] += row[r] * row[c];
        }
    }
    for (std::size_t j = 0; j < d; ++j) a[j][j] += lambda;
    return solve_dense(a, b);
}

void two_blobs(Matrix& x, std::vector<StanceLabel>& y, std::size_t n, std::size_t d, std::uint64_t seed) {
    std::mt19937_64 gen(seed);
    std::normal_distribution<double> nd;
    x.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
    y.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        y[i] = i % 3 == 0 ? A : P;
        for (std::size_t j = 0; j < d; ++j) x(i, j) = nd(gen) + (y[i] == P ? 1.0 : -0.5) * (j % 2 ? 1.0 : 0.3);
    }
}

double rbf(const Matrix& x, Eigen::Index i, Eigen::Index j, double gamma) {
    return std::exp(-gamma * (x.row(i) - x.row(j)).squaredNorm());
}

}  // namespace

TEST_CASE("linear baseline on the 1-D interpolation example") {
    Matrix x(2, 1);
    x << -1, 1;
    const std::vector<StanceLabel> y{A, P};
    const auto m = fit_linear(x, y, 0.0);
    CHECK(m.weight[0] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(std::abs(m.bias) < 1e-12);
    Matrix q(1, 1);
    q << 2;
    CHECK(predict(m, q)[0] == P);
}

TEST_CASE("large ridge penalties collapse the weights") {
    Matrix x;
    std::vector<StanceLabel> y;
    two_blobs(x, y, 60, 3, 4);
    const auto m = fit_linear(x, y, 1e12);
    CHECK(m.weight.norm() < 1e-9);
    const double prior = (40.0 - 20.0) / 60.0;
    CHECK(m.bias == doctest::Approx(prior).epsilon(1e-6));
    for (const auto label : predict(m, x)) CHECK(label == P);
    CHECK_THROWS_AS(fit_linear(x, y, -1.0), InvalidArgument);
    const std::vector<StanceLabel> same(60, P);
    CHECK_THROWS_AS(fit_linear(x, same, 1.0), InvalidArgument);
}

TEST_CASE("ridge matches the hand normal-equation solve") {
    for (const double lambda : {0.0, 0.5, 1.0, 25.0}) {
        Matrix x;
        std::vector<StanceLabel> y;
        two_blobs(x, y, 40, 4, 9);
        const auto m = fit_linear(x, y, lambda);
        const auto ref = hand_ridge(x, y, lambda);
        for (Eigen::Index j = 0; j < 4; ++j) CHECK(std::abs(m.weight[j] - ref[j]) < 1e-8);
        CHECK(std::abs(m.bias - ref[4]) < 1e-8);
    }
}

TEST_CASE("ridge in the wide regime agrees with the primal solution") {
    Matrix x;
    std::vector<StanceLabel> y;
    two_blobs(x, y, 6, 10, 12);
    const auto m = fit_linear(x, y, 2.0);
    const auto ref = hand_ridge(x, y, 2.0);
    for (Eigen::Index j = 0; j < 10; ++j) CHECK(std::abs(m.weight[j] - ref[j]) < 1e-8);
    CHECK(std::abs(m.bias - ref[10]) < 1e-8);
}

TEST_CASE("ridge separates the toy set and is order independent") {
    std::mt19937_64 gen(17);
    std::uniform_real_distribution<double> u(-2, 2);
    Matrix x(200, 2);
    std::vector<StanceLabel> y;
    for (Eigen::Index i = 0; i < 200;) {
        const double a = u(gen), b = u(gen), s = a + 0.5 * b;
        if (std::abs(s) < 0.2) continue;
        x(i, 0) = a;
        x(i, 1) = b;
        y.push_back(s > 0 ? P : A);
        ++i;
    }
    const auto m = fit_linear(x, y, 1.0);
    const auto pred = predict(m, x);
    CHECK(std::equal(pred.begin(), pred.end(), y.begin()));

    std::vector<std::size_t> perm(200);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), gen);
    Matrix xs(200, 2);
    std::vector<StanceLabel> ys(200);
    for (std::size_t i = 0; i < 200; ++i) {
        xs.row(i) = x.row(perm[i]);
        ys[i] = y[perm[i]];
    }
    const auto ms = fit_linear(xs, ys, 1.0);
    CHECK((ms.weight - m.weight).cwiseAbs().maxCoeff() < 1e-8);
    CHECK(std::abs(ms.bias - m.bias) < 1e-8);
}

TEST_CASE("gaussian naive bayes matches closed-form posteriors") {
    // Class means 0 and 10, unit MLE variance, equal priors.
    Matrix x(4, 1);
    x << -1, 1, 9, 11;
    const std::vector<StanceLabel> y{A, A, P, P};
    const auto m = fit_gnb(x, y);
    CHECK(m.mean(0, 0) == doctest::Approx(0.0));
    CHECK(m.mean(1, 0) == doctest::Approx(10.0));
    CHECK(m.variance(0, 0) == doctest::Approx(1.0));

    Matrix q(3, 1);
    q << 2, 5, 7.5;
    const auto post = predict_proba(m, q);
    for (Eigen::Index i = 0; i < 3; ++i) {
        const double v = q(i, 0);
        const double la = 0.5 * std::exp(-0.5 * v * v) / std::sqrt(2 * std::numbers::pi);
        const double lp = 0.5 * std::exp(-0.5 * (v - 10) * (v - 10)) / std::sqrt(2 * std::numbers::pi);
        CHECK(std::abs(post(i, 0) - la / (la + lp)) < 1e-9);
        CHECK(std::abs(post(i, 1) - lp / (la + lp)) < 1e-9);
    }
    const auto labels = predict(m, q);
    CHECK(labels[0] == A);
    CHECK(labels[1] == A);
    CHECK(labels[2] == P);
}

TEST_CASE("gaussian naive bayes on unequal classes and several features") {
    Matrix x;
    std::vector<StanceLabel> y;
    two_blobs(x, y, 30, 2, 21);
    const auto m = fit_gnb(x, y);
    Matrix q(1, 2);
    q << 0.3, -0.2;
    double lp[2];
    for (int c = 0; c < 2; ++c) {
        std::vector<std::size_t> rows;
        for (std::size_t i = 0; i < y.size(); ++i)
            if (static_cast<int>(y[i]) == c) rows.push_back(i);
        double lj = std::log(double(rows.size()) / y.size());
        for (int j = 0; j < 2; ++j) {
            double mu = 0;
            for (const auto r : rows) mu += x(r, j);
            mu /= rows.size();
            double var = 0;
            for (const auto r : rows) var += (x(r, j) - mu) * (x(r, j) - mu);
            var /= rows.size();
            lj += -0.5 * std::log(2 * std::numbers::pi * var) - 0.5 * (q(0, j) - mu) * (q(0, j) - mu) / var;
        }
        lp[c] = lj;
    }
    const double pa = 1.0 / (1.0 + std::exp(lp[1] - lp[0]));
    CHECK(std::abs(predict_proba(m, q)(0, 0) - pa) < 1e-9);
}

TEST_CASE("gaussian naive bayes ties, floors and preconditions") {
    Matrix x(4, 1);
    x << -3, -1, 1, 3;
    const auto m = fit_gnb(x, std::vector<StanceLabel>{A, A, P, P});
    Matrix mid(1, 1);
    mid << 0;
    CHECK(predict(m, mid)[0] == A);

    Matrix c(4, 2);
    c << 1, 0, 1, 1, 2, 5, 3, 6;
    const auto f = fit_gnb(c, std::vector<StanceLabel>{A, A, P, P});
    CHECK(f.variance(0, 0) == kVarianceFloor);
    CHECK(joint_log_likelihood(f, c).allFinite());

    Matrix three(3, 1);
    three << 0, 1, 2;
    CHECK_THROWS_AS(fit_gnb(three, std::vector<StanceLabel>{A, P, P}), InvalidArgument);

    std::vector<std::size_t> order{3, 1, 0, 2};
    Matrix xs(4, 2);
    std::vector<StanceLabel> ys;
    const std::vector<StanceLabel> yc{A, A, P, P};
    for (std::size_t i = 0; i < 4; ++i) {
        xs.row(i) = c.row(order[i]);
        ys.push_back(yc[order[i]]);
    }
    const auto g = fit_gnb(xs, ys);
    CHECK((g.mean - f.mean).cwiseAbs().maxCoeff() < 1e-15);
    CHECK((g.variance - f.variance).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("rbf svm solves XOR and meets the KKT conditions") {
    Matrix x(4, 2);
    x << 0, 0, 1, 1, 0, 1, 1, 0;
    const std::vector<StanceLabel> y{A, A, P, P};
    SvmConfig cfg;
    cfg.c = 10;
    cfg.gamma = 1;
    const auto m = fit_svm_rbf(x, y, cfg);
    const auto pred = predict(m, x);
    CHECK(std::equal(pred.begin(), pred.end(), y.begin()));
    const auto kkt = kkt_residuals(m, x, y);
    CHECK(kkt.max_free_residual <= 2 * cfg.tolerance);
    CHECK(kkt.max_bound_violation <= 2 * cfg.tolerance);
    CHECK(m.coefficients.cwiseAbs().maxCoeff() <= cfg.c + 1e-12);

    // Dual objective against a brute-force grid over the feasible alphas
    // (a0 + a1 = a2 + a3).
    std::vector<double> alpha(4, 0.0);
    for (Eigen::Index s = 0; s < m.coefficients.size(); ++s) alpha[m.support_indices[s]] = std::abs(m.coefficients[s]);
    const auto dual = [&](const std::vector<double>& a) {
        double w = 0;
        for (int i = 0; i < 4; ++i) {
            w += a[i];
            for (int j = 0; j < 4; ++j)
                w -= 0.5 * a[i] * a[j] * (y[i] == y[j] ? 1.0 : -1.0) * rbf(x, i, j, 1.0);
        }
        return w;
    };
    double best = -1e300;
    const int steps = 60;
    for (int i = 0; i <= steps; ++i)
        for (int j = 0; j <= steps; ++j)
            for (int k = 0; k <= steps; ++k) {
                const double a0 = 10.0 * i / steps, a1 = 10.0 * j / steps, a2 = 10.0 * k / steps;
                const double a3 = a0 + a1 - a2;
                if (a3 < 0 || a3 > 10) continue;
                best = std::max(best, dual({a0, a1, a2, a3}));
            }
    const double smo = dual(alpha);
    CHECK(smo >= best - 1e-6);
    CHECK(smo - best < 0.05);
}

TEST_CASE("rbf svm: duplicated data keeps the decision sign pattern") {
    Matrix x;
    std::vector<StanceLabel> y;
    two_blobs(x, y, 40, 2, 31);
    SvmConfig cfg;
    cfg.c = 1;
    cfg.gamma = 0.5;
    // Each copy gets its own box, so the duplicated problem at C is the
    // original problem at 2C.
    SvmConfig doubled = cfg;
    doubled.c = 2 * cfg.c;
    const auto m = fit_svm_rbf(x, y, doubled);
    Matrix xx(80, 2);
    xx << x, x;
    std::vector<StanceLabel> yy(y);
    yy.insert(yy.end(), y.begin(), y.end());
    const auto m2 = fit_svm_rbf(xx, yy, cfg);

    Matrix grid(21 * 21, 2);
    for (int i = 0; i < 21; ++i)
        for (int j = 0; j < 21; ++j) grid.row(i * 21 + j) << -3 + 0.3 * i, -3 + 0.3 * j;
    const auto f1 = decision_function(m, grid);
    const auto f2 = decision_function(m2, grid);
    int disagreements = 0;
    for (Eigen::Index i = 0; i < grid.rows(); ++i)
        if ((f1[i] > 0) != (f2[i] > 0) && std::abs(f1[i]) > 1e-2) ++disagreements;
    CHECK(disagreements == 0);
}

TEST_CASE("rbf svm preconditions and defaults") {
    Matrix x(4, 2);
    x << 0, 0, 1, 1, 0, 1, 1, 0;
    CHECK_THROWS_AS(fit_svm_rbf(x, std::vector<StanceLabel>(4, P)), InvalidArgument);
    SvmConfig bad;
    bad.c = 0;
    CHECK_THROWS_AS(fit_svm_rbf(x, std::vector<StanceLabel>{A, A, P, P}, bad), InvalidArgument);
    const auto m = fit_svm_rbf(x, std::vector<StanceLabel>{A, A, P, P});
    CHECK(m.gamma == doctest::Approx(0.5));
    CHECK(m.c == 1.0);

    SvmConfig capped;
    capped.c = 10;
    capped.gamma = 1;
    capped.max_iterations = 1;
    try {
        fit_svm_rbf(x, std::vector<StanceLabel>{A, A, P, P}, capped);
        FAIL("expected non-convergence");
    } catch (const NumericError& e) {
        CHECK(std::string(e.what()).find("after 1 iteration") != std::string::npos);
    }
}

TEST_CASE("label helpers share the Anti tie-break") {
    CHECK(label_from_score(0.0) == A);
    CHECK(label_from_score(-1e-300) == A);
    CHECK(label_from_score(1e-300) == P);
    CHECK(signed_target(A) == -1.0);
    CHECK(signed_target(P) == 1.0);
}
