#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <numeric>
#include <random>

#include "lmshock/estimation.hpp"

using namespace lmshock;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

EstimationSpec line_spec(int n, unsigned seed, bool exact) {
    std::mt19937_64 gen(seed);
    std::normal_distribution<double> nd(0.0, 1.0);
    std::uniform_real_distribution<double> uw(0.2, 3.0);
    EstimationSpec s;
    s.outcome.resize(n);
    s.regressors.resize(n, 1);
    s.weights.resize(n);
    for (int i = 0; i < n; ++i) {
        double x = nd(gen);
        s.regressors(i, 0) = x;
        s.outcome(i) = 2.0 * x + (exact ? 0.0 : 0.3 * nd(gen));
        s.weights(i) = uw(gen);
    }
    return s;
}

}  // namespace

TEST_CASE("weighted least squares recovers an exact line under any weights") {
    auto s = line_spec(60, 1, true);
    auto r = wls(s);
    REQUIRE(r.coefficients.size() == 2);
    CHECK_THAT(r.coefficients(0), WithinAbs(0.0, 1e-12));
    CHECK_THAT(r.coefficients(1), WithinAbs(2.0, 1e-12));
    CHECK(r.n_obs == 60);
}

TEST_CASE("unit weights reproduce ordinary least squares") {
    auto s = line_spec(80, 2, false);
    auto unweighted = s;
    unweighted.weights.resize(0);
    auto equal = s;
    equal.weights = Eigen::VectorXd::Constant(80, 1.0);
    auto a = wls(unweighted);
    auto b = wls(equal);
    CHECK_THAT(a.coefficients(0), WithinAbs(b.coefficients(0), 1e-13));
    CHECK_THAT(a.coefficients(1), WithinAbs(b.coefficients(1), 1e-13));
}

TEST_CASE("weighted least squares matches a normal-equations solve") {
    std::mt19937_64 gen(3);
    std::normal_distribution<double> nd(0.0, 1.0);
    std::uniform_real_distribution<double> uw(0.1, 2.0);
    const int n = 200;
    EstimationSpec s;
    s.include_intercept = false;
    s.outcome.resize(n);
    s.regressors.resize(n, 3);
    s.weights.resize(n);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < 3; ++j) s.regressors(i, j) = nd(gen);
        s.outcome(i) = 1.5 * s.regressors(i, 0) - 0.7 * s.regressors(i, 1) + 0.2 * nd(gen);
        s.weights(i) = uw(gen);
    }
    auto r = wls(s);

    Eigen::MatrixXd W = s.weights.asDiagonal();
    Eigen::MatrixXd xtwx = s.regressors.transpose() * W * s.regressors;
    Eigen::VectorXd xtwy = s.regressors.transpose() * W * s.outcome;
    Eigen::VectorXd brute = xtwx.fullPivLu().solve(xtwy);
    for (int j = 0; j < 3; ++j) CHECK_THAT(r.coefficients(j), WithinAbs(brute(j), 1e-8));
}

TEST_CASE("rank-deficient designs are reported with the offending column") {
    EstimationSpec s;
    const int n = 30;
    s.outcome = Eigen::VectorXd::LinSpaced(n, 0.0, 1.0);
    s.regressors.resize(n, 2);
    s.regressors.col(0) = Eigen::VectorXd::LinSpaced(n, -1.0, 1.0);
    s.regressors.col(1) = 3.0 * s.regressors.col(0);
    s.column_names = {"exposure", "exposure_scaled"};
    CHECK_THROWS_WITH(wls(s), Catch::Matchers::ContainsSubstring("exposure"));
    CHECK_THROWS_AS(wls(s), numeric_error);
}

TEST_CASE("least squares is equivariant to outcome scaling and shifting") {
    auto s = line_spec(70, 4, false);
    auto base = wls(s);
    auto scaled = s;
    scaled.outcome *= 3.5;
    auto sr = wls(scaled);
    CHECK_THAT(sr.coefficients(0), WithinAbs(3.5 * base.coefficients(0), 1e-10));
    CHECK_THAT(sr.coefficients(1), WithinAbs(3.5 * base.coefficients(1), 1e-10));

    auto shifted = s;
    shifted.outcome.array() += 2.0;
    auto hr = wls(shifted);
    CHECK_THAT(hr.coefficients(0), WithinAbs(base.coefficients(0) + 2.0, 1e-10));
    CHECK_THAT(hr.coefficients(1), WithinAbs(base.coefficients(1), 1e-10));
}

TEST_CASE("invalid estimation inputs are rejected") {
    auto s = line_spec(20, 5, false);
    auto bad_w = s;
    bad_w.weights(3) = -0.1;
    CHECK_THROWS_AS(wls(bad_w), input_error);
    auto zero_w = s;
    zero_w.weights.setZero();
    CHECK_THROWS_AS(wls(zero_w), input_error);
    auto bad_rows = s;
    bad_rows.outcome.resize(10);
    CHECK_THROWS_AS(wls(bad_rows), input_error);
}

TEST_CASE("two-stage estimation with instruments equal to the regressor is least squares") {
    auto s = line_spec(90, 6, false);
    s.endogenous = {true};
    s.instruments = s.regressors;
    auto ols = wls(s);
    auto iv = tsls(s);
    CHECK_THAT(iv.coefficients(0), WithinAbs(ols.coefficients(0), 1e-10));
    CHECK_THAT(iv.coefficients(1), WithinAbs(ols.coefficients(1), 1e-10));
}

TEST_CASE("just-identified instrumental slope equals the Wald ratio") {
    std::mt19937_64 gen(7);
    std::normal_distribution<double> nd(0.0, 1.0);
    const int n = 400;
    Eigen::VectorXd z(n), x(n), y(n);
    for (int i = 0; i < n; ++i) {
        z(i) = nd(gen);
        double v = nd(gen);                  // endogenous disturbance
        x(i) = 0.5 + 0.8 * z(i) + v;
        y(i) = 1.0 + 2.0 * x(i) + 0.9 * v + 0.2 * nd(gen);
    }
    EstimationSpec s;
    s.outcome = y;
    s.regressors = x;
    s.endogenous = {true};
    s.instruments = z;
    auto iv = tsls(s);

    double zm = z.mean(), xm = x.mean(), ym = y.mean();
    double czy = ((z.array() - zm) * (y.array() - ym)).sum();
    double czx = ((z.array() - zm) * (x.array() - xm)).sum();
    CHECK_THAT(iv.coefficients(1), WithinAbs(czy / czx, 1e-10));

    // The simultaneity pushes least squares away from the instrumented slope.
    auto ols = wls(s);
    CHECK(std::abs(ols.coefficients(1) - iv.coefficients(1)) > 0.05);
    CHECK(iv.first_stage_F > 10.0);
    CHECK_FALSE(iv.weak_instruments);
}

TEST_CASE("a pure-noise instrument is flagged as weak") {
    std::mt19937_64 gen(8);
    std::normal_distribution<double> nd(0.0, 1.0);
    const int n = 300;
    EstimationSpec s;
    s.outcome.resize(n);
    s.regressors.resize(n, 1);
    s.instruments.resize(n, 1);
    for (int i = 0; i < n; ++i) {
        s.regressors(i, 0) = nd(gen);
        s.outcome(i) = 0.3 * s.regressors(i, 0) + nd(gen);
        s.instruments(i, 0) = nd(gen);
    }
    s.endogenous = {true};
    auto iv = tsls(s);
    CHECK(iv.weak_instruments);
    CHECK(iv.first_stage_F < 10.0);
}

TEST_CASE("under-identified systems are rejected") {
    auto s = line_spec(50, 9, false);
    EstimationSpec s2;
    s2.outcome = s.outcome;
    s2.regressors.resize(50, 2);
    s2.regressors.col(0) = s.regressors.col(0);
    s2.regressors.col(1) = s.regressors.col(0).array().square();
    s2.endogenous = {true, true};
    s2.instruments = s.regressors;
    CHECK_THROWS_AS(tsls(s2), input_error);
}

TEST_CASE("bootstrap of an exact fit is degenerate at the point estimate") {
    auto s = line_spec(40, 10, true);
    s.cluster_ids.resize(40);
    for (int i = 0; i < 40; ++i) s.cluster_ids[static_cast<std::size_t>(i)] = i % 8;
    auto r = wild_cluster_bootstrap(s, Estimator::wls, 100, 42);
    CHECK_THAT(r.bootstrap_se(1), WithinAbs(0.0, 1e-12));
    CHECK_THAT(r.ci_low(1), WithinAbs(2.0, 1e-12));
    CHECK_THAT(r.ci_high(1), WithinAbs(2.0, 1e-12));
    CHECK(r.bootstrap_failures == 0);
}

TEST_CASE("bootstrap inference is deterministic and invariant to cluster relabeling") {
    auto s = line_spec(120, 11, false);
    s.cluster_ids.resize(120);
    for (int i = 0; i < 120; ++i) s.cluster_ids[static_cast<std::size_t>(i)] = i / 6;
    auto a = wild_cluster_bootstrap(s, Estimator::wls, 200, 99);
    auto b = wild_cluster_bootstrap(s, Estimator::wls, 200, 99);
    CHECK(a.bootstrap_se == b.bootstrap_se);
    CHECK(a.ci_low == b.ci_low);

    auto relabeled = s;
    for (auto& id : relabeled.cluster_ids) id = 1000 + 37 * id;
    auto c = wild_cluster_bootstrap(relabeled, Estimator::wls, 200, 99);
    CHECK(a.bootstrap_se == c.bootstrap_se);
    CHECK(a.ci_low == c.ci_low);
    CHECK(a.ci_high == c.ci_high);

    auto d = wild_cluster_bootstrap(s, Estimator::wls, 200, 100);
    CHECK(a.bootstrap_se != d.bootstrap_se);
}

TEST_CASE("bootstrap standard errors track the closed-form value on benign data") {
    std::mt19937_64 gen(12);
    std::normal_distribution<double> nd(0.0, 1.0);
    const int n = 1000;
    const double sigma = 0.3;
    EstimationSpec s;
    s.outcome.resize(n);
    s.regressors.resize(n, 1);
    s.cluster_ids.resize(n);
    for (int i = 0; i < n; ++i) {
        s.regressors(i, 0) = nd(gen);
        s.outcome(i) = 1.0 + 0.5 * s.regressors(i, 0) + sigma * nd(gen);
        s.cluster_ids[static_cast<std::size_t>(i)] = i / 20;  // 50 equal clusters
    }
    auto r = wild_cluster_bootstrap(s, Estimator::wls, 400, 5);

    double xm = s.regressors.col(0).mean();
    double sxx = (s.regressors.col(0).array() - xm).square().sum();
    double analytic = sigma / std::sqrt(sxx);
    CHECK(std::abs(r.bootstrap_se(1) - analytic) < 0.15 * analytic);
    CHECK(r.ci_low(1) < r.coefficients(1));
    CHECK(r.ci_high(1) > r.coefficients(1));
    CHECK(r.n_clusters == 50);
}

TEST_CASE("bootstrap requires genuine cluster variation") {
    auto s = line_spec(30, 13, false);
    s.cluster_ids.assign(30, 7);
    CHECK_THROWS_AS(wild_cluster_bootstrap(s, Estimator::wls, 50, 1), input_error);
}

TEST_CASE("null-effect coverage of the bootstrap interval is near nominal") {
    // True slope zero, i.i.d. noise, 60 clusters: the 95% percentile interval
    // should cover zero at close to its nominal rate.
    std::mt19937_64 gen(77);
    std::normal_distribution<double> nd(0.0, 1.0);
    const int runs = 200;
    int covered = 0;
    for (int rep = 0; rep < runs; ++rep) {
        const int n = 240;
        EstimationSpec s;
        s.outcome.resize(n);
        s.regressors.resize(n, 1);
        s.cluster_ids.resize(n);
        for (int i = 0; i < n; ++i) {
            s.regressors(i, 0) = nd(gen);
            s.outcome(i) = 0.7 + nd(gen);
            s.cluster_ids[static_cast<std::size_t>(i)] = i / 4;
        }
        auto r = wild_cluster_bootstrap(s, Estimator::wls, 200,
                                        static_cast<std::uint64_t>(rep) + 991);
        if (r.ci_low(1) <= 0.0 && 0.0 <= r.ci_high(1)) ++covered;
    }
    double rate = static_cast<double>(covered) / runs;
    CHECK(rate >= 0.90);
    CHECK(rate <= 0.99);
}

TEST_CASE("probit on balanced symmetric data has zero coefficients") {
    Eigen::VectorXd y(8);
    Eigen::MatrixXd X(8, 2);
    int row = 0;
    for (double x : {-2.0, -1.0, 1.0, 2.0}) {
        for (double lab : {0.0, 1.0}) {
            y(row) = lab;
            X(row, 0) = 1.0;
            X(row, 1) = x;
            ++row;
        }
    }
    auto r = probit_mle(y, X);
    CHECK_THAT(r.coefficients(0), WithinAbs(0.0, 1e-8));
    CHECK_THAT(r.coefficients(1), WithinAbs(0.0, 1e-8));
}

TEST_CASE("probit recovers the generating parameters within sampling error") {
    const double a = 0.381, b = -0.271;
    Rng rng(stream_seed(2024, 1));
    const int n = 20000;
    Eigen::VectorXd y(n);
    Eigen::MatrixXd X(n, 2);
    for (int i = 0; i < n; ++i) {
        double shock = rng.uniform(-1.5, 1.5);
        X(i, 0) = 1.0;
        X(i, 1) = shock;
        y(i) = rng.uniform() < norm_cdf(a + b * shock) ? 1.0 : 0.0;
    }
    auto r = probit_mle(y, X);
    double se_a = std::sqrt(r.covariance(0, 0));
    double se_b = std::sqrt(r.covariance(1, 1));
    CHECK(std::abs(r.coefficients(0) - a) < 3.0 * se_a);
    CHECK(std::abs(r.coefficients(1) - b) < 3.0 * se_b);

    // Index evaluated at the benchmark mean regressor value.
    double index = r.coefficients(0) + r.coefficients(1) * 0.015;
    CHECK_THAT(index, WithinAbs(0.377, 0.02));
    CHECK_THAT(a + b * 0.015, WithinAbs(0.377, 1e-3));
}

TEST_CASE("probit slope rescales inversely with its column") {
    Rng rng(stream_seed(2024, 2));
    const int n = 4000;
    Eigen::VectorXd y(n);
    Eigen::MatrixXd X(n, 2);
    for (int i = 0; i < n; ++i) {
        double x = rng.normal();
        X(i, 0) = 1.0;
        X(i, 1) = x;
        y(i) = rng.uniform() < norm_cdf(0.2 + 0.6 * x) ? 1.0 : 0.0;
    }
    auto base = probit_mle(y, X);
    Eigen::MatrixXd Xs = X;
    Xs.col(1) *= 10.0;
    auto scaled = probit_mle(y, Xs);
    CHECK_THAT(scaled.coefficients(1) * 10.0, WithinAbs(base.coefficients(1), 1e-7));
    CHECK_THAT(scaled.coefficients(0), WithinAbs(base.coefficients(0), 1e-7));
}

TEST_CASE("probit reports perfect separation") {
    const int n = 60;
    Eigen::VectorXd y(n);
    Eigen::MatrixXd X(n, 2);
    for (int i = 0; i < n; ++i) {
        double x = (i < n / 2) ? -1.0 - 0.01 * i : 1.0 + 0.01 * i;
        X(i, 0) = 1.0;
        X(i, 1) = x;
        y(i) = x > 0.0 ? 1.0 : 0.0;
    }
    CHECK_THROWS_AS(probit_mle(y, X), input_error);
}

TEST_CASE("probit rejects non-binary outcomes") {
    Eigen::VectorXd y = Eigen::VectorXd::Constant(10, 0.5);
    Eigen::MatrixXd X = Eigen::MatrixXd::Ones(10, 1);
    CHECK_THROWS_AS(probit_mle(y, X), input_error);
}

TEST_CASE("Mills ratio values at the benchmark points") {
    auto g0 = gaussian_mills(0.0);
    CHECK_THAT(g0.lambda, WithinAbs(0.7978845608028654, 1e-12));
    CHECK_THAT(g0.lambda, WithinAbs(2.0 * norm_pdf(0.0), 1e-12));

    auto g = gaussian_mills(0.377);
    CHECK_THAT(g.lambda_prime, WithinAbs(-0.547, 1e-3));

    CHECK_THAT(norm_ppf(0.647), WithinAbs(0.377, 1e-3));
}

TEST_CASE("Mills ratio satisfies its sign and stability properties") {
    for (double pi = -8.0; pi <= 8.0; pi += 0.25) {
        auto g = gaussian_mills(pi);
        CHECK(g.lambda > 0.0);
        CHECK(g.lambda_prime < 0.0);
        CHECK(g.lambda + pi > 0.0);
        CHECK(std::isfinite(g.lambda));
        // lambda' = -lambda (pi + lambda) by definition of the derivative.
        CHECK_THAT(g.lambda_prime, WithinAbs(-g.lambda * (pi + g.lambda), 1e-12));
    }
    // Far left tail: lambda approaches -pi from above.
    auto tail = gaussian_mills(-8.0);
    CHECK(tail.lambda > 8.0);
    CHECK(tail.lambda < 8.2);
    CHECK_THROWS_AS(gaussian_mills(std::numeric_limits<double>::infinity()), input_error);
}
