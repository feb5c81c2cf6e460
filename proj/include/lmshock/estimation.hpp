#pragma once

// Estimation core: weighted least squares, two-stage least squares with
// first-stage diagnostics, wild cluster bootstrap inference, and a probit
// maximum-likelihood fitter. Everything is deterministic given the seed and
// independent of scheduling: each bootstrap replication draws from its own
// substream keyed by (seed, replication index).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "lmshock/common.hpp"
#include "lmshock/rng.hpp"
#include "lmshock/stats.hpp"

namespace lmshock {

struct EstimationSpec {
    Eigen::VectorXd outcome;
    Eigen::MatrixXd regressors;        // one column per regressor, caller order
    std::vector<bool> endogenous;      // per regressor column; empty = all exogenous
    Eigen::MatrixXd instruments;       // excluded instruments only (may have 0 columns)
    Eigen::VectorXd weights;           // empty = unit weights
    std::vector<std::int64_t> cluster_ids;  // empty = no clustering structure
    bool include_intercept = true;
    std::vector<std::string> column_names;  // per regressor column, for diagnostics
};

struct RegressionResult {
    Eigen::VectorXd coefficients;      // intercept first when included
    Eigen::MatrixXd covariance;        // analytic cluster-robust, diagnostics only
    Eigen::VectorXd bootstrap_se;
    Eigen::VectorXd ci_low, ci_high;            // percentile bootstrap CI
    Eigen::VectorXd ci_sym_low, ci_sym_high;    // point estimate +- 1.96 bootstrap SE
    std::vector<std::string> column_names;
    std::size_t n_obs = 0;
    std::size_t n_clusters = 0;
    double first_stage_F = std::numeric_limits<double>::quiet_NaN();
    bool weak_instruments = false;
    std::size_t bootstrap_reps = 0;
    std::size_t bootstrap_failures = 0;
};

enum class Estimator { wls, tsls };

namespace detail {

struct Design {
    Eigen::MatrixXd X;
    std::vector<bool> endo;
    std::vector<std::string> names;
};

inline Design assemble_design(const EstimationSpec& spec) {
    const Eigen::Index n = spec.outcome.size();
    const Eigen::Index p_user = spec.regressors.cols();
    require(spec.regressors.rows() == n, "outcome and regressors have different row counts");
    require(spec.instruments.cols() == 0 || spec.instruments.rows() == n,
            "instruments and outcome have different row counts");
    require(spec.weights.size() == 0 || spec.weights.size() == n,
            "weights and outcome have different row counts");
    require(spec.cluster_ids.empty() ||
                spec.cluster_ids.size() == static_cast<std::size_t>(n),
            "cluster ids and outcome have different row counts");
    require(spec.endogenous.empty() ||
                spec.endogenous.size() == static_cast<std::size_t>(p_user),
            "endogenous flags do not match the regressor columns");
    require(spec.column_names.empty() ||
                spec.column_names.size() == static_cast<std::size_t>(p_user),
            "column names do not match the regressor columns");
    if (spec.weights.size() > 0) {
        require((spec.weights.array() >= 0.0).all(), "weights must be non-negative");
        require(spec.weights.sum() > 0.0, "weights must have a positive sum");
    }

    Design d;
    const Eigen::Index p = p_user + (spec.include_intercept ? 1 : 0);
    require(p > 0, "design has no columns");
    require(n >= p, "fewer observations than design columns");
    d.X.resize(n, p);
    Eigen::Index off = 0;
    if (spec.include_intercept) {
        d.X.col(0).setOnes();
        d.endo.push_back(false);
        d.names.push_back("intercept");
        off = 1;
    }
    for (Eigen::Index j = 0; j < p_user; ++j) {
        d.X.col(off + j) = spec.regressors.col(j);
        d.endo.push_back(!spec.endogenous.empty() && spec.endogenous[static_cast<std::size_t>(j)]);
        d.names.push_back(spec.column_names.empty()
                              ? "column " + std::to_string(j + 1)
                              : spec.column_names[static_cast<std::size_t>(j)]);
    }
    return d;
}

inline Eigen::VectorXd effective_weights(const EstimationSpec& spec) {
    if (spec.weights.size() > 0) return spec.weights;
    return Eigen::VectorXd::Ones(spec.outcome.size());
}

struct QrFit {
    Eigen::MatrixXd beta;      // one column per right-hand side
    Eigen::MatrixXd xtwx_inv;  // (X' W X)^{-1}, original column order
};

// Weighted least squares through a column-pivoted QR of the row-scaled design;
// the normal equations are never formed for the solve itself.
inline QrFit solve_weighted(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y,
                            const Eigen::VectorXd& w,
                            const std::vector<std::string>& names,
                            bool want_cov) {
    const Eigen::Index n = X.rows();
    const Eigen::Index p = X.cols();
    Eigen::ArrayXd sw = w.array().sqrt();
    Eigen::MatrixXd Xs = X.array().colwise() * sw;
    Eigen::MatrixXd Ys = Y.array().colwise() * sw;

    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(Xs);
    if (qr.rank() < p) {
        const auto& idx = qr.colsPermutation().indices();
        Eigen::Index bad = idx(qr.rank());
        std::string label = names.empty() ? "column " + std::to_string(bad + 1)
                                          : names[static_cast<std::size_t>(bad)];
        throw numeric_error("singular design: " + label +
                            " is collinear with the preceding columns");
    }

    QrFit fit;
    fit.beta = qr.solve(Ys);
    if (want_cov) {
        Eigen::MatrixXd R = qr.matrixR().topLeftCorner(p, p).triangularView<Eigen::Upper>();
        Eigen::MatrixXd Rinv =
            R.triangularView<Eigen::Upper>().solve(Eigen::MatrixXd::Identity(p, p));
        Eigen::MatrixXd K = Rinv * Rinv.transpose();  // (Xs'Xs)^{-1} in pivot order
        const auto& idx = qr.colsPermutation().indices();
        fit.xtwx_inv.resize(p, p);
        for (Eigen::Index a = 0; a < p; ++a)
            for (Eigen::Index b = 0; b < p; ++b)
                fit.xtwx_inv(idx(a), idx(b)) = K(a, b);
    }
    (void)n;
    return fit;
}

// Rows sharing a cluster id get the same index, numbered by first occurrence,
// so inference is unchanged by relabeling the ids themselves.
inline std::vector<std::size_t> cluster_index(const std::vector<std::int64_t>& ids,
                                              Eigen::Index n,
                                              std::size_t* n_clusters) {
    std::vector<std::size_t> out(static_cast<std::size_t>(n));
    if (ids.empty()) {
        for (Eigen::Index i = 0; i < n; ++i) out[static_cast<std::size_t>(i)] = static_cast<std::size_t>(i);
        *n_clusters = static_cast<std::size_t>(n);
        return out;
    }
    std::vector<std::pair<std::int64_t, std::size_t>> seen;
    for (Eigen::Index i = 0; i < n; ++i) {
        std::int64_t id = ids[static_cast<std::size_t>(i)];
        std::size_t k = seen.size();
        for (const auto& s : seen)
            if (s.first == id) { k = s.second; break; }
        if (k == seen.size()) seen.emplace_back(id, k);
        out[static_cast<std::size_t>(i)] = k;
    }
    *n_clusters = seen.size();
    return out;
}

// Cluster-robust sandwich with the usual finite-sample factor; with every row
// its own cluster this reduces to the HC1 heteroskedasticity-robust form.
inline Eigen::MatrixXd sandwich_covariance(const Eigen::MatrixXd& bread,
                                           const Eigen::MatrixXd& score_basis,
                                           const Eigen::VectorXd& w,
                                           const Eigen::VectorXd& resid,
                                           const std::vector<std::size_t>& cl,
                                           std::size_t n_clusters) {
    const Eigen::Index n = score_basis.rows();
    const Eigen::Index p = score_basis.cols();
    Eigen::MatrixXd S = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n_clusters), p);
    for (Eigen::Index i = 0; i < n; ++i)
        S.row(static_cast<Eigen::Index>(cl[static_cast<std::size_t>(i)])) +=
            w(i) * resid(i) * score_basis.row(i);
    Eigen::MatrixXd meat = S.transpose() * S;
    double g = static_cast<double>(n_clusters);
    double nn = static_cast<double>(n);
    double pp = static_cast<double>(p);
    double c = (g > 1.0 && nn > pp) ? (g / (g - 1.0)) * ((nn - 1.0) / (nn - pp)) : 1.0;
    return c * bread * meat * bread;
}

inline double weighted_rss(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                           const Eigen::VectorXd& beta, const Eigen::VectorXd& w) {
    Eigen::ArrayXd e = (y - X * beta).array();
    return (w.array() * e.square()).sum();
}

}  // namespace detail

// Weighted least squares. Coefficients come from an orthogonal decomposition;
// the analytic covariance is cluster-robust when cluster ids are present.
inline RegressionResult wls(const EstimationSpec& spec) {
    auto d = detail::assemble_design(spec);
    Eigen::VectorXd w = detail::effective_weights(spec);
    auto fit = detail::solve_weighted(d.X, spec.outcome, w, d.names, true);

    RegressionResult r;
    r.coefficients = fit.beta.col(0);
    r.column_names = d.names;
    r.n_obs = static_cast<std::size_t>(spec.outcome.size());
    auto cl = detail::cluster_index(spec.cluster_ids, spec.outcome.size(), &r.n_clusters);
    Eigen::VectorXd resid = spec.outcome - d.X * r.coefficients;
    r.covariance = detail::sandwich_covariance(fit.xtwx_inv, d.X, w, resid, cl, r.n_clusters);
    return r;
}

// Two-stage least squares with weights applied in both stages. Endogenous
// columns are replaced by their first-stage fitted values; the reported F is
// the joint test on the excluded instruments (the smallest across endogenous
// columns when there are several).
inline RegressionResult tsls(const EstimationSpec& spec) {
    auto d = detail::assemble_design(spec);
    Eigen::VectorXd w = detail::effective_weights(spec);
    const Eigen::Index n = d.X.rows();
    const Eigen::Index p = d.X.cols();

    std::vector<Eigen::Index> endo_cols, exog_cols;
    for (Eigen::Index j = 0; j < p; ++j)
        (d.endo[static_cast<std::size_t>(j)] ? endo_cols : exog_cols).push_back(j);
    const Eigen::Index q = spec.instruments.cols();
    if (!endo_cols.empty())
        require(q >= static_cast<Eigen::Index>(endo_cols.size()),
                "under-identified: fewer excluded instruments than endogenous regressors");

    RegressionResult r;
    r.column_names = d.names;
    r.n_obs = static_cast<std::size_t>(n);

    Eigen::MatrixXd Xhat = d.X;
    if (!endo_cols.empty()) {
        Eigen::MatrixXd Z(n, static_cast<Eigen::Index>(exog_cols.size()) + q);
        std::vector<std::string> znames;
        for (std::size_t k = 0; k < exog_cols.size(); ++k) {
            Z.col(static_cast<Eigen::Index>(k)) = d.X.col(exog_cols[k]);
            znames.push_back(d.names[static_cast<std::size_t>(exog_cols[k])]);
        }
        for (Eigen::Index j = 0; j < q; ++j) {
            Z.col(static_cast<Eigen::Index>(exog_cols.size()) + j) = spec.instruments.col(j);
            znames.push_back("instrument " + std::to_string(j + 1));
        }

        Eigen::MatrixXd Xe(n, static_cast<Eigen::Index>(endo_cols.size()));
        for (std::size_t k = 0; k < endo_cols.size(); ++k) Xe.col(static_cast<Eigen::Index>(k)) = d.X.col(endo_cols[k]);

        auto first = detail::solve_weighted(Z, Xe, w, znames, false);
        Eigen::MatrixXd fitted = Z * first.beta;
        for (std::size_t k = 0; k < endo_cols.size(); ++k) Xhat.col(endo_cols[k]) = fitted.col(static_cast<Eigen::Index>(k));

        // First-stage F: compare the weighted residual sum against the model
        // without the excluded instruments.
        double fmin = std::numeric_limits<double>::infinity();
        for (std::size_t k = 0; k < endo_cols.size(); ++k) {
            Eigen::VectorXd xk = Xe.col(static_cast<Eigen::Index>(k));
            double rss_u = detail::weighted_rss(Z, xk, first.beta.col(static_cast<Eigen::Index>(k)), w);
            double rss_r;
            if (exog_cols.empty()) {
                rss_r = (w.array() * xk.array().square()).sum();
            } else {
                Eigen::MatrixXd Zr(n, static_cast<Eigen::Index>(exog_cols.size()));
                std::vector<std::string> rnames;
                for (std::size_t j = 0; j < exog_cols.size(); ++j) {
                    Zr.col(static_cast<Eigen::Index>(j)) = d.X.col(exog_cols[j]);
                    rnames.push_back(d.names[static_cast<std::size_t>(exog_cols[j])]);
                }
                auto restr = detail::solve_weighted(Zr, xk, w, rnames, false);
                rss_r = detail::weighted_rss(Zr, xk, restr.beta.col(0), w);
            }
            double dof = static_cast<double>(n - Z.cols());
            require(dof > 0, "first stage has no residual degrees of freedom");
            double f = ((rss_r - rss_u) / static_cast<double>(q)) / (rss_u / dof);
            fmin = std::min(fmin, f);
        }
        r.first_stage_F = fmin;
        r.weak_instruments = fmin < 10.0;
    }

    auto second = detail::solve_weighted(Xhat, spec.outcome, w, d.names, true);
    r.coefficients = second.beta.col(0);

    // Structural residuals (original regressors, not fitted values) feed both
    // the analytic covariance and the bootstrap.
    auto cl = detail::cluster_index(spec.cluster_ids, n, &r.n_clusters);
    Eigen::VectorXd resid = spec.outcome - d.X * r.coefficients;
    r.covariance = detail::sandwich_covariance(second.xtwx_inv, Xhat, w, resid, cl, r.n_clusters);
    return r;
}

inline RegressionResult estimate_point(const EstimationSpec& spec, Estimator which) {
    return which == Estimator::wls ? wls(spec) : tsls(spec);
}

namespace detail {

inline double percentile(std::vector<double> v, double q) {
    require(!v.empty(), "percentile of an empty sample");
    std::sort(v.begin(), v.end());
    double pos = q * static_cast<double>(v.size() - 1);
    auto lo = static_cast<std::size_t>(std::floor(pos));
    auto hi = static_cast<std::size_t>(std::ceil(pos));
    double frac = pos - std::floor(pos);
    return v[lo] * (1.0 - frac) + v[hi] * frac;
}

}  // namespace detail

// Wild cluster bootstrap around the unrestricted fit: Rademacher signs drawn
// once per cluster per replication flip the residuals, the outcome is rebuilt,
// and the estimator is re-run. Replications that fail are dropped and counted;
// more than 5% failures aborts inference.
inline RegressionResult wild_cluster_bootstrap(const EstimationSpec& spec, Estimator which,
                                               std::size_t reps = 500,
                                               std::uint64_t seed = 0) {
    require(reps >= 2, "bootstrap needs at least two replications");
    RegressionResult base = estimate_point(spec, which);
    require(base.n_clusters >= 2, "clustered inference needs at least two clusters");

    auto d = detail::assemble_design(spec);
    std::size_t n_clusters = 0;
    auto cl = detail::cluster_index(spec.cluster_ids, spec.outcome.size(), &n_clusters);
    Eigen::VectorXd resid = spec.outcome - d.X * base.coefficients;
    Eigen::VectorXd fitted = spec.outcome - resid;

    // Inflate the perturbation by the same finite-sample factor the sandwich
    // uses; raw residuals understate the error scale in small samples.
    {
        double g = static_cast<double>(n_clusters);
        double nn = static_cast<double>(spec.outcome.size());
        double pp = static_cast<double>(base.coefficients.size());
        if (g > 1.0 && nn > pp)
            resid *= std::sqrt((g / (g - 1.0)) * ((nn - 1.0) / (nn - pp)));
    }

    const Eigen::Index p = base.coefficients.size();
    std::vector<std::vector<double>> draws(static_cast<std::size_t>(p));
    std::size_t failures = 0;

    EstimationSpec rep_spec = spec;
    for (std::size_t rep = 0; rep < reps; ++rep) {
        Rng rng(stream_seed(seed, 0xB007u, static_cast<std::uint64_t>(rep)));
        std::vector<double> sign(n_clusters);
        for (auto& s : sign) s = rng.bernoulli(0.5) ? 1.0 : -1.0;
        Eigen::VectorXd y_star = fitted;
        for (Eigen::Index i = 0; i < y_star.size(); ++i)
            y_star(i) += sign[cl[static_cast<std::size_t>(i)]] * resid(i);
        rep_spec.outcome = y_star;
        try {
            RegressionResult rr = estimate_point(rep_spec, which);
            for (Eigen::Index j = 0; j < p; ++j)
                draws[static_cast<std::size_t>(j)].push_back(rr.coefficients(j));
        } catch (const std::exception&) {
            ++failures;
        }
    }
    if (static_cast<double>(failures) > 0.05 * static_cast<double>(reps))
        throw numeric_error("wild bootstrap failed in " + std::to_string(failures) + " of " +
                            std::to_string(reps) + " replications");

    const double z975 = 1.959963984540054;
    base.bootstrap_se.resize(p);
    base.ci_low.resize(p);
    base.ci_high.resize(p);
    base.ci_sym_low.resize(p);
    base.ci_sym_high.resize(p);
    for (Eigen::Index j = 0; j < p; ++j) {
        const auto& v = draws[static_cast<std::size_t>(j)];
        double mean = 0.0;
        for (double x : v) mean += x;
        mean /= static_cast<double>(v.size());
        double ss = 0.0;
        for (double x : v) ss += (x - mean) * (x - mean);
        double se = v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1)) : 0.0;
        base.bootstrap_se(j) = se;
        base.ci_low(j) = detail::percentile(v, 0.025);
        base.ci_high(j) = detail::percentile(v, 0.975);
        base.ci_sym_low(j) = base.coefficients(j) - z975 * se;
        base.ci_sym_high(j) = base.coefficients(j) + z975 * se;
    }
    base.bootstrap_reps = reps - failures;
    base.bootstrap_failures = failures;
    return base;
}

struct ProbitResult {
    Eigen::VectorXd coefficients;
    Eigen::MatrixXd covariance;  // inverse observed information at the optimum
    int iterations = 0;
    double log_likelihood = 0.0;
};

// Probit by Newton-Raphson with step halving. Converges when the gradient
// max-norm drops below 1e-10 or when the Newton decrement falls below the
// likelihood's floating-point resolution; at a few hundred thousand
// observations the log likelihood is only representable to ~1e-11, so an
// absolute gradient test alone would spin on rounding noise. Diverging
// coefficients are reported as perfect separation.
inline ProbitResult probit_mle(const Eigen::VectorXd& y, const Eigen::MatrixXd& X,
                               const Eigen::VectorXd& weights = Eigen::VectorXd()) {
    const Eigen::Index n = y.size();
    const Eigen::Index p = X.cols();
    require(X.rows() == n, "probit outcome and design have different row counts");
    require(n >= p && p > 0, "probit design is degenerate");
    Eigen::VectorXd w = weights.size() > 0 ? weights : Eigen::VectorXd::Ones(n);
    require(w.size() == n, "probit weights have the wrong length");
    for (Eigen::Index i = 0; i < n; ++i)
        require(y(i) == 0.0 || y(i) == 1.0, "probit outcome must be 0/1");

    Eigen::VectorXd q = 2.0 * y.array() - 1.0;
    Eigen::VectorXd beta = Eigen::VectorXd::Zero(p);

    auto loglik = [&](const Eigen::VectorXd& b) {
        Eigen::ArrayXd s = q.array() * (X * b).array();
        double ll = 0.0;
        for (Eigen::Index i = 0; i < n; ++i) ll += w(i) * log_norm_cdf(s(i));
        return ll;
    };

    double ll = loglik(beta);
    std::vector<double> grad_trace;
    Eigen::MatrixXd H(p, p);
    for (int iter = 1; iter <= 100; ++iter) {
        Eigen::ArrayXd s = q.array() * (X * beta).array();
        Eigen::ArrayXd lam(n);
        for (Eigen::Index i = 0; i < n; ++i) lam(i) = mills_lambda(s(i));
        Eigen::VectorXd g = X.transpose() * (w.array() * q.array() * lam).matrix();
        double gnorm = g.cwiseAbs().maxCoeff();
        grad_trace.push_back(gnorm);
        Eigen::ArrayXd h = w.array() * lam * (lam + s);
        H = X.transpose() * (X.array().colwise() * h).matrix();
        Eigen::VectorXd step = H.ldlt().solve(g);
        // g'H^-1 g is twice the likelihood gain a full Newton step would buy;
        // once that gain is smaller than the likelihood's rounding error the
        // optimum is reached to machine precision.
        double decrement = g.dot(step);
        if (gnorm < 1e-10 ||
            (decrement >= 0.0 && decrement < 1e-10 * (1.0 + std::abs(ll)))) {
            // A vanishing gradient with every observation classified at an
            // extreme margin means the likelihood has no interior maximum:
            // the gradient only underflowed on its way to a diverging fit.
            if (s.minCoeff() > 6.0)
                throw input_error("probit: perfect separation (coefficients diverge)");
            ProbitResult out;
            out.coefficients = beta;
            out.covariance = H.ldlt().solve(Eigen::MatrixXd::Identity(p, p));
            out.iterations = iter;
            out.log_likelihood = ll;
            return out;
        }

        double scale = 1.0;
        for (int half = 0; half < 40; ++half) {
            Eigen::VectorXd cand = beta + scale * step;
            double ll_cand = loglik(cand);
            if (ll_cand >= ll - 1e-12) {
                beta = cand;
                ll = ll_cand;
                break;
            }
            scale *= 0.5;
        }
        if (beta.cwiseAbs().maxCoeff() > 1e3)
            throw input_error("probit: perfect separation (coefficients diverge)");
    }
    std::string trace;
    for (std::size_t k = grad_trace.size() >= 5 ? grad_trace.size() - 5 : 0;
         k < grad_trace.size(); ++k)
        trace += " " + std::to_string(grad_trace[k]);
    throw numeric_error("probit did not converge in 100 iterations; gradient norms:" + trace);
}

struct GaussianMills {
    double pdf = 0.0;
    double cdf = 0.0;
    double lambda = 0.0;
    double lambda_prime = 0.0;
};

inline GaussianMills gaussian_mills(double pi) {
    require(std::isfinite(pi), "Mills ratio needs a finite argument");
    GaussianMills g;
    g.pdf = norm_pdf(pi);
    g.cdf = norm_cdf(pi);
    g.lambda = mills_lambda(pi);
    g.lambda_prime = mills_lambda_prime(pi);
    return g;
}

}  // namespace lmshock
