#pragma once

#include <cmath>
#include <limits>

#include "lmshock/common.hpp"

// Scalar normal-distribution helpers shared by the estimators, the selection
// diagnostics and the synthetic-panel generator.

namespace lmshock {

inline constexpr double inv_sqrt_2pi = 0.3989422804014326779;

inline double norm_pdf(double x) {
    return inv_sqrt_2pi * std::exp(-0.5 * x * x);
}

inline double norm_cdf(double x) {
    return 0.5 * std::erfc(-x * M_SQRT1_2);
}

// log Phi(x), usable far into the left tail where Phi underflows.
inline double log_norm_cdf(double x) {
    if (x > -1.0) return std::log1p(-0.5 * std::erfc(x * M_SQRT1_2));
    double e = 0.5 * std::erfc(-x * M_SQRT1_2);
    if (e > 0.0) return std::log(e);
    // Asymptotic expansion once erfc underflows (x below about -37).
    double x2 = x * x;
    return -0.5 * x2 - 0.5 * std::log(2.0 * M_PI) - std::log(-x)
           + std::log1p(-1.0 / x2 + 3.0 / (x2 * x2));
}

// Inverse normal CDF. Acklam's rational approximation polished with one
// Halley step, which brings it to close to full double precision.
inline double norm_ppf(double p) {
    require(p > 0.0 && p < 1.0, "norm_ppf: p must lie strictly inside (0,1)");
    static const double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                               -2.759285104469687e+02, 1.383577518672690e+02,
                               -3.066479806614716e+01, 2.506628277459239e+00};
    static const double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                               -1.556989798598866e+02, 6.680131188771972e+01,
                               -1.328068155288572e+01};
    static const double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                               -2.400758277161838e+00, -2.549732539343734e+00,
                               4.374664141464968e+00,  2.938163982698783e+00};
    static const double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                               2.445134137142996e+00, 3.754408661907416e+00};
    const double plow = 0.02425, phigh = 1.0 - plow;
    double x;
    if (p < plow) {
        double q = std::sqrt(-2.0 * std::log(p));
        x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
            ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    } else if (p <= phigh) {
        double q = p - 0.5, r = q * q;
        x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
            (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
    } else {
        double q = std::sqrt(-2.0 * std::log1p(-p));
        x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
            ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    }
    // Halley refinement against the erfc-based CDF.
    double e = norm_cdf(x) - p;
    double u = e * std::sqrt(2.0 * M_PI) * std::exp(0.5 * x * x);
    x = x - u / (1.0 + 0.5 * x * u);
    return x;
}

// Inverse Mills ratio lambda(x) = pdf(x) / cdf(x). The direct ratio loses
// accuracy once cdf(x) becomes tiny, so the left tail goes through logs.
inline double mills_lambda(double x) {
    if (x > -4.0) return norm_pdf(x) / norm_cdf(x);
    double logpdf = -0.5 * x * x - 0.5 * std::log(2.0 * M_PI);
    return std::exp(logpdf - log_norm_cdf(x));
}

// Derivative of the inverse Mills ratio: lambda'(x) = -lambda(x) (x + lambda(x)).
inline double mills_lambda_prime(double x) {
    double l = mills_lambda(x);
    return -l * (x + l);
}

} // namespace lmshock
