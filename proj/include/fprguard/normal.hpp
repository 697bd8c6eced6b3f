#pragma once

// Standard normal CDF and quantile.
//
// The CDF is expressed through std::erfc, which keeps the tails accurate to
// machine precision. The quantile starts from Acklam's rational approximation
// and applies two Halley refinement steps against normal_cdf, so
// normal_cdf(normal_quantile(q)) == q to well under 1e-9.

#include <cmath>
#include <limits>
#include <stdexcept>

namespace fprguard {

inline double normal_pdf(double x) {
    static constexpr double inv_sqrt_2pi = 0.3989422804014326779399461;
    return inv_sqrt_2pi * std::exp(-0.5 * x * x);
}

inline double normal_cdf(double x) {
    static const double inv_sqrt2 = std::sqrt(0.5);
    return 0.5 * std::erfc(-x * inv_sqrt2);
}

// P(Z > x); avoids cancellation for large positive x.
inline double normal_sf(double x) { return normal_cdf(-x); }

inline double normal_quantile(double q) {
    if (!(q > 0.0 && q < 1.0))
        throw std::invalid_argument("normal_quantile: q must lie in (0,1)");

    // Acklam's rational initializer, three branches.
    static constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                                   -2.759285104469687e+02, 1.383577518672690e+02,
                                   -3.066479806614716e+01, 2.506628277459239e+00};
    static constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                                   -1.556989798598866e+02, 6.680131188771972e+01,
                                   -1.328068155288572e+01};
    static constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                                   -2.400758277161838e+00, -2.549732539343734e+00,
                                   4.374664141464968e+00,  2.938163982698783e+00};
    static constexpr double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                                   2.445134137142996e+00, 3.754408661907416e+00};
    static constexpr double plow = 0.02425;

    double x;
    if (q < plow) {
        const double u = std::sqrt(-2.0 * std::log(q));
        x = (((((c[0] * u + c[1]) * u + c[2]) * u + c[3]) * u + c[4]) * u + c[5]) /
            ((((d[0] * u + d[1]) * u + d[2]) * u + d[3]) * u + 1.0);
    } else if (q > 1.0 - plow) {
        const double u = std::sqrt(-2.0 * std::log(1.0 - q));
        x = -(((((c[0] * u + c[1]) * u + c[2]) * u + c[3]) * u + c[4]) * u + c[5]) /
            ((((d[0] * u + d[1]) * u + d[2]) * u + d[3]) * u + 1.0);
    } else {
        const double u = q - 0.5;
        const double r = u * u;
        x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * u /
            (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
    }

    // Halley refinement against our own CDF; two steps give self-consistency
    // far below the 1e-9 contract.
    for (int i = 0; i < 2; ++i) {
        const double e = normal_cdf(x) - q;
        const double u = e / normal_pdf(x);
        x -= u / (1.0 + 0.5 * x * u);
    }
    return x;
}

}  // namespace fprguard
