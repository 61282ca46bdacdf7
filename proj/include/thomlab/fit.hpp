#pragma once

// Small regression toolkit used by the asymptotic analyzers: ordinary least
// squares lines, lower-envelope quantile lines, Aitken extrapolation and
// rational snapping of fitted exponents.

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <numeric>
#include <span>
#include <vector>

#include "thomlab/error.hpp"

namespace thomlab::fit {

struct LineFit {
    double slope = 0.0;
    double intercept = 0.0;
    double residual_rms = 0.0;
    double slope_stderr = 0.0;
    std::size_t count = 0;
};

/// Least-squares line y = slope*x + intercept.
inline LineFit least_squares(std::span<const double> xs, std::span<const double> ys) {
    if (xs.size() != ys.size()) throw PreconditionError("regression inputs differ in length");
    const std::size_t n = xs.size();
    if (n < 2) throw InsufficientDataError("need at least two points for a line fit");
    const double mx = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
    const double my = std::accumulate(ys.begin(), ys.end(), 0.0) / n;
    double sxx = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        sxx += (xs[i] - mx) * (xs[i] - mx);
        sxy += (xs[i] - mx) * (ys[i] - my);
    }
    const double scale = std::max(1.0, std::abs(mx));
    if (!(sxx > 1e-24 * scale * scale * n)) throw InsufficientDataError("degenerate regression: abscissae coincide");
    LineFit out;
    out.count = n;
    out.slope = sxy / sxx;
    out.intercept = my - out.slope * mx;
    double ss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double e = ys[i] - (out.slope * xs[i] + out.intercept);
        ss += e * e;
    }
    out.residual_rms = std::sqrt(ss / n);
    out.slope_stderr = n > 2 ? std::sqrt(ss / (n - 2) / sxx) : 0.0;
    return out;
}

/// Empirical quantile (linear interpolation), tau in [0, 1].
inline double quantile(std::vector<double> v, double tau) {
    if (v.empty()) throw InsufficientDataError("quantile of an empty set");
    std::sort(v.begin(), v.end());
    const double pos = tau * (v.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (pos - lo) * (v[hi] - v[lo]);
}

/// Linear quantile regression at level tau: minimizes the pinball loss over
/// (slope, intercept). For a fixed slope the optimal intercept is the
/// tau-quantile of the residuals, so only the slope is searched.
inline LineFit quantile_line(std::span<const double> xs, std::span<const double> ys, double tau) {
    if (xs.size() != ys.size()) throw PreconditionError("regression inputs differ in length");
    if (xs.size() < 3) throw InsufficientDataError("need at least three points for a quantile fit");
    const LineFit ols = least_squares(xs, ys);

    auto loss_at = [&](double slope, double& intercept) {
        std::vector<double> res(xs.size());
        for (std::size_t i = 0; i < xs.size(); ++i) res[i] = ys[i] - slope * xs[i];
        intercept = quantile(res, tau);
        double loss = 0.0;
        for (double e : res) {
            const double u = e - intercept;
            loss += u >= 0.0 ? tau * u : (tau - 1.0) * u;
        }
        return loss;
    };

    // coarse scan around the OLS slope, then golden-section refinement
    const double span_width = 4.0 * std::max(1.0, std::abs(ols.slope));
    double best = ols.slope, best_loss = 0.0, icpt = 0.0;
    best_loss = loss_at(best, icpt);
    const int grid = 400;
    for (int k = 0; k <= grid; ++k) {
        const double s = ols.slope - span_width + 2.0 * span_width * k / grid;
        const double l = loss_at(s, icpt);
        if (l < best_loss) {
            best_loss = l;
            best = s;
        }
    }
    double lo = best - 2.0 * span_width / grid, hi = best + 2.0 * span_width / grid;
    const double phi = 0.5 * (std::sqrt(5.0) - 1.0);
    double a = hi - phi * (hi - lo), b = lo + phi * (hi - lo);
    double la = loss_at(a, icpt), lb = loss_at(b, icpt);
    for (int it = 0; it < 100; ++it) {
        if (la < lb) {
            hi = b;
            b = a;
            lb = la;
            a = hi - phi * (hi - lo);
            la = loss_at(a, icpt);
        } else {
            lo = a;
            a = b;
            la = lb;
            b = lo + phi * (hi - lo);
            lb = loss_at(b, icpt);
        }
    }
    LineFit out;
    out.slope = 0.5 * (lo + hi);
    out.residual_rms = loss_at(out.slope, out.intercept) / xs.size();
    out.count = xs.size();
    return out;
}

/// Aitken delta-squared limit of a0, a1, a2. Returns a2 when the second
/// difference is negligible (sequence already converged).
inline double aitken(double a0, double a1, double a2) {
    const double d1 = a1 - a0, d2 = a2 - a1;
    const double den = d2 - d1;
    const double scale = std::max({std::abs(a0), std::abs(a1), std::abs(a2), 1e-300});
    if (std::abs(den) <= 1e-13 * scale || std::abs(d2) <= 1e-14 * scale) return a2;
    return a2 - d2 * d2 / den;
}

struct Rational {
    long num = 0;
    long den = 1;
    double value() const { return static_cast<double>(num) / static_cast<double>(den); }
};

/// Closest p/q to x with 1 <= q <= max_den.
inline Rational nearest_rational(double x, long max_den) {
    Rational best{std::lround(x), 1};
    double err = std::abs(x - best.value());
    for (long q = 2; q <= max_den; ++q) {
        const long p = std::lround(x * q);
        const double e = std::abs(x - static_cast<double>(p) / q);
        if (e < err - 1e-15) {
            err = e;
            best = {p, q};
        }
    }
    return best;
}

inline double mean(std::span<const double> v) {
    if (v.empty()) throw InsufficientDataError("mean of an empty set");
    return std::accumulate(v.begin(), v.end(), 0.0) / v.size();
}

}  // namespace thomlab::fit
