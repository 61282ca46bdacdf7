#pragma once

// Analyzers for the asymptotic behaviour of a gradient trajectory at its
// limit point: cone membership, characteristic and Lojasiewicz exponents,
// Bochnak-Lojasiewicz constant, E = E/r^l monitoring, and secant length.
//
// Sign convention: E > 0 and decreasing to 0 along the flow.

#include <algorithm>
#include <array>
#include <cmath>
#include <iterator>
#include <limits>
#include <random>
#include <set>
#include <span>
#include <vector>

#include "thomlab/field.hpp"
#include "thomlab/fit.hpp"
#include "thomlab/flow.hpp"
#include "thomlab/secant.hpp"

namespace thomlab {

struct WepsParams {
    double epsilon = 0.1;  // cone aperture
    double delta = 0.1;    // window exponent of W^eps_{l_i}
    double omega = 0.05;   // refinement exponent of W_{-omega,l}
    double alpha = 0.05;   // perturbation exponent in g = E + r^alpha

    void validate() const {
        if (!(epsilon > 0 && delta > 0 && omega > 0 && alpha > 0)) {
            throw PreconditionError("cone parameters must be positive");
        }
        if (!(alpha < 2.0 * omega)) throw PreconditionError("alpha must be smaller than 2*omega");
    }
};

enum class WepsLabel { outside, weps, weps_l, w_omega_l };

inline const char* to_string(WepsLabel l) {
    switch (l) {
    case WepsLabel::outside: return "outside";
    case WepsLabel::weps: return "W_eps";
    case WepsLabel::weps_l: return "W_eps_l";
    case WepsLabel::w_omega_l: return "W_-omega_l";
    }
    return "?";
}

struct Membership {
    WepsLabel label = WepsLabel::outside;
    int l_index = -1;  // into the candidate list, for weps_l / w_omega_l
};

namespace detail {

inline bool in_weps(const Sample& x, double eps) {
    return x.jet.value != 0.0 && x.radial.r > 0.0 && eps * x.radial.e_theta.norm() <= std::abs(x.radial.e_r);
}

inline double euler_ratio(const Sample& x) { return x.radial.r * x.radial.e_r / x.jet.value; }

// samples with r within `decades` decades of the final r
inline std::vector<std::size_t> final_window(const Trajectory& traj, double decades) {
    std::vector<std::size_t> idx;
    const double r_end = traj.back().radial.r;
    const double lim = r_end * std::pow(10.0, decades);
    std::size_t above = traj.size();  // closest sample beyond the limit
    for (std::size_t i = 0; i < traj.size(); ++i) {
        const double r = traj.samples[i].radial.r;
        if (!(r > 0.0)) continue;
        if (r <= lim) {
            idx.push_back(i);
        } else if (above == traj.size() || r < traj.samples[above].radial.r) {
            above = i;
        }
    }
    if (above != traj.size()) idx.insert(idx.begin(), above);
    return idx;
}

inline double decades_spanned(const Trajectory& traj, const std::vector<std::size_t>& idx) {
    if (idx.size() < 2) return 0.0;
    double lo = std::numeric_limits<double>::infinity(), hi = 0.0;
    for (auto i : idx) {
        lo = std::min(lo, traj.samples[i].radial.r);
        hi = std::max(hi, traj.samples[i].radial.r);
    }
    return std::log10(hi / lo);
}

}  // namespace detail

inline Membership classify(const Sample& x, const WepsParams& p, std::span<const double> exponents) {
    Membership m;
    if (!detail::in_weps(x, p.epsilon)) return m;
    m.label = WepsLabel::weps;
    const double q = detail::euler_ratio(x);
    const double window = std::pow(x.radial.r, p.delta);
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < exponents.size(); ++i) {
        const double d = std::abs(q - exponents[i]);
        if (d <= window && d < best) {
            best = d;
            m.l_index = static_cast<int>(i);
        }
    }
    if (m.l_index < 0) return m;
    m.label = WepsLabel::weps_l;
    if (std::pow(x.radial.r, -p.omega) * x.radial.e_theta.norm() <= std::abs(x.radial.e_r)) {
        m.label = WepsLabel::w_omega_l;
    }
    return m;
}

inline std::vector<Membership> weps_membership(const Trajectory& traj, const WepsParams& p,
                                               std::span<const double> exponents) {
    std::vector<Membership> out;
    out.reserve(traj.size());
    for (const Sample& x : traj.samples) out.push_back(classify(x, p, exponents));
    return out;
}

struct CharExponent {
    double l_hat = 0.0;
    fit::Rational nearest;
    bool off_rational = false;  // |l_hat - p/q| > 0.02 for every q <= 12
    std::vector<double> r;      // W^eps samples used
    std::vector<double> ratio;  // r E_r / E at those samples
    std::vector<double> extrapolations;
};

/// Limit of r E_r / E on W^eps samples, by Aitken extrapolation on a
/// geometric r-grid over the final two decades.
inline CharExponent estimate_char_exponent(const Trajectory& traj, const WepsParams& p) {
    CharExponent out;
    for (const Sample& x : traj.samples) {
        if (!detail::in_weps(x, p.epsilon)) continue;
        out.r.push_back(x.radial.r);
        out.ratio.push_back(detail::euler_ratio(x));
    }
    if (out.r.size() < 5) throw InsufficientDataError("too few W^eps samples for the characteristic exponent");
    const double r_min = *std::min_element(out.r.begin(), out.r.end());
    const double r_max = *std::max_element(out.r.begin(), out.r.end());
    if (std::log10(r_max / r_min) < 2.0 - 1e-9) {
        throw InsufficientDataError("W^eps samples span fewer than two decades");
    }
    // interpolate the ratio in log r on the W^eps samples
    std::vector<std::pair<double, double>> pts;
    for (std::size_t i = 0; i < out.r.size(); ++i) pts.emplace_back(std::log(out.r[i]), out.ratio[i]);
    std::sort(pts.begin(), pts.end());
    auto interp = [&](double lr) {
        auto it = std::lower_bound(pts.begin(), pts.end(), std::make_pair(lr, -std::numeric_limits<double>::infinity()));
        if (it == pts.begin()) return it->second;
        if (it == pts.end()) return pts.back().second;
        const auto& b = *it;
        const auto& a = *(it - 1);
        const double t = (lr - a.first) / (b.first - a.first);
        return a.second + t * (b.second - a.second);
    };
    const double base = std::log(r_min);
    const double step = std::log(10.0) / 4.0;
    std::vector<double> grid;
    for (int j = 0; j <= 8; ++j) grid.push_back(interp(base + j * step));
    for (int j = 0; j + 2 <= 8; ++j) out.extrapolations.push_back(fit::aitken(grid[j + 2], grid[j + 1], grid[j]));
    out.l_hat = fit::quantile(out.extrapolations, 0.5);
    out.nearest = fit::nearest_rational(out.l_hat, 12);
    out.off_rational = std::abs(out.l_hat - out.nearest.value()) > 0.02;
    return out;
}

struct LojExponent {
    double rho_hat = 0.5;
    double raw_rho = 0.5;
    double c_hat = 0.0;
    bool clipped = false;
    fit::LineFit line;
};

/// Slope of log|E'| against log E over the final two decades of r.
inline LojExponent estimate_loj_exponent(const Trajectory& traj, double decades = 2.0) {
    std::vector<double> lx, ly;
    std::vector<std::size_t> idx;
    for (auto i : detail::final_window(traj, decades))
        if (traj.samples[i].jet.value > 0.0) idx.push_back(i);
    if (idx.size() < 3 || detail::decades_spanned(traj, idx) < decades - 1e-9) {
        throw InsufficientDataError("need two decades of samples with E > 0");
    }
    for (auto i : idx) {
        lx.push_back(std::log(traj.samples[i].jet.value));
        ly.push_back(std::log(traj.samples[i].jet.gradient.norm()));
    }
    LojExponent out;
    out.line = fit::least_squares(lx, ly);
    out.raw_rho = out.line.slope;
    out.c_hat = std::exp(out.line.intercept);
    out.rho_hat = out.raw_rho;
    if (out.rho_hat < 0.5) {
        out.rho_hat = 0.5;
        out.clipped = true;
    } else if (out.rho_hat >= 1.0) {
        out.rho_hat = std::nextafter(1.0, 0.0);
        out.clipped = true;
    }
    return out;
}

struct BochnakReport {
    double c_bl = 0.0;           // min r|E'|/|E|
    double c_bl_envelope = 0.0;  // 5th percentile
    std::size_t samples = 0;
};

/// inf of r|E'|/|E| over samples within `decades` of the end (all if <= 0).
inline BochnakReport bochnak_check(const Trajectory& traj, double decades = 0.0) {
    std::vector<double> v;
    const auto idx = decades > 0.0 ? detail::final_window(traj, decades) : [&] {
        std::vector<std::size_t> all(traj.size());
        for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
        return all;
    }();
    for (auto i : idx) {
        const Sample& x = traj.samples[i];
        if (x.jet.value == 0.0 || x.radial.r == 0.0) continue;
        v.push_back(x.radial.r * x.jet.gradient.norm() / std::abs(x.jet.value));
    }
    if (v.empty()) throw InsufficientDataError("no samples with E != 0");
    BochnakReport out;
    out.c_bl = *std::min_element(v.begin(), v.end());
    out.c_bl_envelope = fit::quantile(v, 0.05);
    out.samples = v.size();
    return out;
}

inline SecantTrace secant_trace(const Trajectory& traj) {
    std::vector<Vec> disp;
    for (const Sample& x : traj.samples) {
        Vec d = x.u - traj.center;
        if (!(d.norm() > 0.0)) throw PreconditionError("trajectory sample at the limit point");
        disp.push_back(std::move(d));
    }
    return secant_trace(disp);
}

struct SigmaRatio {
    std::vector<double> r;
    std::vector<double> ratio;  // sigma(s) / r(s)
    double final_decade_mean = 0.0;
    double final_decade_max_dev = 0.0;

    /// max |ratio - 1| over samples with r <= r_max
    double max_deviation_below(double r_max) const {
        double m = 0.0;
        bool any = false;
        for (std::size_t i = 0; i < r.size(); ++i)
            if (r[i] <= r_max) {
                m = std::max(m, std::abs(ratio[i] - 1.0));
                any = true;
            }
        return any ? m : std::numeric_limits<double>::quiet_NaN();
    }
};

/// sigma(s) is the length from u(s) to the limit: the measured length to the
/// final sample plus the final straight-line distance |u_end|.
inline SigmaRatio sigma_ratio(const Trajectory& traj) {
    if (!traj.converged()) throw PreconditionError("trajectory did not converge");
    SigmaRatio out;
    const Sample& last = traj.back();
    const auto rem = remaining_lengths(traj);
    for (std::size_t i = 0; i < traj.size(); ++i) {
        const Sample& x = traj.samples[i];
        if (!(x.radial.r > 0.0)) continue;
        out.r.push_back(x.radial.r);
        out.ratio.push_back((rem[i] + last.radial.r) / x.radial.r);
    }
    const double r_end = last.radial.r;
    std::vector<double> tail;
    for (std::size_t i = 0; i < out.r.size(); ++i)
        if (out.r[i] <= 10.0 * r_end) tail.push_back(out.ratio[i]);
    out.final_decade_mean = fit::mean(tail);
    for (double v : tail) out.final_decade_max_dev = std::max(out.final_decade_max_dev, std::abs(v - 1.0));
    return out;
}

enum class ETrend { converges, diverges, vanishes };

inline const char* to_string(ETrend t) {
    switch (t) {
    case ETrend::converges: return "converges";
    case ETrend::diverges: return "diverges";
    case ETrend::vanishes: return "vanishes";
    }
    return "?";
}

struct EMonitor {
    double l = 0.0;
    std::vector<double> r, E, g, dEds, w_ratio;
    double a0_hat = std::numeric_limits<double>::quiet_NaN();
    double a0_rel_fluctuation = std::numeric_limits<double>::quiet_NaN();
    int monotone_violations = 0;   // increases of g beyond the rounding budget
    int sign_mismatches = 0;       // finite-difference dE/ds vs closed form
    int w_violations = 0;          // w_ratio > r^{2 omega}/2 on W_{-omega,l}
    int w_checked = 0;
    double log_slope = 0.0;        // d log E / d log r over the final two decades
    ETrend trend = ETrend::converges;
};

/// Closed form of dE/ds along the arclength flow for E = E/r^l.
inline double e_derivative(const Sample& x, double l) {
    const double r = x.radial.r;
    const double er = x.radial.e_r;
    const double th = x.radial.e_theta.norm();
    const double gn = x.jet.gradient.norm();
    return -(th * th + er * er - l * x.jet.value * er / r) / (gn * std::pow(r, l));
}

/// Tracks E = E/r^l and g = E + r^alpha over samples with r <= r_window.
inline EMonitor monitor_E(const Trajectory& traj, double l, const WepsParams& p,
                          double r_window = std::numeric_limits<double>::infinity()) {
    if (!(l > 0.0)) throw PreconditionError("exponent l must be positive");
    std::vector<const Sample*> used;
    for (const Sample& x : traj.samples)
        if (x.radial.r > 0.0 && x.radial.r <= r_window && x.jet.value != 0.0) used.push_back(&x);
    if (used.size() < 2) throw InsufficientDataError("monitor window holds fewer than two samples");

    EMonitor m;
    m.l = l;
    const std::array<double, 1> ls{l};
    for (const Sample* x : used) {
        const double r = x->radial.r;
        const double e = x->jet.value / std::pow(r, l);
        m.r.push_back(r);
        m.E.push_back(e);
        m.g.push_back(e + std::pow(r, p.alpha));
        m.dEds.push_back(e_derivative(*x, l));
        const double w = std::abs(1.0 - l * x->jet.value / (r * x->radial.e_r));
        m.w_ratio.push_back(w);
        if (classify(*x, p, ls).label == WepsLabel::w_omega_l) {
            ++m.w_checked;
            if (w > 0.5 * std::pow(r, 2.0 * p.omega)) ++m.w_violations;
        }
    }
    for (std::size_t i = 1; i < m.g.size(); ++i) {
        const double budget = 1e-12 * std::max(std::abs(m.g[i]), std::abs(m.g[i - 1]));
        if (m.g[i] > m.g[i - 1] + budget) ++m.monotone_violations;
        const double fd = m.E[i] - m.E[i - 1];
        const double noise = 1e-12 * std::max(std::abs(m.E[i]), std::abs(m.E[i - 1]));
        const double cf = 0.5 * (m.dEds[i] + m.dEds[i - 1]);
        if (std::abs(fd) > noise && std::abs(cf) > 0.0 && (fd > 0) != (cf > 0)) {
            // closed form and difference must agree in sign where both are resolved
            const double ds = used[i]->s - used[i - 1]->s;
            if (std::abs(cf * ds) > noise) ++m.sign_mismatches;
        }
    }
    const double r_end = m.r.back();
    std::vector<double> tail, lx, ly;
    for (std::size_t i = 0; i < m.r.size(); ++i) {
        if (m.r[i] <= 10.0 * r_end) tail.push_back(m.E[i]);
        if (m.r[i] <= 100.0 * r_end && m.E[i] > 0.0) {
            lx.push_back(std::log(m.r[i]));
            ly.push_back(std::log(m.E[i]));
        }
    }
    if (lx.size() >= 3) {
        try {
            m.log_slope = fit::least_squares(lx, ly).slope;
        } catch (const InsufficientDataError&) {
            m.log_slope = 0.0;
        }
    }
    if (m.log_slope < -0.05) {
        m.trend = ETrend::diverges;
    } else if (m.log_slope > 0.05) {
        m.trend = ETrend::vanishes;
    }
    if (m.trend == ETrend::converges) {
        m.a0_hat = fit::mean(tail);
        const auto [lo, hi] = std::minmax_element(tail.begin(), tail.end());
        m.a0_rel_fluctuation = (*hi - *lo) / std::abs(m.a0_hat);
    }
    return m;
}

struct CriticalValue {
    double a0 = std::numeric_limits<double>::quiet_NaN();
    std::vector<double> r, theta_ratio;  // |E_theta| / |E_r|
    double slope = 0.0;                  // d log ratio / d log r, final two decades
    bool decaying = false;
};

inline CriticalValue asymptotic_critical_value(const Trajectory& traj, double l) {
    if (!traj.converged()) throw PreconditionError("trajectory did not converge");
    CriticalValue out;
    std::vector<bool> resolved;
    for (const Sample& x : traj.samples) {
        if (!(x.radial.r > 0.0) || x.radial.e_r == 0.0) continue;
        out.r.push_back(x.radial.r);
        out.theta_ratio.push_back(x.radial.e_theta.norm() / std::abs(x.radial.e_r));
        // the integrator leaves transverse errors of order rel_tol * r, which
        // stiff explicit steps do not damp; angular parts below that are noise
        const double noise = 100.0 * traj.rel_tol * x.radial.r * x.jet.hessian.norm();
        resolved.push_back(x.radial.e_theta.norm() > noise);
    }
    if (out.r.size() < 2) throw InsufficientDataError("too few samples with E_r != 0");
    const double r_end = out.r.back();
    std::vector<double> lx, ly, tail;
    for (const Sample& x : traj.samples)
        if (x.radial.r > 0.0 && x.radial.r <= 10.0 * r_end) tail.push_back(x.jet.value / std::pow(x.radial.r, l));
    for (std::size_t i = 0; i < out.r.size(); ++i) {
        if (out.r[i] <= 100.0 * r_end && out.theta_ratio[i] > 1e-13 && resolved[i]) {
            lx.push_back(std::log(out.r[i]));
            ly.push_back(std::log(out.theta_ratio[i]));
        }
    }
    if (lx.size() < 4) {
        // ratio already at rounding level
        out.decaying = true;
    } else {
        out.slope = fit::least_squares(lx, ly).slope;
        out.decaying = out.slope > 0.0;
    }
    out.a0 = fit::mean(tail);
    return out;
}

/// Uniform directions, log-uniform radii in [radius * 1e-3, radius).
inline std::vector<Vec> random_cloud(int dim, std::size_t count, double radius, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> unif(std::log(radius * 1e-3), std::log(radius));
    std::vector<Vec> pts;
    pts.reserve(count);
    while (pts.size() < count) {
        Vec v(dim);
        for (int i = 0; i < dim; ++i) v[i] = normal(rng);
        const double nv = v.norm();
        if (nv == 0.0) continue;
        pts.push_back(v / nv * std::exp(unif(rng)));
    }
    return pts;
}

struct LevelGapProbe {
    bool degenerate_exact = false;  // |E - a| vanishes on the whole cloud
    std::size_t restricted = 0;
    double rho_a = std::numeric_limits<double>::quiet_NaN();
    double c = std::numeric_limits<double>::quiet_NaN();
    bool violation = false;  // fitted rho_a >= 1
};

/// Fits r|E'| >= c |E - a|^{rho_a} on the lower 5% envelope over cloud
/// points with |E_r| <= r^eta |E'| and |E - a| <= c_a, where E = E/r^l.
inline LevelGapProbe level_gap_probe(const AnalyticField& field, double l, double a, double eta,
                                std::span<const Vec> cloud, double c_a = 1.0) {
    FieldWorkspace ws(field);
    const int n = field.dim();
    LevelGapProbe out;
    std::vector<double> lx, ly;
    std::size_t near_a = 0, exact = 0;
    Vec g(n);
    for (const Vec& u : cloud) {
        const double r = u.norm();
        if (!(r > 0.0)) continue;
        const double e = ws.value_gradient(as_span(u), {g.data(), static_cast<std::size_t>(n)});
        const double rl = std::pow(r, l);
        const double E = e / rl;
        const double dev = std::abs(E - a);
        if (dev > c_a) continue;
        ++near_a;
        if (dev <= 1e-12 * std::max(1.0, std::abs(a))) {
            ++exact;
            continue;
        }
        // E' = E'/r^l - l E u / r^{l+2}
        const Vec dE = g / rl - (l * e / (rl * r * r)) * u;
        const double dE_r = dE.dot(u) / r;
        if (!(std::abs(dE_r) <= std::pow(r, eta) * dE.norm())) continue;
        const double lhs = r * dE.norm();
        if (!(lhs > 0.0)) continue;
        lx.push_back(std::log(dev));
        ly.push_back(std::log(lhs));
    }
    if (near_a > 0 && exact == near_a) {
        out.degenerate_exact = true;
        return out;
    }
    out.restricted = lx.size();
    if (lx.size() < 8) throw InsufficientDataError("restricted set for the critical-value probe is empty");
    const auto line = fit::quantile_line(lx, ly, 0.05);
    out.rho_a = line.slope;
    out.c = std::exp(line.intercept);
    out.violation = !(out.rho_a < 1.0);
    return out;
}

struct PuiseuxFit {
    bool identically_zero = false;
    double l = std::numeric_limits<double>::quiet_NaN();
    double a_l = std::numeric_limits<double>::quiet_NaN();
    fit::Rational l_rational;
    double radial_consistency = std::numeric_limits<double>::quiet_NaN();  // rel. error of E_r vs l a_l r^{l-1}
};

/// gamma(t) = sum_k coeffs[k] t^(k+1); gamma(0) = 0.
inline Vec curve_point(std::span<const Vec> coeffs, double t) {
    Vec p = Vec::Zero(coeffs.front().size());
    double tk = t;
    for (const Vec& c : coeffs) {
        p += tk * c;
        tk *= t;
    }
    return p;
}

inline PuiseuxFit puiseux_fit(const AnalyticField& field, std::span<const Vec> coeffs, std::span<const double> r_samples) {
    if (coeffs.empty()) throw PreconditionError("curve needs at least one coefficient");
    if (r_samples.size() < 3) throw InsufficientDataError("need at least three radii");
    FieldWorkspace ws(field);
    const int n = field.dim();
    std::vector<double> lr, le, er, rs;
    std::vector<double> signs;
    bool all_zero = true;
    Vec g(n);
    for (double r : r_samples) {
        // solve |gamma(t)| = r by bracketing and bisection
        double lo = 0.0, hi = r;
        int guard = 0;
        while (curve_point(coeffs, hi).norm() < r && guard++ < 200) hi *= 2.0;
        for (int it = 0; it < 200; ++it) {
            const double mid = 0.5 * (lo + hi);
            (curve_point(coeffs, mid).norm() < r ? lo : hi) = mid;
        }
        const Vec p = curve_point(coeffs, 0.5 * (lo + hi));
        const double e = ws.value_gradient(as_span(p), {g.data(), static_cast<std::size_t>(n)});
        const double pr = p.norm();
        const double noise = 1e-14 * g.norm() * pr;
        if (std::abs(e) > noise && e != 0.0) all_zero = false;
        rs.push_back(pr);
        lr.push_back(std::log(pr));
        le.push_back(std::log(std::abs(e) > 0 ? std::abs(e) : 1e-300));
        signs.push_back(e >= 0 ? 1.0 : -1.0);
        er.push_back(g.dot(p) / pr);
    }
    PuiseuxFit out;
    if (all_zero) {
        out.identically_zero = true;
        return out;
    }
    const auto line = fit::least_squares(lr, le);
    out.l = line.slope;
    out.l_rational = fit::nearest_rational(out.l, 12);
    // coefficient read off at the smallest radius, where higher terms matter least
    const std::size_t i_min = std::min_element(rs.begin(), rs.end()) - rs.begin();
    const double l_use = std::abs(out.l - out.l_rational.value()) <= 0.02 ? out.l_rational.value() : out.l;
    out.a_l = signs[i_min] * std::exp(le[i_min] - l_use * lr[i_min]);
    const double pred = l_use * out.a_l * std::pow(rs[i_min], l_use - 1.0);
    out.radial_consistency = std::abs(er[i_min] - pred) / std::max(std::abs(pred), 1e-300);
    return out;
}

struct CriticalDistance {
    double c = std::numeric_limits<double>::infinity();  // min |E|^{1/alpha} / d(u, S0)
    std::size_t used = 0;
    std::size_t skipped = 0;   // polish failures
    std::size_t excluded = 0;  // samples off W^eps
};

/// Newton polish from u to a nearby critical point. Returns false on failure.
inline bool polish_critical(const AnalyticField& field, const Vec& u, Vec& out, int max_iter = 400) {
    FieldWorkspace ws(field);
    Vec v = u;
    const double scale = u.norm();
    for (int it = 0; it < max_iter; ++it) {
        const Jet2 j = ws.jet2(as_span(v));
        if (j.gradient.norm() == 0.0) {
            out = v;
            return true;
        }
        const Vec step = j.hessian.completeOrthogonalDecomposition().solve(j.gradient);
        if (!step.allFinite()) return false;
        v -= step;
        if (!v.allFinite() || v.norm() > 10.0 * std::max(scale, 1.0)) return false;
        if (step.norm() <= 1e-13 * std::max(scale, 1e-300)) {
            out = v;
            return true;
        }
    }
    return false;
}

inline CriticalDistance critical_distance_check(const AnalyticField& field, const Trajectory& traj, double alpha,
                                                const WepsParams& p = {}) {
    if (!(alpha > 0.0)) throw PreconditionError("alpha must be positive");
    CriticalDistance out;
    for (const Sample& x : traj.samples) {
        if (!detail::in_weps(x, p.epsilon)) {
            ++out.excluded;
            continue;
        }
        Vec crit;
        if (!polish_critical(field, x.u, crit)) {
            ++out.skipped;
            continue;
        }
        const double d = (x.u - crit).norm();
        if (!(d > 0.0)) continue;
        out.c = std::min(out.c, std::pow(std::abs(x.jet.value), 1.0 / alpha) / d);
        ++out.used;
    }
    return out;
}

/// min over W^eps samples of |E| / r^{1/(1-rho)}.
inline double weps_value_constant(const Trajectory& traj, double rho, const WepsParams& p) {
    double c = std::numeric_limits<double>::infinity();
    for (const Sample& x : traj.samples)
        if (detail::in_weps(x, p.epsilon)) c = std::min(c, std::abs(x.jet.value) / std::pow(x.radial.r, 1.0 / (1.0 - rho)));
    return c;
}

struct DecreaseCheck {
    std::size_t checked = 0;
    std::size_t violations = 0;  // closed-form dE/ds >= 0 outside the excluded sets
};

/// E = E/r^l must decrease outside W^eps_{l_i} (l_i < l) and W_{-omega,l}.
inline DecreaseCheck decrease_check(const Trajectory& traj, double l, std::span<const double> exponents,
                                const WepsParams& p) {
    DecreaseCheck out;
    std::vector<double> ext(exponents.begin(), exponents.end());
    for (const Sample& x : traj.samples) {
        if (!(x.radial.r > 0.0) || x.jet.value == 0.0) continue;
        const Membership m = classify(x, p, ext);
        if (m.label == WepsLabel::weps_l || m.label == WepsLabel::w_omega_l) {
            const double li = ext[m.l_index];
            if (li < l - 1e-9) continue;
            if (std::abs(li - l) <= 1e-9 && m.label == WepsLabel::w_omega_l) continue;
        }
        ++out.checked;
        if (!(e_derivative(x, l) < 0.0)) ++out.violations;
    }
    return out;
}

struct ExponentSelection {
    bool found = false;
    double l = std::numeric_limits<double>::quiet_NaN();
    double r_star = 0.0;
    int decades = 0;
    double c1 = 0.0, C1 = 0.0;  // bounds of E/r^l below r_star
};

/// Finds the unique exponent whose W^eps_l is visited in every decade below r*.
inline ExponentSelection select_exponent(const Trajectory& traj, std::span<const double> exponents, const WepsParams& p) {
    ExponentSelection out;
    std::vector<double> ext(exponents.begin(), exponents.end());
    if (ext.empty()) return out;
    const double r_end = traj.back().radial.r;
    if (!(r_end > 0.0)) return out;
    const int lowest = static_cast<int>(std::floor(std::log10(r_end) + 1e-12));
    std::set<int> common;
    for (std::size_t i = 0; i < ext.size(); ++i) common.insert(static_cast<int>(i));
    int d = lowest;
    int good = 0;
    std::set<int> last_good;
    for (;; ++d) {
        const double lo = std::pow(10.0, d), hi = std::pow(10.0, d + 1);
        std::set<int> here;
        bool any = false;
        for (const Sample& x : traj.samples) {
            if (x.radial.r < lo || x.radial.r >= hi) continue;
            any = true;
            const Membership m = classify(x, p, ext);
            if (m.l_index >= 0) here.insert(m.l_index);
        }
        if (!any) break;
        std::set<int> next;
        std::set_intersection(common.begin(), common.end(), here.begin(), here.end(), std::inserter(next, next.begin()));
        if (next.size() != 1) break;
        common = next;
        last_good = next;
        ++good;
    }
    if (good == 0) return out;
    out.found = true;
    out.decades = good;
    out.l = ext[*last_good.begin()];
    out.r_star = std::pow(10.0, lowest + good);
    out.c1 = std::numeric_limits<double>::infinity();
    out.C1 = 0.0;
    for (const Sample& x : traj.samples) {
        if (!(x.radial.r > 0.0) || x.radial.r >= out.r_star) continue;
        const double e = x.jet.value / std::pow(x.radial.r, out.l);
        out.c1 = std::min(out.c1, e);
        out.C1 = std::max(out.C1, e);
    }
    return out;
}

struct ExponentReport {
    double rho_hat = 0.5;
    double c_hat = 0.0;
    double l_hat = 0.0;
    std::vector<double> L_candidates;
    double c_bl = 0.0;
    double bound_slack = 0.0;  // 1/(1 - rho_hat) - l_hat
};

}  // namespace thomlab
