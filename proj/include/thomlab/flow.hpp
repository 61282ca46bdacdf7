#pragma once

// Negative gradient flow, parameterized by arclength (du/ds = -E'/|E'|) or by
// time (du/dt = -E'), integrated with the Dormand-Prince 5(4) pair under PI
// step-size control. Samples are thinned to a geometric grid in r = |u - center|.

#include <algorithm>
#include <array>
#include <cmath>
#include <iomanip>
#include <limits>
#include <ostream>
#include <string>
#include <vector>

#include "thomlab/field.hpp"

namespace thomlab {

enum class StopReason { grad_floor, r_floor, max_steps, stalled };
enum class Parameterization { arclength, time };

inline const char* to_string(StopReason r) {
    switch (r) {
    case StopReason::grad_floor: return "grad_floor";
    case StopReason::r_floor: return "r_floor";
    case StopReason::max_steps: return "max_steps";
    case StopReason::stalled: return "stalled";
    }
    return "unknown";
}

struct FlowSpec {
    AnalyticField field;
    Vec start;
    double grad_floor = 1e-12;
    double r_floor = 1e-6;
    long max_steps = 50'000'000;
    double rel_tol = 1e-10;
    double abs_tol = 1e-18;
    double thinning = 0.95;  // record when r drops by this factor
    Parameterization param = Parameterization::arclength;
    Vec center;              // limit point used for r; empty means the origin
    double initial_step = 1e-3;
};

struct Sample {
    double s = 0.0;      // flow parameter (arclength or time)
    double sigma = 0.0;   // cumulative chord length
    double dsigma = 0.0;  // chord length since the previous sample
    Vec u;
    Jet2 jet;
    RadialSplit radial;  // relative to the center
};

struct Trajectory {
    AnalyticField field;
    Vec center;
    std::vector<Sample> samples;
    StopReason stop_reason = StopReason::max_steps;
    Parameterization param = Parameterization::arclength;
    long accepted_steps = 0;
    long rejected_steps = 0;
    double max_dissipation_defect = 0.0;  // relative, per accepted step
    double max_speed_defect = 0.0;        // | |du/ds| - 1 | over accepted steps
    double rel_tol = 0.0;

    bool converged() const {
        return stop_reason == StopReason::r_floor || stop_reason == StopReason::grad_floor;
    }
    const Sample& back() const { return samples.back(); }
    std::size_t size() const { return samples.size(); }
};

namespace detail {

// Dormand-Prince 5(4) tableau.
struct DoPri {
    static constexpr std::array<double, 7> c{0.0, 1.0 / 5, 3.0 / 10, 4.0 / 5, 8.0 / 9, 1.0, 1.0};
    static constexpr double a[7][6] = {
        {0, 0, 0, 0, 0, 0},
        {1.0 / 5, 0, 0, 0, 0, 0},
        {3.0 / 40, 9.0 / 40, 0, 0, 0, 0},
        {44.0 / 45, -56.0 / 15, 32.0 / 9, 0, 0, 0},
        {19372.0 / 6561, -25360.0 / 2187, 64448.0 / 6561, -212.0 / 729, 0, 0},
        {9017.0 / 3168, -355.0 / 33, 46732.0 / 5247, 49.0 / 176, -5103.0 / 18656, 0},
        {35.0 / 384, 0, 500.0 / 1113, 125.0 / 192, -2187.0 / 6784, 11.0 / 84},
    };
    static constexpr std::array<double, 7> b{35.0 / 384, 0, 500.0 / 1113, 125.0 / 192, -2187.0 / 6784, 11.0 / 84, 0};
    // b - bhat
    static constexpr std::array<double, 7> e{71.0 / 57600, 0, -71.0 / 16695, 71.0 / 1920, -17253.0 / 339200,
                                             22.0 / 525, -1.0 / 40};
};

// Chord length of one step, summed over sub-chords of the cubic Hermite
// interpolant through (u0, d0) and (u1, d1).
inline double step_chord_length(const Vec& u0, const Vec& d0, const Vec& u1, const Vec& d1, double h) {
    constexpr int pieces = 8;
    double len = 0.0;
    Vec prev = u0, cur(u0.size());
    for (int i = 1; i <= pieces; ++i) {
        const double t = static_cast<double>(i) / pieces;
        const double h00 = 2 * t * t * t - 3 * t * t + 1, h10 = t * t * t - 2 * t * t + t;
        const double h01 = -2 * t * t * t + 3 * t * t, h11 = t * t * t - t * t;
        cur = h00 * u0 + (h10 * h) * d0 + h01 * u1 + (h11 * h) * d1;
        len += (cur - prev).norm();
        prev.swap(cur);
    }
    return len;
}

inline Sample make_sample(FieldWorkspace& ws, const Vec& u, const Vec& center, double s, double sigma,
                          double dsigma = 0.0) {
    Sample smp;
    smp.s = s;
    smp.sigma = sigma;
    smp.dsigma = dsigma;
    smp.u = u;
    smp.jet = ws.jet2(as_span(u));
    const Vec rel = u - center;
    if (rel.norm() > 0.0) {
        smp.radial = radial_angular(smp.jet, rel);
    } else {
        smp.radial.r = 0.0;
        smp.radial.e_r = 0.0;
        smp.radial.e_theta = smp.jet.gradient;
    }
    return smp;
}

}  // namespace detail

inline Trajectory integrate(const FlowSpec& setup) {
    const AnalyticField& field = setup.field;
    const int n = field.dim();
    if (setup.start.size() != n) throw PreconditionError("start point dimension does not match the field");
    if (!(setup.grad_floor > 0.0) || !(setup.r_floor > 0.0)) throw PreconditionError("floors must be positive");
    if (!(setup.rel_tol > 0.0 && setup.rel_tol <= 1e-3)) throw PreconditionError("rel_tol must lie in (0, 1e-3]");
    if (!(setup.thinning > 0.0 && setup.thinning < 1.0)) throw PreconditionError("thinning ratio must lie in (0, 1)");
    const Vec center = setup.center.size() == n ? setup.center : Vec::Zero(n);
    const bool arclength = setup.param == Parameterization::arclength;

    FieldWorkspace ws(field);
    using detail::DoPri;
    std::array<Vec, 7> k;
    std::array<double, 7> gnorm{};
    for (auto& v : k) v.resize(n);
    Vec grad(n), tmp(n), unew(n), err(n);

    // evaluates the flow direction into out; returns (value, |grad|)
    auto rhs = [&](const Vec& u, Vec& out, double& gn) {
        const double val = ws.value_gradient(as_span(u), {grad.data(), static_cast<std::size_t>(n)});
        gn = grad.norm();
        if (gn == 0.0) {
            out.setZero();
        } else if (arclength) {
            out = -grad / gn;
        } else {
            out = -grad;
        }
        return val;
    };

    Trajectory traj;
    traj.field = field;
    traj.center = center;
    traj.param = setup.param;
    traj.rel_tol = setup.rel_tol;

    Vec u = setup.start;
    double e_cur = rhs(u, k[0], gnorm[0]);
    if (!(gnorm[0] > setup.grad_floor)) throw PreconditionError("start point is (numerically) critical");
    double s = 0.0, sigma = 0.0, seg = 0.0;
    traj.samples.push_back(detail::make_sample(ws, u, center, s, sigma));
    double r_last = (u - center).norm();
    if (r_last <= setup.r_floor) {
        traj.stop_reason = StopReason::r_floor;
        return traj;
    }

    double h = setup.initial_step;
    if (arclength) h = std::min(h, (1.0 - setup.thinning) * r_last);
    double err_prev = 1e-4;
    bool last_rejected = false;
    long steps = 0;

    for (;;) {
        if (steps >= setup.max_steps) {
            traj.stop_reason = StopReason::max_steps;
            break;
        }
        const double r_cur = (u - center).norm();
        // slightly above one thinning interval, so a unit-speed radial step crosses it
        if (arclength) h = std::min(h, 1.001 * (1.0 - setup.thinning) * r_cur);
        if (h < 1e-15 * std::max(r_cur, 1e-300) || h < std::numeric_limits<double>::min()) {
            traj.stop_reason = StopReason::stalled;
            break;
        }
        ++steps;

        double e_new = 0.0;
        for (int st = 1; st < 7; ++st) {
            tmp = u;
            for (int j = 0; j < st; ++j)
                if (DoPri::a[st][j] != 0.0) tmp.noalias() += (h * DoPri::a[st][j]) * k[j];
            if (st == 6) unew = tmp;
            const double val = rhs(tmp, k[st], gnorm[st]);
            if (st == 6) e_new = val;
        }
        err.setZero();
        for (int j = 0; j < 7; ++j)
            if (DoPri::e[j] != 0.0) err.noalias() += (h * DoPri::e[j]) * k[j];
        const double scale =
            setup.abs_tol + setup.rel_tol * std::max((u - center).norm(), (unew - center).norm());
        double en = err.norm() / scale;
        if (!std::isfinite(en)) en = 1e10;

        if (en <= 1.0) {
            // dissipation identity: dE/ds = -|E'| (arclength) or -|E'|^2 (time)
            double quad = 0.0;
            for (int j = 0; j < 7; ++j) quad += DoPri::b[j] * (arclength ? gnorm[j] : gnorm[j] * gnorm[j]);
            quad *= -h;
            const double de = e_new - e_cur;
            if (quad != 0.0) {
                traj.max_dissipation_defect = std::max(traj.max_dissipation_defect, std::abs(de - quad) / std::abs(quad));
            }
            if (arclength && gnorm[6] > 0.0) {
                traj.max_speed_defect = std::max(traj.max_speed_defect, std::abs(k[6].norm() - 1.0));
            }
            const double chord = detail::step_chord_length(u, k[0], unew, k[6], h);
            sigma += chord;
            seg += chord;
            s += h;
            u = unew;
            e_cur = e_new;
            k[0] = k[6];
            gnorm[0] = gnorm[6];
            ++traj.accepted_steps;

            const double r_new = (u - center).norm();
            const bool at_r_floor = r_new <= setup.r_floor;
            const bool at_grad_floor = gnorm[0] <= setup.grad_floor;
            if (at_r_floor || at_grad_floor || r_new <= setup.thinning * r_last) {
                traj.samples.push_back(detail::make_sample(ws, u, center, s, sigma, seg));
                seg = 0.0;
                r_last = r_new;
            }
            if (at_r_floor || at_grad_floor) {
                traj.stop_reason = at_r_floor ? StopReason::r_floor : StopReason::grad_floor;
                break;
            }
            // PI controller (Hairer & Wanner constants)
            constexpr double beta = 0.04, alpha = 0.2 - 0.75 * beta;
            double fac = 0.9 * std::pow(std::max(en, 1e-10), -alpha) * std::pow(err_prev, beta);
            fac = std::clamp(fac, 0.2, last_rejected ? 1.0 : 5.0);
            h *= fac;
            err_prev = std::max(en, 1e-4);
            last_rejected = false;
        } else {
            ++traj.rejected_steps;
            h *= std::max(0.2, 0.9 * std::pow(en, -0.2));
            last_rejected = true;
        }
    }
    if (traj.samples.size() == 1 || (traj.samples.back().u - u).norm() > 0.0) {
        traj.samples.push_back(detail::make_sample(ws, u, center, s, sigma, seg));
    }
    return traj;
}

/// Builds a trajectory object from an explicit list of points (parameter =
/// cumulative chord length). Used to analyze transformed paths.
inline Trajectory trajectory_from_points(const AnalyticField& field, const std::vector<Vec>& points,
                                         const Vec& center = Vec()) {
    if (points.empty()) throw InsufficientDataError("no points");
    const int n = field.dim();
    Trajectory traj;
    traj.field = field;
    traj.center = center.size() == n ? center : Vec::Zero(n);
    traj.stop_reason = StopReason::r_floor;
    FieldWorkspace ws(field);
    double sigma = 0.0;
    for (std::size_t i = 0; i < points.size(); ++i) {
        const double d = i > 0 ? (points[i] - points[i - 1]).norm() : 0.0;
        sigma += d;
        traj.samples.push_back(detail::make_sample(ws, points[i], traj.center, sigma, sigma, d));
    }
    return traj;
}

/// Cubic Hermite interpolation of the position at parameter s (arclength mode).
inline Vec position_at(const Trajectory& traj, double s) {
    const auto& sm = traj.samples;
    if (sm.empty()) throw InsufficientDataError("empty trajectory");
    if (s <= sm.front().s) return sm.front().u;
    if (s >= sm.back().s) return sm.back().u;
    auto it = std::upper_bound(sm.begin(), sm.end(), s, [](double v, const Sample& x) { return v < x.s; });
    const Sample& b = *it;
    const Sample& a = *(it - 1);
    const double h = b.s - a.s;
    const double t = (s - a.s) / h;
    auto dir = [&](const Sample& x) {
        const double g = x.jet.gradient.norm();
        return Vec(g > 0 ? Vec(-x.jet.gradient / g) : Vec::Zero(x.u.size()));
    };
    const double h00 = 2 * t * t * t - 3 * t * t + 1, h10 = t * t * t - 2 * t * t + t;
    const double h01 = -2 * t * t * t + 3 * t * t, h11 = t * t * t - t * t;
    return h00 * a.u + h10 * h * dir(a) + h01 * b.u + h11 * h * dir(b);
}

/// CSV columns: s, sigma, r, E_value, grad_norm, e_r, e_theta_norm, u1..un.
inline void write_csv(std::ostream& os, const Trajectory& traj) {
    const int n = traj.field.dim();
    os << "s,sigma,r,E_value,grad_norm,e_r,e_theta_norm";
    for (int i = 0; i < n; ++i) os << ",u" << (i + 1);
    os << '\n';
    os << std::setprecision(17);
    for (const Sample& x : traj.samples) {
        os << x.s << ',' << x.sigma << ',' << x.radial.r << ',' << x.jet.value << ',' << x.jet.gradient.norm() << ','
           << x.radial.e_r << ',' << x.radial.e_theta.norm();
        for (int i = 0; i < n; ++i) os << ',' << x.u[i];
        os << '\n';
    }
}

/// Length from each sample to the last one, summed from the per-sample
/// increments so that short tails keep full relative precision.
inline std::vector<double> remaining_lengths(const Trajectory& traj) {
    std::vector<double> rem(traj.size(), 0.0);
    for (std::size_t i = traj.size(); i-- > 1;) rem[i - 1] = rem[i] + traj.samples[i].dsigma;
    return rem;
}

struct LengthMargin {
    std::vector<double> slack;  // (bound - remaining) / bound, per sample except the last
    double worst_slack = std::numeric_limits<double>::infinity();
    std::size_t worst_index = 0;
};

/// Compares the remaining trajectory length with the Lojasiewicz bound
/// (|E(u_i)|^{1-rho} - |E(u_end)|^{1-rho}) / (c (1 - rho)), where c is the
/// constant in |E'| >= c |E|^rho.
inline LengthMargin remaining_length_check(const Trajectory& traj, double rho, double c) {
    if (!traj.converged()) throw PreconditionError("trajectory did not converge");
    if (!(rho >= 0.5 && rho < 1.0)) throw PreconditionError("rho must lie in [1/2, 1)");
    if (!(c > 0.0)) throw PreconditionError("Lojasiewicz constant must be positive");
    LengthMargin out;
    const Sample& last = traj.back();
    const double tail_pow = std::pow(std::abs(last.jet.value), 1.0 - rho);
    const auto rem = remaining_lengths(traj);
    for (std::size_t i = 0; i + 1 < traj.size(); ++i) {
        const Sample& x = traj.samples[i];
        const double remaining = rem[i];
        const double bound = (std::pow(std::abs(x.jet.value), 1.0 - rho) - tail_pow) / (c * (1.0 - rho));
        const double slack = bound > 0.0 ? (bound - remaining) / bound : (remaining <= 0.0 ? 0.0 : -1.0);
        out.slack.push_back(slack);
        if (slack < out.worst_slack) {
            out.worst_slack = slack;
            out.worst_index = i;
        }
    }
    if (out.slack.empty()) out.worst_slack = 0.0;
    return out;
}

}  // namespace thomlab
