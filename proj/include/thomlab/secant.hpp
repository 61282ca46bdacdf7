#pragma once

// Spherical projection of a path converging to a point: great-circle length,
// per-decade tail lengths in r, and the Cauchy gap over the last decade.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <vector>

#include "thomlab/field.hpp"

namespace thomlab {

struct DecadeLength {
    double r_hi = 0.0;  // decade covers [r_lo, r_hi)
    double r_lo = 0.0;
    double length = 0.0;        // great-circle
    double chord_length = 0.0;  // sum of chords
    std::size_t increments = 0;
};

struct SecantTrace {
    std::vector<double> r;
    std::vector<Vec> points;              // unit vectors
    std::vector<double> spherical_length;  // cumulative, per point
    double total_length = 0.0;
    double total_chord = 0.0;
    std::vector<DecadeLength> tail_lengths;  // complete decades, decreasing r
    double cauchy_gap = 0.0;                 // max pairwise angle over the final decade
};

/// Inner product used to normalize and compare secant directions.
using InnerProduct = std::function<double(const Vec&, const Vec&)>;

inline double euclidean_inner(const Vec& a, const Vec& b) { return a.dot(b); }

namespace detail {

// Angle between unit vectors, 2 asin(|a-b|/2): the same quantity as
// acos(<a,b>) without the cancellation near 0.
inline double unit_angle(const Vec& a, const Vec& b, const InnerProduct& ip) {
    const Vec d = a - b;
    const double chord = std::sqrt(std::max(0.0, ip(d, d)));
    return 2.0 * std::asin(std::clamp(0.5 * chord, 0.0, 1.0));
}

}  // namespace detail

/// Builds the secant trace of the displacements `disp` (each nonzero).
inline SecantTrace secant_trace(const std::vector<Vec>& disp, const InnerProduct& ip = euclidean_inner) {
    if (disp.size() < 2) throw InsufficientDataError("secant trace needs at least two samples");
    SecantTrace st;
    for (std::size_t i = 0; i < disp.size(); ++i) {
        const double r = std::sqrt(std::max(0.0, ip(disp[i], disp[i])));
        if (!(r > 0.0)) throw PreconditionError("sample " + std::to_string(i) + " lies at the limit point");
        st.r.push_back(r);
        st.points.push_back(disp[i] / r);
    }
    st.spherical_length.push_back(0.0);
    std::vector<double> inc(disp.size(), 0.0), chord(disp.size(), 0.0);
    for (std::size_t i = 1; i < disp.size(); ++i) {
        inc[i] = detail::unit_angle(st.points[i - 1], st.points[i], ip);
        const Vec d = st.points[i] - st.points[i - 1];
        chord[i] = std::sqrt(std::max(0.0, ip(d, d)));
        st.total_length += inc[i];
        st.total_chord += chord[i];
        st.spherical_length.push_back(st.total_length);
    }

    const double r_max = *std::max_element(st.r.begin(), st.r.end());
    const double r_min = *std::min_element(st.r.begin(), st.r.end());
    const int top = static_cast<int>(std::floor(std::log10(r_max) + 1e-12)) - 1;
    const int bottom = static_cast<int>(std::ceil(std::log10(r_min) - 1e-12));
    for (int d = top; d >= bottom; --d) {
        DecadeLength dl;
        dl.r_lo = std::pow(10.0, d);
        dl.r_hi = std::pow(10.0, d + 1);
        for (std::size_t i = 1; i < disp.size(); ++i) {
            const double mid = std::sqrt(st.r[i - 1] * st.r[i]);
            if (mid >= dl.r_lo && mid < dl.r_hi) {
                dl.length += inc[i];
                dl.chord_length += chord[i];
                ++dl.increments;
            }
        }
        st.tail_lengths.push_back(dl);
    }

    const double r_end = st.r.back();
    std::vector<std::size_t> last;
    for (std::size_t i = 0; i < st.r.size(); ++i)
        if (st.r[i] <= 10.0 * r_end) last.push_back(i);
    for (std::size_t a = 0; a < last.size(); ++a)
        for (std::size_t b = a + 1; b < last.size(); ++b)
            st.cauchy_gap = std::max(st.cauchy_gap, detail::unit_angle(st.points[last[a]], st.points[last[b]], ip));
    return st;
}

struct TailDecay {
    bool pass = false;
    std::vector<double> lengths;  // the decades examined, decreasing r
    std::vector<double> ratios;   // successive length ratios
    std::size_t decades_examined = 0;
};

/// Geometric decay of the last `decades` complete decade lengths. A decade
/// whose length is at or below `floor` counts as converged.
inline TailDecay tail_decay(const SecantTrace& st, int decades = 3, double max_ratio = 0.9, double floor = 0.0) {
    TailDecay out;
    if (static_cast<int>(st.tail_lengths.size()) < decades) return out;
    const auto begin = st.tail_lengths.end() - decades;
    for (auto it = begin; it != st.tail_lengths.end(); ++it) out.lengths.push_back(it->length);
    out.decades_examined = out.lengths.size();
    out.pass = true;
    for (std::size_t i = 1; i < out.lengths.size(); ++i) {
        const double prev = out.lengths[i - 1], cur = out.lengths[i];
        out.ratios.push_back(prev > 0.0 ? cur / prev : (cur > 0.0 ? std::numeric_limits<double>::infinity() : 0.0));
        const bool ok = cur <= floor || cur < max_ratio * prev;
        out.pass = out.pass && ok;
    }
    return out;
}

}  // namespace thomlab
