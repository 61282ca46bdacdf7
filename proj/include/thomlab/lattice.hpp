#pragma once

// SU(2) lattice gauge fields on a periodic hypercubic lattice. Links are unit
// quaternions (w, x, y, z) = w + x i + y j + z k, and Re tr(U)/2 = w.

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "thomlab/error.hpp"
#include "thomlab/field.hpp"
#include "thomlab/secant.hpp"

namespace thomlab {

struct Quat {
    double w = 1.0, x = 0.0, y = 0.0, z = 0.0;

    static Quat identity() { return {}; }
    std::array<double, 3> im() const { return {x, y, z}; }
    double norm() const { return std::sqrt(w * w + x * x + y * y + z * z); }
    Quat conj() const { return {w, -x, -y, -z}; }
    Quat normalized() const {
        const double n = norm();
        return {w / n, x / n, y / n, z / n};
    }
};

inline Quat operator*(const Quat& a, const Quat& b) {
    return {a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z, a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
            a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x, a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w};
}

using Alg = std::array<double, 3>;  // su(2) element as a pure quaternion

inline double alg_dot(const Alg& a, const Alg& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }
inline double alg_norm(const Alg& a) { return std::sqrt(alg_dot(a, a)); }

/// exp of the pure quaternion v.
inline Quat qexp(const Alg& v) {
    const double t = alg_norm(v);
    if (t == 0.0) return Quat::identity();
    const double s = std::sin(t) / t;
    return {std::cos(t), s * v[0], s * v[1], s * v[2]};
}

/// Principal log of a unit quaternion; fails near -1 where it is not unique.
inline Alg qlog(const Quat& q, double branch_tol = 1e-12) {
    if (q.w <= -1.0 + branch_tol) throw EvaluationError("quaternion log outside the principal branch", "log");
    const double vn = std::sqrt(q.x * q.x + q.y * q.y + q.z * q.z);
    if (vn == 0.0) return {0.0, 0.0, 0.0};
    const double t = std::atan2(vn, q.w) / vn;
    return {t * q.x, t * q.y, t * q.z};
}

/// q v q^{-1} for a pure quaternion v.
inline Alg adjoint(const Quat& q, const Alg& v) {
    const Quat r = q * Quat{0.0, v[0], v[1], v[2]} * q.conj();
    return {r.x, r.y, r.z};
}

inline Quat random_su2(std::mt19937_64& rng) {
    std::normal_distribution<double> nd(0.0, 1.0);
    Quat q{nd(rng), nd(rng), nd(rng), nd(rng)};
    return q.normalized();
}

class LatticeGauge {
public:
    explicit LatticeGauge(std::vector<int> dims = {2, 2, 2, 2}) : dims_(std::move(dims)) {
        if (dims_.empty()) throw PreconditionError("lattice needs at least one dimension");
        volume_ = 1;
        for (int d : dims_) {
            if (d < 2) throw PreconditionError("lattice extents must be at least 2");
            volume_ *= d;
        }
        links_.assign(static_cast<std::size_t>(volume_) * ndim(), Quat::identity());
    }

    int ndim() const { return static_cast<int>(dims_.size()); }
    const std::vector<int>& dims() const { return dims_; }
    long volume() const { return volume_; }
    std::size_t link_count() const { return links_.size(); }

    Quat& link(long site, int mu) { return links_[static_cast<std::size_t>(site) * ndim() + mu]; }
    const Quat& link(long site, int mu) const { return links_[static_cast<std::size_t>(site) * ndim() + mu]; }
    std::vector<Quat>& links() { return links_; }
    const std::vector<Quat>& links() const { return links_; }

    /// Neighbor of `site` displaced by `step` (+1 or -1) along mu.
    long shift(long site, int mu, int step) const {
        long stride = 1;
        for (int d = ndim() - 1; d > mu; --d) stride *= dims_[d];
        const long coord = (site / stride) % dims_[mu];
        const long next = ((coord + step) % dims_[mu] + dims_[mu]) % dims_[mu];
        return site + (next - coord) * stride;
    }

    int parity(long site) const {
        long sum = 0, rest = site;
        for (int d = ndim() - 1; d >= 0; --d) {
            sum += rest % dims_[d];
            rest /= dims_[d];
        }
        return static_cast<int>(sum % 2);
    }

    void renormalize() {
        for (Quat& q : links_) q = q.normalized();
    }

    double max_unit_defect() const {
        double m = 0.0;
        for (const Quat& q : links_) m = std::max(m, std::abs(q.norm() - 1.0));
        return m;
    }

private:
    std::vector<int> dims_;
    long volume_ = 1;
    std::vector<Quat> links_;
};

/// Links exp(amplitude * n) with n standard normal in su(2).
inline LatticeGauge random_perturbation(std::vector<int> dims, double amplitude, std::uint64_t seed) {
    LatticeGauge cfg(std::move(dims));
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> nd(0.0, 1.0);
    for (Quat& q : cfg.links()) q = qexp({amplitude * nd(rng), amplitude * nd(rng), amplitude * nd(rng)});
    return cfg;
}

/// U_mu(x) U_nu(x+mu) U_mu(x+nu)^dag U_nu(x)^dag
inline Quat plaquette(const LatticeGauge& c, long x, int mu, int nu) {
    const long xm = c.shift(x, mu, 1), xn = c.shift(x, nu, 1);
    return c.link(x, mu) * c.link(xm, nu) * c.link(xn, mu).conj() * c.link(x, nu).conj();
}

/// 1 - w for a unit quaternion, as |v|^2 / (1 + w) when w > 0 so that the
/// deficit keeps full relative precision near the identity.
inline double deficit(const Quat& q) {
    if (q.w <= 0.0) return 1.0 - q.w;
    const double v2 = q.x * q.x + q.y * q.y + q.z * q.z;
    const double n2 = q.w * q.w + v2;
    return v2 / (n2 + q.w * std::sqrt(n2));
}

/// sum over plaquettes of 1 - Re tr(U_p)/2, sites in lexicographic order.
inline double wilson_action(const LatticeGauge& c) {
    double s = 0.0;
    for (long x = 0; x < c.volume(); ++x)
        for (int mu = 0; mu < c.ndim(); ++mu)
            for (int nu = mu + 1; nu < c.ndim(); ++nu) s += deficit(plaquette(c, x, mu, nu));
    return s;
}

namespace detail {

// Bound on the rounding error of wilson_action: each plaquette's imaginary
// part carries an absolute error of a few ulps, which enters |v|^2 linearly.
inline double action_rounding(const LatticeGauge& c) {
    double s = 0.0;
    for (long x = 0; x < c.volume(); ++x)
        for (int mu = 0; mu < c.ndim(); ++mu)
            for (int nu = mu + 1; nu < c.ndim(); ++nu) {
                const Quat p = plaquette(c, x, mu, nu);
                s += std::sqrt(p.x * p.x + p.y * p.y + p.z * p.z) + std::abs(deficit(p));
            }
    return 16.0 * std::numeric_limits<double>::epsilon() * s;
}

}  // namespace detail

/// Sum of staples A with the plaquettes through U_mu(x) written as U_mu(x) A.
inline Quat staple_sum(const LatticeGauge& c, long x, int mu) {
    Quat a{0.0, 0.0, 0.0, 0.0};
    const long xm = c.shift(x, mu, 1);
    for (int nu = 0; nu < c.ndim(); ++nu) {
        if (nu == mu) continue;
        const long xn = c.shift(x, nu, 1);
        const long xb = c.shift(x, nu, -1);
        const long xmb = c.shift(xm, nu, -1);
        const Quat f = c.link(xm, nu) * c.link(xn, mu).conj() * c.link(x, nu).conj();
        const Quat b = c.link(xmb, nu).conj() * c.link(xb, mu).conj() * c.link(xb, nu);
        a.w += f.w + b.w;
        a.x += f.x + b.x;
        a.y += f.y + b.y;
        a.z += f.z + b.z;
    }
    return a;
}

/// Algebra-valued gradient Im(U_mu(x) A) for every link under U -> exp(X) U.
inline std::vector<Alg> action_gradient(const LatticeGauge& c) {
    std::vector<Alg> g(c.link_count());
    for (long x = 0; x < c.volume(); ++x)
        for (int mu = 0; mu < c.ndim(); ++mu) {
            const Quat p = c.link(x, mu) * staple_sum(c, x, mu);
            g[static_cast<std::size_t>(x) * c.ndim() + mu] = {p.x, p.y, p.z};
        }
    return g;
}

inline double squared_norm(const std::vector<Alg>& g) {
    double s = 0.0;
    for (const Alg& a : g) s += alg_dot(a, a);
    return s;
}

struct LatticeFlowOptions {
    double dt = 1e-3;
    long steps = 1000;
    long record_every = 1;
    double dt_floor = 1e-12;
    double grad_floor = 1e-26;  // stop once |grad|^2 reaches the rounding regime
};

struct LatticeTrajectory {
    std::vector<LatticeGauge> configs;  // recorded configurations
    std::vector<double> times;          // at recorded configurations
    std::vector<double> actions;        // every accepted step, including the start
    std::vector<double> grad_norm2;     // |grad S|^2 before each accepted step
    std::vector<double> step_dt;        // dt used by each accepted step
    long accepted = 0;
    long rejected = 0;
    long increases = 0;                 // accepted steps with S_{n+1} > S_n (should stay 0)
    double max_unit_defect = 0.0;
    // Dissipation defects relative to |G|^2, over steps whose action change is
    // resolved: rounding bound below 1e-4 |dS|.
    double max_dissipation_defect = 0.0;  // one-sided
    double max_trapezoid_defect = 0.0;    // trapezoid
    long dissipation_checked = 0;
};

inline void apply_step(LatticeGauge& c, const std::vector<Alg>& grad, double dt) {
    for (std::size_t i = 0; i < grad.size(); ++i) {
        const Alg& g = grad[i];
        c.links()[i] = (qexp({-dt * g[0], -dt * g[1], -dt * g[2]}) * c.links()[i]).normalized();
    }
}

/// Explicit gradient descent U <- exp(-dt grad S) U. A step that raises S is
/// rejected and retried with dt/2; the reduced dt is kept afterwards.
///
/// Two discretizations of dS/dt = -|G|^2 are monitored per step: the one-sided
/// difference, exact to O(dt), and the trapezoid rule along the step path,
/// dS = -dt (|G_n|^2 + <G_{n+1}, G_n>)/2, exact to O(dt^2).
inline LatticeTrajectory lattice_flow(const LatticeGauge& start, const LatticeFlowOptions& opt) {
    if (!(opt.dt > 0.0) || opt.record_every < 1 || opt.steps < 0) throw PreconditionError("invalid lattice flow options");
    LatticeTrajectory tr;
    LatticeGauge cur = start;
    cur.renormalize();
    double t = 0.0, dt = opt.dt;
    double s = wilson_action(cur);
    tr.configs.push_back(cur);
    tr.times.push_back(t);
    tr.actions.push_back(s);
    auto grad = action_gradient(cur);
    for (long step = 0; step < opt.steps; ++step) {
        const double g2 = squared_norm(grad);
        if (g2 <= opt.grad_floor) break;
        for (;;) {
            LatticeGauge next = cur;
            apply_step(next, grad, dt);
            const double s_next = wilson_action(next);
            if (s_next <= s) {
                auto grad_next = action_gradient(next);
                double cross = 0.0;
                for (std::size_t i = 0; i < grad.size(); ++i) cross += alg_dot(grad[i], grad_next[i]);
                const double rate = (s_next - s) / dt;
                if (detail::action_rounding(next) + detail::action_rounding(cur) < 1e-4 * (s - s_next)) {
                    ++tr.dissipation_checked;
                    tr.max_dissipation_defect = std::max(tr.max_dissipation_defect, std::abs(rate + g2) / g2);
                    tr.max_trapezoid_defect =
                        std::max(tr.max_trapezoid_defect, std::abs(rate + 0.5 * (g2 + cross)) / g2);
                }
                tr.grad_norm2.push_back(g2);
                tr.step_dt.push_back(dt);
                cur = std::move(next);
                grad = std::move(grad_next);
                s = s_next;
                t += dt;
                ++tr.accepted;
                tr.actions.push_back(s);
                break;
            }
            ++tr.rejected;
            dt *= 0.5;
            if (dt < opt.dt_floor) throw ConvergenceError("lattice flow step size fell below dt_floor", s_next - s);
        }
        tr.max_unit_defect = std::max(tr.max_unit_defect, cur.max_unit_defect());
        if ((step + 1) % opt.record_every == 0) {
            tr.configs.push_back(cur);
            tr.times.push_back(t);
        }
    }
    if (tr.times.back() != t) {
        tr.configs.push_back(cur);
        tr.times.push_back(t);
    }
    return tr;
}

/// U_mu(x) -> g_x U_mu(x) g_{x+mu}^{-1}
inline LatticeGauge gauge_transform(const LatticeGauge& c, const std::vector<Quat>& g) {
    if (static_cast<long>(g.size()) != c.volume()) throw PreconditionError("gauge field size differs from the lattice volume");
    LatticeGauge out = c;
    for (long x = 0; x < c.volume(); ++x)
        for (int mu = 0; mu < c.ndim(); ++mu) out.link(x, mu) = (g[x] * c.link(x, mu) * g[c.shift(x, mu, 1)].conj()).normalized();
    return out;
}

inline std::vector<Quat> random_gauge(long volume, std::mt19937_64& rng) {
    std::vector<Quat> g(volume);
    for (Quat& q : g) q = random_su2(rng);
    return g;
}

/// sum over links of |log(U V^{-1})|^2
inline double link_distance2(const LatticeGauge& u, const LatticeGauge& v) {
    double d = 0.0;
    for (std::size_t i = 0; i < u.link_count(); ++i) {
        const Alg a = qlog(u.links()[i] * v.links()[i].conj());
        d += alg_dot(a, a);
    }
    return d;
}

struct LatticeGaugeFix {
    LatticeGauge fixed;
    std::vector<Quat> gauge;  // per-site g_x
    double residual = 0.0;    // sqrt(sum_x |F_x|^2), F_x the site first-order condition
    int sweeps = 0;
    double distance2_before = 0.0;
    double distance2_after = 0.0;
};

struct LatticeFixOptions {
    double tol = 1e-10;
    int max_sweeps = 20000;
    double max_distance2 = std::numeric_limits<double>::infinity();
};

namespace detail {

// Half-gradient of sum |log(g_x U g_{x+mu}^{-1} V^{-1})|^2 with respect to a
// left perturbation of g_x.
inline Alg site_force(const LatticeGauge& c, const LatticeGauge& ref, long x) {
    Alg f{0.0, 0.0, 0.0};
    for (int mu = 0; mu < c.ndim(); ++mu) {
        const Alg a = qlog(c.link(x, mu) * ref.link(x, mu).conj());
        const long xb = c.shift(x, mu, -1);
        const Quat& vb = ref.link(xb, mu);
        const Alg b = adjoint(vb.conj(), qlog(c.link(xb, mu) * vb.conj()));
        for (int k = 0; k < 3; ++k) f[k] += a[k] - b[k];
    }
    return f;
}

inline double fix_residual(const LatticeGauge& c, const LatticeGauge& ref) {
    double s = 0.0;
    for (long x = 0; x < c.volume(); ++x) {
        const Alg f = site_force(c, ref, x);
        s += alg_dot(f, f);
    }
    return std::sqrt(s);
}

inline void gauge_site(LatticeGauge& c, long x, const Quat& h) {
    for (int mu = 0; mu < c.ndim(); ++mu) {
        c.link(x, mu) = (h * c.link(x, mu)).normalized();
        const long xb = c.shift(x, mu, -1);
        c.link(xb, mu) = (c.link(xb, mu) * h.conj()).normalized();
    }
}

}  // namespace detail

/// Minimizes the link distance to `ref` over the gauge orbit of `cfg` by
/// checkerboard relaxation: g_x <- exp(-F_x / (2 d)) g_x.
inline LatticeGaugeFix lattice_gauge_fix(const LatticeGauge& cfg, const LatticeGauge& ref,
                                         const LatticeFixOptions& opt = {}) {
    if (cfg.dims() != ref.dims()) throw PreconditionError("lattices differ in shape");
    LatticeGaugeFix out{cfg, std::vector<Quat>(cfg.volume()), 0.0, 0, 0.0, 0.0};
    out.distance2_before = link_distance2(cfg, ref);
    if (out.distance2_before > opt.max_distance2) throw PreconditionError("configuration too far from the reference");
    const double tau = 1.0 / (2.0 * cfg.ndim());
    out.residual = detail::fix_residual(out.fixed, ref);
    while (out.residual > opt.tol) {
        if (out.sweeps >= opt.max_sweeps) throw ConvergenceError("lattice gauge fixing did not converge", out.residual);
        for (int par = 0; par < 2; ++par)
            for (long x = 0; x < cfg.volume(); ++x) {
                if (cfg.parity(x) != par) continue;
                const Alg f = detail::site_force(out.fixed, ref, x);
                const Quat h = qexp({-tau * f[0], -tau * f[1], -tau * f[2]});
                detail::gauge_site(out.fixed, x, h);
                out.gauge[x] = (h * out.gauge[x]).normalized();
            }
        ++out.sweeps;
        out.residual = detail::fix_residual(out.fixed, ref);
    }
    out.distance2_after = link_distance2(out.fixed, ref);
    return out;
}

/// Discrete H^1 inner product on su(2)-valued link fields:
/// sum a.b + sum over (x, mu, nu != mu) of forward and backward differences
/// of a_mu along nu.
inline double h1_inner(const LatticeGauge& shape, const Vec& a, const Vec& b) {
    const int d = shape.ndim();
    auto at = [&](const Vec& v, long x, int mu, int k) { return v[(x * d + mu) * 3 + k]; };
    double s = a.dot(b);
    for (long x = 0; x < shape.volume(); ++x)
        for (int mu = 0; mu < d; ++mu)
            for (int nu = 0; nu < d; ++nu) {
                if (nu == mu) continue;
                const long xf = shape.shift(x, nu, 1);
                double fwd = 0.0;
                for (int k = 0; k < 3; ++k) fwd += (at(a, xf, mu, k) - at(a, x, mu, k)) * (at(b, xf, mu, k) - at(b, x, mu, k));
                // the backward difference at x is the forward one at x - nu
                s += 2.0 * fwd;
            }
    return s;
}

/// a_mu(x) = log(U_mu(x) V_mu(x)^{-1}) flattened as (site, mu, component).
inline Vec link_difference(const LatticeGauge& u, const LatticeGauge& v) {
    Vec a(u.link_count() * 3);
    for (std::size_t i = 0; i < u.link_count(); ++i) {
        const Alg l = qlog(u.links()[i] * v.links()[i].conj(), 1e-9);
        for (int k = 0; k < 3; ++k) a[i * 3 + k] = l[k];
    }
    return a;
}

inline double h1_norm(const LatticeGauge& shape, const Vec& a) { return std::sqrt(std::max(0.0, h1_inner(shape, a, a))); }

struct LatticeSecant {
    SecantTrace trace;
    std::vector<double> h1_distance;
    double max_fix_residual = 0.0;
    double max_gauge_increment = 0.0;  // max |g_{i+1} g_i^{-1} - 1| over sites
};

/// H^1 secant of the recorded configurations relative to `ref`. Configurations
/// at H^1 distance <= min_distance are dropped (indistinguishable from ref).
inline LatticeSecant discrete_h1_secant(const std::vector<LatticeGauge>& configs, const LatticeGauge& ref, bool fix,
                                        double min_distance = 0.0, const LatticeFixOptions& fix_opt = {}) {
    LatticeSecant out;
    std::vector<Vec> disp;
    std::vector<Quat> prev;
    for (const LatticeGauge& c : configs) {
        LatticeGauge use = c;
        if (fix) {
            auto fx = lattice_gauge_fix(c, ref, fix_opt);
            out.max_fix_residual = std::max(out.max_fix_residual, fx.residual);
            if (!prev.empty()) {
                for (long x = 0; x < c.volume(); ++x) {
                    const Quat inc = fx.gauge[x] * prev[x].conj();
                    const double dev = std::sqrt((inc.w - 1) * (inc.w - 1) + inc.x * inc.x + inc.y * inc.y + inc.z * inc.z);
                    out.max_gauge_increment = std::max(out.max_gauge_increment, dev);
                }
            }
            prev = fx.gauge;
            use = std::move(fx.fixed);
        }
        Vec a = link_difference(use, ref);
        const double n = h1_norm(ref, a);
        if (!(n > min_distance)) continue;
        out.h1_distance.push_back(n);
        disp.push_back(std::move(a));
    }
    out.trace = secant_trace(disp, [&ref](const Vec& a, const Vec& b) { return h1_inner(ref, a, b); });
    return out;
}

namespace lattice_io {

inline constexpr char magic[4] = {'T', 'L', 'G', 'F'};
inline constexpr std::uint32_t version = 1;

namespace detail {

template <class T>
void put_le(std::ostream& os, T v) {
    unsigned char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
    os.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <class T>
T get_le(std::istream& is) {
    unsigned char buf[sizeof(T)];
    if (!is.read(reinterpret_cast<char*>(buf), sizeof(T))) throw ParseError("truncated lattice file");
    if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
    T v;
    std::memcpy(&v, buf, sizeof(T));
    return v;
}

}  // namespace detail

/// Layout: "TLGF", u32 version, u32 ndim, u32 extents[ndim], then per site
/// (lexicographic, last coordinate fastest) and direction the four f64 (w,x,y,z).
inline void write(std::ostream& os, const LatticeGauge& c) {
    os.write(magic, 4);
    detail::put_le<std::uint32_t>(os, version);
    detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(c.ndim()));
    for (int d : c.dims()) detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(d));
    for (const Quat& q : c.links()) {
        detail::put_le(os, q.w);
        detail::put_le(os, q.x);
        detail::put_le(os, q.y);
        detail::put_le(os, q.z);
    }
}

inline LatticeGauge read(std::istream& is) {
    char m[4];
    if (!is.read(m, 4) || std::memcmp(m, magic, 4) != 0) throw ParseError("not a lattice file");
    const auto ver = detail::get_le<std::uint32_t>(is);
    if (ver != version) throw ParseError("unsupported lattice file version " + std::to_string(ver));
    const auto nd = detail::get_le<std::uint32_t>(is);
    if (nd == 0 || nd > 16) throw ParseError("bad lattice dimension count");
    std::vector<int> dims(nd);
    for (auto& d : dims) d = static_cast<int>(detail::get_le<std::uint32_t>(is));
    LatticeGauge c(dims);
    for (Quat& q : c.links()) {
        q.w = detail::get_le<double>(is);
        q.x = detail::get_le<double>(is);
        q.y = detail::get_le<double>(is);
        q.z = detail::get_le<double>(is);
    }
    return c;
}

inline void save(const std::string& path, const LatticeGauge& c) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw Error("cannot open " + path + " for writing");
    write(os, c);
}

inline LatticeGauge load(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw Error("cannot open " + path);
    return read(is);
}

}  // namespace lattice_io

}  // namespace thomlab
