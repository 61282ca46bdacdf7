#pragma once

// Reduction of a field near a degenerate critical point at the origin.
//
// The Hessian at 0 splits R^n into its kernel V0 and the complement V1. The
// manifold S = {u : (I-P) grad E(u) = 0} is reached by the projection Q, which
// keeps the V0 coordinates of u and solves for the V1 coordinates by Newton's
// method. The reduced model
//
//     f(x, y1, y2) = E(Q x) + a (y1^2 - y2^2)
//
// together with the point map phi reproduces E and its radial derivative to
// third and second order in |u - Qu|.

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <vector>

#include "thomlab/field.hpp"
#include "thomlab/fit.hpp"

namespace thomlab {

struct SpectralSplit {
    Vec eigenvalues;       // ascending by magnitude
    Mat eigenvectors;      // orthonormal columns, same order
    int kernel_dim = 0;
    Mat kernel_basis;      // n x k (V0)
    Mat complement_basis;  // n x (n-k) (V1)
    Mat projector;         // orthogonal projection onto V0
    double kernel_tol = 0.0;

    int dim() const { return static_cast<int>(eigenvalues.size()); }
};

/// Newton projection failed; carries the last iterate.
class ProjectionError : public ConvergenceError {
public:
    ProjectionError(const std::string& msg, double residual, Vec last)
        : ConvergenceError(msg, residual), last_iterate(std::move(last)) {}
    Vec last_iterate;
};

struct ProjectionOptions {
    double newton_tol = 1e-12;
    int max_iterations = 50;
    double basin_radius = std::numeric_limits<double>::infinity();
};

/// Symmetric eigendecomposition of the Hessian at the origin. A negative
/// `kernel_tol` selects the default 1e-8 * max|eigenvalue|.
inline SpectralSplit spectral_split(const AnalyticField& field, double kernel_tol = -1.0) {
    const int n = field.dim();
    const Jet2 jet = eval_jet2(field, Vec::Zero(n));
    if (!(jet.gradient.norm() < 1e-10)) {
        throw PreconditionError("origin is not a critical point (|grad| = " + std::to_string(jet.gradient.norm()) + ")");
    }
    Eigen::SelfAdjointEigenSolver<Mat> eig(jet.hessian);
    if (eig.info() != Eigen::Success) throw ConvergenceError("Hessian eigen-iteration did not converge", 0.0);

    std::vector<int> order(n);
    for (int i = 0; i < n; ++i) order[i] = i;
    const Vec& lam = eig.eigenvalues();
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return std::abs(lam[a]) < std::abs(lam[b]); });

    SpectralSplit s;
    s.eigenvalues.resize(n);
    s.eigenvectors.resize(n, n);
    for (int i = 0; i < n; ++i) {
        s.eigenvalues[i] = lam[order[i]];
        Vec v = eig.eigenvectors().col(order[i]);
        // sign convention: first non-negligible component positive
        for (int j = 0; j < n; ++j) {
            if (std::abs(v[j]) > 1e-12) {
                if (v[j] < 0) v = -v;
                break;
            }
        }
        s.eigenvectors.col(i) = v;
    }
    const double max_abs = n > 0 ? s.eigenvalues.cwiseAbs().maxCoeff() : 0.0;
    s.kernel_tol = kernel_tol >= 0.0 ? kernel_tol : 1e-8 * max_abs;
    int k = 0;
    if (max_abs == 0.0) {
        k = n;
    } else {
        while (k < n && std::abs(s.eigenvalues[k]) < s.kernel_tol) ++k;
    }
    s.kernel_dim = k;
    s.kernel_basis = s.eigenvectors.leftCols(k);
    s.complement_basis = s.eigenvectors.rightCols(n - k);
    s.projector = s.kernel_basis * s.kernel_basis.transpose();
    return s;
}

/// Q(u): the point of S with the same V0 coordinates as u.
inline Vec project_Q(const AnalyticField& field, const SpectralSplit& split, const Vec& point,
                     const ProjectionOptions& opt = {}) {
    if (!(point.norm() < opt.basin_radius)) throw PreconditionError("point outside the Newton basin radius");
    const Mat& K = split.kernel_basis;
    const Mat& C = split.complement_basis;
    if (C.cols() == 0) return point;

    FieldWorkspace ws(field);
    const Vec base = K * (K.transpose() * point);
    Vec z = C.transpose() * point;
    auto residual_at = [&](const Vec& zz, Jet2* jet) {
        const Vec w = base + C * zz;
        if (jet) {
            *jet = ws.jet2(as_span(w));
            return Vec(C.transpose() * jet->gradient);
        }
        Vec g(field.dim());
        ws.value_gradient(as_span(w), {g.data(), static_cast<std::size_t>(g.size())});
        return Vec(C.transpose() * g);
    };

    Jet2 jet;
    Vec F = residual_at(z, &jet);
    double res = F.norm();
    for (int it = 0; it < opt.max_iterations && res >= opt.newton_tol; ++it) {
        const Mat J = C.transpose() * jet.hessian * C;
        const Vec step = J.colPivHouseholderQr().solve(-F);
        double lambda = 1.0;
        Vec trial = z + step;
        Vec Ft = residual_at(trial, nullptr);
        while (!(Ft.norm() < res) && lambda > 1e-4) {
            lambda *= 0.5;
            trial = z + lambda * step;
            Ft = residual_at(trial, nullptr);
        }
        z = trial;
        F = residual_at(z, &jet);
        res = F.norm();
    }
    if (!(res < opt.newton_tol)) {
        throw ProjectionError("Newton projection onto S did not converge", res, base + C * z);
    }
    // polish to rounding level; the tolerance alone leaves z off by ~tol/|J|
    for (int it = 0; it < 3 && res > 0.0; ++it) {
        const Mat J = C.transpose() * jet.hessian * C;
        const Vec trial = z + J.colPivHouseholderQr().solve(-F);
        Jet2 jt;
        const Vec Ft = residual_at(trial, &jt);
        if (!(Ft.norm() < res)) break;
        z = trial;
        F = Ft;
        jet = jt;
        res = F.norm();
    }
    return base + C * z;
}

/// The reduced function f on R^{k+2} and the data it is built from.
class ReducedModel {
public:
    ReducedModel(AnalyticField field, SpectralSplit split, double a, ProjectionOptions opt)
        : field_(std::move(field)), split_(std::move(split)), a_(a), opt_(opt) {}

    int k() const { return split_.kernel_dim; }
    double a() const { return a_; }
    const AnalyticField& field() const { return field_; }
    const SpectralSplit& split() const { return split_; }
    const ProjectionOptions& options() const { return opt_; }

    /// E restricted to S, in the V0 coordinates x.
    double restricted_value(const Vec& x) const {
        return eval_value(field_, project_Q(field_, split_, split_.kernel_basis * x, opt_));
    }

    /// Gradient of E|_S. On S the V1 part of grad E vanishes, so the
    /// implicit derivative of Q drops out.
    Vec restricted_gradient(const Vec& x) const {
        const Vec q = project_Q(field_, split_, split_.kernel_basis * x, opt_);
        return split_.kernel_basis.transpose() * eval_gradient(field_, q);
    }

    double value(const Vec& reduced) const {
        const int kk = k();
        const double y1 = reduced[kk], y2 = reduced[kk + 1];
        const double base = kk > 0 ? restricted_value(reduced.head(kk)) : eval_value(field_, Vec::Zero(field_.dim()));
        return base + a_ * (y1 * y1 - y2 * y2);
    }

    Vec gradient(const Vec& reduced) const {
        const int kk = k();
        Vec g(kk + 2);
        if (kk > 0) g.head(kk) = restricted_gradient(reduced.head(kk));
        g[kk] = 2.0 * a_ * reduced[kk];
        g[kk + 1] = -2.0 * a_ * reduced[kk + 1];
        return g;
    }

private:
    AnalyticField field_;
    SpectralSplit split_;
    double a_;
    ProjectionOptions opt_;
};

inline ReducedModel build_reduced(const AnalyticField& field, const SpectralSplit& split,
                                  const ProjectionOptions& opt = {}) {
    if (split.kernel_dim >= split.dim()) {
        throw UnsupportedError("Hessian at the origin vanishes identically; V1 is trivial");
    }
    const Vec tail = split.eigenvalues.tail(split.dim() - split.kernel_dim);
    return ReducedModel(field, split, tail.cwiseAbs().maxCoeff(), opt);
}

struct PhiResult {
    Vec reduced;           // (x^1..x^k, y1, y2)
    Vec q;                 // Qu
    double normal = 0.0;   // |u - Qu|
    double form = 0.0;     // 1/2 <E''(Qu)(u-Qu), u-Qu>
};

inline PhiResult phi_detail(const ReducedModel& model, const Vec& point) {
    const auto& split = model.split();
    PhiResult out;
    out.q = project_Q(model.field(), split, point, model.options());
    const Vec d = point - out.q;
    out.normal = d.norm();
    const int k = split.kernel_dim;
    out.reduced = Vec::Zero(k + 2);
    out.reduced.head(k) = split.kernel_basis.transpose() * point;
    if (out.normal == 0.0) return out;
    const Jet2 jq = eval_jet2(model.field(), out.q);
    out.form = 0.5 * d.dot(jq.hessian * d);
    const double d2 = out.normal * out.normal;
    const double t = out.form / model.a();  // = y1^2 - y2^2
    if (std::abs(t) > d2 * (1.0 + 1e-9)) {
        throw PreconditionError("quadratic form exceeds a*|u-Qu|^2; point too far from the origin for phi");
    }
    const double tc = std::clamp(t, -d2, d2);
    out.reduced[k] = std::sqrt(0.5 * (d2 + tc));
    out.reduced[k + 1] = std::sqrt(0.5 * (d2 - tc));
    return out;
}

inline Vec phi_map(const ReducedModel& model, const Vec& point) { return phi_detail(model, point).reduced; }

struct OrderFit {
    bool exact = false;  // residuals at rounding level everywhere
    double order = std::numeric_limits<double>::infinity();
    double intercept = 0.0;
    double residual_rms = 0.0;
    std::size_t used = 0;
    double max_residual = 0.0;
};

struct CompatReport {
    OrderFit value_order;   // |f(phi u) - E(u)| vs |u - Qu|
    OrderFit radial_order;  // |f_rbar(phi u) - E_r(u)| vs |u - Qu|
    OrderFit norm_order;    // | |phi u|^2 - |u|^2 | vs |u|
};

namespace detail {

inline OrderFit fit_order(const std::vector<double>& scale_var, const std::vector<double>& residual,
                          const std::vector<double>& noise) {
    OrderFit out;
    std::vector<double> lx, ly;
    for (std::size_t i = 0; i < residual.size(); ++i) {
        out.max_residual = std::max(out.max_residual, residual[i]);
        if (residual[i] > noise[i]) {
            lx.push_back(std::log(scale_var[i]));
            ly.push_back(std::log(residual[i]));
        }
    }
    out.used = lx.size();
    if (lx.size() < 4) {
        out.exact = true;
        return out;
    }
    const auto line = fit::least_squares(lx, ly);
    out.order = line.slope;
    out.intercept = line.intercept;
    out.residual_rms = line.residual_rms;
    return out;
}

}  // namespace detail

/// Decay orders of the value and radial-derivative discrepancies of the
/// reduced model along a sequence of points shrinking to the origin.
inline CompatReport compat_check(const ReducedModel& model, std::span<const Vec> points) {
    std::vector<double> dn, rn, r1, r2, r3, n1, n2, n3;
    FieldWorkspace ws(model.field());
    const int n = model.field().dim();
    std::vector<double> distinct;
    for (const Vec& u : points) {
        const PhiResult phi = phi_detail(model, u);
        if (!(phi.normal > 0.0)) continue;
        Vec g(n);
        const double e = ws.value_gradient(as_span(u), {g.data(), static_cast<std::size_t>(n)});
        const double r = u.norm();
        const double e_r = g.dot(u) / r;
        const double f = model.value(phi.reduced);
        const Vec gf = model.gradient(phi.reduced);
        const double rbar = phi.reduced.norm();
        const double f_r = gf.dot(phi.reduced) / rbar;
        constexpr double rel_noise = 1e-13;
        dn.push_back(phi.normal);
        rn.push_back(r);
        r1.push_back(std::abs(f - e));
        n1.push_back(rel_noise * (std::abs(f) + std::abs(e)) + 1e-300);
        r2.push_back(std::abs(f_r - e_r));
        n2.push_back(rel_noise * (std::abs(f_r) + std::abs(e_r)) + 1e-300);
        r3.push_back(std::abs(rbar * rbar - r * r));
        n3.push_back(rel_noise * r * r + 1e-300);
        if (std::none_of(distinct.begin(), distinct.end(),
                         [&](double v) { return std::abs(v - phi.normal) <= 1e-12 * phi.normal; })) {
            distinct.push_back(phi.normal);
        }
    }
    if (distinct.size() < 4) {
        throw InsufficientDataError("compatibility check needs at least 4 distinct points off S");
    }
    CompatReport rep;
    rep.value_order = detail::fit_order(dn, r1, n1);
    rep.radial_order = detail::fit_order(dn, r2, n2);
    rep.norm_order = detail::fit_order(rn, r3, n3);
    return rep;
}

struct LowerBoundReport {
    double fitted_c = 0.0;             // min |E'(u)| / |u - Qu|
    double smallest_nonzero_eig = 0.0;
    std::size_t used = 0;
};

/// |E'(u)| >= c |u - Qu| over the given near-origin points.
inline LowerBoundReport gradient_lower_bound(const AnalyticField& field, const SpectralSplit& split,
                                             std::span<const Vec> points, const ProjectionOptions& opt = {}) {
    LowerBoundReport rep;
    rep.fitted_c = std::numeric_limits<double>::infinity();
    for (const Vec& u : points) {
        const Vec q = project_Q(field, split, u, opt);
        const double d = (u - q).norm();
        if (!(d > 0.0)) continue;
        rep.fitted_c = std::min(rep.fitted_c, eval_gradient(field, u).norm() / d);
        ++rep.used;
    }
    if (rep.used == 0) throw InsufficientDataError("no points off S");
    const Vec tail = split.eigenvalues.tail(split.dim() - split.kernel_dim);
    rep.smallest_nonzero_eig = tail.size() ? tail.cwiseAbs().minCoeff() : 0.0;
    return rep;
}

struct ConeTransfer {
    std::size_t in_cone = 0;                      // points of W^eps examined
    double eps_bar = std::numeric_limits<double>::infinity();  // largest admissible reduced aperture
    double c = 0.0;                               // eps / eps_bar
};

/// For u in W^eps, the largest eps_bar with eps_bar |f_theta| <= |f_rbar| at phi(u).
inline ConeTransfer cone_transfer(const ReducedModel& model, std::span<const Vec> points, double eps) {
    ConeTransfer out;
    for (const Vec& u : points) {
        const Jet2 j = eval_jet2(model.field(), u);
        if (j.value == 0.0) continue;
        const RadialSplit rs = radial_angular(j, u);
        if (!(eps * rs.e_theta.norm() <= std::abs(rs.e_r))) continue;
        const Vec ub = phi_map(model, u);
        const Vec gf = model.gradient(ub);
        const RadialSplit fs = radial_angular(gf, ub);
        ++out.in_cone;
        const double th = fs.e_theta.norm();
        if (th > 0.0) out.eps_bar = std::min(out.eps_bar, std::abs(fs.e_r) / th);
    }
    out.c = std::isfinite(out.eps_bar) ? eps / out.eps_bar : 0.0;
    return out;
}

}  // namespace thomlab
