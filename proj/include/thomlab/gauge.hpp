#pragma once

// Finite-dimensional group actions by orthogonal matrices exp(sum c_a J_a)
// and Newton gauge fixing of a point against a reference.

#include <Eigen/Dense>
#include <unsupported/Eigen/MatrixFunctions>
#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "thomlab/field.hpp"
#include "thomlab/flow.hpp"
#include "thomlab/secant.hpp"

namespace thomlab {

class GaugeFixError : public ConvergenceError {
public:
    GaugeFixError(const std::string& msg, double last_residual, long sample = -1)
        : ConvergenceError(msg, last_residual), sample_index(sample) {}
    long sample_index;
};

struct GroupAction {
    std::vector<Mat> generators;  // antisymmetric n x n
    AnalyticField field;

    int dim() const { return generators.empty() ? 0 : static_cast<int>(generators.front().rows()); }
    int algebra_dim() const { return static_cast<int>(generators.size()); }

    /// Columns J_a x.
    Mat rho(const Vec& x) const {
        Mat r(x.size(), algebra_dim());
        for (int a = 0; a < algebra_dim(); ++a) r.col(a) = generators[a] * x;
        return r;
    }

    Mat algebra(const Vec& coeffs) const {
        Mat A = Mat::Zero(dim(), dim());
        for (int a = 0; a < algebra_dim(); ++a) A += coeffs[a] * generators[a];
        return A;
    }

    Mat group(const Vec& coeffs) const { return algebra(coeffs).exp(); }

    void validate() const {
        if (generators.empty()) throw PreconditionError("group action needs at least one generator");
        for (const Mat& J : generators) {
            if (J.rows() != J.cols() || J.rows() != dim()) throw PreconditionError("generators must be square of equal size");
            if ((J + J.transpose()).cwiseAbs().maxCoeff() != 0.0) throw PreconditionError("generator is not antisymmetric");
        }
        if (field.valid() && field.dim() != dim()) throw PreconditionError("field dimension differs from the action");
    }
};

/// Rotation generator in the (i, j) coordinate plane of R^n.
inline Mat plane_generator(int n, int i, int j) {
    Mat J = Mat::Zero(n, n);
    J(i, j) = -1.0;
    J(j, i) = 1.0;
    return J;
}

struct InvarianceReport {
    double max_deviation = 0.0;
    int trials = 0;
};

/// max |E(exp(t J_a) u) - E(u)| over random u in the ball of `radius`, t, a.
inline InvarianceReport invariance_check(const GroupAction& action, int trials, double radius, std::uint64_t seed) {
    action.validate();
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unif(-1.0, 1.0);
    std::uniform_int_distribution<int> pick(0, action.algebra_dim() - 1);
    FieldWorkspace ws(action.field);
    InvarianceReport rep;
    for (int k = 0; k < trials; ++k) {
        Vec u(action.dim());
        for (int i = 0; i < u.size(); ++i) u[i] = radius * unif(rng);
        const double t = 3.0 * unif(rng);
        const Mat g = (t * action.generators[pick(rng)]).exp();
        const Vec gu = g * u;
        const double d = std::abs(ws.value(as_span(gu)) - ws.value(as_span(u)));
        rep.max_deviation = std::max(rep.max_deviation, d);
        ++rep.trials;
    }
    return rep;
}

struct GaugeFixResult {
    Vec algebra_element;  // coefficients in the generator basis, in (ker rho_x)^perp
    Mat group;            // g = exp(-sum c_a J_a)
    Vec fixed;            // g y
    double residual = 0.0;  // |rho_x^T (g y - x)|
    int iterations = 0;
};

struct GaugeFixOptions {
    double tol = 1e-12;
    int max_iterations = 60;
    double basin_radius = std::numeric_limits<double>::infinity();
    double rank_tol = 1e-12;  // relative singular value cutoff for rho_x
};

namespace detail {

// Directional derivative of exp at X in direction H: upper-right block of
// exp([[X, H], [0, X]]).
inline Mat exp_derivative(const Mat& X, const Mat& H) {
    const Eigen::Index n = X.rows();
    Mat B = Mat::Zero(2 * n, 2 * n);
    B.topLeftCorner(n, n) = X;
    B.topRightCorner(n, n) = H;
    B.bottomRightCorner(n, n) = X;
    const Mat E = B.exp();
    return E.topRightCorner(n, n);
}

}  // namespace detail

/// Finds g = exp(-xi) with xi in (ker rho_x)^perp such that rho_x^T (g y - x) = 0.
inline GaugeFixResult gauge_fix_point(const GroupAction& action, const Vec& x, const Vec& y,
                                      const GaugeFixOptions& opt = {}) {
    const int n = action.dim();
    const int m = action.algebra_dim();
    if (x.size() != n || y.size() != n) throw PreconditionError("gauge fix: dimension mismatch");
    if ((y - x).norm() > opt.basin_radius) throw PreconditionError("gauge fix: point outside the Newton basin");

    const Mat R = action.rho(x);
    GaugeFixResult res;
    res.algebra_element = Vec::Zero(m);
    res.group = Mat::Identity(n, n);
    res.fixed = y;

    Eigen::JacobiSVD<Mat> svd(R, Eigen::ComputeFullV);
    const Vec& sv = svd.singularValues();
    const double smax = sv.size() > 0 ? sv[0] : 0.0;
    int rank = 0;
    for (int i = 0; i < sv.size(); ++i)
        if (sv[i] > opt.rank_tol * std::max(1.0, smax) && sv[i] > 0.0) ++rank;
    if (rank == 0) {
        // the action is trivial at x: nothing to fix
        res.residual = (R.transpose() * (y - x)).norm();
        return res;
    }
    const Mat Vr = svd.matrixV().leftCols(rank);
    std::vector<Mat> basis(rank);
    for (int j = 0; j < rank; ++j) basis[j] = action.algebra(Vr.col(j));

    auto residual_vec = [&](const Vec& c, Mat& g) {
        g = (-action.algebra(Vr * c)).exp();
        return Vec(Vr.transpose() * (R.transpose() * (g * y - x)));
    };

    Vec c = Vec::Zero(rank);
    Mat g;
    Vec F = residual_vec(c, g);
    double fn = F.norm();
    int it = 0;
    for (; it < opt.max_iterations && fn > opt.tol; ++it) {
        const Mat X = -action.algebra(Vr * c);
        Mat Jac(rank, rank);
        for (int j = 0; j < rank; ++j) {
            const Mat dG = detail::exp_derivative(X, -basis[j]);
            Jac.col(j) = Vr.transpose() * (R.transpose() * (dG * y));
        }
        const Vec step = Jac.fullPivLu().solve(-F);
        if (!step.allFinite()) throw GaugeFixError("gauge fix: singular Newton system", fn);
        double lambda = 1.0;
        bool accepted = false;
        for (int ls = 0; ls < 30; ++ls) {
            Mat g_try;
            const Vec c_try = c + lambda * step;
            const Vec F_try = residual_vec(c_try, g_try);
            if (F_try.norm() < fn || F_try.norm() <= opt.tol) {
                c = c_try;
                g = g_try;
                F = F_try;
                fn = F.norm();
                accepted = true;
                break;
            }
            lambda *= 0.5;
        }
        if (!accepted) break;
    }
    if (!(fn <= opt.tol)) throw GaugeFixError("gauge fix did not converge", fn);
    res.algebra_element = Vr * c;
    res.group = g;
    res.fixed = g * y;
    res.residual = (R.transpose() * (res.fixed - x)).norm();
    res.iterations = it;
    return res;
}

struct GaugedSecant {
    SecantTrace trace;
    std::vector<GaugeFixResult> fixes;
    double max_residual = 0.0;
    double max_gauge_increment = 0.0;  // max |g_{i+1} g_i^{-1} - I|, continuity diagnostic
};

/// Secant trace of g(s) u(s) - x_inf after per-sample gauge fixing.
inline GaugedSecant gauge_fixed_secant(const GroupAction& action, const Trajectory& traj, const Vec& x_inf,
                                       const GaugeFixOptions& opt = {}) {
    GaugedSecant out;
    std::vector<Vec> disp;
    for (std::size_t i = 0; i < traj.size(); ++i) {
        GaugeFixResult fx;
        try {
            fx = gauge_fix_point(action, x_inf, traj.samples[i].u, opt);
        } catch (const ConvergenceError& e) {
            throw GaugeFixError("gauge fix failed at sample " + std::to_string(i) + ": " + e.what(), e.residual,
                                static_cast<long>(i));
        }
        out.max_residual = std::max(out.max_residual, fx.residual);
        if (!out.fixes.empty()) {
            const Mat inc = fx.group * out.fixes.back().group.transpose() - Mat::Identity(action.dim(), action.dim());
            out.max_gauge_increment = std::max(out.max_gauge_increment, inc.norm());
        }
        disp.push_back(fx.fixed - x_inf);
        out.fixes.push_back(std::move(fx));
    }
    out.trace = secant_trace(disp);
    return out;
}

}  // namespace thomlab
