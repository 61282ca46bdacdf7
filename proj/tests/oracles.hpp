#pragma once

// Independent reference computations used by the tests. Nothing here calls
// into the library's derivative or integration code.

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <vector>

namespace oracle {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using Scalar = std::function<double(const Vec&)>;

inline Vec central_gradient(const Scalar& f, const Vec& u, double h) {
    Vec g(u.size());
    for (int i = 0; i < u.size(); ++i) {
        Vec a = u, b = u;
        a[i] += h;
        b[i] -= h;
        g[i] = (f(a) - f(b)) / (2 * h);
    }
    return g;
}

inline Mat central_hessian(const std::function<Vec(const Vec&)>& grad, const Vec& u, double h) {
    Mat H(u.size(), u.size());
    for (int i = 0; i < u.size(); ++i) {
        Vec a = u, b = u;
        a[i] += h;
        b[i] -= h;
        H.col(i) = (grad(a) - grad(b)) / (2 * h);
    }
    return 0.5 * (H + H.transpose());
}

/// Classical RK4 on u' = F(u) with fixed step, returns the final point.
inline Vec rk4(const std::function<Vec(const Vec&)>& F, Vec u, double h, long steps) {
    for (long i = 0; i < steps; ++i) {
        const Vec k1 = F(u);
        const Vec k2 = F(u + 0.5 * h * k1);
        const Vec k3 = F(u + 0.5 * h * k2);
        const Vec k4 = F(u + h * k3);
        u += h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4);
    }
    return u;
}

}  // namespace oracle
