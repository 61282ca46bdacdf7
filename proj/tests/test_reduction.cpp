#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "thomlab/asymptotics.hpp"
#include "thomlab/reduction.hpp"

using namespace thomlab;

namespace {

Vec v2(double a, double b) {
    Vec v(2);
    v << a, b;
    return v;
}

void expect_projector_invariants(const SpectralSplit& s) {
    const Mat& P = s.projector;
    EXPECT_LT((P * P - P).norm(), 1e-12);
    EXPECT_LT((P - P.transpose()).norm(), 1e-12);
    for (int i = 0; i < s.kernel_basis.cols(); ++i) EXPECT_LT((P * s.kernel_basis.col(i) - s.kernel_basis.col(i)).norm(), 1e-12);
    for (int i = 0; i < s.complement_basis.cols(); ++i) EXPECT_LT((P * s.complement_basis.col(i)).norm(), 1e-12);
    EXPECT_NEAR(P.trace(), s.kernel_dim, 1e-12);
}

// y* solving 2y + x^2 = 0 by scalar Newton (independent of the library solver)
double scalar_newton_root(double x) {
    double y = 0.0;
    for (int i = 0; i < 50; ++i) y -= (2 * y + x * x) / 2.0;
    return y;
}

}  // namespace

TEST(Reduction, SplitDiagonalDegenerate) {
    auto f = AnalyticField::parse("x^4 + y^2");
    const auto s = spectral_split(f);
    EXPECT_EQ(s.kernel_dim, 1);
    EXPECT_NEAR(s.eigenvalues[0], 0, 1e-15);
    EXPECT_NEAR(s.eigenvalues[1], 2, 1e-15);
    EXPECT_NEAR(std::abs(s.kernel_basis(0, 0)), 1, 1e-15);
    EXPECT_NEAR(std::abs(s.complement_basis(1, 0)), 1, 1e-15);
    expect_projector_invariants(s);
}

TEST(Reduction, SplitNondegenerate) {
    const auto s = spectral_split(AnalyticField::parse("x^2 + y^2"));
    EXPECT_EQ(s.kernel_dim, 0);
    EXPECT_LT(s.projector.norm(), 1e-15);
    expect_projector_invariants(s);
}

TEST(Reduction, SplitRotatedKernel) {
    const auto s = spectral_split(AnalyticField::parse("(x+y)^2 + (x-y)^4"));
    EXPECT_EQ(s.kernel_dim, 1);
    const Vec k = s.kernel_basis.col(0);
    EXPECT_NEAR(std::abs(k[0]), 1 / std::sqrt(2.0), 1e-12);
    EXPECT_NEAR(k[0] * k[1], -0.5, 1e-12);
    EXPECT_NEAR(s.eigenvalues[1], 4, 1e-12);
    expect_projector_invariants(s);
}

TEST(Reduction, SplitRequiresCriticalOrigin) {
    EXPECT_THROW(spectral_split(AnalyticField::parse("x + y^2")), PreconditionError);
}

TEST(Reduction, ProjectionExamples) {
    auto f = AnalyticField::parse("x^4 + y^2");
    const auto s = spectral_split(f);
    const Vec q = project_Q(f, s, v2(0.3, 0.2));
    EXPECT_NEAR(q[0], 0.3, 1e-15);
    EXPECT_NEAR(q[1], 0.0, 1e-14);
    const Vec q2 = project_Q(f, s, q);
    EXPECT_EQ(q2, q);

    auto g = AnalyticField::parse("x^4 + y^2 + x^2*y");
    const auto sg = spectral_split(g);
    const Vec qg = project_Q(g, sg, v2(0.3, 0.2));
    EXPECT_NEAR(qg[0], 0.3, 1e-14);
    EXPECT_NEAR(qg[1], scalar_newton_root(0.3), 1e-13);
    EXPECT_NEAR(qg[1], -0.045, 1e-13);
    // P(Qu - u) = 0 and the V1 gradient vanishes
    EXPECT_LT((sg.projector * (qg - v2(0.3, 0.2))).norm(), 1e-14);
    EXPECT_LT((sg.complement_basis.transpose() * eval_gradient(g, qg)).norm(), 1e-12);
}

TEST(Reduction, ProjectionOutsideBasin) {
    auto f = AnalyticField::parse("x^4 + y^2");
    const auto s = spectral_split(f);
    ProjectionOptions opt;
    opt.basin_radius = 0.1;
    EXPECT_THROW(project_Q(f, s, v2(0.3, 0.2), opt), PreconditionError);
}

TEST(Reduction, ProjectionNonConvergenceCarriesIterate) {
    auto f = AnalyticField::parse("x^4 + y^2 + x^2*y + y^3");
    const auto s = spectral_split(f);
    ProjectionOptions opt;
    opt.max_iterations = 1;
    opt.newton_tol = 1e-300;
    try {
        project_Q(f, s, v2(0.3, 0.2), opt);
        FAIL();
    } catch (const ProjectionError& e) {
        EXPECT_EQ(e.last_iterate.size(), 2);
        EXPECT_GT(e.residual, 0);
    }
}

TEST(Reduction, BuildReducedModel) {
    auto f = AnalyticField::parse("x^4 + y^2");
    const auto m = build_reduced(f, spectral_split(f));
    EXPECT_EQ(m.k(), 1);
    EXPECT_NEAR(m.a(), 2, 1e-12);
    Vec r(3);
    r << 0.5, 0.3, 0.1;
    EXPECT_NEAR(m.value(r), std::pow(0.5, 4) + 2 * (0.09 - 0.01), 1e-15);
    Vec x(1);
    x << 0.5;
    Vec on_s(3);
    on_s << 0.5, 0, 0;
    EXPECT_EQ(m.value(on_s), m.restricted_value(x));

    auto g = AnalyticField::parse("x^2 + y^2");
    const auto mg = build_reduced(g, spectral_split(g));
    EXPECT_EQ(mg.k(), 0);
    EXPECT_NEAR(mg.a(), 2, 1e-12);
    EXPECT_NEAR(mg.value(v2(0.3, 0.1)), 2 * (0.09 - 0.01), 1e-15);

    auto z = AnalyticField::parse("x^4 + y^4");
    EXPECT_THROW(build_reduced(z, spectral_split(z)), UnsupportedError);
}

TEST(Reduction, PhiExamples) {
    auto f = AnalyticField::parse("x^4 + y^2");
    const auto m = build_reduced(f, spectral_split(f));
    const Vec p = phi_map(m, v2(0.2, -0.3));
    EXPECT_NEAR(p[0], 0.2, 1e-15);
    EXPECT_NEAR(p[1], std::sqrt(3.0) / 2 * 0.3, 1e-14);
    EXPECT_NEAR(p[2], 0.5 * 0.3, 1e-14);
    const Vec on_s = phi_map(m, v2(0.2, 0.0));
    EXPECT_EQ(on_s[1], 0);
    EXPECT_EQ(on_s[2], 0);

    auto g = AnalyticField::parse("x^4 - y^2");
    const auto mg = build_reduced(g, spectral_split(g));
    EXPECT_NEAR(mg.a(), 2, 1e-12);
    const Vec pg = phi_map(mg, v2(0.2, 0.3));
    EXPECT_NEAR(pg[1], 0.5 * 0.3, 1e-14);
    EXPECT_NEAR(pg[2], std::sqrt(3.0) / 2 * 0.3, 1e-14);
    // defining relations
    const auto d = phi_detail(mg, v2(0.2, 0.3));
    EXPECT_NEAR(pg[1] * pg[1] + pg[2] * pg[2], d.normal * d.normal, 1e-15);
    EXPECT_NEAR(mg.a() * (pg[1] * pg[1] - pg[2] * pg[2]), d.form, 1e-15);
}

TEST(Reduction, CompatExactForSeparableField) {
    auto f = AnalyticField::parse("x^4 + y^2");
    const auto m = build_reduced(f, spectral_split(f));
    std::vector<Vec> pts;
    for (int i = 0; i < 12; ++i) pts.push_back(std::pow(0.5, i) * v2(0.6, 0.8));
    const auto rep = compat_check(m, pts);
    EXPECT_TRUE(rep.value_order.exact);
    EXPECT_LT(rep.value_order.max_residual, 1e-15);
}

TEST(Reduction, CompatCubicRemainder) {
    auto f = AnalyticField::parse("x^4 + y^2 + y^3");
    const auto m = build_reduced(f, spectral_split(f));
    std::vector<Vec> pts;
    for (int i = 0; i < 14; ++i) pts.push_back(v2(0.0, 0.2 * std::pow(0.6, i)));
    const auto rep = compat_check(m, pts);
    ASSERT_FALSE(rep.value_order.exact);
    EXPECT_GE(rep.value_order.order, 2.9);
    EXPECT_GE(rep.radial_order.order, 1.9);
}

TEST(Reduction, CompatNeedsDistinctPoints) {
    auto f = AnalyticField::parse("x^4 + y^2 + y^3");
    const auto m = build_reduced(f, spectral_split(f));
    std::vector<Vec> same(6, v2(0.01, 0.02));
    EXPECT_THROW(compat_check(m, same), InsufficientDataError);
}

TEST(Reduction, GradientLowerBoundNearSmallestEigenvalue) {
    for (const char* src : {"x^4 + y^2", "x^2 + 4*y^2", "x^4 + y^2 + x^2*y", "x^2 + y^4"}) {
        auto f = AnalyticField::parse(src);
        const auto s = spectral_split(f);
        const auto cloud = random_cloud(2, 100, 0.01, 17);
        const auto rep = gradient_lower_bound(f, s, cloud);
        EXPECT_NEAR(rep.fitted_c, rep.smallest_nonzero_eig, 0.2 * rep.smallest_nonzero_eig) << src;
    }
}

TEST(Reduction, ConeTransfer) {
    auto f = AnalyticField::parse("x^4 + y^2 + x^2*y");
    const auto m = build_reduced(f, spectral_split(f));
    const auto cloud = random_cloud(2, 400, 0.05, 23);
    const auto ct = cone_transfer(m, cloud, 0.1);
    EXPECT_GT(ct.in_cone, 0u);
    EXPECT_GT(ct.eps_bar, 0.0);
    EXPECT_TRUE(std::isfinite(ct.c));
}
