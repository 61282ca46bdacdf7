#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "oracles.hpp"
#include "thomlab/flow.hpp"

using namespace thomlab;

namespace {

Vec v2(double a, double b) {
    Vec v(2);
    v << a, b;
    return v;
}

FlowSpec spec_for(const char* src, Vec start) {
    FlowSpec s;
    s.field = AnalyticField::parse(src);
    s.start = std::move(start);
    return s;
}

}  // namespace

TEST(Flow, RadialSegment) {
    const auto tr = integrate(spec_for("x^2 + y^2", v2(1, 0)));
    EXPECT_EQ(tr.stop_reason, StopReason::r_floor);
    for (const auto& x : tr.samples) {
        EXPECT_NEAR(x.u[0], 1 - x.s, 1e-12);
        EXPECT_EQ(x.u[1], 0.0);
    }
    EXPECT_NEAR(tr.back().s + tr.back().radial.r, 1.0, 1e-12);
    EXPECT_LE(tr.back().radial.r, 1e-6);
}

TEST(Flow, AnisotropicPathMatchesClosedFormCurve) {
    // time flow x = e^{-2t}, y = e^{-8t} from (1,1): the path is y = x^4
    const auto tr = integrate(spec_for("x^2 + 4*y^2", v2(1, 1)));
    ASSERT_TRUE(tr.converged());
    double worst = 0.0;
    for (const auto& x : tr.samples) worst = std::max(worst, std::abs(x.u[1] - std::pow(x.u[0], 4)));
    EXPECT_LT(worst, 1e-6);
}

TEST(Flow, SelfConvergence) {
    auto a = spec_for("x^2 + 4*y^2", v2(1, 1));
    auto b = a;
    b.rel_tol = a.rel_tol / 10;
    const auto ta = integrate(a), tb = integrate(b);
    double worst = 0.0;
    for (const auto& x : ta.samples) worst = std::max(worst, (position_at(tb, x.s) - x.u).norm());
    EXPECT_LT(worst, 1e-6);

    // dense sampling keeps interpolation error far below the tolerance
    auto c = a;
    a.r_floor = 1e-3;
    a.thinning = 0.999;
    c = a;
    c.rel_tol = a.rel_tol / 2;
    const auto fa = integrate(a), fc = integrate(c);
    EXPECT_LT((position_at(fa, 1.0) - position_at(fc, 1.0)).norm(), 10 * a.rel_tol);
}

TEST(Flow, TimeParameterizationAgainstRk4) {
    auto s = spec_for("x^2 + 4*y^2", v2(1, 1));
    s.param = Parameterization::time;
    s.r_floor = 1e-3;
    const auto tr = integrate(s);
    ASSERT_TRUE(tr.converged());
    const auto& last = tr.back();
    auto F = [](const Vec& u) { return Vec(v2(-2 * u[0], -8 * u[1])); };
    const long steps = 20000;
    const Vec ref = oracle::rk4(F, v2(1, 1), last.s / steps, steps);
    EXPECT_LT((ref - last.u).norm(), 1e-9);
    EXPECT_NEAR(last.u[0], std::exp(-2 * last.s), 1e-9);
}

TEST(Flow, CriticalStartRejected) {
    EXPECT_THROW(integrate(spec_for("x^2 + y^2", v2(0, 0))), PreconditionError);
    auto bad = spec_for("x^2 + y^2", v2(1, 0));
    bad.rel_tol = 0.1;
    EXPECT_THROW(integrate(bad), PreconditionError);
}

TEST(Flow, TrajectoryInvariants) {
    for (const char* src : {"x^2 + 4*y^2", "(x^2 + y^2)^2", "x^4 + y^4", "(x^2+y^2)^2 + x^4"}) {
        auto sp = spec_for(src, v2(0.6, 0.8));
        sp.grad_floor = 1e-30;
        const auto tr = integrate(sp);
        ASSERT_TRUE(tr.converged()) << src;
        EXPECT_LT(tr.max_speed_defect, 1e-9) << src;
        EXPECT_LT(tr.max_dissipation_defect, 1e-6) << src;
        for (std::size_t i = 1; i < tr.size(); ++i) {
            EXPECT_GT(tr.samples[i].s, tr.samples[i - 1].s);
            EXPECT_GE(tr.samples[i].sigma, tr.samples[i - 1].sigma);
            EXPECT_LT(tr.samples[i].jet.value, tr.samples[i - 1].jet.value) << src << " sample " << i;
            EXPECT_LE(std::abs(tr.samples[i].sigma - tr.samples[i].s), 1e-6 * tr.samples[i].s);
        }
    }
}

TEST(Flow, ThinningGivesGeometricSpacing) {
    const auto tr = integrate(spec_for("x^2 + y^2", v2(1, 0)));
    // ratio 0.95 over six decades: about 270 samples
    EXPECT_GT(tr.size(), 265u);
    for (std::size_t i = 1; i + 1 < tr.size(); ++i) {
        EXPECT_LE(tr.samples[i].radial.r, 0.95 * tr.samples[i - 1].radial.r * (1 + 1e-12));
    }
}

TEST(Flow, MaxStepsStop) {
    auto s = spec_for("x^2 + y^2", v2(1, 0));
    s.max_steps = 3;
    const auto tr = integrate(s);
    EXPECT_EQ(tr.stop_reason, StopReason::max_steps);
    EXPECT_FALSE(tr.converged());
    EXPECT_THROW(remaining_length_check(tr, 0.5, 2.0), PreconditionError);
}

TEST(Flow, RemainingLengthRadialIsTight) {
    const auto tr = integrate(spec_for("x^2 + y^2", v2(0.6, 0.8)));
    const auto m = remaining_length_check(tr, 0.5, 2.0);
    EXPECT_LT(std::abs(m.worst_slack), 1e-6);
}

TEST(Flow, RemainingLengthQuarticHolds) {
    auto s = spec_for("(x^2 + y^2)^2", v2(0.6, 0.8));
    s.grad_floor = 1e-30;
    const auto tr = integrate(s);
    // |E'| = 4 r^3 = 4 E^{3/4}
    const auto m = remaining_length_check(tr, 0.75, 4.0);
    EXPECT_GE(m.worst_slack, -1e-9);
    EXPECT_TRUE(std::isfinite(m.worst_slack));
}

TEST(Flow, CsvColumns) {
    const auto tr = integrate(spec_for("x^2 + y^2", v2(1, 0)));
    std::ostringstream os;
    write_csv(os, tr);
    std::istringstream is(os.str());
    std::string header, row;
    std::getline(is, header);
    EXPECT_EQ(header, "s,sigma,r,E_value,grad_norm,e_r,e_theta_norm,u1,u2");
    std::getline(is, row);
    EXPECT_EQ(std::count(row.begin(), row.end(), ','), 8);
}
