#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "thomlab/lattice.hpp"

using namespace thomlab;

namespace {

LatticeGauge reference_run_start() { return random_perturbation({2, 2, 2, 2}, 0.3, 11); }

}  // namespace

TEST(WilsonAction, IdentityIsZero) {
    LatticeGauge c;
    EXPECT_EQ(c.volume(), 16);
    EXPECT_EQ(c.link_count(), 64u);
    EXPECT_EQ(wilson_action(c), 0.0);
}

TEST(WilsonAction, SingleFlippedLink) {
    LatticeGauge c;
    c.link(5, 2) = Quat{-1.0, 0.0, 0.0, 0.0};
    EXPECT_DOUBLE_EQ(wilson_action(c), 12.0);
}

TEST(WilsonAction, PlaquetteCountOnLargerLattice) {
    // each link lies in 2 (d-1) plaquettes when every extent exceeds 2
    LatticeGauge c({3, 3, 3});
    c.link(4, 0) = Quat{-1.0, 0.0, 0.0, 0.0};
    EXPECT_DOUBLE_EQ(wilson_action(c), 2.0 * 2 * (3 - 1));
}

TEST(WilsonAction, GaugeInvariance) {
    const auto c = random_perturbation({2, 2, 2, 2}, 0.8, 3);
    const double s0 = wilson_action(c);
    std::mt19937_64 rng(99);
    double worst = 0.0;
    for (int k = 0; k < 1000; ++k) {
        const auto g = random_gauge(c.volume(), rng);
        worst = std::max(worst, std::abs(wilson_action(gauge_transform(c, g)) - s0));
    }
    EXPECT_LT(worst, 1e-12);
}

TEST(WilsonAction, DeficitMatchesNaiveForm) {
    std::mt19937_64 rng(1);
    for (int k = 0; k < 100; ++k) {
        const Quat q = random_su2(rng);
        EXPECT_NEAR(deficit(q), 1.0 - q.w, 1e-15);
    }
    const Quat tiny = qexp({1e-9, 0.0, 0.0});
    EXPECT_NEAR(deficit(tiny), 0.5e-18, 1e-30);
}

TEST(ActionGradient, MatchesFiniteDifferences) {
    const auto c = random_perturbation({2, 2, 2, 2}, 0.6, 5);
    const auto g = action_gradient(c);
    const double h = 1e-3;
    auto moved = [&](std::size_t i, int k, double t) {
        Alg e{0.0, 0.0, 0.0};
        e[k] = t;
        LatticeGauge p = c;
        p.links()[i] = qexp(e) * c.links()[i];
        return wilson_action(p);
    };
    double worst = 0.0;
    for (std::size_t i = 0; i < c.link_count(); i += 7)
        for (int k = 0; k < 3; ++k) {
            // fourth-order central difference
            const double fd = (8 * (moved(i, k, h) - moved(i, k, -h)) - (moved(i, k, 2 * h) - moved(i, k, -2 * h))) / (12 * h);
            worst = std::max(worst, std::abs(fd - g[i][k]));
        }
    EXPECT_LT(worst, 1e-10);
}

TEST(LatticeFlow, IdentityIsStationary) {
    LatticeGauge c;
    LatticeFlowOptions opt;
    opt.steps = 50;
    const auto tr = lattice_flow(c, opt);
    EXPECT_EQ(tr.accepted, 0);
    for (const auto& cfg : tr.configs) EXPECT_EQ(link_distance2(cfg, c), 0.0);
}

TEST(LatticeFlow, PerturbationDecreasesAction) {
    LatticeFlowOptions opt;
    opt.dt = 1e-3;
    opt.steps = 5000;
    opt.record_every = 100;
    const auto tr = lattice_flow(reference_run_start(), opt);
    EXPECT_EQ(tr.increases, 0);
    for (std::size_t i = 1; i < tr.actions.size(); ++i) ASSERT_LT(tr.actions[i], tr.actions[i - 1]);
    EXPECT_LT(tr.actions.back(), 0.5 * tr.actions.front());
    EXPECT_LT(tr.max_trapezoid_defect, 1e-3);
    EXPECT_LT(tr.max_unit_defect, 1e-12);
    EXPECT_EQ(tr.configs.size(), 51u);
}

TEST(LatticeFlow, DissipationDefectShrinksWithStep) {
    LatticeFlowOptions opt;
    opt.steps = 20;
    opt.dt = 1e-3;
    const auto a = lattice_flow(reference_run_start(), opt);
    opt.dt = 1e-4;
    opt.steps = 200;
    const auto b = lattice_flow(reference_run_start(), opt);
    EXPECT_LT(b.max_dissipation_defect, 0.2 * a.max_dissipation_defect);
    EXPECT_LT(b.max_dissipation_defect, 1e-3);
}

TEST(LatticeFlow, RejectsBadOptions) {
    LatticeFlowOptions opt;
    opt.dt = 0.0;
    EXPECT_THROW(lattice_flow(LatticeGauge{}, opt), PreconditionError);
}

TEST(LatticeFlow, OversizedStepIsHalved) {
    LatticeFlowOptions opt;
    opt.dt = 5.0;
    opt.steps = 30;
    const auto tr = lattice_flow(random_perturbation({2, 2, 2, 2}, 0.5, 2), opt);
    EXPECT_GT(tr.rejected, 0);
    EXPECT_EQ(tr.increases, 0);
    EXPECT_LT(tr.step_dt.back(), 5.0);
}

TEST(LatticeGaugeFix, OrbitMemberRecovered) {
    const auto ref = random_perturbation({2, 2, 2, 2}, 0.4, 8);
    std::mt19937_64 rng(4);
    std::vector<Quat> g(ref.volume());
    std::normal_distribution<double> nd(0.0, 0.3);
    for (Quat& q : g) q = qexp({nd(rng), nd(rng), nd(rng)});
    const auto moved = gauge_transform(ref, g);
    ASSERT_GT(link_distance2(moved, ref), 1e-2);
    const auto fx = lattice_gauge_fix(moved, ref);
    EXPECT_LT(fx.residual, 1e-10);
    EXPECT_LT(fx.distance2_after, 1e-18);
}

TEST(LatticeGaugeFix, ReferenceIsFixedPoint) {
    const auto ref = random_perturbation({2, 2, 2, 2}, 0.4, 8);
    const auto fx = lattice_gauge_fix(ref, ref);
    EXPECT_LT(fx.residual, 1e-15);
    EXPECT_EQ(fx.sweeps, 0);
    for (const Quat& q : fx.gauge) EXPECT_EQ(q.w, 1.0);
}

TEST(LatticeGaugeFix, DistanceDoesNotGrow) {
    const auto ref = random_perturbation({2, 2, 2, 2}, 0.3, 21);
    for (std::uint64_t seed : {1, 2, 3}) {
        auto cfg = ref;
        const auto noise = random_perturbation({2, 2, 2, 2}, 0.2, seed);
        for (std::size_t i = 0; i < cfg.link_count(); ++i) cfg.links()[i] = noise.links()[i] * cfg.links()[i];
        const auto fx = lattice_gauge_fix(cfg, ref);
        EXPECT_LT(fx.residual, 1e-10);
        EXPECT_LE(fx.distance2_after, fx.distance2_before);
        EXPECT_NEAR(wilson_action(fx.fixed), wilson_action(cfg), 1e-12);
    }
}

TEST(LatticeGaugeFix, DistanceGuard) {
    const auto ref = LatticeGauge{};
    const auto cfg = random_perturbation({2, 2, 2, 2}, 0.5, 1);
    LatticeFixOptions opt;
    opt.max_distance2 = 1e-3;
    EXPECT_THROW(lattice_gauge_fix(cfg, ref, opt), PreconditionError);
    opt = {};
    opt.max_sweeps = 1;
    opt.tol = 1e-15;
    EXPECT_THROW(lattice_gauge_fix(cfg, ref, opt), ConvergenceError);
}

TEST(H1, SingleExcitedLink) {
    LatticeGauge shape;
    Vec a = Vec::Zero(shape.link_count() * 3);
    const std::size_t link = 9 * 4 + 1;
    a[link * 3 + 0] = 0.3;
    a[link * 3 + 2] = -0.4;
    // the link term plus 2 * 2 * (4 - 1) adjacent differences
    EXPECT_NEAR(h1_inner(shape, a, a), 13.0 * 0.25, 1e-15);
}

TEST(H1, PositivityAndScaling) {
    LatticeGauge shape;
    std::mt19937_64 rng(6);
    std::normal_distribution<double> nd(0.0, 1.0);
    for (int k = 0; k < 20; ++k) {
        Vec a(shape.link_count() * 3);
        for (int i = 0; i < a.size(); ++i) a[i] = nd(rng);
        const double n = h1_norm(shape, a);
        EXPECT_GT(n, 0.0);
        EXPECT_GE(n * n, a.squaredNorm());
        for (double lam : {-3.0, 0.5, 1e-4}) EXPECT_NEAR(h1_norm(shape, lam * a), std::abs(lam) * n, 1e-12 * n);
    }
}

TEST(H1Secant, FixedDirectionHasZeroLength) {
    LatticeGauge ref;
    std::mt19937_64 rng(3);
    std::normal_distribution<double> nd(0.0, 1.0);
    std::vector<Alg> a0(ref.link_count());
    for (Alg& v : a0) v = {nd(rng), nd(rng), nd(rng)};
    std::vector<LatticeGauge> traj;
    for (int k = 1; k <= 20; ++k) {
        LatticeGauge c;
        const double s = 0.3 * std::exp(-static_cast<double>(k));
        for (std::size_t i = 0; i < c.link_count(); ++i) c.links()[i] = qexp({s * a0[i][0], s * a0[i][1], s * a0[i][2]});
        traj.push_back(c);
    }
    const auto sec = discrete_h1_secant(traj, ref, false);
    EXPECT_LT(sec.trace.total_length, 1e-7);
    EXPECT_EQ(sec.h1_distance.size(), 20u);
}

TEST(H1Secant, GaugeFixedFlowTailDecays) {
    LatticeFlowOptions opt;
    opt.dt = 0.05;
    opt.steps = 20000;
    opt.record_every = 10;
    const auto tr = lattice_flow(reference_run_start(), opt);
    ASSERT_LT(tr.actions.back(), 1e-20);
    const auto sec = discrete_h1_secant(tr.configs, tr.configs.back(), true, 1e-6);
    EXPECT_LT(sec.max_fix_residual, 1e-10);
    ASSERT_GE(sec.trace.tail_lengths.size(), 3u);
    EXPECT_TRUE(tail_decay(sec.trace, 3, 0.9, 1e-12).pass);
}

TEST(H1Secant, LogBranchFailure) {
    LatticeGauge ref, far;
    far.link(0, 0) = Quat{-1.0, 0.0, 0.0, 0.0};
    EXPECT_THROW(discrete_h1_secant({far, far}, ref, false), EvaluationError);
    EXPECT_THROW(qlog(Quat{-1.0, 0.0, 0.0, 0.0}), EvaluationError);
}

TEST(LatticeIO, RoundTrip) {
    const auto c = random_perturbation({2, 3, 2, 2}, 0.7, 12);
    std::stringstream ss;
    lattice_io::write(ss, c);
    const auto d = lattice_io::read(ss);
    EXPECT_EQ(d.dims(), c.dims());
    for (std::size_t i = 0; i < c.link_count(); ++i) {
        EXPECT_EQ(d.links()[i].w, c.links()[i].w);
        EXPECT_EQ(d.links()[i].z, c.links()[i].z);
    }
}

TEST(LatticeIO, ByteLayout) {
    LatticeGauge c({2, 2});
    c.link(1, 1) = Quat{0.0, 1.0, 0.0, 0.0};
    std::stringstream ss;
    lattice_io::write(ss, c);
    const std::string bytes = ss.str();
    ASSERT_EQ(bytes.size(), 4u + 4 + 4 + 2 * 4 + 8u * 4 * 8);
    EXPECT_EQ(bytes.substr(0, 4), "TLGF");
    EXPECT_EQ(static_cast<unsigned char>(bytes[4]), 1);  // version, little endian
    EXPECT_EQ(static_cast<unsigned char>(bytes[8]), 2);  // ndim
    // site 1, direction 1 is the fourth link; its x component is 1.0
    const std::size_t off = 20 + 3 * 32 + 8;
    double v;
    std::memcpy(&v, bytes.data() + off, 8);
    EXPECT_EQ(v, 1.0);
}

TEST(LatticeIO, RejectsBadInput) {
    std::stringstream bad("XXXX");
    EXPECT_THROW(lattice_io::read(bad), ParseError);
    LatticeGauge c;
    std::stringstream ss;
    lattice_io::write(ss, c);
    std::string s = ss.str();
    s.resize(s.size() - 5);
    std::stringstream trunc(s);
    EXPECT_THROW(lattice_io::read(trunc), ParseError);
}
