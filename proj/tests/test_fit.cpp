#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "thomlab/fit.hpp"

using namespace thomlab;

TEST(Fit, LeastSquaresRecoversLine) {
    std::vector<double> x{0, 1, 2, 3, 4}, y;
    for (double v : x) y.push_back(2.5 * v - 1);
    const auto l = fit::least_squares(x, y);
    EXPECT_NEAR(l.slope, 2.5, 1e-14);
    EXPECT_NEAR(l.intercept, -1, 1e-14);
    EXPECT_LT(l.residual_rms, 1e-14);
}

TEST(Fit, DegenerateInputsThrow) {
    std::vector<double> one{1.0};
    EXPECT_THROW(fit::least_squares(one, one), InsufficientDataError);
    std::vector<double> x{2, 2, 2}, y{1, 2, 3};
    EXPECT_THROW(fit::least_squares(x, y), InsufficientDataError);
}

TEST(Fit, QuantileLineTracksLowerEnvelope) {
    // y = 1.5 x + noise >= 0: the lower envelope is y = 1.5 x
    std::mt19937_64 rng(3);
    std::exponential_distribution<double> noise(4.0);
    std::vector<double> x, y;
    for (int i = 0; i < 4000; ++i) {
        const double v = -5.0 + 10.0 * i / 4000.0;
        x.push_back(v);
        y.push_back(1.5 * v + noise(rng));
    }
    const auto l = fit::quantile_line(x, y, 0.05);
    EXPECT_NEAR(l.slope, 1.5, 0.02);
    // 5% quantile of Exp(4) is -ln(0.95)/4
    EXPECT_NEAR(l.intercept, -std::log(0.95) / 4, 0.01);
}

TEST(Fit, AitkenAcceleratesGeometricSequence) {
    auto a = [](int k) { return 4.0 + 0.3 * std::pow(0.5, k); };
    EXPECT_NEAR(fit::aitken(a(0), a(1), a(2)), 4.0, 1e-13);
    EXPECT_EQ(fit::aitken(1.0, 1.0, 1.0), 1.0);
}

TEST(Fit, NearestRational) {
    const auto r = fit::nearest_rational(0.7501, 12);
    EXPECT_EQ(r.num, 3);
    EXPECT_EQ(r.den, 4);
    const auto s = fit::nearest_rational(4.0, 12);
    EXPECT_EQ(s.num, 4);
    EXPECT_EQ(s.den, 1);
}
