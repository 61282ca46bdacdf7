#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "thomlab/field.hpp"

using namespace thomlab;

namespace {

// Straight C++ versions of a few catalog fields, for the finite-difference oracle.
struct Plain {
    const char* expr;
    std::function<double(const Vec&)> f;
    int degree;  // 0 when not homogeneous
};

std::vector<Plain> plain_fields() {
    return {
        {"x^2 + y^2", [](const Vec& u) { return u[0] * u[0] + u[1] * u[1]; }, 2},
        {"x^2 + 4*y^2", [](const Vec& u) { return u[0] * u[0] + 4 * u[1] * u[1]; }, 2},
        {"(x^2 + y^2)^2", [](const Vec& u) { return std::pow(u[0] * u[0] + u[1] * u[1], 2); }, 4},
        {"x^4 + y^2", [](const Vec& u) { return std::pow(u[0], 4) + u[1] * u[1]; }, 0},
        {"x^2 + y^4", [](const Vec& u) { return u[0] * u[0] + std::pow(u[1], 4); }, 0},
        {"x^4 + y^4", [](const Vec& u) { return std::pow(u[0], 4) + std::pow(u[1], 4); }, 4},
        {"(x^2+y^2)^2 + x^4", [](const Vec& u) { return std::pow(u[0] * u[0] + u[1] * u[1], 2) + std::pow(u[0], 4); }, 4},
        {"x^2*y", [](const Vec& u) { return u[0] * u[0] * u[1]; }, 3},
        {"exp(x1)*sin(x2) - cos(x1*x2) + x3^3", [](const Vec& u) {
             return std::exp(u[0]) * std::sin(u[1]) - std::cos(u[0] * u[1]) + u[2] * u[2] * u[2];
         }, 0},
    };
}

}  // namespace

TEST(Field, PolynomialJet) {
    auto f = AnalyticField::parse("x^2 + y^2");
    EXPECT_EQ(f.dim(), 2);
    const Jet2 j = eval_jet2(f, Vec::Map(std::vector<double>{3, 4}.data(), 2));
    EXPECT_DOUBLE_EQ(j.value, 25);
    EXPECT_DOUBLE_EQ(j.gradient[0], 6);
    EXPECT_DOUBLE_EQ(j.gradient[1], 8);
    EXPECT_DOUBLE_EQ(j.hessian(0, 0), 2);
    EXPECT_DOUBLE_EQ(j.hessian(1, 1), 2);
    EXPECT_DOUBLE_EQ(j.hessian(0, 1), 0);

    const Jet2 z = eval_jet2(f, Vec::Zero(2));
    EXPECT_EQ(z.value, 0);
    EXPECT_EQ(z.gradient.norm(), 0);
}

TEST(Field, MixedMonomial) {
    auto f = AnalyticField::parse("x^2*y");
    Vec u(2);
    u << 1, 1;
    const Jet2 j = eval_jet2(f, u);
    EXPECT_DOUBLE_EQ(j.value, 1);
    EXPECT_DOUBLE_EQ(j.gradient[0], 2);
    EXPECT_DOUBLE_EQ(j.gradient[1], 1);
    EXPECT_DOUBLE_EQ(j.hessian(0, 0), 2);
    EXPECT_DOUBLE_EQ(j.hessian(0, 1), 2);
    EXPECT_DOUBLE_EQ(j.hessian(1, 0), 2);
    EXPECT_DOUBLE_EQ(j.hessian(1, 1), 0);

    const RadialSplit rs = radial_angular(j, u);
    EXPECT_NEAR(rs.e_r, 3 / std::sqrt(2.0), 1e-15);
    EXPECT_NEAR(rs.e_theta[0], 0.5, 1e-15);
    EXPECT_NEAR(rs.e_theta[1], -0.5, 1e-15);
}

TEST(Field, RadialFieldHasNoAngularPart) {
    auto f = AnalyticField::parse("x^2 + y^2");
    Vec u(2);
    u << 3, 4;
    const RadialSplit rs = radial_angular(eval_jet2(f, u), u);
    EXPECT_DOUBLE_EQ(rs.e_r, 10);
    EXPECT_LT(rs.e_theta.norm(), 1e-15);
    EXPECT_DOUBLE_EQ(rs.r, 5);
}

TEST(Field, RadialSplitRejectsOrigin) {
    auto f = AnalyticField::parse("x^2 + y^2");
    EXPECT_THROW(radial_angular(eval_jet2(f, Vec::Zero(2)), Vec::Zero(2)), PreconditionError);
}

TEST(Field, DerivativesMatchFiniteDifferences) {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> unif(-1.5, 1.5);
    for (const auto& p : plain_fields()) {
        auto f = AnalyticField::parse(p.expr);
        FieldWorkspace ws(f);
        for (int k = 0; k < 100; ++k) {
            Vec u(f.dim());
            for (int i = 0; i < u.size(); ++i) u[i] = unif(rng);
            const double h = 1e-5 * (1 + u.norm());
            const Jet2 j = ws.jet2(as_span(u));
            EXPECT_NEAR(j.value, p.f(u), 1e-13 * (1 + std::abs(j.value))) << p.expr;
            const Vec g_fd = oracle::central_gradient(p.f, u, h);
            EXPECT_LT((j.gradient - g_fd).norm(), 1e-6 * (1 + g_fd.norm())) << p.expr;
            auto grad_fd = [&](const Vec& v) { return oracle::central_gradient(p.f, v, 1e-4); };
            auto grad_ad = [&](const Vec& v) { return eval_gradient(f, v); };
            const Mat H_fd = oracle::central_hessian(grad_ad, u, h);
            EXPECT_LT((j.hessian - H_fd).norm(), 1e-6 * (1 + H_fd.norm())) << p.expr;
            (void)grad_fd;
            EXPECT_EQ(j.hessian, j.hessian.transpose());
        }
    }
}

TEST(Field, EulerIdentityAndSplitInvariants) {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> unif(-2, 2);
    for (const auto& p : plain_fields()) {
        auto f = AnalyticField::parse(p.expr);
        for (int k = 0; k < 100; ++k) {
            Vec u(f.dim());
            for (int i = 0; i < u.size(); ++i) u[i] = unif(rng);
            const Jet2 j = eval_jet2(f, u);
            const RadialSplit rs = radial_angular(j, u);
            const double gn = j.gradient.norm();
            EXPECT_LE(std::abs(rs.e_theta.dot(u)), 1e-12 * gn * rs.r + 1e-300);
            EXPECT_LE((rs.e_theta + rs.e_r * u / rs.r - j.gradient).norm(), 1e-12 * gn + 1e-300);
            EXPECT_NEAR(rs.e_r * rs.e_r + rs.e_theta.squaredNorm(), gn * gn, 1e-12 * gn * gn);
            if (p.degree > 0) {
                EXPECT_LT(std::abs(rs.r * rs.e_r - p.degree * j.value), 1e-10 * (1 + std::abs(j.value))) << p.expr;
            }
        }
    }
}

TEST(Field, DeterministicBitIdentical) {
    auto f = AnalyticField::parse("exp(x1)*sin(x2) - cos(x1*x2) + x3^3");
    Vec u(3);
    u << 0.3, -0.7, 1.1;
    const Jet2 a = eval_jet2(f, u), b = eval_jet2(f, u);
    EXPECT_EQ(a.value, b.value);
    EXPECT_EQ(a.gradient, b.gradient);
    EXPECT_EQ(a.hessian, b.hessian);
}

TEST(Field, ParserAcceptsVariantsAndRejectsGarbage) {
    EXPECT_EQ(AnalyticField::parse("x1 + x3").dim(), 3);
    EXPECT_EQ(AnalyticField::parse("z").dim(), 3);
    EXPECT_EQ(AnalyticField::parse("x1", 4).dim(), 4);
    Vec u(2);
    u << 2, 3;
    EXPECT_DOUBLE_EQ(eval_value(AnalyticField::parse("-x^2 + 2*y"), u), 2);
    EXPECT_DOUBLE_EQ(eval_value(AnalyticField::parse("x^(2)*y^-1"), u), 4.0 / 3.0);
    EXPECT_DOUBLE_EQ(eval_value(AnalyticField::parse("-(x-y)^3"), u), 1);
    EXPECT_THROW(AnalyticField::parse(""), ParseError);
    EXPECT_THROW(AnalyticField::parse("x^"), ParseError);
    EXPECT_THROW(AnalyticField::parse("x^0.5"), ParseError);
    EXPECT_THROW(AnalyticField::parse("x + * y"), ParseError);
    EXPECT_THROW(AnalyticField::parse("log(x)"), ParseError);
    EXPECT_THROW(AnalyticField::parse("(x + y"), ParseError);
    EXPECT_THROW(AnalyticField::parse("x3", 2), ParseError);
}

TEST(Field, EvaluationErrorsNameTheSubexpression) {
    auto f = AnalyticField::parse("x^-1 + y");
    try {
        eval_jet2(f, Vec::Zero(2));
        FAIL() << "expected an evaluation error";
    } catch (const EvaluationError& e) {
        EXPECT_NE(e.subexpression.find("x"), std::string::npos);
    }
    EXPECT_THROW(eval_value(AnalyticField::parse("x+y", 3), Vec::Zero(2)), PreconditionError);
    auto bounded = AnalyticField::parse("x^2 + y^2", 2, 1.0);
    Vec far(2);
    far << 2, 0;
    EXPECT_THROW(eval_value(bounded, far), EvaluationError);
}
