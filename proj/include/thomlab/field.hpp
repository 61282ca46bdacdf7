#pragma once

// Analytic scalar fields on R^n with exact first and second derivatives.
//
// A field is parsed from an infix string (variables x1..xn, with x, y, z as
// aliases for x1, x2, x3; operators + - * ^ with integer exponents; functions
// exp, sin, cos) and compiled to a flat tape. Derivatives come from forward
// propagation of second-order jets along the tape, so they are exact up to
// floating-point rounding.

#include <Eigen/Dense>

#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <limits>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "thomlab/error.hpp"

namespace thomlab {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

struct Jet2 {
    double value = 0.0;
    Vec gradient;
    Mat hessian;  // symmetric
};

/// Gradient split into its component along u/|u| and the orthogonal rest.
struct RadialSplit {
    double e_r = 0.0;
    Vec e_theta;
    double r = 0.0;
};

enum class OpCode { Const, Var, Add, Sub, Mul, Neg, Pow, Exp, Sin, Cos };

struct Instr {
    OpCode op = OpCode::Const;
    int lhs = -1;
    int rhs = -1;
    int var = 0;
    int power = 0;
    double constant = 0.0;
    std::string text;  // subexpression, for diagnostics
};

namespace detail {

/// x^k for integer k by repeated squaring.
inline double ipow(double x, int k) {
    if (k < 0) return 1.0 / ipow(x, -k);
    double result = 1.0;
    while (k > 0) {
        if (k & 1) result *= x;
        x *= x;
        k >>= 1;
    }
    return result;
}

class Parser {
public:
    explicit Parser(std::string_view src) : src_(src) {}

    std::vector<Instr> run(int& max_var) {
        skip_ws();
        if (pos_ == src_.size()) fail("empty expression");
        expr();
        skip_ws();
        if (pos_ != src_.size()) fail("unexpected character '" + std::string(1, src_[pos_]) + "'");
        max_var = max_var_;
        return std::move(tape_);
    }

private:
    [[noreturn]] void fail(const std::string& what) const {
        throw ParseError(what + " at offset " + std::to_string(pos_) + " in \"" + std::string(src_) + "\"");
    }

    void skip_ws() {
        while (pos_ < src_.size() && std::isspace(static_cast<unsigned char>(src_[pos_]))) ++pos_;
    }

    bool accept(char c) {
        skip_ws();
        if (pos_ < src_.size() && src_[pos_] == c) {
            ++pos_;
            return true;
        }
        return false;
    }

    int emit(Instr in) {
        tape_.push_back(std::move(in));
        return static_cast<int>(tape_.size()) - 1;
    }

    int binary(OpCode op, int a, int b, const char* sym) {
        Instr in;
        in.op = op;
        in.lhs = a;
        in.rhs = b;
        in.text = "(" + tape_[a].text + sym + tape_[b].text + ")";
        return emit(std::move(in));
    }

    int expr() {
        int acc = term();
        for (;;) {
            if (accept('+')) {
                acc = binary(OpCode::Add, acc, term(), " + ");
            } else if (accept('-')) {
                acc = binary(OpCode::Sub, acc, term(), " - ");
            } else {
                return acc;
            }
        }
    }

    int term() {
        int acc = unary();
        while (accept('*')) acc = binary(OpCode::Mul, acc, unary(), "*");
        return acc;
    }

    int unary() {
        if (accept('-')) {
            int a = unary();
            Instr in;
            in.op = OpCode::Neg;
            in.lhs = a;
            in.text = "-" + tape_[a].text;
            return emit(std::move(in));
        }
        if (accept('+')) return unary();
        return power();
    }

    int power() {
        int base = primary();
        while (accept('^')) {
            int k = integer_exponent();
            Instr in;
            in.op = OpCode::Pow;
            in.lhs = base;
            in.power = k;
            in.text = tape_[base].text + "^" + std::to_string(k);
            base = emit(std::move(in));
        }
        return base;
    }

    int integer_exponent() {
        skip_ws();
        bool paren = accept('(');
        int sign = 1;
        if (accept('-')) {
            sign = -1;
        } else {
            accept('+');
        }
        skip_ws();
        double v = number_literal();
        if (paren && !accept(')')) fail("expected ')' after exponent");
        if (v != std::floor(v) || std::abs(v) > 1e6) fail("exponent must be an integer");
        return sign * static_cast<int>(v);
    }

    double number_literal() {
        skip_ws();
        const char* begin = src_.data() + pos_;
        char* end = nullptr;
        std::string tmp(begin, src_.size() - pos_);
        double v = std::strtod(tmp.c_str(), &end);
        std::size_t used = static_cast<std::size_t>(end - tmp.c_str());
        if (used == 0) fail("expected a number");
        pos_ += used;
        return v;
    }

    int primary() {
        skip_ws();
        if (pos_ >= src_.size()) fail("unexpected end of expression");
        char c = src_[pos_];
        if (c == '(') {
            ++pos_;
            int inner = expr();
            if (!accept(')')) fail("expected ')'");
            return inner;
        }
        if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') {
            Instr in;
            in.op = OpCode::Const;
            in.constant = number_literal();
            char buf[64];
            std::snprintf(buf, sizeof buf, "%.17g", in.constant);
            in.text = buf;
            return emit(std::move(in));
        }
        if (std::isalpha(static_cast<unsigned char>(c))) {
            std::size_t start = pos_;
            while (pos_ < src_.size() && std::isalnum(static_cast<unsigned char>(src_[pos_]))) ++pos_;
            std::string ident(src_.substr(start, pos_ - start));
            if (ident == "exp" || ident == "sin" || ident == "cos") {
                if (!accept('(')) fail("expected '(' after " + ident);
                int arg = expr();
                if (!accept(')')) fail("expected ')' closing " + ident);
                Instr in;
                in.op = ident == "exp" ? OpCode::Exp : ident == "sin" ? OpCode::Sin : OpCode::Cos;
                in.lhs = arg;
                in.text = ident + "(" + tape_[arg].text + ")";
                return emit(std::move(in));
            }
            int index = -1;
            if (ident == "x") {
                index = 0;
            } else if (ident == "y") {
                index = 1;
            } else if (ident == "z") {
                index = 2;
            } else if (ident.size() > 1 && ident[0] == 'x' &&
                       ident.find_first_not_of("0123456789", 1) == std::string::npos) {
                index = std::stoi(ident.substr(1)) - 1;
                if (index < 0) fail("variables are numbered from x1");
            } else {
                pos_ = start;
                fail("unknown identifier '" + ident + "'");
            }
            max_var_ = std::max(max_var_, index + 1);
            Instr in;
            in.op = OpCode::Var;
            in.var = index;
            in.text = "x" + std::to_string(index + 1);
            return emit(std::move(in));
        }
        fail("unexpected character '" + std::string(1, c) + "'");
    }

    std::string_view src_;
    std::size_t pos_ = 0;
    std::vector<Instr> tape_;
    int max_var_ = 0;
};

}  // namespace detail

/// An analytic scalar field, immutable after construction.
class AnalyticField {
public:
    AnalyticField() = default;

    /// Parses `source`. `dim` of 0 means the largest variable index used.
    static AnalyticField parse(std::string_view source, int dim = 0,
                               double domain_radius = std::numeric_limits<double>::infinity()) {
        int used = 0;
        auto tape = detail::Parser(source).run(used);
        if (dim == 0) dim = std::max(used, 1);
        if (dim < used) {
            throw ParseError("expression uses x" + std::to_string(used) + " but dim is " + std::to_string(dim));
        }
        if (!(domain_radius > 0.0)) throw ParseError("domain radius must be positive");
        AnalyticField f;
        f.impl_ = std::make_shared<const Impl>(Impl{std::string(source), dim, domain_radius, std::move(tape)});
        return f;
    }

    int dim() const { return impl_ ? impl_->dim : 0; }
    const std::string& source() const { return impl_->source; }
    double domain_radius() const { return impl_->radius; }
    const std::vector<Instr>& tape() const { return impl_->tape; }
    bool valid() const { return static_cast<bool>(impl_); }

private:
    struct Impl {
        std::string source;
        int dim;
        double radius;
        std::vector<Instr> tape;
    };
    std::shared_ptr<const Impl> impl_;
};

/// Scratch buffers for repeated evaluation of one field. Not shareable
/// between threads; the field itself is.
class FieldWorkspace {
public:
    explicit FieldWorkspace(const AnalyticField& field) : field_(field) {}

    const AnalyticField& field() const { return field_; }

    /// Value only.
    double value(std::span<const double> x) { return run(x, 0); }

    /// Value and gradient; `grad` must have dim() entries.
    double value_gradient(std::span<const double> x, std::span<double> grad) {
        double v = run(x, 1);
        const int n = field_.dim();
        const int top = static_cast<int>(field_.tape().size()) - 1;
        for (int i = 0; i < n; ++i) grad[i] = g_[top * n + i];
        return v;
    }

    Jet2 jet2(std::span<const double> x) {
        Jet2 out;
        out.value = run(x, 2);
        const int n = field_.dim();
        const int top = static_cast<int>(field_.tape().size()) - 1;
        out.gradient.resize(n);
        out.hessian.resize(n, n);
        for (int i = 0; i < n; ++i) out.gradient[i] = g_[top * n + i];
        const double* h = &h_[static_cast<std::size_t>(top) * n * n];
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j) out.hessian(i, j) = 0.5 * (h[i * n + j] + h[j * n + i]);
        return out;
    }

private:
    void check_point(std::span<const double> x) const {
        const int n = field_.dim();
        if (static_cast<int>(x.size()) != n) {
            throw PreconditionError("point has dimension " + std::to_string(x.size()) + ", field expects " +
                                    std::to_string(n));
        }
        double r2 = 0.0;
        for (double xi : x) r2 += xi * xi;
        if (!(std::sqrt(r2) < field_.domain_radius())) {
            throw EvaluationError("point outside the field domain", field_.source());
        }
    }

    double run(std::span<const double> x, int order) {
        check_point(x);
        const auto& tape = field_.tape();
        const int n = field_.dim();
        const std::size_t m = tape.size();
        v_.resize(m);
        if (order >= 1) g_.assign(m * n, 0.0);
        if (order >= 2) h_.assign(m * n * n, 0.0);
        const std::size_t nn = static_cast<std::size_t>(n) * n;

        for (std::size_t k = 0; k < m; ++k) {
            const Instr& in = tape[k];
            double* gk = order >= 1 ? &g_[k * n] : nullptr;
            double* hk = order >= 2 ? &h_[k * nn] : nullptr;
            const std::size_t a = static_cast<std::size_t>(in.lhs);
            const std::size_t b = static_cast<std::size_t>(in.rhs);
            switch (in.op) {
            case OpCode::Const:
                v_[k] = in.constant;
                break;
            case OpCode::Var:
                v_[k] = x[in.var];
                if (order >= 1) gk[in.var] = 1.0;
                break;
            case OpCode::Add:
            case OpCode::Sub: {
                const double s = in.op == OpCode::Add ? 1.0 : -1.0;
                v_[k] = v_[a] + s * v_[b];
                if (order >= 1)
                    for (int i = 0; i < n; ++i) gk[i] = g_[a * n + i] + s * g_[b * n + i];
                if (order >= 2)
                    for (std::size_t i = 0; i < nn; ++i) hk[i] = h_[a * nn + i] + s * h_[b * nn + i];
                break;
            }
            case OpCode::Neg:
                v_[k] = -v_[a];
                if (order >= 1)
                    for (int i = 0; i < n; ++i) gk[i] = -g_[a * n + i];
                if (order >= 2)
                    for (std::size_t i = 0; i < nn; ++i) hk[i] = -h_[a * nn + i];
                break;
            case OpCode::Mul: {
                const double va = v_[a], vb = v_[b];
                v_[k] = va * vb;
                if (order >= 1) {
                    const double* ga = &g_[a * n];
                    const double* gb = &g_[b * n];
                    for (int i = 0; i < n; ++i) gk[i] = va * gb[i] + vb * ga[i];
                    if (order >= 2) {
                        const double* ha = &h_[a * nn];
                        const double* hb = &h_[b * nn];
                        for (int i = 0; i < n; ++i)
                            for (int j = 0; j < n; ++j) {
                                const std::size_t ij = static_cast<std::size_t>(i) * n + j;
                                hk[ij] = va * hb[ij] + vb * ha[ij] + ga[i] * gb[j] + gb[i] * ga[j];
                            }
                    }
                }
                break;
            }
            case OpCode::Pow: {
                const int p = in.power;
                const double va = v_[a];
                if (p == 0) {
                    v_[k] = 1.0;
                    break;
                }
                const double d1 = p == 1 ? 1.0 : p * ipow(va, p - 1);
                v_[k] = p == 1 ? va : ipow(va, p);
                const double d2 = p == 1 ? 0.0 : static_cast<double>(p) * (p - 1) * ipow(va, p - 2);
                chain(k, a, n, order, d1, d2);
                break;
            }
            case OpCode::Exp: {
                const double e = std::exp(v_[a]);
                v_[k] = e;
                chain(k, a, n, order, e, e);
                break;
            }
            case OpCode::Sin: {
                const double s = std::sin(v_[a]), c = std::cos(v_[a]);
                v_[k] = s;
                chain(k, a, n, order, c, -s);
                break;
            }
            case OpCode::Cos: {
                const double s = std::sin(v_[a]), c = std::cos(v_[a]);
                v_[k] = c;
                chain(k, a, n, order, -s, -c);
                break;
            }
            }
            if (!std::isfinite(v_[k])) throw EvaluationError("non-finite value", in.text);
        }
        if (order >= 1) verify_finite(order);
        return v_[m - 1];
    }

    static double ipow(double x, int k) { return detail::ipow(x, k); }

    // d(f(a)) = f'(a) da, d2 = f'(a) d2a + f''(a) da da^T
    void chain(std::size_t k, std::size_t a, int n, int order, double d1, double d2) {
        if (order < 1) return;
        double* gk = &g_[k * n];
        const double* ga = &g_[a * n];
        for (int i = 0; i < n; ++i) gk[i] = d1 * ga[i];
        if (order < 2) return;
        const std::size_t nn = static_cast<std::size_t>(n) * n;
        double* hk = &h_[k * nn];
        const double* ha = &h_[a * nn];
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j) {
                const std::size_t ij = static_cast<std::size_t>(i) * n + j;
                hk[ij] = d1 * ha[ij] + d2 * ga[i] * ga[j];
            }
    }

    void verify_finite(int order) const {
        const auto& tape = field_.tape();
        const std::size_t n = static_cast<std::size_t>(field_.dim());
        const std::size_t top = tape.size() - 1;
        bool ok = true;
        for (std::size_t i = 0; i < n; ++i) ok = ok && std::isfinite(g_[top * n + i]);
        if (order >= 2)
            for (std::size_t i = 0; i < n * n; ++i) ok = ok && std::isfinite(h_[top * n * n + i]);
        if (ok) return;
        // locate the innermost offending subexpression
        for (std::size_t k = 0; k < tape.size(); ++k) {
            for (std::size_t i = 0; i < n; ++i)
                if (!std::isfinite(g_[k * n + i])) throw EvaluationError("non-finite derivative", tape[k].text);
            if (order >= 2)
                for (std::size_t i = 0; i < n * n; ++i)
                    if (!std::isfinite(h_[k * n * n + i]))
                        throw EvaluationError("non-finite second derivative", tape[k].text);
        }
    }

    AnalyticField field_;
    std::vector<double> v_, g_, h_;
};

inline std::span<const double> as_span(const Vec& v) { return {v.data(), static_cast<std::size_t>(v.size())}; }

inline Jet2 eval_jet2(const AnalyticField& field, const Vec& point) {
    FieldWorkspace ws(field);
    return ws.jet2(as_span(point));
}

inline double eval_value(const AnalyticField& field, const Vec& point) {
    FieldWorkspace ws(field);
    return ws.value(as_span(point));
}

inline Vec eval_gradient(const AnalyticField& field, const Vec& point) {
    FieldWorkspace ws(field);
    Vec g(field.dim());
    ws.value_gradient(as_span(point), {g.data(), static_cast<std::size_t>(g.size())});
    return g;
}

inline RadialSplit radial_angular(const Vec& gradient, const Vec& point) {
    const double r = point.norm();
    if (!(r > 0.0)) throw PreconditionError("radial split undefined at the origin");
    RadialSplit out;
    out.r = r;
    const Vec unit = point / r;
    out.e_r = gradient.dot(unit);
    out.e_theta = gradient - out.e_r * unit;
    return out;
}

inline RadialSplit radial_angular(const Jet2& jet, const Vec& point) { return radial_angular(jet.gradient, point); }

}  // namespace thomlab
