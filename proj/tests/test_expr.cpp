#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "martnet/autodiff.hpp"
#include "martnet/expr.hpp"
#include "martnet/rng.hpp"

using namespace martnet;

namespace {

double eval1(const Expr& e, double x0, double t = 0.0) {
    return e.eval(ExprBindings<double>{std::span(&x0, 1), &t, {}});
}

}  // namespace

TEST_CASE("parsing honors the grammar") {
    const Expr e = Expr::parse("0.5*(x0^2+x1^2)", 2, 0);
    const auto vars = e.free_vars();
    CHECK(vars.state[0]);
    CHECK(vars.state[1]);
    CHECK_FALSE(vars.time);
    const double x[2] = {3.0, 4.0};
    CHECK(e.eval(ExprBindings<double>{x, nullptr, {}}) == doctest::Approx(12.5));

    // unary minus binds looser than ^
    const Expr neg = Expr::parse("-x0^2", 1, 0);
    CHECK(eval1(neg, 3.0) == doctest::Approx(-9.0));

    // left associativity: 2^3^2 = (2^3)^2 = 64, 8-3-2 = 3, 16/4/2 = 2
    CHECK(Expr::parse("2^3^2", 0, 0).constant_value() == doctest::Approx(64.0));
    CHECK(Expr::parse("8-3-2", 0, 0).constant_value() == doctest::Approx(3.0));
    CHECK(Expr::parse("16/4/2", 0, 0).constant_value() == doctest::Approx(2.0));
    // precedence: ^ above *, * above +
    CHECK(Expr::parse("2+3*2^2", 0, 0).constant_value() == doctest::Approx(14.0));
}

TEST_CASE("parse errors carry 1-based offsets") {
    try {
        Expr::parse("sin(x0", 1, 0);
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        CHECK(e.offset() == 7);
    }
    CHECK_THROWS_AS(Expr::parse("", 1, 0), ParseError);
    CHECK_THROWS_AS(Expr::parse("x0+", 1, 0), ParseError);     // empty operand
    CHECK_THROWS_AS(Expr::parse("x5", 1, 0), ParseError);      // out of range
    CHECK_THROWS_AS(Expr::parse("y0", 1, 0), ParseError);      // unknown identifier
    CHECK_THROWS_AS(Expr::parse("u0", 1, 0), ParseError);      // no controls declared
    CHECK_THROWS_AS(Expr::parse("f(x0)", 1, 0), ParseError);   // unknown function
    CHECK_THROWS_AS(Expr::parse("(x0+1", 1, 0), ParseError);   // unbalanced
    CHECK_THROWS_AS(Expr::parse("x0 x0", 1, 0), ParseError);   // no implicit multiplication
}

TEST_CASE("eval covers the examples and error cases") {
    const Expr prod = Expr::parse("x0*x1", 2, 0);
    const double xy[2] = {2.0, 3.0};
    CHECK(prod.eval(ExprBindings<double>{xy, nullptr, {}}) == doctest::Approx(6.0));

    const Expr et = Expr::parse("exp(0)+t", 0, 0);
    const double t = 1.0;
    CHECK(et.eval(ExprBindings<double>{{}, &t, {}}) == doctest::Approx(2.0));

    const Expr inv = Expr::parse("1/x0", 1, 0);
    CHECK_THROWS_AS(eval1(inv, 0.0), NumericError);
    CHECK_THROWS_AS(eval1(Expr::parse("ln(x0)", 1, 0), -1.0), NumericError);
    CHECK_THROWS_AS(eval1(Expr::parse("ln(x0)", 1, 0), 0.0), NumericError);
    CHECK_THROWS_AS(eval1(Expr::parse("sqrt(x0)", 1, 0), -4.0), NumericError);
    // general power needs a positive base
    CHECK_THROWS_AS(eval1(Expr::parse("x0^t", 1, 0), -2.0), NumericError);
    CHECK(eval1(Expr::parse("x0^t", 1, 0), 2.0, 3.0) == doctest::Approx(8.0));

    // missing binding
    const Expr needs_t = Expr::parse("t", 0, 0);
    CHECK_THROWS_AS(needs_t.eval(ExprBindings<double>{}), UsageError);
}

TEST_CASE("free_vars is exact") {
    CHECK(Expr::parse("0.5*(x0^2)", 1, 0).free_vars().names() ==
          std::vector<std::string>{"x0"});
    CHECK(Expr::parse("3.14", 0, 0).free_vars().none());
    const auto vars = Expr::parse("u0*x1+t", 2, 1).free_vars().names();
    CHECK(vars == std::vector<std::string>{"x1", "t", "u0"});
}

namespace {

// random expression source built from the grammar, for round-trip checks
std::string random_source(std::uint64_t key, int depth) {
    const auto pick = [&](int n, std::uint64_t salt) {
        return static_cast<int>(mix64(key, salt, static_cast<std::uint64_t>(depth)) % static_cast<std::uint64_t>(n));
    };
    if (depth <= 0 || pick(4, 11) == 0) {
        switch (pick(4, 23)) {
            case 0: return std::string("x0");
            case 1: return std::string("x1");
            case 2: return std::string("t");
            default: {
                char buf[24];
                std::snprintf(buf, sizeof(buf), "%.3f", 0.25 + 3.0 * unit_double(mix64(key, 5)));
                return std::string(buf);
            }
        }
    }
    const std::string a = random_source(mix64(key, 101), depth - 1);
    const std::string b = random_source(mix64(key, 202), depth - 1);
    switch (pick(8, 37)) {
        case 0: return "(" + a + "+" + b + ")";
        case 1: return "(" + a + "-" + b + ")";
        case 2: return "(" + a + "*" + b + ")";
        case 3: return "(" + a + "/(2+abs(" + b + ")))";
        case 4: return "sin(" + a + ")";
        case 5: return "tanh(" + a + ")";
        case 6: return "exp(-abs(" + a + "))";
        default: return "(-" + a + ")";
    }
}

}  // namespace

TEST_CASE("print/parse round trip preserves structure and values") {
    for (int trial = 0; trial < 50; ++trial) {
        const std::string src = random_source(mix64(0xF00D, static_cast<std::uint64_t>(trial)), 4);
        CAPTURE(src);
        const Expr e = Expr::parse(src, 2, 0);
        const std::string printed = e.to_string();
        const Expr again = Expr::parse(printed, 2, 0);
        CHECK(again.to_string() == printed);  // structurally identical tree

        for (int pt = 0; pt < 5; ++pt) {
            const double x[2] = {-2.0 + 4.0 * unit_double(mix64(3u, static_cast<std::uint64_t>(trial), static_cast<std::uint64_t>(pt))),
                                 -2.0 + 4.0 * unit_double(mix64(4u, static_cast<std::uint64_t>(trial), static_cast<std::uint64_t>(pt)))};
            const double t = unit_double(mix64(5u, static_cast<std::uint64_t>(trial), static_cast<std::uint64_t>(pt)));
            const ExprBindings<double> bind{x, &t, {}};
            CHECK(e.eval(bind) == again.eval(bind));
        }
    }
}

TEST_CASE("evaluation over tape scalars matches finite differences") {
    const Expr e = Expr::parse("sin(x0)*exp(0.3*x1)+x0/(2+tanh(x1))+x0^3", 2, 0);
    for (int trial = 0; trial < 10; ++trial) {
        std::vector<double> x{-1.5 + 3.0 * unit_double(mix64(77u, static_cast<std::uint64_t>(trial), 0)),
                              -1.5 + 3.0 * unit_double(mix64(77u, static_cast<std::uint64_t>(trial), 1))};
        const ad::Program prog = [&](ad::Tape&, std::span<const ad::Var> v) {
            return e.eval(ExprBindings<ad::Var>{v, nullptr, {}});
        };
        CHECK(ad::gradient_check(prog, x, 1e-6) <= 1e-5);
    }
}
