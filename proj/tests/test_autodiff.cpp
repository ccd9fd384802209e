#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "martnet/autodiff.hpp"
#include "martnet/rng.hpp"

using namespace martnet;
using ad::Program;
using ad::Tape;
using ad::Var;

namespace {

double fd_partial(const Program& f, std::vector<double> x, std::size_t i, double h) {
    const double saved = x[i];
    x[i] = saved + h;
    const double fp = ad::record(f, x).output_value();
    x[i] = saved - h;
    const double fm = ad::record(f, x).output_value();
    return (fp - fm) / (2.0 * h);
}

}  // namespace

TEST_CASE("record evaluates the examples") {
    const Program square = [](Tape&, std::span<const Var> x) { return x[0] * x[0]; };
    CHECK(ad::record(square, std::vector<double>{3.0}).output_value() == 9.0);

    const Program th = [](Tape&, std::span<const Var> x) { return ad::tanh(x[0]); };
    CHECK(ad::record(th, std::vector<double>{0.0}).output_value() == 0.0);

    const Program mixed = [](Tape& t, std::span<const Var> x) {
        return x[0] * x[1] + ad::exp(t.constant(0.0));
    };
    CHECK(ad::record(mixed, std::vector<double>{2.0, 5.0}).output_value() == 11.0);
}

TEST_CASE("backward matches the closed forms") {
    const Program square = [](Tape&, std::span<const Var> x) { return x[0] * x[0]; };
    Tape t1 = ad::record(square, std::vector<double>{3.0});
    CHECK(ad::backward(t1).entries[0] == doctest::Approx(6.0));

    const Program prod = [](Tape&, std::span<const Var> x) { return x[0] * x[1]; };
    Tape t2 = ad::record(prod, std::vector<double>{2.0, 5.0});
    const auto g = ad::backward(t2);
    CHECK(g.entries[0] == doctest::Approx(5.0));
    CHECK(g.entries[1] == doctest::Approx(2.0));

    const Program th = [](Tape&, std::span<const Var> x) { return ad::tanh(x[0]); };
    Tape t3 = ad::record(th, std::vector<double>{0.0});
    CHECK(ad::backward(t3).entries[0] == doctest::Approx(1.0));
}

TEST_CASE("every elementary operation agrees with central differences") {
    // 100 random points per op with magnitudes in [1e-2, 1e2]
    struct OpCase {
        const char* name;
        Program prog;
        bool positive_only;
        bool needs_two;
    };
    const std::vector<OpCase> cases = {
        {"add", [](Tape&, std::span<const Var> x) { return x[0] + x[1]; }, false, true},
        {"sub", [](Tape&, std::span<const Var> x) { return x[0] - x[1]; }, false, true},
        {"mul", [](Tape&, std::span<const Var> x) { return x[0] * x[1]; }, false, true},
        {"div", [](Tape&, std::span<const Var> x) { return x[0] / x[1]; }, false, true},
        {"neg", [](Tape&, std::span<const Var> x) { return -x[0]; }, false, false},
        {"pow2.5",
         [](Tape&, std::span<const Var> x) { return ad::pow_const(x[0], 2.5); }, true, false},
        {"exp", [](Tape&, std::span<const Var> x) { return ad::exp(x[0] * 0.01); }, false, false},
        {"ln", [](Tape&, std::span<const Var> x) { return ad::ln(x[0]); }, true, false},
        {"tanh", [](Tape&, std::span<const Var> x) { return ad::tanh(x[0]); }, false, false},
        {"sin", [](Tape&, std::span<const Var> x) { return ad::sin(x[0]); }, false, false},
        {"cos", [](Tape&, std::span<const Var> x) { return ad::cos(x[0]); }, false, false},
        {"sqrt", [](Tape&, std::span<const Var> x) { return ad::sqrt(x[0]); }, true, false},
        {"abs", [](Tape&, std::span<const Var> x) { return ad::abs(x[0]); }, false, false},
        {"max", [](Tape&, std::span<const Var> x) { return ad::max(x[0], x[1]); }, false, true},
        {"min", [](Tape&, std::span<const Var> x) { return ad::min(x[0], x[1]); }, false, true},
        {"sum",
         [](Tape& t, std::span<const Var> x) {
             return ad::sum(t, x);
         },
         false, true},
        {"dot",
         [](Tape& t, std::span<const Var> x) {
             std::span<const Var> a = x.subspan(0, 1), b = x.subspan(1, 1);
             return ad::dot(t, a, b);
         },
         false, true},
    };

    for (const OpCase& c : cases) {
        CAPTURE(c.name);
        double worst = 0.0;
        for (int trial = 0; trial < 100; ++trial) {
            std::vector<double> x;
            for (int j = 0; j < (c.needs_two ? 2 : 1); ++j) {
                const double mag = std::pow(10.0, -2.0 + 4.0 * unit_double(mix64(
                                                             7321u, static_cast<std::uint64_t>(trial), static_cast<std::uint64_t>(j))));
                const bool neg = !c.positive_only &&
                                 unit_double(mix64(991u, static_cast<std::uint64_t>(trial), static_cast<std::uint64_t>(j))) < 0.5;
                x.push_back(neg ? -mag : mag);
            }
            // keep away from kinks and division blowups
            if (c.needs_two && std::fabs(std::fabs(x[0]) - std::fabs(x[1])) < 1e-4) x[1] *= 1.5;
            if (std::fabs(x[0]) < 5e-2) x[0] += x[0] >= 0 ? 0.1 : -0.1;
            if (c.needs_two && std::fabs(x[1]) < 5e-2) x[1] += x[1] >= 0 ? 0.1 : -0.1;
            worst = std::max(worst, ad::gradient_check(c.prog, x, 1e-6));
        }
        CHECK(worst <= 1e-5);
    }
}

TEST_CASE("gradient is linear in the program") {
    const double a = 2.5, b = -1.25;
    const Program f = [](Tape&, std::span<const Var> x) { return x[0] * x[0] * x[1]; };
    const Program g = [](Tape&, std::span<const Var> x) { return ad::sin(x[0]) + x[1]; };
    const Program combo = [&](Tape& t, std::span<const Var> x) {
        return t.constant(a) * (x[0] * x[0] * x[1]) + t.constant(b) * (ad::sin(x[0]) + x[1]);
    };
    const std::vector<double> pt{0.7, -1.3};
    const auto gf = ad::backward(ad::record(f, pt));
    const auto gg = ad::backward(ad::record(g, pt));
    const auto gc = ad::backward(ad::record(combo, pt));
    for (std::size_t i = 0; i < pt.size(); ++i)
        CHECK(gc.entries[i] == doctest::Approx(a * gf.entries[i] + b * gg.entries[i]).epsilon(1e-12));
}

TEST_CASE("replay and backward are bit-deterministic") {
    const Program f = [](Tape& t, std::span<const Var> x) {
        std::vector<Var> parts{ad::exp(x[0] * 0.3), ad::sin(x[1]), x[0] / x[1],
                               ad::pow_const(ad::abs(x[1]), 1.7)};
        return ad::sum(t, parts) * ad::tanh(x[0]);
    };
    const std::vector<double> pt{0.37, -2.11};
    Tape tape = ad::record(f, pt);

    const std::vector<double> replayed = tape.replay();
    REQUIRE(replayed.size() == tape.size());
    for (std::size_t i = 0; i < replayed.size(); ++i) CHECK(replayed[i] == tape.value(static_cast<std::uint32_t>(i)));

    const auto g1 = tape.backward();
    const auto g2 = tape.backward();
    REQUIRE(g1.entries.size() == g2.entries.size());
    for (std::size_t i = 0; i < g1.entries.size(); ++i) CHECK(g1.entries[i] == g2.entries[i]);
}

TEST_CASE("gradient_check on the spec cases") {
    // quadratic form: finite differences are exact up to roundoff
    const Program quad = [](Tape& t, std::span<const Var> x) {
        return t.constant(0.5) * (x[0] * x[0]) + x[0] * x[1] + t.constant(2.0) * (x[1] * x[1]);
    };
    CHECK(ad::gradient_check(quad, std::vector<double>{1.3, -0.4}, 1e-6) <= 1e-8);

    // constant function: exactly zero gradient
    const Program constant = [](Tape& t, std::span<const Var> x) {
        return ad::sum(t, x) * t.constant(0.0) + t.constant(4.2);
    };
    Tape ct = ad::record(constant, std::vector<double>{0.3, 0.9});
    for (double g : ad::backward(ct).entries) CHECK(g == 0.0);
    CHECK(ad::gradient_check(constant, std::vector<double>{0.3, 0.9}, 1e-6) == 0.0);
}

TEST_CASE("backward reports the non-finite node") {
    Tape t;
    const Var x = t.param(-1.0);
    const Var y = ad::sqrt(x);  // NaN
    t.set_output(y + 1.0);
    CHECK_THROWS_WITH_AS(t.backward(), doctest::Contains("node"), NumericError);
}

TEST_CASE("misuse is rejected") {
    Tape t;
    const Var x = t.param(1.0);
    CHECK_THROWS_AS(t.emit1(ad::Op::kAdd, x), UsageError);
    CHECK_THROWS_AS(t.emit2(ad::Op::kExp, x, x), UsageError);
    CHECK_THROWS_AS(t.backward(), UsageError);  // no output set
    const Program f = [](Tape&, std::span<const Var> x) { return x[0]; };
    CHECK_THROWS_AS(ad::record(f, std::vector<double>{}), UsageError);
    CHECK_THROWS_AS(ad::gradient_check(f, std::vector<double>{1.0}, 0.0), UsageError);
}
