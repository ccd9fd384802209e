#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "martnet/oracles.hpp"
#include "martnet/rng.hpp"

using namespace martnet;

namespace {

constexpr double kPi = 3.14159265358979323846;

Box box1(double lo, double hi) {
    Box b;
    b.lower = {lo};
    b.upper = {hi};
    return b;
}

Box box2(double lo, double hi) {
    Box b;
    b.lower = {lo, lo};
    b.upper = {hi, hi};
    return b;
}

}  // namespace

TEST_CASE("fd_eigen reproduces closed-form principal eigenvalues") {
    const Expr zero = Expr::parse("0", 2, 0);

    const auto d1 = fd_eigen(Expr::parse("0", 1, 0), box1(0.0, 1.0), 2000, 1, 3);
    CHECK(std::fabs(d1.eigenvalues[0] - (-kPi * kPi / 2.0)) <= 1e-3);
    CHECK(std::fabs(d1.eigenvalues[1] - (-4.0 * kPi * kPi / 2.0)) <= 1e-2);
    CHECK(d1.eigenvalues[0] > d1.eigenvalues[1]);  // principal first
    CHECK(d1.eigenvalues[1] > d1.eigenvalues[2]);

    const auto d2 = fd_eigen(zero, box2(0.0, 1.0), 96, 2, 1);
    CHECK(std::fabs(d2.eigenvalues[0] - (-kPi * kPi)) <= 5e-3);

    const auto qho = fd_eigen(Expr::parse("-0.5*x0^2", 1, 0), box1(-8.0, 8.0), 2000, 1, 2);
    CHECK(std::fabs(qho.eigenvalues[0] - (-0.5)) <= 1e-3);
    CHECK(std::fabs(qho.eigenvalues[1] - (-1.5)) <= 1e-2);
}

TEST_CASE("fd_eigen error decreases ~4x when n doubles") {
    const Expr zero = Expr::parse("0", 1, 0);
    const double exact = -kPi * kPi / 2.0;
    double prev_err = 0.0;
    for (int step = 0; step < 3; ++step) {
        const int n = 100 << step;
        const double err = std::fabs(fd_eigen(zero, box1(0.0, 1.0), n, 1, 1).eigenvalues[0] - exact);
        if (step > 0) {
            const double ratio = prev_err / err;
            CHECK(ratio >= 3.5);
            CHECK(ratio <= 4.5);
        }
        prev_err = err;
    }
}

TEST_CASE("fd_eigen 2-D harmonic potential on a truncation box") {
    const auto fd = fd_eigen(Expr::parse("-0.5*(x0^2+x1^2)", 2, 0), box2(-6.0, 6.0), 120, 2, 2);
    CHECK(std::fabs(fd.eigenvalues[0] - (-1.0)) <= 5e-3);
    CHECK(std::fabs(fd.eigenvalues[1] - (-2.0)) <= 2e-2);
}

TEST_CASE("fd_eigen misuse") {
    const Expr zero = Expr::parse("0", 1, 0);
    CHECK_THROWS_AS(fd_eigen(zero, box1(0.0, 1.0), 2, 1), UsageError);
    CHECK_THROWS_AS(fd_eigen(zero, box1(0.0, 1.0), 100, 3), UsageError);
}

TEST_CASE("riccati closed form and numeric integrator") {
    const LqOracle oracle = riccati_lq(2, 1.0);
    CHECK(oracle.k(0.0) == 1.0);
    CHECK(oracle.k(0.7) == 1.0);
    const std::vector<double> x0{1.0, -2.0};
    CHECK(oracle.value(0.0, x0) == doctest::Approx(0.5 * 5.0 + 1.0));  // |x|^2/2 + dT/2
    std::vector<double> u(2);
    oracle.policy(0.3, x0, u);
    CHECK(u[0] == -1.0);
    CHECK(u[1] == 2.0);

    // k' = k^2 - 1, k(T) = 1: the constant solution, to 1e-10
    const auto k1 = riccati_k_numeric(1.0, 1.0, 200);
    for (double k : k1) CHECK(std::fabs(k - 1.0) <= 1e-10);

    // modified terminal weight: k decreasing backward toward 1, k(T) = 2 exactly
    const auto k2 = riccati_k_numeric(1.0, 2.0, 400);
    CHECK(k2.back() == 2.0);
    for (std::size_t i = 0; i + 1 < k2.size(); ++i) {
        CHECK(k2[i] <= k2[i + 1] + 1e-14);
        CHECK(k2[i] >= 1.0);
    }
    // step halving agreement <= 1e-8
    const auto k2fine = riccati_k_numeric(1.0, 2.0, 800);
    for (std::size_t i = 0; i < k2.size(); ++i)
        CHECK(std::fabs(k2[i] - k2fine[2 * i]) <= 1e-8);
}

TEST_CASE("skorokhod_1d examples and discrete conditions") {
    {
        const std::vector<double> f{0.5, 0.2, 0.9, 0.1};
        const auto [xi, local] = skorokhod_1d(f);
        CHECK(xi == f);
        for (double l : local) CHECK(l == 0.0);
    }
    {
        const std::vector<double> f{1.0, -1.0, 0.0};
        const auto [xi, local] = skorokhod_1d(f);
        CHECK(local == std::vector<double>{0.0, 1.0, 1.0});
        CHECK(xi == std::vector<double>{1.0, 0.0, 1.0});
    }
    // random walks: xi >= 0, L nondecreasing, L increases only when xi = 0,
    // and xi = f + L exactly
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<double> f(200);
        f[0] = unit_double(mix64(42u, static_cast<std::uint64_t>(trial)));
        for (std::size_t i = 1; i < f.size(); ++i)
            f[i] = f[i - 1] + 0.3 * normal_double(mix64(43u, static_cast<std::uint64_t>(trial), i));
        const auto [xi, local] = skorokhod_1d(f);
        for (std::size_t i = 0; i < f.size(); ++i) {
            CHECK(xi[i] >= 0.0);
            CHECK(xi[i] == f[i] + local[i]);
            if (i > 0) {
                CHECK(local[i] >= local[i - 1]);
                if (local[i] > local[i - 1]) CHECK(xi[i] == 0.0);
            }
        }
    }
}

TEST_CASE("martingale mean test z-scores") {
    {
        std::vector<double> zeros(100 * 5, 0.0);
        const auto z = martingale_mean_test(zeros, 100, 5);
        CHECK(z.pooled == 0.0);
        for (double zi : z.per_index) CHECK(zi == 0.0);
    }
    {
        const int paths = 10000, steps = 4;
        std::vector<double> d(static_cast<std::size_t>(paths) * steps);
        for (std::size_t i = 0; i < d.size(); ++i) d[i] = normal_double(mix64(4242u, i));
        const auto z = martingale_mean_test(d, paths, steps);
        CHECK(std::fabs(z.pooled) <= 4.0);
        for (double zi : z.per_index) CHECK(std::fabs(zi) <= 4.0);
        for (double& v : d) v += 1.0;
        const auto shifted = martingale_mean_test(d, paths, steps);
        CHECK(std::fabs(shifted.pooled) > 10.0);
    }
    {
        // degenerate: zero variance with nonzero mean
        std::vector<double> ones(30 * 2, 1.0);
        const auto z = martingale_mean_test(ones, 30, 2);
        CHECK(std::isinf(z.pooled));
    }
    std::vector<double> small(10, 0.0);
    CHECK_THROWS_AS(martingale_mean_test(small, 10, 1), UsageError);
}
