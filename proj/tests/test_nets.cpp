#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "martnet/autodiff.hpp"
#include "martnet/nets.hpp"
#include "martnet/rng.hpp"

using namespace martnet;

namespace {

// straight-line re-implementation of the forward pass, no dot kernels
double plain_forward(const MlpParams& net, std::span<const double> input) {
    std::vector<double> h(input.begin(), input.end());
    std::size_t ofs = 0;
    const std::size_t layers = net.layer_sizes.size() - 1;
    for (std::size_t l = 1; l <= layers; ++l) {
        const int in_w = net.layer_sizes[l - 1];
        const int out_w = net.layer_sizes[l];
        std::vector<double> next(static_cast<std::size_t>(out_w));
        for (int o = 0; o < out_w; ++o) {
            double acc = net.params[ofs + static_cast<std::size_t>(out_w) * in_w + o];
            for (int j = 0; j < in_w; ++j)
                acc += net.params[ofs + static_cast<std::size_t>(o) * in_w + j] * h[static_cast<std::size_t>(j)];
            next[static_cast<std::size_t>(o)] = (l < layers) ? std::tanh(acc) : acc;
        }
        h = std::move(next);
        ofs += static_cast<std::size_t>(out_w) * in_w + out_w;
    }
    return h[0];
}

std::vector<double> random_input(int d, std::uint64_t key) {
    std::vector<double> x(static_cast<std::size_t>(d));
    for (int j = 0; j < d; ++j)
        x[static_cast<std::size_t>(j)] = -1.5 + 3.0 * unit_double(mix64(key, static_cast<std::uint64_t>(j)));
    return x;
}

}  // namespace

TEST_CASE("initialization counts parameters and is deterministic") {
    const std::vector<int> sizes{1, 8, 1};
    const MlpParams a = mlp_init(sizes, 7);
    CHECK(a.count() == 25);  // 1*8+8 + 8*1+1
    const MlpParams b = mlp_init(sizes, 7);
    CHECK(a.params == b.params);
    const MlpParams c = mlp_init(sizes, 8);
    CHECK(a.params != c.params);

    CHECK_THROWS_AS(mlp_init(std::vector<int>{2, 0, 1}, 1), UsageError);
    CHECK_THROWS_AS(mlp_init(std::vector<int>{2, 1}, 1), UsageError);  // no hidden layer

    // Glorot bounds, biases zero
    const double bound = std::sqrt(6.0 / (1 + 8));
    for (std::size_t i = 0; i < 8; ++i) CHECK(std::fabs(a.params[i]) <= bound);
    for (std::size_t i = 8; i < 16; ++i) CHECK(a.params[i] == 0.0);
}

TEST_CASE("forward matches the trivial examples") {
    // all-zero weights, output bias b -> constant output
    MlpParams net = mlp_init(std::vector<int>{2, 4, 1}, 3);
    std::fill(net.params.begin(), net.params.end(), 0.0);
    net.params.back() = 2.5;
    CHECK(mlp_forward(net, std::vector<double>{0.3, -0.7})[0] == 2.5);
    CHECK(mlp_forward(net, std::vector<double>{5.0, 5.0})[0] == 2.5);

    // bare affine layer: w*x
    MlpParams lin;
    lin.layer_sizes = {1, 1};
    lin.params = {3.0, 0.0};
    CHECK(mlp_forward(lin, std::vector<double>{2.0})[0] == 6.0);

    CHECK_THROWS_AS(mlp_forward(net, std::vector<double>{1.0}), UsageError);
}

TEST_CASE("forward matches a straight-line re-implementation") {
    const std::vector<int> sizes{3, 16, 16, 1};
    const MlpParams net = mlp_init(sizes, 42);
    for (int trial = 0; trial < 20; ++trial) {
        const auto x = random_input(3, mix64(9000u, static_cast<std::uint64_t>(trial)));
        CHECK(mlp_forward(net, x)[0] == doctest::Approx(plain_forward(net, x)).epsilon(1e-14));
    }
}

TEST_CASE("input gradient: constant, linear, and finite-difference cases") {
    MlpParams net = mlp_init(std::vector<int>{2, 4, 1}, 3);
    std::fill(net.params.begin(), net.params.end(), 0.0);
    net.params.back() = 1.0;
    const auto vg = mlp_forward_with_input_grad(net, std::vector<double>{0.2, 0.4});
    CHECK(vg.value == 1.0);
    CHECK(vg.grad[0] == 0.0);
    CHECK(vg.grad[1] == 0.0);

    MlpParams lin;
    lin.layer_sizes = {3, 1};
    lin.params = {1.5, -2.0, 0.5, 0.0};
    const auto lg = mlp_forward_with_input_grad(lin, std::vector<double>{9.0, 9.0, 9.0});
    CHECK(lg.grad == std::vector<double>{1.5, -2.0, 0.5});

    const MlpParams rnd = mlp_init(std::vector<int>{2, 12, 12, 1}, 11);
    for (int trial = 0; trial < 10; ++trial) {
        auto x = random_input(2, mix64(777u, static_cast<std::uint64_t>(trial)));
        const auto res = mlp_forward_with_input_grad(rnd, x);
        CHECK(res.value == doctest::Approx(plain_forward(rnd, x)).epsilon(1e-14));
        for (int j = 0; j < 2; ++j) {
            const double h = 1e-6 * (1.0 + std::fabs(x[static_cast<std::size_t>(j)]));
            const double saved = x[static_cast<std::size_t>(j)];
            x[static_cast<std::size_t>(j)] = saved + h;
            const double fp = plain_forward(rnd, x);
            x[static_cast<std::size_t>(j)] = saved - h;
            const double fm = plain_forward(rnd, x);
            x[static_cast<std::size_t>(j)] = saved;
            const double fd = (fp - fm) / (2.0 * h);
            const double denom = std::max({1.0, std::fabs(fd), std::fabs(res.grad[static_cast<std::size_t>(j)])});
            CHECK(std::fabs(res.grad[static_cast<std::size_t>(j)] - fd) / denom <= 1e-5);
        }
    }

    const MlpParams vec = mlp_init(std::vector<int>{2, 4, 2}, 5);
    CHECK_THROWS_AS(mlp_forward_with_input_grad(vec, std::vector<double>{0.0, 0.0}),
                    UsageError);
}

TEST_CASE("parameter gradients of the forward pass match finite differences") {
    const std::vector<int> sizes{2, 6, 6, 1};
    // randomly initialized 2-hidden-layer MLP with tanh: 10 (params, input) pairs
    double worst = 0.0;
    for (int trial = 0; trial < 10; ++trial) {
        const MlpParams net = mlp_init(sizes, 100 + static_cast<std::uint64_t>(trial));
        const auto x = random_input(2, mix64(31337u, static_cast<std::uint64_t>(trial)));
        const ad::Program prog = [&](ad::Tape& t, std::span<const ad::Var> theta) {
            std::vector<ad::Var> in;
            for (double xi : x) in.push_back(t.constant(xi));
            return mlp_forward_scalar<ad::Var>(sizes, theta, in);
        };
        worst = std::max(worst, ad::gradient_check(prog, net.params, 1e-6));
    }
    CHECK(worst <= 1e-5);
}

TEST_CASE("parameter gradients of the input gradient (mixed second order)") {
    const std::vector<int> sizes{2, 5, 5, 1};
    double worst = 0.0;
    for (int trial = 0; trial < 4; ++trial) {
        const MlpParams net = mlp_init(sizes, 500 + static_cast<std::uint64_t>(trial));
        const auto x = random_input(2, mix64(5151u, static_cast<std::uint64_t>(trial)));
        for (int comp = 0; comp < 2; ++comp) {
            const ad::Program prog = [&](ad::Tape& t, std::span<const ad::Var> theta) {
                std::vector<ad::Var> in;
                for (double xi : x) in.push_back(t.constant(xi));
                auto vg = mlp_forward_with_input_grad_span<ad::Var>(sizes, theta, in);
                return vg.grad[static_cast<std::size_t>(comp)];
            };
            worst = std::max(worst, ad::gradient_check(prog, net.params, 1e-6));
        }
    }
    CHECK(worst <= 1e-4);
}

TEST_CASE("evaluation order across a batch does not change results") {
    const MlpParams net = mlp_init(std::vector<int>{2, 8, 8, 1}, 23);
    std::vector<std::vector<double>> batch;
    for (int i = 0; i < 16; ++i) batch.push_back(random_input(2, mix64(220u, static_cast<std::uint64_t>(i))));
    std::vector<double> forward_order, reverse_order(16);
    for (const auto& x : batch) forward_order.push_back(mlp_forward(net, x)[0]);
    for (int i = 15; i >= 0; --i) reverse_order[static_cast<std::size_t>(i)] = mlp_forward(net, batch[static_cast<std::size_t>(i)])[0];
    CHECK(forward_order == reverse_order);
}
