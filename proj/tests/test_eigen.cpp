#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "martnet/eigen.hpp"
#include "martnet/oracles.hpp"
#include "martnet/rng.hpp"

using namespace martnet;

namespace {

constexpr double kPi = 3.14159265358979323846;

EigenProblem laplace_problem(int d, const std::string& potential = "0",
                             BoundaryKind bk = BoundaryKind::kDirichlet) {
    EigenProblem pb;
    pb.spec.dim = d;
    pb.spec.sigma.kind = SigmaSpec::Kind::kScalar;
    pb.spec.sigma.entries.push_back(Expr::parse("1", d, 0));
    if (potential != "0") pb.spec.potential = Expr::parse(potential, d, 0);
    pb.spec.domain.kind = Domain::Kind::kBox;
    pb.spec.domain.box.lower.assign(static_cast<std::size_t>(d), 0.0);
    pb.spec.domain.box.upper.assign(static_cast<std::size_t>(d), 1.0);
    pb.spec.domain.boundary = bk;
    return pb;
}

MlpParams constant_net(int d, double value) {
    MlpParams net = mlp_init(std::vector<int>{d, 4, 1}, 1);
    std::fill(net.params.begin(), net.params.end(), 0.0);
    net.params.back() = value;
    return net;
}

PathEnsemble stopped_paths(const EigenProblem& pb, double x0, const TimeGrid& grid, int paths,
                           std::uint64_t seed) {
    std::vector<double> start(static_cast<std::size_t>(pb.spec.dim), x0);
    return sample_problem_paths(pb, start, grid, paths, seed);
}

}  // namespace

TEST_CASE("batch schedule: full batch, singleton, determinism") {
    const BatchSchedule full = batch_schedule(6, 6, 3, 9);
    for (int i = 0; i < 3; ++i) {
        std::vector<bool> seen(6, false);
        for (std::uint32_t m : full.at(i)) seen[m] = true;
        for (bool s : seen) CHECK(s);  // A_i = {1..M}
    }
    const BatchSchedule single = batch_schedule(5, 1, 4, 9);
    for (int i = 0; i < 4; ++i) CHECK(single.at(i)[0] < 5);

    const BatchSchedule a = batch_schedule(50, 7, 10, 1234);
    const BatchSchedule b = batch_schedule(50, 7, 10, 1234);
    CHECK(a.index == b.index);
    // without replacement
    for (int i = 0; i < 10; ++i) {
        std::vector<bool> seen(50, false);
        for (std::uint32_t m : a.at(i)) {
            CHECK_FALSE(seen[m]);
            seen[m] = true;
        }
    }
    CHECK_THROWS_AS(batch_schedule(5, 6, 2, 1), UsageError);
    CHECK_THROWS_AS(batch_schedule(5, 0, 2, 1), UsageError);
}

TEST_CASE("martingale increments: constant eigenpair identities") {
    EigenProblem pb = laplace_problem(1);
    const TimeGrid grid{1.0, 10};
    pb.starts = {{0.5}};
    const PathEnsemble ens = stopped_paths(pb, 0.5, grid, 64, 7);

    // u = 1, V = 0, lambda = 0: increments vanish exactly
    const MlpParams one = constant_net(1, 1.0);
    const IncrementMatrix d0 = martingale_increments(one, 0.0, ens, pb);
    for (double v : d0.values) CHECK(v == 0.0);

    // u = 1, lambda = 2, dt = 0.1: live increments are exactly -0.2
    const IncrementMatrix d2 = martingale_increments(one, 2.0, ens, pb);
    for (int m = 0; m < d2.paths; ++m)
        for (int i = 0; i < d2.steps; ++i) {
            if (i < ens.exit_index[m])
                CHECK(d2.at(m, i) == doctest::Approx(-0.2).epsilon(1e-14));
            else
                CHECK(d2.at(m, i) == 0.0);
        }
}

TEST_CASE("martingale increments: ensemble/boundary mismatch is rejected") {
    EigenProblem dirichlet = laplace_problem(1);
    EigenProblem neumann = laplace_problem(1, "0", BoundaryKind::kNeumann);
    const TimeGrid grid{0.5, 5};
    const PathEnsemble stopped = stopped_paths(dirichlet, 0.5, grid, 8, 3);
    const PathEnsemble reflected = stopped_paths(neumann, 0.5, grid, 8, 3);
    const MlpParams net = constant_net(1, 1.0);
    CHECK_THROWS_AS(martingale_increments(net, 0.0, reflected, dirichlet), UsageError);
    CHECK_THROWS_AS(martingale_increments(net, 0.0, stopped, neumann), UsageError);
}

TEST_CASE("exact 1-D eigenpair passes the martingale z-test (small version)") {
    EigenProblem pb = laplace_problem(1);
    const int steps = 100;
    const TimeGrid grid{0.2, steps};
    const int paths = 4000;
    const PathEnsemble ens = stopped_paths(pb, 0.5, grid, paths, 404);

    const ScalarField u = [](std::span<const double> x) { return std::sin(kPi * x[0]); };
    const double lambda = -kPi * kPi / 2.0;
    const IncrementMatrix d = martingale_increments(u, nullptr, lambda, ens, pb);
    const auto z = martingale_mean_test(d.values, paths, steps);

    int exited = 0;
    for (int m = 0; m < paths; ++m) exited += ens.exit_index[m] < steps ? 1 : 0;
    const double dt = grid.dt();
    const double budget = (static_cast<double>(exited) / paths) * 0.6 * kPi * std::sqrt(dt) +
                          steps * (std::pow(kPi, 4) / 8.0) * dt * dt;
    CHECK(std::fabs(z.pooled_mean) <= budget + 4.0 * z.pooled_se);
}

TEST_CASE("eigen_loss: zero, hand arithmetic, and brute force") {
    {
        IncrementMatrix d;
        d.paths = 4;
        d.steps = 3;
        d.values.assign(12, 0.0);
        const BatchSchedule s = batch_schedule(4, 2, 3, 1);
        CHECK(eigen_loss(d, s, 0.0, 0.0) == 0.0);
        CHECK(eigen_loss(d, s, 0.7, 2.0) == doctest::Approx(1.4));  // beta * reg only
    }
    {
        // N=2, |A_i|=2, batch means (0.1, -0.3) -> 0.05
        IncrementMatrix d;
        d.paths = 2;
        d.steps = 2;
        d.values = {0.1, -0.4, 0.1, -0.2};  // means: (0.1+0.1)/2, (-0.4-0.2)/2
        BatchSchedule s;
        s.paths = 2;
        s.steps = 2;
        s.batch = 2;
        s.index = {0, 1, 0, 1};
        CHECK(eigen_loss(d, s, 0.0, 0.0) == doctest::Approx(0.05).epsilon(1e-14));
    }
    {
        // random increments vs an independent re-summation
        IncrementMatrix d;
        d.paths = 17;
        d.steps = 9;
        d.values.resize(17 * 9);
        for (std::size_t i = 0; i < d.values.size(); ++i)
            d.values[i] = normal_double(mix64(0xbeefULL, i));
        const BatchSchedule s = batch_schedule(17, 5, 9, 77);
        double expected = 0.0;
        for (int i = 0; i < 9; ++i) {
            double mean = 0.0;
            for (int b = 0; b < 5; ++b) mean += d.at(static_cast<int>(s.at(i)[static_cast<std::size_t>(b)]), i);
            mean /= 5.0;
            expected += mean * mean;
        }
        expected /= 9.0;
        CHECK(eigen_loss(d, s, 0.0, 0.0) == doctest::Approx(expected).epsilon(1e-14));
    }
}

TEST_CASE("permutation invariance of the loss") {
    IncrementMatrix d;
    d.paths = 10;
    d.steps = 6;
    d.values.resize(60);
    for (std::size_t i = 0; i < d.values.size(); ++i) d.values[i] = normal_double(mix64(51u, i));
    BatchSchedule s = batch_schedule(10, 4, 6, 5);
    const double base = eigen_loss(d, s, 0.0, 0.0);

    // relabel paths by a permutation and map the schedule in place
    std::vector<int> perm{3, 1, 4, 0, 9, 2, 7, 8, 5, 6};
    IncrementMatrix dp;
    dp.paths = 10;
    dp.steps = 6;
    dp.values.resize(60);
    for (int m = 0; m < 10; ++m)
        for (int i = 0; i < 6; ++i) dp.at(perm[static_cast<std::size_t>(m)], i) = d.at(m, i);
    BatchSchedule sp = s;
    for (auto& m : sp.index) m = static_cast<std::uint32_t>(perm[m]);
    CHECK(eigen_loss(dp, sp, 0.0, 0.0) == base);  // bit-identical
}

TEST_CASE("stopped paths contribute nothing once tau = 0") {
    EigenProblem pb = laplace_problem(1);
    const TimeGrid grid{1.0, 8};
    PathEnsemble ens = stopped_paths(pb, 0.5, grid, 16, 9);
    for (int m = 0; m < ens.paths; ++m) ens.exit_index[m] = 0;
    const MlpParams net = mlp_init(std::vector<int>{1, 6, 1}, 3);
    const IncrementMatrix d = martingale_increments(net, 1.3, ens, pb);
    for (double v : d.values) CHECK(v == 0.0);
    const BatchSchedule s = batch_schedule(16, 4, 8, 2);
    CHECK(eigen_loss(d, s, 0.0, 0.0) == 0.0);
}

TEST_CASE("rayleigh regularizer closed forms") {
    EigenProblem pb = laplace_problem(1);
    QuadratureSpec quad;

    // u = 1 on a volume-1 domain: energy 0, normalization defect 0
    CHECK(rayleigh_reg(constant_net(1, 1.0), pb, quad, 3.0) == doctest::Approx(0.0));

    // u = c: gamma*(c^2 |D| - 1)^2 with |D| = 1
    const double c = 1.7;
    CHECK(rayleigh_reg(constant_net(1, c), pb, quad, 2.0) ==
          doctest::Approx(2.0 * (c * c - 1.0) * (c * c - 1.0)).epsilon(1e-12));

    // u = sin(pi x): pi^2/4 + (1/2 - 1)^2 via the callable overload
    const ScalarField u = [](std::span<const double> x) { return std::sin(kPi * x[0]); };
    const GradientField g = [](std::span<const double> x) {
        return std::vector<double>{kPi * std::cos(kPi * x[0])};
    };
    const double expected = kPi * kPi / 4.0 + 0.25;
    CHECK(std::fabs(rayleigh_reg(u, g, pb, quad, 1.0) - expected) <= 1e-3);

    // the net-based path agrees with the callable path on the same function
    const MlpParams net = mlp_init(std::vector<int>{1, 8, 8, 1}, 21);
    const ScalarField nu = [&](std::span<const double> x) {
        return mlp_forward_scalar<double>(net.layer_sizes, net.params, x);
    };
    const GradientField ng = [&](std::span<const double> x) {
        return mlp_forward_with_input_grad(net, x).grad;
    };
    CHECK(rayleigh_reg(net, pb, quad, 5.0) ==
          doctest::Approx(rayleigh_reg(nu, ng, pb, quad, 5.0)).epsilon(1e-12));

    // refuses drift and unbounded domains
    EigenProblem with_drift = laplace_problem(1);
    with_drift.spec.mu.push_back(Expr::parse("1", 1, 0));
    CHECK_THROWS_AS(rayleigh_reg(constant_net(1, 1.0), with_drift, quad, 1.0), UsageError);
    EigenProblem unbounded = laplace_problem(1);
    unbounded.spec.domain.kind = Domain::Kind::kAllSpace;
    unbounded.spec.domain.truncation.reset();
    CHECK_THROWS_AS(rayleigh_reg(constant_net(1, 1.0), unbounded, quad, 1.0), UsageError);
}

TEST_CASE("driftless generator mode adds the drift term to the increments") {
    EigenProblem pb = laplace_problem(1);
    pb.mode = GeneratorMode::kDriftless;
    pb.spec.mu.push_back(Expr::parse("0.7", 1, 0));
    const TimeGrid grid{0.5, 5};
    const PathEnsemble ens = stopped_paths(pb, 0.5, grid, 32, 11);  // simulated driftless

    const ScalarField u = [](std::span<const double> x) { return x[0] * x[0]; };
    const GradientField g = [](std::span<const double> x) {
        return std::vector<double>{2.0 * x[0]};
    };
    const double lambda = 0.4;
    const IncrementMatrix d = martingale_increments(u, &g, lambda, ens, pb);
    const double dt = grid.dt();
    for (int m = 0; m < 4; ++m)
        for (int i = 0; i < ens.exit_index[m]; ++i) {
            const double xi = ens.state(m, i)[0];
            const double xn = ens.state(m, i + 1)[0];
            const double expect = xn * xn - xi * xi - (lambda * xi * xi - 0.7 * 2.0 * xi) * dt;
            CHECK(d.at(m, i) == doctest::Approx(expect).epsilon(1e-12));
        }
}

TEST_CASE("Neumann/Robin increments carry the local-time term") {
    EigenProblem pb = laplace_problem(1, "0", BoundaryKind::kRobin);
    pb.spec.domain.robin_c = 0.8;
    const TimeGrid grid{0.5, 50};
    const PathEnsemble ens = stopped_paths(pb, 0.1, grid, 64, 17);
    double total_local = 0.0;
    for (double l : ens.local_time) total_local += l;
    REQUIRE(total_local > 0.0);

    const ScalarField u = [](std::span<const double> x) { return 1.0 + x[0]; };
    const double lambda = 0.3;
    const IncrementMatrix d = martingale_increments(u, nullptr, lambda, ens, pb);
    const double dt = grid.dt();
    for (int m = 0; m < 8; ++m)
        for (int i = 0; i < grid.steps; ++i) {
            const double xi = ens.state(m, i)[0];
            const double xn = ens.state(m, i + 1)[0];
            const double dl = ens.local_time_increment(m, i);
            const double expect =
                (1.0 + xn) - (1.0 + xi) + 0.8 * (1.0 + xi) * dl + (0.0 - lambda) * (1.0 + xi) * dt;
            CHECK(d.at(m, i) == doctest::Approx(expect).epsilon(1e-12));
        }
}

TEST_CASE("gradient of the full training loss matches finite differences") {
    // tiny instance: M=4, N=3, width 4
    EigenProblem pb = laplace_problem(1);
    pb.starts = {{0.4}, {0.6}};
    const TimeGrid grid{0.3, 3};
    const int paths = 4;
    std::vector<PathEnsemble> ensembles;
    std::vector<BatchSchedule> schedules;
    for (int k = 0; k < 2; ++k) {
        ensembles.push_back(stopped_paths(pb, pb.starts[static_cast<std::size_t>(k)][0], grid, paths, 100 + static_cast<std::uint64_t>(k)));
        schedules.push_back(batch_schedule(paths, 3, 3, 200 + static_cast<std::uint64_t>(k)));
    }
    MlpParams net = mlp_init(std::vector<int>{1, 4, 1}, 5);
    const double lambda = -1.1;
    const double beta = 0.7, gamma = 3.0, beta_bc = 0.9;
    const QuadratureSpec quad;

    std::vector<double> grad(net.params.size() + 1);
    const LossTerms terms = eigen_loss_gradient(pb, ensembles, schedules, net, lambda, beta,
                                                gamma, beta_bc, quad, grad);

    // independent double-path assembly of the same loss
    const auto loss_at = [&](const MlpParams& u, double lam) {
        double total = 0.0;
        for (int k = 0; k < 2; ++k) {
            const IncrementMatrix d = martingale_increments(u, lam, ensembles[static_cast<std::size_t>(k)], pb);
            total += eigen_loss(d, schedules[static_cast<std::size_t>(k)], 0.0, 0.0);
            total += beta_bc * boundary_penalty(u, ensembles[static_cast<std::size_t>(k)]);
        }
        total /= 2.0;
        total += beta * rayleigh_reg(u, pb, quad, gamma);
        return total;
    };
    CHECK(terms.total == doctest::Approx(loss_at(net, lambda)).epsilon(1e-10));

    double worst = 0.0;
    for (std::size_t p = 0; p <= net.params.size(); ++p) {
        const bool is_lambda = p == net.params.size();
        const double base = is_lambda ? lambda : net.params[p];
        const double h = 1e-6 * (1.0 + std::fabs(base));
        MlpParams up = net, dn = net;
        double lu = lambda, ld = lambda;
        if (is_lambda) {
            lu = base + h;
            ld = base - h;
        } else {
            up.params[p] = base + h;
            dn.params[p] = base - h;
        }
        const double fd = (loss_at(up, lu) - loss_at(dn, ld)) / (2.0 * h);
        const double denom = std::max({1.0, std::fabs(fd), std::fabs(grad[p])});
        worst = std::max(worst, std::fabs(grad[p] - fd) / denom);
    }
    CHECK(worst <= 1e-5);
}

TEST_CASE("constant-network identity: exact zero loss at beta = 0") {
    EigenProblem pb = laplace_problem(1);
    pb.starts = {{0.5}};
    const TimeGrid grid{0.5, 6};
    std::vector<PathEnsemble> ens{stopped_paths(pb, 0.5, grid, 8, 2)};
    std::vector<BatchSchedule> sch{batch_schedule(8, 4, 6, 3)};
    const MlpParams one = constant_net(1, 1.0);
    std::vector<double> grad(one.params.size() + 1);
    const LossTerms terms =
        eigen_loss_gradient(pb, ens, sch, one, 0.0, 0.0, 1.0, 0.0, QuadratureSpec{}, grad);
    CHECK(terms.total == 0.0);
    CHECK(terms.martingale == 0.0);
}

TEST_CASE("training smoke: loss decreases and lambda moves") {
    EigenProblem pb = laplace_problem(1);
    TrainConfig cfg;
    cfg.grid = TimeGrid{0.5, 20};
    cfg.paths = 64;
    cfg.batch = 16;
    cfg.epochs = 30;
    cfg.seed = 99;
    cfg.eigen_layers = {1, 8, 8, 1};
    cfg.optimizer.learning_rate = 5e-3;
    pb.starts = sample_uniform_starts(pb.spec.domain, 4, cfg.seed);

    const auto [state, report] = train_eigen(pb, cfg);
    REQUIRE(report.rows.size() == 30);
    CHECK(report.rows.back().loss < report.rows.front().loss);
    CHECK(std::isfinite(state.lambda));
    for (std::size_t i = 1; i < report.rows.size(); ++i)
        CHECK(report.rows[i].epoch == report.rows[i - 1].epoch + 1);
}
