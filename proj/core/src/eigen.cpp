#include "martnet/eigen.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <map>
#include <numeric>

#include "martnet/autodiff.hpp"
#include "martnet/oracles.hpp"
#include "martnet/rng.hpp"

namespace martnet {

void EigenProblem::validate() const {
    spec.validate();
    if (mode == GeneratorMode::kDriftless && !spec.sigma.is_constant() && !driftless_ack)
        throw UsageError(
            "driftless mode with state-dependent sigma changes the sampled process "
            "(dX = sigma dB); set driftless_ack to accept");
    if (spec.domain.boundary == BoundaryKind::kDirichlet && !spec.domain.bounded() &&
        !spec.domain.truncation)
        throw UsageError("Dirichlet problems need a bounded domain or a truncation box");
}

BatchSchedule batch_schedule(int paths, int batch, int steps, std::uint64_t epoch_seed) {
    if (batch < 1 || batch > paths)
        throw UsageError("batch size must satisfy 1 <= batch <= M");
    if (steps < 1) throw UsageError("batch schedule needs N >= 1");
    BatchSchedule s;
    s.paths = paths;
    s.steps = steps;
    s.batch = batch;
    s.index.resize(static_cast<std::size_t>(steps) * batch);
    std::vector<std::uint32_t> pool(static_cast<std::size_t>(paths));
    for (int i = 0; i < steps; ++i) {
        std::iota(pool.begin(), pool.end(), 0u);
        // partial Fisher-Yates: first `batch` entries are a uniform subset
        for (int j = 0; j < batch; ++j) {
            const std::uint64_t r = mix64(epoch_seed, rng_stream::kSchedule,
                                          static_cast<std::uint64_t>(i),
                                          static_cast<std::uint64_t>(j));
            const int pick = j + static_cast<int>(r % static_cast<std::uint64_t>(paths - j));
            std::swap(pool[static_cast<std::size_t>(j)], pool[static_cast<std::size_t>(pick)]);
            s.index[static_cast<std::size_t>(i) * batch + j] = pool[static_cast<std::size_t>(j)];
        }
    }
    return s;
}

namespace {

void check_ensemble_kind(const PathEnsemble& ensemble, const EigenProblem& problem) {
    const bool needs_reflecting = problem.spec.domain.boundary != BoundaryKind::kDirichlet;
    if (needs_reflecting && !ensemble.reflecting)
        throw UsageError("Neumann/Robin increments need a reflecting ensemble");
    if (!needs_reflecting && ensemble.reflecting)
        throw UsageError("Dirichlet increments need a non-reflecting ensemble");
}

double robin_coefficient(const EigenProblem& problem) {
    return problem.spec.domain.boundary == BoundaryKind::kRobin ? problem.spec.domain.robin_c
                                                                : 0.0;
}

}  // namespace

IncrementMatrix martingale_increments(const ScalarField& u, const GradientField* grad_u,
                                      double lambda, const PathEnsemble& ensemble,
                                      const EigenProblem& problem) {
    check_ensemble_kind(ensemble, problem);
    const bool driftless = problem.mode == GeneratorMode::kDriftless;
    if (driftless && grad_u == nullptr && !problem.spec.mu.empty())
        throw UsageError("driftless increments need the gradient of u");

    const int N = ensemble.grid.steps;
    const double dt = ensemble.grid.dt();
    const bool reflecting = ensemble.reflecting;
    const double c = robin_coefficient(problem);

    IncrementMatrix d;
    d.paths = ensemble.paths;
    d.steps = N;
    d.values.assign(static_cast<std::size_t>(ensemble.paths) * N, 0.0);

    std::vector<double> mu(static_cast<std::size_t>(ensemble.dim));
    for (int m = 0; m < ensemble.paths; ++m) {
        const int live = std::min(ensemble.exit_index[m], N);
        double u_next = live > 0 ? u(ensemble.state(m, 0)) : 0.0;
        for (int i = 0; i < live; ++i) {
            const double u_i = u_next;
            u_next = u(ensemble.state(m, i + 1));
            const auto x = ensemble.state(m, i);
            const double t = ensemble.grid.time(i);
            const double v = problem.spec.potential_at(x, t);
            double inc;
            if (reflecting) {
                inc = u_next - u_i + c * u_i * ensemble.local_time_increment(m, i) +
                      (v - lambda) * u_i * dt;
            } else {
                inc = u_next - u_i - (lambda - v) * u_i * dt;
                if (driftless && !problem.spec.mu.empty()) {
                    problem.spec.drift_at(x, t, mu);
                    const std::vector<double> g = (*grad_u)(x);
                    double mg = 0.0;
                    for (int j = 0; j < ensemble.dim; ++j) mg += mu[static_cast<std::size_t>(j)] * g[static_cast<std::size_t>(j)];
                    inc += mg * dt;
                }
            }
            d.at(m, i) = inc;
        }
    }
    return d;
}

IncrementMatrix martingale_increments(const MlpParams& u, double lambda,
                                      const PathEnsemble& ensemble,
                                      const EigenProblem& problem) {
    const ScalarField value = [&u](std::span<const double> x) {
        return mlp_forward_scalar<double>(u.layer_sizes, u.params, x);
    };
    const GradientField grad = [&u](std::span<const double> x) {
        return mlp_forward_with_input_grad(u, x).grad;
    };
    return martingale_increments(value, &grad, lambda, ensemble, problem);
}

double eigen_loss(const IncrementMatrix& d, const BatchSchedule& schedule, double reg,
                  double beta) {
    if (schedule.paths != d.paths || schedule.steps != d.steps)
        throw UsageError("schedule does not match the increment matrix");
    if (schedule.batch < 1) throw UsageError("empty batch A_i");
    double acc = 0.0;
    for (int i = 0; i < d.steps; ++i) {
        double mean = 0.0;
        for (std::uint32_t m : schedule.at(i)) mean += d.at(static_cast<int>(m), i);
        mean /= schedule.batch;
        acc += mean * mean;
    }
    return acc / d.steps + beta * reg;
}

// ---------------------------------------------------------------------------
// Tape builders shared by the trainer and the gradient surface.

namespace {

using ad::Tape;
using ad::Var;

struct SigmaHalfSquare {
    bool diagonal = true;
    std::vector<double> diag;  // d entries
    std::vector<double> full;  // d*d entries (row-major) when !diagonal
};

// sigma*sigma'/2 for a constant-coefficient diffusion.
SigmaHalfSquare sigma_half_square(const ProblemSpec& spec) {
    if (!spec.sigma.is_constant())
        throw UsageError("regularizer requires a constant diffusion coefficient");
    const int d = spec.dim;
    SigmaHalfSquare out;
    if (spec.sigma.kind != SigmaSpec::Kind::kFull) {
        out.diag.resize(static_cast<std::size_t>(d));
        for (int j = 0; j < d; ++j) {
            const double s = spec.sigma.kind == SigmaSpec::Kind::kScalar
                                 ? spec.sigma.entries[0].constant_value()
                                 : spec.sigma.entries[static_cast<std::size_t>(j)].constant_value();
            out.diag[static_cast<std::size_t>(j)] = 0.5 * s * s;
        }
        return out;
    }
    out.diagonal = false;
    std::vector<double> sigma(static_cast<std::size_t>(d) * d);
    std::vector<double> probe(static_cast<std::size_t>(d), 0.0);
    spec.sigma.matrix(probe, 0.0, d, sigma);
    out.full.assign(static_cast<std::size_t>(d) * d, 0.0);
    for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j) {
            double acc = 0.0;
            for (int l = 0; l < d; ++l)
                acc += sigma[static_cast<std::size_t>(i) * d + l] *
                       sigma[static_cast<std::size_t>(j) * d + l];
            out.full[static_cast<std::size_t>(i) * d + j] = 0.5 * acc;
        }
    return out;
}

// Node-index cache of u evaluations at path knots.
struct EvalCache {
    std::vector<std::int32_t> node;
    int stride = 0;
    void reset(int paths, int knots) {
        node.assign(static_cast<std::size_t>(paths) * knots, -1);
        stride = knots;
    }
    std::int32_t& at(int m, int i) { return node[static_cast<std::size_t>(m) * stride + i]; }
};

Var build_mart_loss(Tape& tape, const EigenProblem& problem, const PathEnsemble& ens,
                    const BatchSchedule& sch, std::span<const int> sizes,
                    std::span<const Var> theta, Var lambda, EvalCache& cache) {
    const int N = ens.grid.steps;
    const int d = ens.dim;
    const double dt = ens.grid.dt();
    const bool reflecting = ens.reflecting;
    const bool driftless = problem.mode == GeneratorMode::kDriftless;
    const bool has_potential = !problem.spec.potential.empty();
    const bool has_drift = !problem.spec.mu.empty();
    const double robin_c = robin_coefficient(problem);

    cache.reset(ens.paths, N + 1);
    const Var dt_c = tape.constant(dt);
    const Var inv_batch = tape.constant(1.0 / sch.batch);

    std::vector<Var> xin(static_cast<std::size_t>(d));
    std::vector<double> mu(static_cast<std::size_t>(d));
    const auto lift_state = [&](int m, int i) {
        const auto x = ens.state(m, i);
        for (int j = 0; j < d; ++j) xin[static_cast<std::size_t>(j)] = tape.constant(x[j]);
    };
    const auto eval_u = [&](int m, int i) -> Var {
        std::int32_t& slot = cache.at(m, i);
        if (slot >= 0) return tape.var(static_cast<std::uint32_t>(slot));
        lift_state(m, i);
        const Var v = mlp_forward_scalar<Var>(sizes, theta, xin);
        slot = static_cast<std::int32_t>(v.index());
        return v;
    };

    std::vector<Var> live, sq_means;
    sq_means.reserve(static_cast<std::size_t>(N));
    for (int i = 0; i < N; ++i) {
        live.clear();
        const double t = ens.grid.time(i);
        for (std::uint32_t mu32 : sch.at(i)) {
            const int m = static_cast<int>(mu32);
            if (i >= ens.exit_index[m]) continue;  // frozen: increment is exactly 0
            const Var u_next = eval_u(m, i + 1);
            Var u_i{};
            Var inc{};
            if (driftless && has_drift) {
                lift_state(m, i);
                auto vg = mlp_forward_with_input_grad_span<Var>(sizes, theta, xin);
                u_i = vg.value;
                cache.at(m, i) = static_cast<std::int32_t>(u_i.index());
                problem.spec.drift_at(ens.state(m, i), t, mu);
                std::vector<Var> mu_c(static_cast<std::size_t>(d));
                for (int j = 0; j < d; ++j)
                    mu_c[static_cast<std::size_t>(j)] = tape.constant(mu[static_cast<std::size_t>(j)]);
                const Var mg = ad::dot(tape, mu_c, vg.grad);
                const double v = problem.spec.potential_at(ens.state(m, i), t);
                // u_{i+1} - u_i - ((lambda - V) u_i - mu' grad u) dt
                const Var bracket = (lambda - v) * u_i - mg;
                inc = u_next - u_i - bracket * dt_c;
            } else {
                u_i = eval_u(m, i);
                const double v =
                    has_potential ? problem.spec.potential_at(ens.state(m, i), t) : 0.0;
                if (reflecting) {
                    Var term = (v - lambda) * u_i * dt_c;
                    const double dl = ens.local_time_increment(m, i);
                    if (robin_c != 0.0 && dl != 0.0) term = term + (robin_c * dl) * u_i;
                    inc = u_next - u_i + term;
                } else {
                    inc = u_next - u_i - (lambda - v) * u_i * dt_c;
                }
            }
            live.push_back(inc);
        }
        if (live.empty()) continue;  // fully frozen batch: mean is exactly 0
        const Var mean = ad::sum(tape, live) * inv_batch;
        sq_means.push_back(mean * mean);
    }
    if (sq_means.empty()) return tape.constant(0.0);
    return ad::sum(tape, sq_means) * tape.constant(1.0 / N);
}

Var build_boundary_penalty(Tape& tape, const PathEnsemble& ens, std::span<const int> sizes,
                           std::span<const Var> theta) {
    // Exit points repeat heavily (two wall values in 1-D); group exact
    // duplicates and weight by multiplicity.
    std::map<std::vector<double>, int> groups;
    int exited = 0;
    for (int m = 0; m < ens.paths; ++m) {
        if (ens.exit_index[m] >= ens.grid.steps) continue;
        const auto p = ens.exit_point(m);
        ++groups[std::vector<double>(p.begin(), p.end())];
        ++exited;
    }
    if (exited == 0) return tape.constant(0.0);
    std::vector<Var> terms;
    terms.reserve(groups.size());
    std::vector<Var> xin(static_cast<std::size_t>(ens.dim));
    for (const auto& [point, count] : groups) {
        for (int j = 0; j < ens.dim; ++j)
            xin[static_cast<std::size_t>(j)] = tape.constant(point[static_cast<std::size_t>(j)]);
        const Var u = mlp_forward_scalar<Var>(sizes, theta, xin);
        terms.push_back(u * u * tape.constant(static_cast<double>(count)));
    }
    return ad::sum(tape, terms) * tape.constant(1.0 / exited);
}

Var build_rayleigh(Tape& tape, const EigenProblem& problem, const Quadrature& quad,
                   std::span<const int> sizes, std::span<const Var> theta, double gamma) {
    const SigmaHalfSquare c = sigma_half_square(problem.spec);
    const int d = quad.dim;
    std::vector<Var> xin(static_cast<std::size_t>(d));
    std::vector<Var> energy_terms, norm_terms, scaled(static_cast<std::size_t>(d));
    energy_terms.reserve(static_cast<std::size_t>(quad.count));
    norm_terms.reserve(static_cast<std::size_t>(quad.count));
    const bool has_potential = !problem.spec.potential.empty();

    for (int q = 0; q < quad.count; ++q) {
        const auto x = quad.point(q);
        for (int j = 0; j < d; ++j) xin[static_cast<std::size_t>(j)] = tape.constant(x[j]);
        auto vg = mlp_forward_with_input_grad_span<Var>(sizes, theta, xin);
        Var quadratic{};
        if (c.diagonal) {
            for (int j = 0; j < d; ++j)
                scaled[static_cast<std::size_t>(j)] =
                    vg.grad[static_cast<std::size_t>(j)] * c.diag[static_cast<std::size_t>(j)];
            quadratic = ad::dot(tape, vg.grad, scaled);
        } else {
            for (int j = 0; j < d; ++j) {
                std::vector<Var> row(static_cast<std::size_t>(d));
                for (int k = 0; k < d; ++k)
                    row[static_cast<std::size_t>(k)] =
                        tape.constant(c.full[static_cast<std::size_t>(j) * d + k]);
                scaled[static_cast<std::size_t>(j)] = ad::dot(tape, row, vg.grad);
            }
            quadratic = ad::dot(tape, vg.grad, scaled);
        }
        const Var u2 = vg.value * vg.value;
        Var term = quadratic;
        if (has_potential) {
            const double v = problem.spec.potential_at(x, 0.0);
            if (v != 0.0) term = term + v * u2;
        }
        energy_terms.push_back(term);
        norm_terms.push_back(u2);
    }
    const Var w = tape.constant(quad.weight);
    const Var energy = ad::sum(tape, energy_terms) * w;
    const Var norm = ad::sum(tape, norm_terms) * w;
    const Var defect = norm - 1.0;
    return energy + gamma * (defect * defect);
}

Quadrature reg_quadrature(const EigenProblem& problem, const QuadratureSpec& spec) {
    return build_quadrature(problem.spec.domain.quadrature_box(), spec);
}

}  // namespace

double rayleigh_reg(const MlpParams& u, const EigenProblem& problem,
                    const QuadratureSpec& quad, double gamma) {
    if (!problem.spec.zero_drift())
        throw UsageError("regularizer is stated for zero drift only; disable it (beta=0) "
                         "for problems with drift");
    const Quadrature q = reg_quadrature(problem, quad);
    Tape tape;
    std::vector<Var> theta;
    theta.reserve(u.params.size());
    for (double p : u.params) theta.push_back(tape.input(p));
    return build_rayleigh(tape, problem, q, u.layer_sizes, theta, gamma).value();
}

double rayleigh_reg(const ScalarField& u, const GradientField& grad_u,
                    const EigenProblem& problem, const QuadratureSpec& quad, double gamma) {
    if (!problem.spec.zero_drift())
        throw UsageError("regularizer is stated for zero drift only; disable it (beta=0) "
                         "for problems with drift");
    const SigmaHalfSquare c = sigma_half_square(problem.spec);
    const Quadrature q = reg_quadrature(problem, quad);
    const int d = q.dim;
    double energy = 0.0, norm = 0.0;
    for (int i = 0; i < q.count; ++i) {
        const auto x = q.point(i);
        const double uv = u(x);
        const std::vector<double> g = grad_u(x);
        double quadratic = 0.0;
        if (c.diagonal) {
            for (int j = 0; j < d; ++j)
                quadratic += c.diag[static_cast<std::size_t>(j)] *
                             g[static_cast<std::size_t>(j)] * g[static_cast<std::size_t>(j)];
        } else {
            for (int j = 0; j < d; ++j)
                for (int k = 0; k < d; ++k)
                    quadratic += g[static_cast<std::size_t>(j)] *
                                 c.full[static_cast<std::size_t>(j) * d + k] *
                                 g[static_cast<std::size_t>(k)];
        }
        energy += quadratic + problem.spec.potential_at(x, 0.0) * uv * uv;
        norm += uv * uv;
    }
    energy *= q.weight;
    norm *= q.weight;
    return energy + gamma * (norm - 1.0) * (norm - 1.0);
}

double boundary_penalty(const MlpParams& u, const PathEnsemble& ensemble) {
    Tape tape;
    std::vector<Var> theta;
    theta.reserve(u.params.size());
    for (double p : u.params) theta.push_back(tape.input(p));
    return build_boundary_penalty(tape, ensemble, u.layer_sizes, theta).value();
}

double rayleigh_quotient(const MlpParams& u, const EigenProblem& problem,
                         const QuadratureSpec& quad) {
    const SigmaHalfSquare c = sigma_half_square(problem.spec);
    const Quadrature q = reg_quadrature(problem, quad);
    const int d = q.dim;
    double energy = 0.0, vu2 = 0.0, norm = 0.0;
    for (int i = 0; i < q.count; ++i) {
        const auto x = q.point(i);
        const ValueAndGrad vg = mlp_forward_with_input_grad(u, x);
        double quadratic = 0.0;
        if (c.diagonal) {
            for (int j = 0; j < d; ++j)
                quadratic += c.diag[static_cast<std::size_t>(j)] *
                             vg.grad[static_cast<std::size_t>(j)] *
                             vg.grad[static_cast<std::size_t>(j)];
        } else {
            for (int j = 0; j < d; ++j)
                for (int k = 0; k < d; ++k)
                    quadratic += vg.grad[static_cast<std::size_t>(j)] *
                                 c.full[static_cast<std::size_t>(j) * d + k] *
                                 vg.grad[static_cast<std::size_t>(k)];
        }
        energy += quadratic;
        vu2 += problem.spec.potential_at(x, 0.0) * vg.value * vg.value;
        norm += vg.value * vg.value;
    }
    if (norm == 0.0) throw NumericError("Rayleigh quotient of the zero function");
    return (-energy + vu2) / norm;
}

LossTerms eigen_loss_gradient(const EigenProblem& problem,
                              std::span<const PathEnsemble> ensembles,
                              std::span<const BatchSchedule> schedules, const MlpParams& u,
                              double lambda, double beta, double gamma, double beta_bc,
                              const QuadratureSpec& quad, std::span<double> grad) {
    const std::size_t P = u.params.size();
    if (grad.size() != P + 1) throw UsageError("gradient span must have size P+1");
    if (ensembles.size() != schedules.size() || ensembles.empty())
        throw UsageError("need one schedule per ensemble");
    std::fill(grad.begin(), grad.end(), 0.0);

    const double inv_k = 1.0 / static_cast<double>(ensembles.size());
    const bool dirichlet_stopped =
        problem.spec.domain.boundary == BoundaryKind::kDirichlet && problem.spec.domain.bounded();
    const bool with_bc = dirichlet_stopped && beta_bc != 0.0;

    LossTerms terms;
    Tape tape;
    EvalCache cache;
    std::vector<Var> theta(P);
    for (std::size_t k = 0; k < ensembles.size(); ++k) {
        tape.clear();
        for (std::size_t p = 0; p < P; ++p) theta[p] = tape.param(u.params[p]);
        const Var lam = tape.param(lambda);
        const Var mart = build_mart_loss(tape, problem, ensembles[k], schedules[k],
                                         u.layer_sizes, theta, lam, cache);
        Var total = mart;
        double bc_val = 0.0;
        if (with_bc) {
            const Var bc = build_boundary_penalty(tape, ensembles[k], u.layer_sizes, theta);
            bc_val = bc.value();
            total = total + tape.constant(beta_bc) * bc;
        }
        tape.set_output(total);
        const ad::Gradient g = tape.backward();
        for (std::size_t p = 0; p <= P; ++p) grad[p] += inv_k * g.entries[p];
        terms.martingale += inv_k * mart.value();
        terms.boundary += inv_k * bc_val;
    }

    if (beta != 0.0) {
        const Quadrature q = reg_quadrature(problem, quad);
        tape.clear();
        for (std::size_t p = 0; p < P; ++p) theta[p] = tape.param(u.params[p]);
        (void)tape.param(lambda);  // keeps gradient alignment; reg does not use lambda
        const Var reg = build_rayleigh(tape, problem, q, u.layer_sizes, theta, gamma);
        tape.set_output(reg);
        const ad::Gradient g = tape.backward();
        for (std::size_t p = 0; p <= P; ++p) grad[p] += beta * g.entries[p];
        terms.reg = reg.value();
    }

    terms.total = terms.martingale + beta * terms.reg + beta_bc * terms.boundary;
    return terms;
}

// ---------------------------------------------------------------------------

PathEnsemble sample_problem_paths(const EigenProblem& problem, std::span<const double> x0,
                                  const TimeGrid& grid, int paths, std::uint64_t seed) {
    const Domain& domain = problem.spec.domain;
    if (domain.boundary != BoundaryKind::kDirichlet)
        return simulate_rbm(problem.spec, domain, x0, grid, paths, seed);

    if (problem.mode == GeneratorMode::kDriftless && !problem.spec.mu.empty()) {
        ProblemSpec driftless = problem.spec;
        driftless.mu.clear();
        PathEnsemble e = simulate_ito(driftless, x0, grid, paths, seed);
        return domain.bounded() ? apply_exit_stopping(std::move(e), domain) : e;
    }
    PathEnsemble e = simulate_ito(problem.spec, x0, grid, paths, seed);
    return domain.bounded() ? apply_exit_stopping(std::move(e), domain) : e;
}

std::pair<EigenState, TrainReport> train_eigen(const EigenProblem& problem,
                                               const TrainConfig& config) {
    problem.validate();
    config.validate();
    if (problem.starts.empty()) throw UsageError("eigen problem has no start points");
    for (const auto& s : problem.starts)
        if (static_cast<int>(s.size()) != problem.spec.dim)
            throw UsageError("start point dimension mismatch");

    std::vector<int> sizes = config.eigen_layers;
    if (sizes.empty()) sizes = {problem.spec.dim, 32, 32, 1};
    if (sizes.front() != problem.spec.dim || sizes.back() != 1)
        throw UsageError("eigenfunction network must map R^d -> R");

    EigenState state;
    state.u = mlp_init(sizes, mix64(config.seed, rng_stream::kInit));
    state.lambda = rayleigh_quotient(state.u, problem, config.quadrature);

    const int K = static_cast<int>(problem.starts.size());
    const std::size_t P = state.u.params.size();
    std::vector<double> params(P + 1);
    std::copy(state.u.params.begin(), state.u.params.end(), params.begin());
    params[P] = state.lambda;
    std::vector<double> grad(P + 1);
    Optimizer opt(config.optimizer, P + 1);

    std::vector<PathEnsemble> ensembles;
    ensembles.reserve(static_cast<std::size_t>(K));
    const auto resample = [&](int round) {
        ensembles.clear();
        for (int k = 0; k < K; ++k)
            ensembles.push_back(sample_problem_paths(
                problem, problem.starts[static_cast<std::size_t>(k)], config.grid, config.paths,
                mix64(config.seed, rng_stream::kPaths, static_cast<std::uint64_t>(k),
                      static_cast<std::uint64_t>(round))));
    };
    resample(0);

    TrainReport report;
    report.rows.reserve(static_cast<std::size_t>(config.epochs));
    std::vector<BatchSchedule> schedules(static_cast<std::size_t>(K));
    LossTerms terms;

    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        const auto tic = std::chrono::steady_clock::now();
        if (config.resample_interval > 0 && epoch > 0 && epoch % config.resample_interval == 0)
            resample(epoch / config.resample_interval);
        for (int k = 0; k < K; ++k)
            schedules[static_cast<std::size_t>(k)] = batch_schedule(
                config.paths, config.batch, config.grid.steps,
                mix64(config.seed, rng_stream::kSchedule, static_cast<std::uint64_t>(epoch),
                      static_cast<std::uint64_t>(k)));

        std::copy(params.begin(), params.begin() + static_cast<std::ptrdiff_t>(P),
                  state.u.params.begin());
        state.lambda = params[P];
        try {
            terms = eigen_loss_gradient(problem, ensembles, schedules, state.u, state.lambda,
                                        config.beta, config.gamma, config.beta_bc,
                                        config.quadrature, grad);
        } catch (const TrainingAbort&) {
            throw;
        } catch (const NumericError& e) {
            throw TrainingAbort(epoch, terms, std::move(report), e.what());
        }
        if (!std::isfinite(terms.total))
            throw TrainingAbort(epoch, terms, std::move(report), "non-finite loss");

        opt.step(params, grad);

        const double secs =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - tic).count();
        report.rows.push_back(
            EpochRow{epoch, terms.total, state.lambda, terms.reg, terms.boundary, secs});
    }
    std::copy(params.begin(), params.begin() + static_cast<std::ptrdiff_t>(P),
              state.u.params.begin());
    state.lambda = params[P];

    TrainSummary summary;
    summary.lambda_star = state.lambda;
    if (config.oracle == "fd_eigen") {
        const Box box = problem.spec.domain.quadrature_box();
        const int n = config.fd_intervals > 0 ? config.fd_intervals
                                              : (problem.spec.dim == 1 ? 2000 : 128);
        const FdEigenResult fd =
            fd_eigen(problem.spec.potential, box, n, problem.spec.dim, 1);
        summary.oracle_kind = "fd_eigen";
        summary.oracle_value = fd.eigenvalues[0];
        summary.relative_error = std::fabs(state.lambda - fd.eigenvalues[0]) /
                                 std::max(std::fabs(fd.eigenvalues[0]), 1e-12);
    } else if (config.oracle == "lambda_ref") {
        summary.oracle_kind = "lambda_ref";
        summary.oracle_value = config.lambda_ref;
        summary.relative_error = std::fabs(state.lambda - config.lambda_ref) /
                                 std::max(std::fabs(config.lambda_ref), 1.0);
    }
    report.summary = summary;
    return {std::move(state), std::move(report)};
}

}  // namespace martnet
