#include "martnet/control.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include "martnet/autodiff.hpp"
#include "martnet/rng.hpp"

namespace martnet {

namespace {

using ad::Tape;
using ad::Var;

// Dense inverse with partial pivoting; throws when the matrix looks singular
// (pivot ratio beyond 1e8, the problem's conditioning contract).
void invert_matrix(std::vector<double> a, int n, std::span<double> inv) {
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) inv[static_cast<std::size_t>(i) * n + j] = (i == j) ? 1.0 : 0.0;
    double max_entry = 0.0;
    for (double v : a) max_entry = std::max(max_entry, std::fabs(v));
    for (int col = 0; col < n; ++col) {
        int pivot = col;
        for (int r = col + 1; r < n; ++r)
            if (std::fabs(a[static_cast<std::size_t>(r) * n + col]) >
                std::fabs(a[static_cast<std::size_t>(pivot) * n + col]))
                pivot = r;
        const double p = a[static_cast<std::size_t>(pivot) * n + col];
        if (std::fabs(p) * 1e8 < max_entry || p == 0.0)
            throw NumericError("sigma is numerically singular (condition number > 1e8)");
        if (pivot != col)
            for (int j = 0; j < n; ++j) {
                std::swap(a[static_cast<std::size_t>(pivot) * n + j],
                          a[static_cast<std::size_t>(col) * n + j]);
                std::swap(inv[static_cast<std::size_t>(pivot) * n + j],
                          inv[static_cast<std::size_t>(col) * n + j]);
            }
        const double inv_p = 1.0 / a[static_cast<std::size_t>(col) * n + col];
        for (int j = 0; j < n; ++j) {
            a[static_cast<std::size_t>(col) * n + j] *= inv_p;
            inv[static_cast<std::size_t>(col) * n + j] *= inv_p;
        }
        for (int r = 0; r < n; ++r) {
            if (r == col) continue;
            const double f = a[static_cast<std::size_t>(r) * n + col];
            if (f == 0.0) continue;
            for (int j = 0; j < n; ++j) {
                a[static_cast<std::size_t>(r) * n + j] -=
                    f * a[static_cast<std::size_t>(col) * n + j];
                inv[static_cast<std::size_t>(r) * n + j] -=
                    f * inv[static_cast<std::size_t>(col) * n + j];
            }
        }
    }
}

void sigma_inverse_at(const ControlProblem& pb, double t, std::span<const double> x,
                      std::span<double> inv) {
    std::vector<double> sig(static_cast<std::size_t>(pb.dim) * pb.dim);
    pb.sigma.matrix(x, t, pb.dim, sig);
    invert_matrix(std::move(sig), pb.dim, inv);
}

double clamp_control(const ControlProblem& pb, int j, double u) {
    if (!pb.bounded_controls()) return u;
    return std::clamp(u, pb.control_lower[static_cast<std::size_t>(j)],
                      pb.control_upper[static_cast<std::size_t>(j)]);
}

}  // namespace

void ControlProblem::validate() const {
    if (dim < 1 || control_dim < 1) throw UsageError("control problem needs d >= 1, m >= 1");
    if (mu.size() != static_cast<std::size_t>(dim))
        throw UsageError("drift must have one expression per state dimension");
    if (running_cost.empty()) throw UsageError("running cost expression is required");
    if (terminal_cost.empty()) throw UsageError("terminal cost expression is required");
    if (!(horizon > 0.0)) throw UsageError("horizon T must be positive");
    const bool lo = !control_lower.empty(), hi = !control_upper.empty();
    if (lo != hi) throw UsageError("control bounds must give both lower and upper");
    if (lo) {
        if (control_lower.size() != static_cast<std::size_t>(control_dim) ||
            control_upper.size() != static_cast<std::size_t>(control_dim))
            throw UsageError("control bounds must match the control dimension");
        for (int j = 0; j < control_dim; ++j)
            if (!(control_lower[static_cast<std::size_t>(j)] <
                  control_upper[static_cast<std::size_t>(j)]))
                throw UsageError("control bounds require lower < upper");
    }
    if (!minimizer.empty() && minimizer.size() != static_cast<std::size_t>(control_dim))
        throw UsageError("closed-form minimizer needs one expression per control dimension");
}

double ControlProblem::terminal_at(std::span<const double> x) const {
    return terminal_cost.eval(ExprBindings<double>{x, nullptr, {}});
}

std::vector<double> policy_at(const ControlProblem& problem, const MlpParams& policy, double t,
                              std::span<const double> x) {
    std::vector<double> in(x.begin(), x.end());
    in.push_back(t / problem.horizon);
    std::vector<double> u = mlp_forward(policy, in);
    for (int j = 0; j < problem.control_dim; ++j)
        u[static_cast<std::size_t>(j)] = clamp_control(problem, j, u[static_cast<std::size_t>(j)]);
    return u;
}

double value_at(const ControlProblem& problem, const MlpParams& value, double t,
                std::span<const double> x) {
    std::vector<double> in(x.begin(), x.end());
    in.push_back(t / problem.horizon);
    return mlp_forward_scalar<double>(value.layer_sizes, value.params, in);
}

ControlledEnsemble simulate_controlled(const ControlProblem& problem, const PolicyFn& policy,
                                       std::span<const double> x0, const TimeGrid& grid,
                                       int paths, std::uint64_t seed,
                                       std::int64_t policy_version) {
    problem.validate();
    grid.validate();
    if (paths < 1) throw UsageError("path count M must be >= 1");
    if (static_cast<int>(x0.size()) != problem.dim)
        throw UsageError("start point dimension mismatch");

    ControlledEnsemble out;
    out.policy_version = policy_version;
    PathEnsemble& e = out.paths;
    e.grid = grid;
    e.dim = problem.dim;
    e.paths = paths;
    e.seed = seed;
    e.states.assign(static_cast<std::size_t>(paths) * (grid.steps + 1) * problem.dim, 0.0);
    e.increments.assign(static_cast<std::size_t>(paths) * grid.steps * problem.dim, 0.0);
    e.exit_index.assign(static_cast<std::size_t>(paths), grid.steps);
    e.exit_points.assign(static_cast<std::size_t>(paths) * problem.dim, 0.0);
    e.start.assign(x0.begin(), x0.end());
    out.path_cost.assign(static_cast<std::size_t>(paths), 0.0);

    const int d = problem.dim;
    const double dt = grid.dt();
    const double sqrt_dt = std::sqrt(dt);
    std::vector<double> u(static_cast<std::size_t>(problem.control_dim));
    std::vector<double> diffused(static_cast<std::size_t>(d));

    for (int m = 0; m < paths; ++m) {
        std::copy(x0.begin(), x0.end(), e.state(m, 0).begin());
        double cost = 0.0;
        for (int i = 0; i < grid.steps; ++i) {
            const double t = grid.time(i);
            const auto x = e.state(m, i);
            const auto db = e.increment(m, i);
            draw_brownian_increment(seed, m, i, d, sqrt_dt, db);
            policy(t, x, u);
            for (int j = 0; j < problem.control_dim; ++j)
                u[static_cast<std::size_t>(j)] =
                    clamp_control(problem, j, u[static_cast<std::size_t>(j)]);
            const ExprBindings<double> bind{x, &t, u};
            cost += problem.running_cost.eval(bind) * dt;
            try {
                problem.sigma.apply(x, t, d, db, diffused);
            } catch (const NumericError& err) {
                throw NumericError(err.what(), "path m=" + std::to_string(m) +
                                                   ", step i=" + std::to_string(i));
            }
            auto next = e.state(m, i + 1);
            for (int j = 0; j < d; ++j)
                next[j] = x[j] + problem.mu[static_cast<std::size_t>(j)].eval(bind) * dt +
                          diffused[j];
        }
        cost += problem.terminal_at(e.state(m, grid.steps));
        out.path_cost[static_cast<std::size_t>(m)] = cost;
    }
    return out;
}

ControlledEnsemble simulate_controlled(const ControlProblem& problem, const MlpParams& policy,
                                       std::span<const double> x0, const TimeGrid& grid,
                                       int paths, std::uint64_t seed,
                                       std::int64_t policy_version) {
    const PolicyFn fn = [&](double t, std::span<const double> x, std::span<double> u) {
        const std::vector<double> res = policy_at(problem, policy, t, x);
        std::copy(res.begin(), res.end(), u.begin());
    };
    return simulate_controlled(problem, fn, x0, grid, paths, seed, policy_version);
}

namespace {

double f_value(const ControlProblem& pb, double t, std::span<const double> x,
               std::span<const double> z, std::span<const double> sig_inv,
               std::span<const double> u) {
    const ExprBindings<double> bind{x, &t, u};
    double f = pb.running_cost.eval(bind);
    for (int i = 0; i < pb.dim; ++i) {
        double alpha_i = 0.0;
        for (int j = 0; j < pb.dim; ++j)
            alpha_i += sig_inv[static_cast<std::size_t>(i) * pb.dim + j] *
                       pb.mu[static_cast<std::size_t>(j)].eval(bind);
        // z' alpha with alpha = sigma^{-1} mu; note row-vs-column symmetry of
        // the quadratic pairing: alpha_i pairs with z_i
        f += z[static_cast<std::size_t>(i)] * alpha_i;
    }
    return f;
}

}  // namespace

double hamiltonian(const ControlProblem& problem, double t, std::span<const double> x,
                   std::span<const double> z, HamiltonianMode mode, const MlpParams* policy) {
    std::vector<double> sig_inv(static_cast<std::size_t>(problem.dim) * problem.dim);
    sigma_inverse_at(problem, t, x, sig_inv);

    HamiltonianMode resolved = mode;
    if (resolved == HamiltonianMode::kAuto)
        resolved = !problem.minimizer.empty() ? HamiltonianMode::kClosedForm
                                              : HamiltonianMode::kPolicyPlugIn;

    switch (resolved) {
        case HamiltonianMode::kClosedForm: {
            if (problem.minimizer.empty())
                throw UsageError("no closed-form minimizer configured");
            // z is bound through the u-slots of the minimizer expressions
            const ExprBindings<double> zbind{x, &t, z};
            std::vector<double> u(static_cast<std::size_t>(problem.control_dim));
            for (int j = 0; j < problem.control_dim; ++j)
                u[static_cast<std::size_t>(j)] = clamp_control(
                    problem, j, problem.minimizer[static_cast<std::size_t>(j)].eval(zbind));
            return f_value(problem, t, x, z, sig_inv, u);
        }
        case HamiltonianMode::kPolicyPlugIn: {
            if (policy == nullptr) throw UsageError("plug-in mode needs a policy network");
            const std::vector<double> u = policy_at(problem, *policy, t, x);
            return f_value(problem, t, x, z, sig_inv, u);
        }
        case HamiltonianMode::kGridSearch: {
            if (!problem.bounded_controls())
                throw UsageError("grid-search needs a bounded control set");
            constexpr int kPerAxis = 17;
            const int m = problem.control_dim;
            long long total = 1;
            for (int j = 0; j < m; ++j) total *= kPerAxis;
            std::vector<double> u(static_cast<std::size_t>(m));
            std::vector<int> idx(static_cast<std::size_t>(m), 0);
            double best = std::numeric_limits<double>::infinity();
            for (long long p = 0; p < total; ++p) {
                for (int j = 0; j < m; ++j) {
                    const double lo = problem.control_lower[static_cast<std::size_t>(j)];
                    const double hi = problem.control_upper[static_cast<std::size_t>(j)];
                    u[static_cast<std::size_t>(j)] =
                        lo + (hi - lo) * idx[static_cast<std::size_t>(j)] / (kPerAxis - 1);
                }
                best = std::min(best, f_value(problem, t, x, z, sig_inv, u));
                for (int j = 0; j < m; ++j) {
                    if (++idx[static_cast<std::size_t>(j)] < kPerAxis) break;
                    idx[static_cast<std::size_t>(j)] = 0;
                }
            }
            return best;
        }
        case HamiltonianMode::kAuto: break;
    }
    throw UsageError("unresolved Hamiltonian mode");
}

std::vector<double> cost_increment_means(const ControlProblem& problem,
                                         const PathEnsemble& ensemble,
                                         const BatchSchedule& schedule, const PolicyFn& policy,
                                         const ValueFn& value) {
    const int N = ensemble.grid.steps;
    if (schedule.steps != N || schedule.paths != ensemble.paths)
        throw UsageError("schedule does not match the ensemble");
    const double dt = ensemble.grid.dt();
    std::vector<double> means(static_cast<std::size_t>(N), 0.0);
    std::vector<double> u(static_cast<std::size_t>(problem.control_dim));
    for (int i = 0; i < N; ++i) {
        const double t = ensemble.grid.time(i);
        const double t_next = ensemble.grid.time(i + 1);
        double acc = 0.0;
        for (std::uint32_t m32 : schedule.at(i)) {
            const int m = static_cast<int>(m32);
            const auto x = ensemble.state(m, i);
            policy(t, x, u);
            for (int j = 0; j < problem.control_dim; ++j)
                u[static_cast<std::size_t>(j)] =
                    clamp_control(problem, j, u[static_cast<std::size_t>(j)]);
            const ExprBindings<double> bind{x, &t, u};
            acc += problem.running_cost.eval(bind) * dt + value(t_next, ensemble.state(m, i + 1)) -
                   value(t, x);
        }
        means[static_cast<std::size_t>(i)] = acc / schedule.batch;
    }
    return means;
}

std::vector<double> value_increment_means(const ControlProblem& problem,
                                          const PathEnsemble& ensemble,
                                          const BatchSchedule& schedule,
                                          const ValueGradFn& value, HamiltonianMode mode,
                                          const MlpParams* policy) {
    const int N = ensemble.grid.steps;
    if (schedule.steps != N || schedule.paths != ensemble.paths)
        throw UsageError("schedule does not match the ensemble");
    const double dt = ensemble.grid.dt();
    const int d = problem.dim;
    std::vector<double> means(static_cast<std::size_t>(N), 0.0);
    std::vector<double> sig(static_cast<std::size_t>(d) * d), z(static_cast<std::size_t>(d));
    for (int i = 0; i < N; ++i) {
        const double t = ensemble.grid.time(i);
        const double t_next = ensemble.grid.time(i + 1);
        double acc = 0.0;
        for (std::uint32_t m32 : schedule.at(i)) {
            const int m = static_cast<int>(m32);
            const auto x = ensemble.state(m, i);
            const ValueAndGrad vg = value(t, x);
            problem.sigma.matrix(x, t, d, sig);
            for (int j = 0; j < d; ++j) {
                double zj = 0.0;
                for (int k = 0; k < d; ++k)
                    zj += vg.grad[static_cast<std::size_t>(k)] *
                          sig[static_cast<std::size_t>(k) * d + j];
                z[static_cast<std::size_t>(j)] = zj;
            }
            const double h = hamiltonian(problem, t, x, z, mode, policy);
            acc += value(t_next, ensemble.state(m, i + 1)).value - vg.value + h * dt;
        }
        means[static_cast<std::size_t>(i)] = acc / schedule.batch;
    }
    return means;
}

double terminal_penalty(const ControlProblem& problem, const PathEnsemble& ensemble,
                        const ValueFn& value) {
    const int N = ensemble.grid.steps;
    double acc = 0.0;
    for (int m = 0; m < ensemble.paths; ++m) {
        const auto x = ensemble.state(m, N);
        const double diff = value(ensemble.grid.horizon, x) - problem.terminal_at(x);
        acc += diff * diff;
    }
    return acc / ensemble.paths;
}

double control_loss(const MlpParams& policy, const MlpParams& value,
                    const ControlledEnsemble& ensemble, const BatchSchedule& schedule,
                    const ControlProblem& problem) {
    const PolicyFn pf = [&](double t, std::span<const double> x, std::span<double> u) {
        const std::vector<double> res = policy_at(problem, policy, t, x);
        std::copy(res.begin(), res.end(), u.begin());
    };
    const ValueFn vf = [&](double t, std::span<const double> x) {
        return value_at(problem, value, t, x);
    };
    const std::vector<double> means =
        cost_increment_means(problem, ensemble.paths, schedule, pf, vf);
    double acc = 0.0;
    for (double m : means) acc += m * m;
    return acc / means.size();
}

double value_loss(const MlpParams& value, const MlpParams& policy,
                  const PathEnsemble& ensemble, const BatchSchedule& schedule,
                  const ControlProblem& problem, double beta, HamiltonianMode mode) {
    const ValueGradFn vg = [&](double t, std::span<const double> x) {
        std::vector<double> in(x.begin(), x.end());
        in.push_back(t / problem.horizon);
        ValueAndGrad res = mlp_forward_with_input_grad(value, in);
        res.grad.resize(static_cast<std::size_t>(problem.dim));  // drop the time coordinate
        return res;
    };
    const std::vector<double> means =
        value_increment_means(problem, ensemble, schedule, vg, mode, &policy);
    double acc = 0.0;
    for (double m : means) acc += m * m;
    const ValueFn vf = [&](double t, std::span<const double> x) {
        return value_at(problem, value, t, x);
    };
    return acc / means.size() + beta * terminal_penalty(problem, ensemble, vf);
}

// ---------------------------------------------------------------------------
// Tape builders.

namespace {

struct NetOnTape {
    std::span<const int> sizes;
    std::vector<Var> params;  // marked or lifted, caller's choice

    Var forward(Tape& tape, std::span<const Var> in) const {
        (void)tape;
        return mlp_forward_scalar<Var>(sizes, params, in);
    }
};

// Policy network evaluation on tape with box clamping.
std::vector<Var> policy_on_tape(Tape& tape, const ControlProblem& pb, const NetOnTape& net,
                                std::span<const Var> x, Var t_scaled) {
    std::vector<Var> in(x.begin(), x.end());
    in.push_back(t_scaled);
    std::vector<Var> u = mlp_forward_span<Var>(net.sizes, net.params, in);
    if (pb.bounded_controls()) {
        for (int j = 0; j < pb.control_dim; ++j) {
            const Var lo = tape.constant(pb.control_lower[static_cast<std::size_t>(j)]);
            const Var hi = tape.constant(pb.control_upper[static_cast<std::size_t>(j)]);
            u[static_cast<std::size_t>(j)] = ad::min(ad::max(u[static_cast<std::size_t>(j)], lo), hi);
        }
    }
    return u;
}

// Hamiltonian on tape with z as tape scalars (theta_2 gradients flow through z).
Var hamiltonian_on_tape(Tape& tape, const ControlProblem& pb, double t,
                        std::span<const double> x, std::span<const Var> z,
                        HamiltonianMode mode, const MlpParams* policy,
                        std::span<const double> sig_inv) {
    HamiltonianMode resolved = mode;
    if (resolved == HamiltonianMode::kAuto)
        resolved = !pb.minimizer.empty() ? HamiltonianMode::kClosedForm
                                         : HamiltonianMode::kPolicyPlugIn;
    const int d = pb.dim;
    std::vector<Var> xc(static_cast<std::size_t>(d));
    for (int j = 0; j < d; ++j) xc[static_cast<std::size_t>(j)] = tape.constant(x[j]);
    const Var tc = tape.constant(t);

    const auto f_on_tape = [&](std::span<const Var> u) -> Var {
        const ExprBindings<Var> bind{xc, &tc, u};
        Var f = pb.running_cost.eval(bind);
        for (int i = 0; i < d; ++i) {
            Var alpha_i = tape.constant(0.0);
            bool first = true;
            for (int j = 0; j < d; ++j) {
                const double w = sig_inv[static_cast<std::size_t>(i) * d + j];
                if (w == 0.0) continue;
                const Var term = tape.constant(w) * pb.mu[static_cast<std::size_t>(j)].eval(bind);
                alpha_i = first ? term : alpha_i + term;
                first = false;
            }
            if (!first) f = f + z[static_cast<std::size_t>(i)] * alpha_i;
        }
        return f;
    };

    switch (resolved) {
        case HamiltonianMode::kClosedForm: {
            if (pb.minimizer.empty()) throw UsageError("no closed-form minimizer configured");
            const ExprBindings<Var> zbind{xc, &tc, z};
            std::vector<Var> u(static_cast<std::size_t>(pb.control_dim));
            for (int j = 0; j < pb.control_dim; ++j) {
                Var uj = pb.minimizer[static_cast<std::size_t>(j)].eval(zbind);
                if (pb.bounded_controls()) {
                    uj = ad::max(uj, tape.constant(pb.control_lower[static_cast<std::size_t>(j)]));
                    uj = ad::min(uj, tape.constant(pb.control_upper[static_cast<std::size_t>(j)]));
                }
                u[static_cast<std::size_t>(j)] = uj;
            }
            return f_on_tape(u);
        }
        case HamiltonianMode::kPolicyPlugIn: {
            if (policy == nullptr) throw UsageError("plug-in mode needs a policy network");
            const std::vector<double> u = policy_at(pb, *policy, t, x);
            std::vector<Var> uc(static_cast<std::size_t>(pb.control_dim));
            for (int j = 0; j < pb.control_dim; ++j)
                uc[static_cast<std::size_t>(j)] = tape.constant(u[static_cast<std::size_t>(j)]);
            return f_on_tape(uc);
        }
        case HamiltonianMode::kGridSearch: {
            if (!pb.bounded_controls())
                throw UsageError("grid-search needs a bounded control set");
            constexpr int kPerAxis = 17;
            const int m = pb.control_dim;
            long long total = 1;
            for (int j = 0; j < m; ++j) total *= kPerAxis;
            std::vector<Var> u(static_cast<std::size_t>(m));
            std::vector<int> idx(static_cast<std::size_t>(m), 0);
            Var best{};
            for (long long p = 0; p < total; ++p) {
                for (int j = 0; j < m; ++j) {
                    const double lo = pb.control_lower[static_cast<std::size_t>(j)];
                    const double hi = pb.control_upper[static_cast<std::size_t>(j)];
                    u[static_cast<std::size_t>(j)] = tape.constant(
                        lo + (hi - lo) * idx[static_cast<std::size_t>(j)] / (kPerAxis - 1));
                }
                const Var f = f_on_tape(u);
                best = (p == 0) ? f : ad::min(best, f);
                for (int j = 0; j < m; ++j) {
                    if (++idx[static_cast<std::size_t>(j)] < kPerAxis) break;
                    idx[static_cast<std::size_t>(j)] = 0;
                }
            }
            return best;
        }
        case HamiltonianMode::kAuto: break;
    }
    throw UsageError("unresolved Hamiltonian mode");
}

// Frozen-path control loss: theta_1 gradients flow through the running cost
// only; v differences are baked in as constants.
Var build_control_loss_frozen(Tape& tape, const ControlProblem& pb,
                              const ControlledEnsemble& ens, const BatchSchedule& sch,
                              const NetOnTape& policy_net, const MlpParams& value) {
    const PathEnsemble& paths = ens.paths;
    const int N = paths.grid.steps;
    const int d = pb.dim;
    const double dt = paths.grid.dt();
    const Var dt_c = tape.constant(dt);
    const Var inv_batch = tape.constant(1.0 / sch.batch);

    std::vector<Var> xc(static_cast<std::size_t>(d));
    std::vector<Var> means;
    means.reserve(static_cast<std::size_t>(N));
    std::vector<Var> incs;
    for (int i = 0; i < N; ++i) {
        const double t = paths.grid.time(i);
        const double t_next = paths.grid.time(i + 1);
        const Var t_scaled = tape.constant(t / pb.horizon);
        const Var tc = tape.constant(t);
        incs.clear();
        for (std::uint32_t m32 : sch.at(i)) {
            const int m = static_cast<int>(m32);
            const auto x = paths.state(m, i);
            for (int j = 0; j < d; ++j) xc[static_cast<std::size_t>(j)] = tape.constant(x[j]);
            const std::vector<Var> u = policy_on_tape(tape, pb, policy_net, xc, t_scaled);
            const ExprBindings<Var> bind{xc, &tc, u};
            const Var c = pb.running_cost.eval(bind);
            const double dv = value_at(pb, value, t_next, paths.state(m, i + 1)) -
                              value_at(pb, value, t, x);
            incs.push_back(c * dt_c + tape.constant(dv));
        }
        const Var mean = ad::sum(tape, incs) * inv_batch;
        means.push_back(mean * mean);
    }
    return ad::sum(tape, means) * tape.constant(1.0 / N);
}

// Differentiable-simulation control loss: the paths are rebuilt on the tape
// from the stored Brownian increments, so theta_1 gradients flow through the
// controlled drift and the value terms. Requires a constant sigma.
Var build_control_loss_diffsim(Tape& tape, const ControlProblem& pb,
                               const ControlledEnsemble& ens, const BatchSchedule& sch,
                               const NetOnTape& policy_net, const NetOnTape& value_net) {
    if (!pb.sigma.is_constant())
        throw UsageError("differentiable-path mode requires a constant sigma");
    const PathEnsemble& noise = ens.paths;
    const int N = noise.grid.steps;
    const int d = pb.dim;
    const double dt = noise.grid.dt();
    const Var dt_c = tape.constant(dt);
    const Var inv_batch = tape.constant(1.0 / sch.batch);

    std::vector<double> sig(static_cast<std::size_t>(d) * d);
    pb.sigma.matrix(noise.start, 0.0, d, sig);

    // membership mask: which (m, i) pairs appear in the batch
    std::vector<std::uint8_t> member(static_cast<std::size_t>(noise.paths) * N, 0);
    for (int i = 0; i < N; ++i)
        for (std::uint32_t m : sch.at(i))
            member[static_cast<std::size_t>(m) * N + i] = 1;

    std::vector<Var> t_scaled(static_cast<std::size_t>(N) + 1), tc(static_cast<std::size_t>(N));
    for (int i = 0; i <= N; ++i)
        t_scaled[static_cast<std::size_t>(i)] =
            tape.constant(noise.grid.time(i) / pb.horizon);
    for (int i = 0; i < N; ++i) tc[static_cast<std::size_t>(i)] = tape.constant(noise.grid.time(i));

    std::vector<std::vector<Var>> buckets(static_cast<std::size_t>(N));
    std::vector<Var> x(static_cast<std::size_t>(d)), x_next(static_cast<std::size_t>(d));
    std::vector<Var> vin;
    for (int m = 0; m < noise.paths; ++m) {
        for (int j = 0; j < d; ++j)
            x[static_cast<std::size_t>(j)] = tape.constant(noise.start[static_cast<std::size_t>(j)]);
        Var v_cache{};
        int v_cache_i = -1;
        for (int i = 0; i < N; ++i) {
            const bool need = member[static_cast<std::size_t>(m) * N + i] != 0;
            const std::vector<Var> u =
                policy_on_tape(tape, pb, policy_net, x, t_scaled[static_cast<std::size_t>(i)]);
            Var c{}, v_i{};
            if (need) {
                const ExprBindings<Var> bind{x, &tc[static_cast<std::size_t>(i)], u};
                c = pb.running_cost.eval(bind);
                if (v_cache_i == i) {
                    v_i = v_cache;
                } else {
                    vin.assign(x.begin(), x.end());
                    vin.push_back(t_scaled[static_cast<std::size_t>(i)]);
                    v_i = value_net.forward(tape, vin);
                }
            }
            // X_{i+1} = X_i + mu(t, X, u) dt + sigma dB   (sigma constant)
            const ExprBindings<Var> bind{x, &tc[static_cast<std::size_t>(i)], u};
            const auto db = noise.increment(m, i);
            for (int j = 0; j < d; ++j) {
                double diffused = 0.0;
                for (int k = 0; k < d; ++k)
                    diffused += sig[static_cast<std::size_t>(j) * d + k] * db[k];
                x_next[static_cast<std::size_t>(j)] =
                    x[static_cast<std::size_t>(j)] +
                    pb.mu[static_cast<std::size_t>(j)].eval(bind) * dt_c + diffused;
            }
            if (need) {
                vin.assign(x_next.begin(), x_next.end());
                vin.push_back(t_scaled[static_cast<std::size_t>(i) + 1]);
                const Var v_next = value_net.forward(tape, vin);
                buckets[static_cast<std::size_t>(i)].push_back(c * dt_c + v_next - v_i);
                v_cache = v_next;
                v_cache_i = i + 1;
            }
            x.swap(x_next);
        }
    }
    std::vector<Var> means;
    means.reserve(static_cast<std::size_t>(N));
    for (int i = 0; i < N; ++i) {
        const Var mean = ad::sum(tape, buckets[static_cast<std::size_t>(i)]) * inv_batch;
        means.push_back(mean * mean);
    }
    return ad::sum(tape, means) * tape.constant(1.0 / N);
}

// Value loss on tape; paths are plain data, theta_2 is marked.
Var build_value_loss(Tape& tape, const ControlProblem& pb, const PathEnsemble& paths,
                     const BatchSchedule& sch, const NetOnTape& value_net,
                     const MlpParams* policy, double beta, HamiltonianMode mode,
                     Var* terminal_out) {
    const int N = paths.grid.steps;
    const int d = pb.dim;
    const double dt = paths.grid.dt();
    const Var dt_c = tape.constant(dt);
    const Var inv_batch = tape.constant(1.0 / sch.batch);
    const bool sigma_const = pb.sigma.is_constant();
    std::vector<double> sig(static_cast<std::size_t>(d) * d);
    std::vector<double> sig_inv(static_cast<std::size_t>(d) * d);
    bool sigma_identity = pb.sigma.is_identity(d);
    if (sigma_const) {
        pb.sigma.matrix(paths.start, 0.0, d, sig);
        invert_matrix(std::vector<double>(sig.begin(), sig.end()), d, sig_inv);
    }

    // node cache of value evaluations at path knots
    std::vector<std::int32_t> cache(static_cast<std::size_t>(paths.paths) * (N + 1), -1);
    const auto value_of = [&](int m, int i) -> Var {
        std::int32_t& slot = cache[static_cast<std::size_t>(m) * (N + 1) + i];
        if (slot >= 0) return tape.var(static_cast<std::uint32_t>(slot));
        std::vector<Var> in(static_cast<std::size_t>(d) + 1);
        const auto x = paths.state(m, i);
        for (int j = 0; j < d; ++j) in[static_cast<std::size_t>(j)] = tape.constant(x[j]);
        in[static_cast<std::size_t>(d)] = tape.constant(paths.grid.time(i) / pb.horizon);
        const Var v = value_net.forward(tape, in);
        slot = static_cast<std::int32_t>(v.index());
        return v;
    };

    std::vector<Var> in(static_cast<std::size_t>(d) + 1);
    std::vector<Var> z(static_cast<std::size_t>(d));
    std::vector<Var> means, incs;
    means.reserve(static_cast<std::size_t>(N));
    for (int i = 0; i < N; ++i) {
        const double t = paths.grid.time(i);
        incs.clear();
        for (std::uint32_t m32 : sch.at(i)) {
            const int m = static_cast<int>(m32);
            const auto x = paths.state(m, i);
            for (int j = 0; j < d; ++j) in[static_cast<std::size_t>(j)] = tape.constant(x[j]);
            in[static_cast<std::size_t>(d)] = tape.constant(t / pb.horizon);
            auto vg = mlp_forward_with_input_grad_span<Var>(value_net.sizes, value_net.params, in);
            cache[static_cast<std::size_t>(m) * (N + 1) + i] =
                static_cast<std::int32_t>(vg.value.index());
            if (!sigma_const) {
                pb.sigma.matrix(x, t, d, sig);
                invert_matrix(std::vector<double>(sig.begin(), sig.end()), d, sig_inv);
            }
            if (sigma_identity) {
                for (int j = 0; j < d; ++j) z[static_cast<std::size_t>(j)] = vg.grad[static_cast<std::size_t>(j)];
            } else {
                for (int j = 0; j < d; ++j) {
                    Var zj = tape.constant(0.0);
                    bool first = true;
                    for (int k = 0; k < d; ++k) {
                        const double w = sig[static_cast<std::size_t>(k) * d + j];
                        if (w == 0.0) continue;
                        const Var term = tape.constant(w) * vg.grad[static_cast<std::size_t>(k)];
                        zj = first ? term : zj + term;
                        first = false;
                    }
                    z[static_cast<std::size_t>(j)] = zj;
                }
            }
            const Var h = hamiltonian_on_tape(tape, pb, t, x, z, mode, policy, sig_inv);
            incs.push_back(value_of(m, i + 1) - vg.value + h * dt_c);
        }
        const Var mean = ad::sum(tape, incs) * inv_batch;
        means.push_back(mean * mean);
    }
    Var loss = ad::sum(tape, means) * tape.constant(1.0 / N);

    // terminal penalty over all M paths
    std::vector<Var> tail;
    tail.reserve(static_cast<std::size_t>(paths.paths));
    for (int m = 0; m < paths.paths; ++m) {
        const Var v = value_of(m, N);
        const Var diff = v - tape.constant(pb.terminal_at(paths.state(m, N)));
        tail.push_back(diff * diff);
    }
    const Var terminal = ad::sum(tape, tail) * tape.constant(1.0 / paths.paths);
    if (terminal_out != nullptr) *terminal_out = terminal;
    return loss + tape.constant(beta) * terminal;
}

NetOnTape mark_params(Tape& tape, const MlpParams& net) {
    NetOnTape out;
    out.sizes = net.layer_sizes;
    out.params.reserve(net.params.size());
    for (double p : net.params) out.params.push_back(tape.param(p));
    return out;
}

NetOnTape lift_params(Tape& tape, const MlpParams& net) {
    NetOnTape out;
    out.sizes = net.layer_sizes;
    out.params.reserve(net.params.size());
    for (double p : net.params) out.params.push_back(tape.input(p));
    return out;
}

}  // namespace

double control_loss_gradient(const ControlProblem& problem, const ControlledEnsemble& ensemble,
                             const BatchSchedule& schedule, const MlpParams& policy,
                             const MlpParams& value, std::span<double> grad) {
    if (grad.size() != policy.params.size())
        throw UsageError("gradient span must match theta_1");
    Tape tape;
    const NetOnTape policy_net = mark_params(tape, policy);
    const Var loss =
        build_control_loss_frozen(tape, problem, ensemble, schedule, policy_net, value);
    tape.set_output(loss);
    const ad::Gradient g = tape.backward();
    std::copy(g.entries.begin(), g.entries.end(), grad.begin());
    return loss.value();
}

double value_loss_gradient(const ControlProblem& problem, const PathEnsemble& ensemble,
                           const BatchSchedule& schedule, const MlpParams& value,
                           const MlpParams& policy, double beta, HamiltonianMode mode,
                           std::span<double> grad) {
    if (grad.size() != value.params.size()) throw UsageError("gradient span must match theta_2");
    Tape tape;
    const NetOnTape value_net = mark_params(tape, value);
    const Var loss = build_value_loss(tape, problem, ensemble, schedule, value_net, &policy,
                                      beta, mode, nullptr);
    tape.set_output(loss);
    const ad::Gradient g = tape.backward();
    std::copy(g.entries.begin(), g.entries.end(), grad.begin());
    return loss.value();
}

PolicyEvaluation evaluate_policy(const ControlProblem& problem, const MlpParams& policy,
                                 std::span<const double> x0, const TimeGrid& grid, int paths,
                                 std::uint64_t seed) {
    const ControlledEnsemble ens = simulate_controlled(problem, policy, x0, grid, paths, seed);
    double mean = 0.0, m2 = 0.0;
    for (int m = 0; m < paths; ++m) {
        const double x = ens.path_cost[static_cast<std::size_t>(m)];
        const double delta = x - mean;
        mean += delta / (m + 1);
        m2 += delta * (x - mean);
    }
    PolicyEvaluation out;
    out.mean = mean;
    out.se = paths > 1 ? std::sqrt(m2 / (paths - 1) / paths) : 0.0;
    return out;
}

std::pair<ControlState, TrainReport> train_control(const ControlProblem& problem,
                                                   const TrainConfig& config) {
    problem.validate();
    config.validate();
    if (config.start_points.empty()) throw UsageError("control training needs start points");
    for (const auto& s : config.start_points)
        if (static_cast<int>(s.size()) != problem.dim)
            throw UsageError("start point dimension mismatch");

    std::vector<int> control_sizes = config.control_layers;
    if (control_sizes.empty()) control_sizes = {problem.dim + 1, 32, 32, problem.control_dim};
    std::vector<int> value_sizes = config.value_layers;
    if (value_sizes.empty()) value_sizes = {problem.dim + 1, 32, 32, 1};
    if (control_sizes.front() != problem.dim + 1 ||
        control_sizes.back() != problem.control_dim)
        throw UsageError("control network must map R^{d+1} -> R^m");
    if (value_sizes.front() != problem.dim + 1 || value_sizes.back() != 1)
        throw UsageError("value network must map R^{d+1} -> R");

    ControlState state;
    state.control = mlp_init(control_sizes, mix64(config.seed, rng_stream::kInit, 1));
    state.value = mlp_init(value_sizes, mix64(config.seed, rng_stream::kInit, 2));
    const std::size_t p1 = state.control.params.size();
    const std::size_t p2 = state.value.params.size();

    std::vector<double> grad(p1 + p2), grad_part(std::max(p1, p2));
    Optimizer opt(config.optimizer, p1 + p2);
    std::vector<double> params(p1 + p2);

    const int K = static_cast<int>(config.start_points.size());
    const HamiltonianMode mode = config.hamiltonian;

    // Driftless companion spec for the value-loss paths (dX = sigma dB).
    ProblemSpec driftless;
    driftless.dim = problem.dim;
    driftless.sigma = problem.sigma;

    std::vector<ControlledEnsemble> controlled(static_cast<std::size_t>(K));
    std::vector<PathEnsemble> companions(static_cast<std::size_t>(K));
    std::int64_t policy_version = 0;
    const auto resample = [&](int round) {
        for (int k = 0; k < K; ++k) {
            const auto& x0 = config.start_points[static_cast<std::size_t>(k)];
            controlled[static_cast<std::size_t>(k)] = simulate_controlled(
                problem, state.control, x0, config.grid, config.paths,
                mix64(config.seed, rng_stream::kPaths, static_cast<std::uint64_t>(k),
                      static_cast<std::uint64_t>(round)),
                policy_version);
            companions[static_cast<std::size_t>(k)] = simulate_ito(
                driftless, x0, config.grid, config.paths,
                mix64(config.seed, rng_stream::kDriftless, static_cast<std::uint64_t>(k),
                      static_cast<std::uint64_t>(round)));
        }
    };
    resample(0);

    TrainReport report;
    report.rows.reserve(static_cast<std::size_t>(config.epochs));
    LossTerms terms;
    Tape tape;

    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        const auto tic = std::chrono::steady_clock::now();
        const int interval = config.resample_interval > 0 ? config.resample_interval : 0;
        if (interval > 0 && epoch > 0 && epoch % interval == 0) {
            ++policy_version;
            resample(epoch / interval);
        }

        std::fill(grad.begin(), grad.end(), 0.0);
        terms = LossTerms{};
        const double inv_k = 1.0 / K;
        try {
            for (int k = 0; k < K; ++k) {
                const BatchSchedule schedule = batch_schedule(
                    config.paths, config.batch, config.grid.steps,
                    mix64(config.seed, rng_stream::kSchedule, static_cast<std::uint64_t>(epoch),
                          static_cast<std::uint64_t>(k)));

                // l_ctr: theta_1 marked, theta_2 frozen
                tape.clear();
                const NetOnTape policy_net = mark_params(tape, state.control);
                Var lctr{};
                if (config.differentiable_paths) {
                    const NetOnTape value_net = lift_params(tape, state.value);
                    lctr = build_control_loss_diffsim(tape, problem,
                                                      controlled[static_cast<std::size_t>(k)],
                                                      schedule, policy_net, value_net);
                } else {
                    lctr = build_control_loss_frozen(tape, problem,
                                                     controlled[static_cast<std::size_t>(k)],
                                                     schedule, policy_net, state.value);
                }
                tape.set_output(lctr);
                {
                    const ad::Gradient g = tape.backward();
                    for (std::size_t p = 0; p < p1; ++p) grad[p] += inv_k * g.entries[p];
                    terms.martingale += inv_k * lctr.value();
                }

                // l_val: theta_2 marked, on the driftless companion paths
                tape.clear();
                const NetOnTape value_net = mark_params(tape, state.value);
                Var terminal{};
                const Var lval = build_value_loss(
                    tape, problem, companions[static_cast<std::size_t>(k)], schedule, value_net,
                    &state.control, config.beta, mode, &terminal);
                tape.set_output(lval);
                {
                    const ad::Gradient g = tape.backward();
                    for (std::size_t p = 0; p < p2; ++p) grad[p1 + p] += inv_k * g.entries[p];
                    terms.martingale += inv_k * lval.value();
                    terms.reg += inv_k * terminal.value();
                }
            }
        } catch (const NumericError& e) {
            throw TrainingAbort(epoch, terms, std::move(report), e.what());
        }
        terms.total = terms.martingale;
        if (!std::isfinite(terms.total))
            throw TrainingAbort(epoch, terms, std::move(report), "non-finite loss");

        std::copy(state.control.params.begin(), state.control.params.end(), params.begin());
        std::copy(state.value.params.begin(), state.value.params.end(),
                  params.begin() + static_cast<std::ptrdiff_t>(p1));
        opt.step(params, grad);
        std::copy(params.begin(), params.begin() + static_cast<std::ptrdiff_t>(p1),
                  state.control.params.begin());
        std::copy(params.begin() + static_cast<std::ptrdiff_t>(p1), params.end(),
                  state.value.params.begin());

        double j_metric = 0.0;
        for (int k = 0; k < K; ++k)
            for (double c : controlled[static_cast<std::size_t>(k)].path_cost)
                j_metric += c;
        j_metric /= static_cast<double>(K) * config.paths;

        const double secs =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - tic).count();
        report.rows.push_back(EpochRow{epoch, terms.total, j_metric, terms.reg, 0.0, secs});
    }

    TrainSummary summary;
    const PolicyEvaluation j = evaluate_policy(
        problem, state.control, config.start_points[0], config.grid, config.paths,
        mix64(config.seed, rng_stream::kPaths, 0xEEAAULL));
    summary.j_estimate = j.mean;
    summary.j_se = j.se;
    if (config.oracle == "riccati_lq") {
        const LqOracle oracle = riccati_lq(problem.dim, problem.horizon);
        const LatticeEval lattice = evaluate_lq_lattice(problem, state, oracle);
        summary.oracle_kind = "riccati_lq";
        summary.oracle_value = oracle.value(0.0, config.start_points[0]);
        summary.policy_mean_abs_error = lattice.policy_mean_abs_error;
        summary.value_relative_error = lattice.value_relative_error;
        summary.relative_error = lattice.value_relative_error;
    }
    report.summary = summary;
    return {std::move(state), std::move(report)};
}

LatticeEval evaluate_lq_lattice(const ControlProblem& problem, const ControlState& state,
                                const LqOracle& oracle) {
    LatticeEval out;
    const int d = problem.dim;
    out.columns.push_back("t");
    for (int j = 0; j < d; ++j) out.columns.push_back("x" + std::to_string(j));
    for (int j = 0; j < problem.control_dim; ++j)
        out.columns.push_back("u_net" + std::to_string(j));
    for (int j = 0; j < problem.control_dim; ++j)
        out.columns.push_back("u_exact" + std::to_string(j));
    out.columns.push_back("v_net");
    out.columns.push_back("v_exact");

    constexpr int kGrid = 21;
    std::vector<std::vector<double>> points;
    if (d == 1) {
        for (int it = 0; it < kGrid; ++it)
            for (int ix = 0; ix < kGrid; ++ix)
                points.push_back({problem.horizon * it / (kGrid - 1),
                                  -2.0 + 4.0 * ix / (kGrid - 1)});
    } else {
        for (int p = 0; p < kGrid * kGrid; ++p) {
            std::vector<double> pt(static_cast<std::size_t>(d) + 1);
            pt[0] = problem.horizon *
                    unit_double(mix64(0x1a771cULL, static_cast<std::uint64_t>(p), 0));
            for (int j = 0; j < d; ++j)
                pt[static_cast<std::size_t>(j) + 1] =
                    -2.0 + 4.0 * unit_double(mix64(0x1a771cULL, static_cast<std::uint64_t>(p),
                                                   static_cast<std::uint64_t>(j) + 1));
            points.push_back(std::move(pt));
        }
    }

    double policy_err = 0.0, value_err = 0.0, value_ref = 0.0;
    std::vector<double> u_exact(static_cast<std::size_t>(problem.control_dim));
    for (const auto& pt : points) {
        const double t = pt[0];
        const std::span<const double> x(pt.data() + 1, static_cast<std::size_t>(d));
        const std::vector<double> u_net = policy_at(problem, state.control, t, x);
        oracle.policy(t, x, u_exact);
        const double v_net = value_at(problem, state.value, t, x);
        const double v_exact = oracle.value(t, x);

        double perr = 0.0;
        for (int j = 0; j < problem.control_dim; ++j)
            perr += std::fabs(u_net[static_cast<std::size_t>(j)] -
                              u_exact[static_cast<std::size_t>(j)]);
        policy_err += perr / problem.control_dim;
        value_err += std::fabs(v_net - v_exact);
        value_ref += std::fabs(v_exact);

        std::vector<double> row;
        row.push_back(t);
        row.insert(row.end(), x.begin(), x.end());
        row.insert(row.end(), u_net.begin(), u_net.end());
        row.insert(row.end(), u_exact.begin(), u_exact.end());
        row.push_back(v_net);
        row.push_back(v_exact);
        out.rows.push_back(std::move(row));
    }
    out.policy_mean_abs_error = policy_err / static_cast<double>(points.size());
    out.value_relative_error = value_err / std::max(value_ref, 1e-12);
    return out;
}

}  // namespace martnet
