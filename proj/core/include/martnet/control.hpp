#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <utility>
#include <vector>

#include "martnet/eigen.hpp"
#include "martnet/nets.hpp"
#include "martnet/oracles.hpp"
#include "martnet/paths.hpp"
#include "martnet/train_config.hpp"

namespace martnet {

/// Finite-horizon feedback control problem dX = mu(t,X,u)dt + sigma(t,X)dB
/// with running cost c(x,t,u) and terminal cost xi(x). Controls live in the
/// box [control_lower, control_upper] when those are non-empty.
struct ControlProblem {
    int dim = 1;
    int control_dim = 1;
    std::vector<Expr> mu;       // d expressions over (x, t, u)
    SigmaSpec sigma;            // sigma(t, x); square, invertible where sampled
    Expr running_cost;          // c(x, t, u)
    Expr terminal_cost;         // xi(x)
    double horizon = 1.0;
    std::vector<double> control_lower, control_upper;
    std::vector<Expr> minimizer;  // optional closed-form u_min(t, x, z); z bound via u-slots

    bool bounded_controls() const { return !control_lower.empty(); }
    void validate() const;
    double terminal_at(std::span<const double> x) const;
};

struct ControlState {
    MlpParams control;  // theta_1
    MlpParams value;    // theta_2
};

/// Paths simulated under a fixed policy, tagged with the policy version and
/// carrying the realized pathwise cost xi(X_N) + sum c dt.
struct ControlledEnsemble {
    PathEnsemble paths;
    std::int64_t policy_version = 0;
    std::vector<double> path_cost;
};

using PolicyFn = std::function<void(double t, std::span<const double> x, std::span<double> u)>;
using ValueFn = std::function<double(double t, std::span<const double> x)>;
/// Value together with its x-gradient, as needed by the Hamiltonian argument.
using ValueGradFn = std::function<ValueAndGrad(double t, std::span<const double> x)>;

/// Time enters the control/value networks as a trailing coordinate scaled to
/// [0,1]: input = (x_0..x_{d-1}, t/T).
std::vector<double> policy_at(const ControlProblem& problem, const MlpParams& policy, double t,
                              std::span<const double> x);
double value_at(const ControlProblem& problem, const MlpParams& value, double t,
                std::span<const double> x);

ControlledEnsemble simulate_controlled(const ControlProblem& problem, const PolicyFn& policy,
                                       std::span<const double> x0, const TimeGrid& grid,
                                       int paths, std::uint64_t seed,
                                       std::int64_t policy_version = 0);
ControlledEnsemble simulate_controlled(const ControlProblem& problem, const MlpParams& policy,
                                       std::span<const double> x0, const TimeGrid& grid,
                                       int paths, std::uint64_t seed,
                                       std::int64_t policy_version = 0);

/// H(t,x,z) = f at the chosen minimizer, f(u) = c(x,t,u) + z' sigma^{-1} mu.
/// kAuto resolves to closed-form when provided, else policy plug-in.
double hamiltonian(const ControlProblem& problem, double t, std::span<const double> x,
                   std::span<const double> z, HamiltonianMode mode,
                   const MlpParams* policy = nullptr);

/// Batch means over A_i of the cost-process increments
/// c(X_i,t_i,u(t_i,X_i))dt + v(t_{i+1},X_{i+1}) - v(t_i,X_i).
std::vector<double> cost_increment_means(const ControlProblem& problem,
                                         const PathEnsemble& ensemble,
                                         const BatchSchedule& schedule, const PolicyFn& policy,
                                         const ValueFn& value);

/// Batch means over A_i of the value increments
/// v(t_{i+1},X_{i+1}) - v(t_i,X_i) + H(t_i, X_i, grad_x v sigma) dt.
std::vector<double> value_increment_means(const ControlProblem& problem,
                                          const PathEnsemble& ensemble,
                                          const BatchSchedule& schedule,
                                          const ValueGradFn& value, HamiltonianMode mode,
                                          const MlpParams* policy = nullptr);

/// (1/M) sum_m (v(T, X_N) - xi(X_N))^2.
double terminal_penalty(const ControlProblem& problem, const PathEnsemble& ensemble,
                        const ValueFn& value);

/// (1/N) sum_i (cost-increment batch mean)^2; theta_2 is read-only here.
double control_loss(const MlpParams& policy, const MlpParams& value,
                    const ControlledEnsemble& ensemble, const BatchSchedule& schedule,
                    const ControlProblem& problem);

/// (1/N) sum_i (value-increment batch mean)^2 + beta * terminal penalty.
double value_loss(const MlpParams& value, const MlpParams& policy,
                  const PathEnsemble& ensemble, const BatchSchedule& schedule,
                  const ControlProblem& problem, double beta,
                  HamiltonianMode mode = HamiltonianMode::kAuto);

/// Reverse-mode gradient of control_loss with respect to theta_1 under the
/// frozen-path convention (gradients flow through the running cost only).
double control_loss_gradient(const ControlProblem& problem, const ControlledEnsemble& ensemble,
                             const BatchSchedule& schedule, const MlpParams& policy,
                             const MlpParams& value, std::span<double> grad);

/// Reverse-mode gradient of value_loss with respect to theta_2 (through every
/// v occurrence including the Hamiltonian's z argument).
double value_loss_gradient(const ControlProblem& problem, const PathEnsemble& ensemble,
                           const BatchSchedule& schedule, const MlpParams& value,
                           const MlpParams& policy, double beta, HamiltonianMode mode,
                           std::span<double> grad);

struct PolicyEvaluation {
    double mean = 0.0;
    double se = 0.0;
};

/// Monte Carlo estimate of J(u) = E[xi(X_T) + sum c dt] under the policy.
PolicyEvaluation evaluate_policy(const ControlProblem& problem, const MlpParams& policy,
                                 std::span<const double> x0, const TimeGrid& grid, int paths,
                                 std::uint64_t seed);

std::pair<ControlState, TrainReport> train_control(const ControlProblem& problem,
                                                   const TrainConfig& config);

/// Lattice comparison against the LQ closed form; rows are
/// t, x..., u_net..., u_exact..., v_net, v_exact.
struct LatticeEval {
    std::vector<std::string> columns;
    std::vector<std::vector<double>> rows;
    double policy_mean_abs_error = 0.0;
    double value_relative_error = 0.0;
};

LatticeEval evaluate_lq_lattice(const ControlProblem& problem, const ControlState& state,
                                const LqOracle& oracle);

}  // namespace martnet
