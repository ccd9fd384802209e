#pragma once

#include <functional>
#include <span>
#include <utility>
#include <vector>

#include "martnet/nets.hpp"
#include "martnet/paths.hpp"
#include "martnet/quadrature.hpp"
#include "martnet/train_config.hpp"

namespace martnet {

/// Which generator the martingale increments discretize: the full one (drift
/// simulated into the paths) or the driftless variant that moves the drift
/// term into the increments.
enum class GeneratorMode { kFull, kDriftless };

struct EigenProblem {
    ProblemSpec spec;
    GeneratorMode mode = GeneratorMode::kFull;
    std::vector<std::vector<double>> starts;  // K initial points
    bool driftless_ack = false;  // accept dX = sigma dB with state-dependent sigma

    void validate() const;
};

/// Martingale increments D[m][i]; rows are paths.
struct IncrementMatrix {
    int paths = 0;
    int steps = 0;
    std::vector<double> values;

    double& at(int m, int i) { return values[static_cast<std::size_t>(m) * steps + i]; }
    double at(int m, int i) const { return values[static_cast<std::size_t>(m) * steps + i]; }
};

/// Per time index, a uniformly-without-replacement subset of path indices.
struct BatchSchedule {
    int paths = 0;
    int steps = 0;
    int batch = 0;
    std::vector<std::uint32_t> index;  // steps x batch

    std::span<const std::uint32_t> at(int i) const {
        return {index.data() + static_cast<std::size_t>(i) * batch,
                static_cast<std::size_t>(batch)};
    }
};

BatchSchedule batch_schedule(int paths, int batch, int steps, std::uint64_t epoch_seed);

using ScalarField = std::function<double(std::span<const double>)>;
using GradientField = std::function<std::vector<double>(std::span<const double>)>;

/// Discrete martingale increments for an arbitrary eigenfunction candidate.
/// `grad_u` is consulted only in driftless mode (for the mu' grad(u) term).
IncrementMatrix martingale_increments(const ScalarField& u, const GradientField* grad_u,
                                      double lambda, const PathEnsemble& ensemble,
                                      const EigenProblem& problem);
IncrementMatrix martingale_increments(const MlpParams& u, double lambda,
                                      const PathEnsemble& ensemble,
                                      const EigenProblem& problem);

/// (1/N) sum_i (batch mean of D over A_i)^2 + beta * reg.
double eigen_loss(const IncrementMatrix& d, const BatchSchedule& schedule, double reg,
                  double beta);

/// Rayleigh energy + 1-normalization:
/// integral(grad(u)' (sigma sigma'/2) grad(u) + V u^2) + gamma*(integral(u^2)-1)^2.
double rayleigh_reg(const MlpParams& u, const EigenProblem& problem,
                    const QuadratureSpec& quad, double gamma);
double rayleigh_reg(const ScalarField& u, const GradientField& grad_u,
                    const EigenProblem& problem, const QuadratureSpec& quad, double gamma);

/// Mean of u(exit point)^2 over exited paths (0 when nothing exited).
double boundary_penalty(const MlpParams& u, const PathEnsemble& ensemble);

/// Generator-consistent Rayleigh quotient
///   (-integral grad(u)'(sigma sigma'/2) grad(u) + integral V u^2) / integral u^2,
/// used to initialize the trainable lambda.
double rayleigh_quotient(const MlpParams& u, const EigenProblem& problem,
                         const QuadratureSpec& quad);

/// Reverse-mode gradient of the K-start-averaged training loss with respect
/// to (theta, lambda); grad has size P+1 with lambda last. Returns the term
/// breakdown (martingale/reg/boundary averaged, raw weights applied in total).
LossTerms eigen_loss_gradient(const EigenProblem& problem,
                              std::span<const PathEnsemble> ensembles,
                              std::span<const BatchSchedule> schedules, const MlpParams& u,
                              double lambda, double beta, double gamma, double beta_bc,
                              const QuadratureSpec& quad, std::span<double> grad);

struct EigenState {
    MlpParams u;
    double lambda = 0.0;
};

/// Ensemble sampling consistent with the boundary kind and generator mode:
/// stopped Ito paths for bounded Dirichlet problems, free Ito paths on all
/// space, reflecting paths for Neumann/Robin.
PathEnsemble sample_problem_paths(const EigenProblem& problem, std::span<const double> x0,
                                  const TimeGrid& grid, int paths, std::uint64_t seed);

std::pair<EigenState, TrainReport> train_eigen(const EigenProblem& problem,
                                               const TrainConfig& config);

}  // namespace martnet
