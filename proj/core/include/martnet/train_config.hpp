#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "martnet/optimizer.hpp"
#include "martnet/paths.hpp"
#include "martnet/quadrature.hpp"

namespace martnet {

/// How the Hamiltonian infimum is evaluated inside the value loss.
enum class HamiltonianMode { kAuto, kClosedForm, kPolicyPlugIn, kGridSearch };

/// Everything a trainer needs besides the problem itself.
struct TrainConfig {
    TimeGrid grid;
    int paths = 256;  // M
    int starts = 16;  // K, used when start_points is empty (uniform sampling)
    std::vector<std::vector<double>> start_points;
    int batch = 64;
    int epochs = 100;
    OptimizerConfig optimizer;
    double beta = 1.0;     // regularizer weight (eigen) / terminal weight (control)
    double gamma = 10.0;   // 1-normalization weight inside the regularizer
    double beta_bc = 1.0;  // Dirichlet boundary penalty weight
    int resample_interval = 10;  // 0 = keep the initial ensembles for the whole run
    std::uint64_t seed = 0x6d6172746eULL;
    bool differentiable_paths = false;  // control: pathwise gradients through the drift
    QuadratureSpec quadrature;
    std::vector<int> eigen_layers, control_layers, value_layers;  // empty = defaults
    HamiltonianMode hamiltonian = HamiltonianMode::kAuto;

    // Oracle attachment for the final report: "fd_eigen", "riccati_lq",
    // "lambda_ref" (closed form supplied below), or empty.
    std::string oracle;
    int fd_intervals = 0;  // 0 = pick a default per dimension
    double lambda_ref = 0.0;

    void validate() const {
        grid.validate();
        if (paths < 1) throw UsageError("M must be >= 1");
        if (batch < 1 || batch > paths) throw UsageError("batch size must satisfy 1 <= B <= M");
        if (epochs < 1) throw UsageError("epochs must be >= 1");
        if (start_points.empty() && starts < 1) throw UsageError("K must be >= 1");
        if (resample_interval < 0) throw UsageError("resample interval must be >= 0");
    }
};

struct EpochRow {
    int epoch = 0;
    double loss = 0.0;
    double lambda_or_j = 0.0;
    double reg = 0.0;
    double boundary = 0.0;
    double seconds = 0.0;
};

struct TrainSummary {
    double lambda_star = 0.0;       // eigen
    double j_estimate = 0.0;        // control
    double j_se = 0.0;
    std::string oracle_kind;
    double oracle_value = 0.0;
    double relative_error = 0.0;
    double policy_mean_abs_error = 0.0;  // control with an attached oracle
    double value_relative_error = 0.0;
};

struct TrainReport {
    std::vector<EpochRow> rows;
    std::optional<TrainSummary> summary;
};

/// Loss decomposition carried by per-epoch diagnostics and abort reports.
struct LossTerms {
    double total = 0.0;
    double martingale = 0.0;
    double reg = 0.0;       // raw regularizer (eigen) / terminal penalty (control)
    double boundary = 0.0;  // raw Dirichlet boundary penalty
};

/// Non-finite loss: aborts the run with the failing epoch, the last term
/// breakdown, and whatever rows were completed.
class TrainingAbort : public NumericError {
public:
    TrainingAbort(int epoch_, const LossTerms& terms_, TrainReport partial_,
                  const std::string& msg)
        : NumericError(msg, "epoch " + std::to_string(epoch_)),
          epoch(epoch_),
          terms(terms_),
          partial(std::move(partial_)) {}
    int epoch;
    LossTerms terms;
    TrainReport partial;
};

/// K start points drawn uniformly from the domain's quadrature box.
std::vector<std::vector<double>> sample_uniform_starts(const Domain& domain, int count,
                                                       std::uint64_t seed);

}  // namespace martnet
