#pragma once

#include <string>

#include "martnet/config.hpp"
#include "martnet/control.hpp"
#include "martnet/eigen.hpp"

namespace martnet {

/// Shortest decimal that round-trips the exact double.
std::string format_double(double v);
/// Fixed 17-significant-digit form used by checkpoints.
std::string format_double_17(double v);

void write_metrics_csv(const TrainReport& report, const std::string& path);

/// Ensemble CSV: header m,i,t,x0..x{d-1},dB0..dB{d-1},dL,tau; one row per
/// (m,i) with the step increments of the step starting at i (zeros at i=N).
void write_ensemble_csv(const PathEnsemble& ensemble, const std::string& path);

void write_lattice_csv(const LatticeEval& lattice, const std::string& path);

// Checkpoints: JSON with layer sizes and 17-significant-digit parameter
// strings; reloads reproduce bit-identical forward evaluations.
void save_checkpoint(const EigenState& state, const std::string& path);
void save_checkpoint(const ControlState& state, const std::string& path);
EigenState load_checkpoint_eigen(const std::string& path);
ControlState load_checkpoint_control(const std::string& path);

/// Entry point used by the CLI: dispatches on config.mode, writes metrics,
/// report.json and checkpoints into config.output_dir. Returns the process
/// exit status (0 ok, 1 validation error, 2 numeric abort).
int run(const RunConfig& config);

}  // namespace martnet
