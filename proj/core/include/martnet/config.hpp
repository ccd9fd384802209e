#pragma once

#include <optional>
#include <string>

#include "martnet/control.hpp"
#include "martnet/eigen.hpp"
#include "martnet/train_config.hpp"

namespace martnet {

enum class RunMode { kEigen, kControl, kSample, kOracle, kGradCheck };

/// A fully validated run: every expression parsed, every knob range-checked,
/// defaults filled in.
struct RunConfig {
    RunMode mode = RunMode::kEigen;
    std::optional<EigenProblem> eigen_problem;
    std::optional<ControlProblem> control_problem;
    TrainConfig train;
    std::string output_dir = "out";
    bool uniform_starts = true;  // start points were drawn from the seed

    /// Re-derive seed-dependent defaults after overriding the seed.
    void reseed(std::uint64_t seed);
};

RunConfig load_config(const std::string& path);
RunConfig parse_config_text(const std::string& json_text);

/// Benchmark configs compiled into the library (also shipped as files under
/// benchmarks/configs/). Returns an empty view when the name is unknown.
std::string_view find_builtin_config(std::string_view name);
std::vector<std::string_view> builtin_config_names();

}  // namespace martnet
