#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "martnet/problem.hpp"

namespace martnet {

/// Uniform partition 0 = t_0 < ... < t_N = T.
struct TimeGrid {
    double horizon = 1.0;  // T
    int steps = 1;         // N

    double dt() const { return horizon / steps; }
    double time(int i) const { return horizon * i / steps; }
    void validate() const {
        if (!(horizon > 0.0)) throw UsageError("time grid requires T > 0");
        if (steps < 1) throw UsageError("time grid requires N >= 1");
    }
};

/// M discretized trajectories with their Brownian increments, exit bookkeeping
/// and (for reflecting runs) local-time increments. Immutable once built.
struct PathEnsemble {
    TimeGrid grid;
    int dim = 0;
    int paths = 0;  // M
    std::vector<double> states;       // (m, i) -> d values; i in [0, N]
    std::vector<double> increments;   // (m, i) -> d values; i in [0, N)
    std::vector<double> local_time;   // (m, i); empty unless reflecting
    std::vector<int> exit_index;      // tau in [0, N]; N = never exited
    std::vector<double> exit_points;  // (m) -> d values; valid when tau < N
    std::vector<double> start;        // x0
    std::uint64_t seed = 0;
    bool reflecting = false;

    std::span<const double> state(int m, int i) const {
        return {states.data() + (static_cast<std::size_t>(m) * (grid.steps + 1) + i) * dim,
                static_cast<std::size_t>(dim)};
    }
    std::span<double> state(int m, int i) {
        return {states.data() + (static_cast<std::size_t>(m) * (grid.steps + 1) + i) * dim,
                static_cast<std::size_t>(dim)};
    }
    std::span<const double> increment(int m, int i) const {
        return {increments.data() + (static_cast<std::size_t>(m) * grid.steps + i) * dim,
                static_cast<std::size_t>(dim)};
    }
    std::span<double> increment(int m, int i) {
        return {increments.data() + (static_cast<std::size_t>(m) * grid.steps + i) * dim,
                static_cast<std::size_t>(dim)};
    }
    double local_time_increment(int m, int i) const {
        return local_time.empty() ? 0.0
                                  : local_time[static_cast<std::size_t>(m) * grid.steps + i];
    }
    std::span<const double> exit_point(int m) const {
        return {exit_points.data() + static_cast<std::size_t>(m) * dim,
                static_cast<std::size_t>(dim)};
    }
};

/// The Brownian increment draw shared by every simulator: Normal(0, dt I)
/// keyed by (seed, m, i, coordinate), independent of scheduling.
void draw_brownian_increment(std::uint64_t seed, int m, int i, int dim, double sqrt_dt,
                             std::span<double> out);

/// Euler-Maruyama sampling of dX = mu dt + sigma dB from x0; no stopping is
/// applied (every exit index is N). Increments are drawn from a counter-based
/// generator keyed by (seed, m, i, coordinate).
PathEnsemble simulate_ito(const ProblemSpec& problem, std::span<const double> x0,
                          const TimeGrid& grid, int paths, std::uint64_t seed);

/// First-exit stopping for a bounded domain: tau[m] is the first index whose
/// state leaves the closed domain; states from tau on are frozen at the
/// segment-boundary intersection.
PathEnsemble apply_exit_stopping(PathEnsemble ensemble, const Domain& domain);

/// Reflecting Brownian motion (mu = 0, sigma = I) in a bounded domain with
/// boundary local time: an outside tentative step is pushed back to the
/// nearest boundary point along the outward normal, and the pushback distance
/// accumulates as the local-time increment.
PathEnsemble simulate_rbm(const ProblemSpec& problem, const Domain& domain,
                          std::span<const double> x0, const TimeGrid& grid, int paths,
                          std::uint64_t seed);

}  // namespace martnet
