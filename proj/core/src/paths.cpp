#include "martnet/paths.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "martnet/rng.hpp"

namespace martnet {

namespace {

PathEnsemble make_ensemble(const TimeGrid& grid, int dim, int paths,
                           std::span<const double> x0, std::uint64_t seed, bool reflecting) {
    grid.validate();
    if (paths < 1) throw UsageError("path count M must be >= 1");
    if (static_cast<int>(x0.size()) != dim)
        throw UsageError("start point dimension does not match the problem");
    PathEnsemble e;
    e.grid = grid;
    e.dim = dim;
    e.paths = paths;
    e.seed = seed;
    e.reflecting = reflecting;
    e.states.assign(static_cast<std::size_t>(paths) * (grid.steps + 1) * dim, 0.0);
    e.increments.assign(static_cast<std::size_t>(paths) * grid.steps * dim, 0.0);
    if (reflecting) e.local_time.assign(static_cast<std::size_t>(paths) * grid.steps, 0.0);
    e.exit_index.assign(static_cast<std::size_t>(paths), grid.steps);
    e.exit_points.assign(static_cast<std::size_t>(paths) * dim, 0.0);
    e.start.assign(x0.begin(), x0.end());
    return e;
}

}  // namespace

void draw_brownian_increment(std::uint64_t seed, int m, int i, int dim, double sqrt_dt,
                             std::span<double> out) {
    for (int j = 0; j < dim; ++j)
        out[j] = sqrt_dt * normal_double(mix64(seed, rng_stream::kPaths,
                                               (static_cast<std::uint64_t>(m) << 24) ^
                                                   static_cast<std::uint64_t>(i),
                                               static_cast<std::uint64_t>(j)));
}

PathEnsemble simulate_ito(const ProblemSpec& problem, std::span<const double> x0,
                          const TimeGrid& grid, int paths, std::uint64_t seed) {
    problem.validate();
    PathEnsemble e = make_ensemble(grid, problem.dim, paths, x0, seed, false);
    const double dt = grid.dt();
    const double sqrt_dt = std::sqrt(dt);
    const int d = problem.dim;
    std::vector<double> drift(d), diffused(d);
    const bool zero_mu = problem.zero_drift();

    for (int m = 0; m < paths; ++m) {
        std::copy(x0.begin(), x0.end(), e.state(m, 0).begin());
        for (int i = 0; i < grid.steps; ++i) {
            const auto x = e.state(m, i);
            const auto db = e.increment(m, i);
            draw_brownian_increment(seed, m, i, d, sqrt_dt, db);
            const double t = grid.time(i);
            try {
                problem.sigma.apply(x, t, d, db, diffused);
                if (!zero_mu) problem.drift_at(x, t, drift);
            } catch (const NumericError& err) {
                throw NumericError(err.what(), "path m=" + std::to_string(m) +
                                                   ", step i=" + std::to_string(i));
            }
            auto next = e.state(m, i + 1);
            for (int j = 0; j < d; ++j)
                next[j] = x[j] + (zero_mu ? 0.0 : drift[j] * dt) + diffused[j];
        }
    }
    return e;
}

PathEnsemble apply_exit_stopping(PathEnsemble ensemble, const Domain& domain) {
    if (!domain.bounded())
        throw UsageError("exit stopping requires a bounded domain (box or ball)");
    const int d = ensemble.dim;
    const int steps = ensemble.grid.steps;
    for (int m = 0; m < ensemble.paths; ++m) {
        int cross = -1;
        for (int i = 0; i <= steps; ++i) {
            if (!domain.contains(ensemble.state(m, i))) {
                cross = i;
                break;
            }
        }
        if (cross < 0) {
            ensemble.exit_index[m] = steps;
            continue;
        }
        auto exit = std::span<double>(
            ensemble.exit_points.data() + static_cast<std::size_t>(m) * d,
            static_cast<std::size_t>(d));
        if (cross == 0) {
            // degenerate: started outside; freeze at the start point
            std::copy(ensemble.state(m, 0).begin(), ensemble.state(m, 0).end(), exit.begin());
        } else {
            domain.exit_point(ensemble.state(m, cross - 1), ensemble.state(m, cross), exit);
        }
        for (int i = cross; i <= steps; ++i)
            std::copy(exit.begin(), exit.end(), ensemble.state(m, i).begin());
        // A crossing at the final knot leaves no dead steps; tau = N keeps the
        // stopped-process convention (the straddling increment stays live).
        ensemble.exit_index[m] = cross;
    }
    return ensemble;
}

PathEnsemble simulate_rbm(const ProblemSpec& problem, const Domain& domain,
                          std::span<const double> x0, const TimeGrid& grid, int paths,
                          std::uint64_t seed) {
    problem.validate();
    if (!problem.zero_drift())
        throw UsageError("reflecting runs require zero drift (generator = Laplacian/2)");
    if (!problem.sigma.is_identity(problem.dim))
        throw UsageError("reflecting runs require identity diffusion");
    if (!domain.bounded()) throw UsageError("reflecting runs require a bounded domain");
    if (!domain.contains(x0)) throw UsageError("reflecting start point must lie in the domain");

    PathEnsemble e = make_ensemble(grid, problem.dim, paths, x0, seed, true);
    const double sqrt_dt = std::sqrt(grid.dt());
    const int d = problem.dim;
    std::vector<double> tentative(d);

    for (int m = 0; m < paths; ++m) {
        std::copy(x0.begin(), x0.end(), e.state(m, 0).begin());
        for (int i = 0; i < grid.steps; ++i) {
            const auto x = e.state(m, i);
            const auto db = e.increment(m, i);
            draw_brownian_increment(seed, m, i, d, sqrt_dt, db);
            for (int j = 0; j < d; ++j) tentative[j] = x[j] + db[j];
            auto next = e.state(m, i + 1);
            if (domain.contains(tentative)) {
                std::copy(tentative.begin(), tentative.end(), next.begin());
            } else {
                const double pushback = domain.project(tentative, next);
                e.local_time[static_cast<std::size_t>(m) * grid.steps + i] = pushback;
                if (!domain.contains(next))
                    throw GeometryError("reflection failed to re-enter the domain at m=" +
                                        std::to_string(m) + ", i=" + std::to_string(i));
            }
        }
    }
    return e;
}

}  // namespace martnet
