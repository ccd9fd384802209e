#pragma once

#include <span>
#include <utility>
#include <vector>

#include "martnet/problem.hpp"

namespace martnet {

/// Leading eigenvalues of 1/2*Laplacian + V with Dirichlet walls, principal
/// (largest, i.e. ground-state) first. Central second differences on a
/// uniform grid with n intervals per axis.
struct FdEigenResult {
    std::vector<double> eigenvalues;
    int intervals = 0;
    Box domain;
};

FdEigenResult fd_eigen(const Expr& potential, const Box& domain, int intervals, int dim,
                       int count = 2);

/// Closed-form benchmark: mu = u, sigma = I, c = |u|^2/2 + |x|^2/2,
/// terminal cost |x|^2/2. Then v(t,x) = k(t)|x|^2/2 + m(t) with k' = k^2 - 1,
/// k(T) = 1 (hence k = 1), m(t) = d(T-t)/2, and u*(t,x) = -k(t)x.
struct LqOracle {
    int dim = 1;
    double horizon = 1.0;

    double k(double) const { return 1.0; }
    double value(double t, std::span<const double> x) const;
    void policy(double /*t*/, std::span<const double> x, std::span<double> u) const {
        for (std::size_t j = 0; j < x.size(); ++j) u[j] = -x[j];
    }
};

LqOracle riccati_lq(int dim, double horizon);

/// Backward RK4 integration of k' = k^2 - 1 from k(T) = terminal_weight;
/// returns k at the uniform knots t_i = T*i/steps (index 0 = t = 0).
std::vector<double> riccati_k_numeric(double horizon, double terminal_weight, int steps);

/// Explicit solution of the 1-D Skorokhod problem on the half line [0, inf):
/// xi[i] = f[i] + L[i], L[i] = max(0, max_{j<=i} -f[j]).
std::pair<std::vector<double>, std::vector<double>> skorokhod_1d(std::span<const double> f);

/// Z-scores of martingale increment means against zero: pooled over per-path
/// sums, and per time index.
struct MartingaleZ {
    double pooled = 0.0;
    double pooled_mean = 0.0;
    double pooled_se = 0.0;
    std::vector<double> per_index;
};

MartingaleZ martingale_mean_test(std::span<const double> increments, int paths, int steps);

}  // namespace martnet
