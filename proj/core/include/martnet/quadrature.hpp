#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "martnet/problem.hpp"

namespace martnet {

/// How to integrate over a box: tensor-product midpoint rule for d <= 3,
/// uniform Monte Carlo above.
struct QuadratureSpec {
    enum class Kind { kAuto, kMidpoint, kMonteCarlo };
    Kind kind = Kind::kAuto;
    int points_per_axis = 32;
    int mc_points = 4096;
    std::uint64_t seed = 0x5eed;
};

/// Flat point set with one shared weight (midpoint cells are uniform, and MC
/// uses volume/n).
struct Quadrature {
    int dim = 0;
    int count = 0;
    double weight = 0.0;
    std::vector<double> points;  // count x dim

    std::span<const double> point(int i) const {
        return {points.data() + static_cast<std::size_t>(i) * dim,
                static_cast<std::size_t>(dim)};
    }
};

Quadrature build_quadrature(const Box& box, const QuadratureSpec& spec);

}  // namespace martnet
