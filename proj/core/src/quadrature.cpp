#include "martnet/quadrature.hpp"

#include <cmath>

#include "martnet/rng.hpp"

namespace martnet {

Quadrature build_quadrature(const Box& box, const QuadratureSpec& spec) {
    const int d = box.dim();
    if (d < 1) throw UsageError("quadrature requires a non-empty box");
    const bool midpoint = spec.kind == QuadratureSpec::Kind::kMidpoint ||
                          (spec.kind == QuadratureSpec::Kind::kAuto && d <= 3);
    Quadrature q;
    q.dim = d;
    if (midpoint) {
        const int per_axis = spec.points_per_axis;
        if (per_axis < 1) throw UsageError("quadrature needs at least one point per axis");
        long long total = 1;
        for (int j = 0; j < d; ++j) total *= per_axis;
        q.count = static_cast<int>(total);
        q.weight = box.volume() / static_cast<double>(total);
        q.points.resize(static_cast<std::size_t>(total) * d);
        std::vector<int> idx(static_cast<std::size_t>(d), 0);
        for (long long p = 0; p < total; ++p) {
            for (int j = 0; j < d; ++j) {
                const double h = (box.upper[j] - box.lower[j]) / per_axis;
                q.points[static_cast<std::size_t>(p) * d + j] =
                    box.lower[j] + (idx[static_cast<std::size_t>(j)] + 0.5) * h;
            }
            for (int j = 0; j < d; ++j) {  // odometer increment
                if (++idx[static_cast<std::size_t>(j)] < per_axis) break;
                idx[static_cast<std::size_t>(j)] = 0;
            }
        }
    } else {
        const int n = spec.mc_points;
        if (n < 1) throw UsageError("quadrature needs at least one Monte Carlo point");
        q.count = n;
        q.weight = box.volume() / n;
        q.points.resize(static_cast<std::size_t>(n) * d);
        for (int p = 0; p < n; ++p)
            for (int j = 0; j < d; ++j) {
                const double u = unit_double(mix64(spec.seed, rng_stream::kQuad,
                                                   static_cast<std::uint64_t>(p),
                                                   static_cast<std::uint64_t>(j)));
                q.points[static_cast<std::size_t>(p) * d + j] =
                    box.lower[j] + u * (box.upper[j] - box.lower[j]);
            }
    }
    return q;
}

}  // namespace martnet
