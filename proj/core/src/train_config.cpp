#include "martnet/train_config.hpp"

#include "martnet/rng.hpp"

namespace martnet {

std::vector<std::vector<double>> sample_uniform_starts(const Domain& domain, int count,
                                                       std::uint64_t seed) {
    if (count < 1) throw UsageError("start count K must be >= 1");
    const Box box = domain.quadrature_box();
    const int d = box.dim();
    std::vector<std::vector<double>> starts(static_cast<std::size_t>(count));
    for (int k = 0; k < count; ++k) {
        auto& pt = starts[static_cast<std::size_t>(k)];
        pt.resize(static_cast<std::size_t>(d));
        for (int j = 0; j < d; ++j) {
            const double u = unit_double(mix64(seed, rng_stream::kStarts,
                                               static_cast<std::uint64_t>(k),
                                               static_cast<std::uint64_t>(j)));
            pt[static_cast<std::size_t>(j)] = box.lower[j] + u * (box.upper[j] - box.lower[j]);
        }
    }
    return starts;
}

}  // namespace martnet
