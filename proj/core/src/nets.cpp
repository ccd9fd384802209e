#include "martnet/nets.hpp"

#include <cmath>

#include "martnet/rng.hpp"

namespace martnet {

std::size_t MlpParams::param_count(std::span<const int> sizes) {
    detail::check_sizes_forward(sizes);
    std::size_t n = 0;
    for (std::size_t l = 1; l < sizes.size(); ++l)
        n += static_cast<std::size_t>(sizes[l]) * sizes[l - 1] + sizes[l];
    return n;
}

MlpParams mlp_init(std::span<const int> layer_sizes, std::uint64_t seed) {
    detail::check_sizes(layer_sizes);
    MlpParams net;
    net.layer_sizes.assign(layer_sizes.begin(), layer_sizes.end());
    net.params.assign(MlpParams::param_count(layer_sizes), 0.0);

    std::size_t ofs = 0;
    for (std::size_t l = 1; l < layer_sizes.size(); ++l) {
        const int in_w = layer_sizes[l - 1];
        const int out_w = layer_sizes[l];
        const double bound = std::sqrt(6.0 / (in_w + out_w));
        const std::size_t weights = static_cast<std::size_t>(out_w) * in_w;
        for (std::size_t i = 0; i < weights; ++i) {
            const double u = unit_double(mix64(seed, rng_stream::kInit, l, i));
            net.params[ofs + i] = bound * (2.0 * u - 1.0);
        }
        ofs += weights + static_cast<std::size_t>(out_w);  // biases stay zero
    }
    return net;
}

std::vector<double> mlp_forward(const MlpParams& net, std::span<const double> input) {
    return mlp_forward_span<double>(net.layer_sizes, net.params, input);
}

ValueAndGrad mlp_forward_with_input_grad(const MlpParams& net, std::span<const double> input) {
    auto res = mlp_forward_with_input_grad_span<double>(net.layer_sizes, net.params, input);
    return ValueAndGrad{res.value, std::move(res.grad)};
}

}  // namespace martnet
