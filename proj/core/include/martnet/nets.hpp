#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "martnet/errors.hpp"
#include "martnet/scalar_ops.hpp"

namespace martnet {

/// Dense feed-forward network parameters: tanh on hidden layers, identity on
/// the output. Flattened layout per layer: weights row-major (out x in), then
/// biases. Immutable during an evaluation pass.
struct MlpParams {
    std::vector<int> layer_sizes;
    std::vector<double> params;

    int input_dim() const { return layer_sizes.front(); }
    int output_dim() const { return layer_sizes.back(); }
    std::size_t count() const { return params.size(); }

    static std::size_t param_count(std::span<const int> sizes);
};

/// Glorot-uniform weights, zero biases, deterministic in the seed.
MlpParams mlp_init(std::span<const int> layer_sizes, std::uint64_t seed);

std::vector<double> mlp_forward(const MlpParams& net, std::span<const double> input);

struct ValueAndGrad {
    double value;
    std::vector<double> grad;  // d(value)/d(input_j)
};

/// Scalar-output forward pass together with the exact input gradient.
ValueAndGrad mlp_forward_with_input_grad(const MlpParams& net, std::span<const double> input);

namespace detail {

inline void check_sizes(std::span<const int> sizes) {
    if (sizes.size() < 3) throw UsageError("network needs at least one hidden layer");
    for (int w : sizes)
        if (w < 1) throw UsageError("network layer widths must be >= 1");
}

// Forward passes also accept a bare affine map (no hidden layer).
inline void check_sizes_forward(std::span<const int> sizes) {
    if (sizes.size() < 2) throw UsageError("network needs at least input and output layers");
    for (int w : sizes)
        if (w < 1) throw UsageError("network layer widths must be >= 1");
}

}  // namespace detail

/// Forward pass generic over the scalar type (plain reals or tape scalars).
/// `params` must use the MlpParams layout for `sizes`.
template <class S>
std::vector<S> mlp_forward_span(std::span<const int> sizes, std::span<const S> params,
                                std::span<const S> input) {
    detail::check_sizes_forward(sizes);
    if (static_cast<int>(input.size()) != sizes.front())
        throw UsageError("input length does not match the network input layer");
    std::vector<S> h(input.begin(), input.end());
    std::vector<S> next;
    std::size_t ofs = 0;
    const std::size_t layers = sizes.size() - 1;
    for (std::size_t l = 1; l <= layers; ++l) {
        const int in_w = sizes[l - 1];
        const int out_w = sizes[l];
        next.clear();
        next.reserve(static_cast<std::size_t>(out_w));
        const std::size_t bias_ofs = ofs + static_cast<std::size_t>(out_w) * in_w;
        for (int o = 0; o < out_w; ++o) {
            S pre = dot(params.subspan(ofs + static_cast<std::size_t>(o) * in_w,
                                       static_cast<std::size_t>(in_w)),
                        std::span<const S>(h)) +
                    params[bias_ofs + static_cast<std::size_t>(o)];
            next.push_back(l < layers ? tanh(pre) : pre);
        }
        h.swap(next);
        ofs = bias_ofs + static_cast<std::size_t>(out_w);
    }
    return h;
}

template <class S>
S mlp_forward_scalar(std::span<const int> sizes, std::span<const S> params,
                     std::span<const S> input) {
    if (sizes.back() != 1) throw UsageError("scalar forward requires an output width of 1");
    return mlp_forward_span(sizes, params, input)[0];
}

template <class S>
struct MlpValueGrad {
    S value;
    std::vector<S> grad;
};

/// Scalar forward pass plus the input gradient, propagated layerwise with the
/// chain rule in S-arithmetic so both results stay differentiable in the
/// parameters when S is a tape scalar.
template <class S>
MlpValueGrad<S> mlp_forward_with_input_grad_span(std::span<const int> sizes,
                                                 std::span<const S> params,
                                                 std::span<const S> input) {
    detail::check_sizes_forward(sizes);
    if (sizes.back() != 1) throw UsageError("input gradient requires a scalar-output network");
    if (static_cast<int>(input.size()) != sizes.front())
        throw UsageError("input length does not match the network input layer");

    const std::size_t layers = sizes.size() - 1;
    std::vector<std::vector<S>> acts(layers);  // tanh outputs of hidden layers
    std::vector<std::size_t> weight_ofs(layers + 1);

    std::vector<S> h(input.begin(), input.end());
    std::size_t ofs = 0;
    S value{};
    for (std::size_t l = 1; l <= layers; ++l) {
        const int in_w = sizes[l - 1];
        const int out_w = sizes[l];
        weight_ofs[l] = ofs;
        const std::size_t bias_ofs = ofs + static_cast<std::size_t>(out_w) * in_w;
        std::vector<S> next;
        next.reserve(static_cast<std::size_t>(out_w));
        for (int o = 0; o < out_w; ++o) {
            S pre = dot(params.subspan(ofs + static_cast<std::size_t>(o) * in_w,
                                       static_cast<std::size_t>(in_w)),
                        std::span<const S>(h)) +
                    params[bias_ofs + static_cast<std::size_t>(o)];
            next.push_back(l < layers ? tanh(pre) : pre);
        }
        if (l < layers) {
            acts[l] = next;  // keep for tanh' terms
            h.swap(next);
        } else {
            value = next[0];
        }
        ofs = bias_ofs + static_cast<std::size_t>(out_w);
    }

    // Reverse chain: v holds d(value)/d(h_{l}) while walking layers downward.
    const int last_in = sizes[layers - 1];
    std::vector<S> v(params.begin() + static_cast<std::ptrdiff_t>(weight_ofs[layers]),
                     params.begin() + static_cast<std::ptrdiff_t>(weight_ofs[layers]) + last_in);
    std::vector<S> scaled, col, vprev;
    for (std::size_t l = layers - 1; l >= 1; --l) {
        const int in_w = sizes[l - 1];
        const int out_w = sizes[l];
        scaled.clear();
        scaled.reserve(static_cast<std::size_t>(out_w));
        for (int o = 0; o < out_w; ++o)
            scaled.push_back(v[static_cast<std::size_t>(o)] *
                             (1.0 - acts[l][static_cast<std::size_t>(o)] *
                                        acts[l][static_cast<std::size_t>(o)]));
        vprev.clear();
        vprev.reserve(static_cast<std::size_t>(in_w));
        col.resize(static_cast<std::size_t>(out_w));
        for (int j = 0; j < in_w; ++j) {
            for (int o = 0; o < out_w; ++o)
                col[static_cast<std::size_t>(o)] =
                    params[weight_ofs[l] + static_cast<std::size_t>(o) * in_w + j];
            vprev.push_back(dot(std::span<const S>(scaled), std::span<const S>(col)));
        }
        v.swap(vprev);
    }
    return MlpValueGrad<S>{value, std::move(v)};
}

}  // namespace martnet
