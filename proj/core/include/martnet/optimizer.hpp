#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "martnet/errors.hpp"

namespace martnet {

struct OptimizerConfig {
    enum class Kind { kAdam, kSgd };
    Kind kind = Kind::kAdam;
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// Adaptive-moment / plain SGD step over a flat parameter vector.
class Optimizer {
public:
    Optimizer(const OptimizerConfig& cfg, std::size_t n) : cfg_(cfg) {
        if (cfg.kind == OptimizerConfig::Kind::kAdam) {
            m_.assign(n, 0.0);
            v_.assign(n, 0.0);
        }
    }

    void step(std::span<double> params, std::span<const double> grad) {
        if (params.size() != grad.size()) throw UsageError("optimizer: size mismatch");
        ++t_;
        if (cfg_.kind == OptimizerConfig::Kind::kSgd) {
            for (std::size_t i = 0; i < params.size(); ++i)
                params[i] -= cfg_.learning_rate * grad[i];
            return;
        }
        const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
        for (std::size_t i = 0; i < params.size(); ++i) {
            m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * grad[i];
            v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * grad[i] * grad[i];
            params[i] -= cfg_.learning_rate * (m_[i] / bc1) / (std::sqrt(v_[i] / bc2) + cfg_.eps);
        }
    }

private:
    OptimizerConfig cfg_;
    std::vector<double> m_, v_;
    std::int64_t t_ = 0;
};

}  // namespace martnet
