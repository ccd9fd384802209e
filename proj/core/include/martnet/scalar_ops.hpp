#pragma once

#include <cmath>
#include <span>

// Double overloads mirroring the ad::Var vocabulary, so numeric kernels can
// be written once as templates and instantiated for plain reals or tape
// scalars (Var resolves via ADL, double via ordinary lookup in martnet).

namespace martnet {

inline double exp(double x) { return std::exp(x); }
inline double ln(double x) { return std::log(x); }
inline double tanh(double x) { return std::tanh(x); }
inline double sin(double x) { return std::sin(x); }
inline double cos(double x) { return std::cos(x); }
inline double sqrt(double x) { return std::sqrt(x); }
inline double abs(double x) { return std::fabs(x); }
inline double pow_const(double x, double k) { return std::pow(x, k); }
inline double max(double a, double b) { return (a > b) ? a : b; }
inline double min(double a, double b) { return (a < b) ? a : b; }

inline double sum(std::span<const double> xs) {
    double acc = 0.0;
    for (double x : xs) acc += x;
    return acc;
}

inline double dot(std::span<const double> a, std::span<const double> b) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
    return acc;
}

/// Numeric value of a scalar, independent of its representation.
inline double scalar_value(double x) { return x; }

}  // namespace martnet
