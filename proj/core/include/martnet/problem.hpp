#pragma once

#include <optional>
#include <span>
#include <vector>

#include "martnet/expr.hpp"

namespace martnet {

enum class BoundaryKind { kDirichlet, kNeumann, kRobin };

struct Box {
    std::vector<double> lower, upper;
    int dim() const { return static_cast<int>(lower.size()); }
    double volume() const;
    bool contains(std::span<const double> x) const;
};

/// Spatial domain plus boundary operator. All-space domains may carry a
/// truncation box for quadrature and start sampling.
struct Domain {
    enum class Kind { kAllSpace, kBox, kBall };
    Kind kind = Kind::kAllSpace;
    Box box;                         // kBox
    std::vector<double> center;      // kBall
    double radius = 0.0;             // kBall
    std::optional<Box> truncation;   // kAllSpace only
    BoundaryKind boundary = BoundaryKind::kDirichlet;
    double robin_c = 0.0;            // c >= 0, kRobin only

    bool bounded() const { return kind != Kind::kAllSpace; }
    bool contains(std::span<const double> x) const;  // closed-domain membership
    /// Nearest point of the closed domain; returns the pushback distance.
    double project(std::span<const double> y, std::span<double> out) const;
    /// Intersection of the segment a->b (a inside, b outside) with the boundary.
    void exit_point(std::span<const double> a, std::span<const double> b,
                    std::span<double> out) const;
    /// Box available for quadrature / uniform starts: the domain box, the ball's
    /// bounding box, or the truncation box.
    Box quadrature_box() const;
    void validate(int dim) const;
};

/// Diffusion coefficient: a scalar expression, d diagonal entries, or a full
/// d x d matrix of expressions (row-major).
struct SigmaSpec {
    enum class Kind { kScalar, kDiagonal, kFull };
    Kind kind = Kind::kScalar;
    std::vector<Expr> entries;  // 1, d, or d*d expressions

    bool is_constant() const;
    bool is_identity(int dim) const;
    /// Evaluate into a d x d row-major matrix.
    void matrix(std::span<const double> x, double t, int dim, std::span<double> out) const;
    /// out = sigma(x,t) * v.
    void apply(std::span<const double> x, double t, int dim, std::span<const double> v,
               std::span<double> out) const;
};

/// Elliptic problem description: generator coefficients, potential, domain.
struct ProblemSpec {
    int dim = 1;
    std::vector<Expr> mu;  // empty = zero drift
    SigmaSpec sigma;
    Expr potential;        // V; empty = zero
    Domain domain;

    bool zero_drift() const;
    double potential_at(std::span<const double> x, double t = 0.0) const;
    void drift_at(std::span<const double> x, double t, std::span<double> out) const;
    void validate() const;
};

}  // namespace martnet
