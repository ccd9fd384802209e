#include "martnet/problem.hpp"

#include <algorithm>
#include <cmath>

namespace martnet {

double Box::volume() const {
    double v = 1.0;
    for (std::size_t j = 0; j < lower.size(); ++j) v *= upper[j] - lower[j];
    return v;
}

bool Box::contains(std::span<const double> x) const {
    for (std::size_t j = 0; j < lower.size(); ++j)
        if (x[j] < lower[j] || x[j] > upper[j]) return false;
    return true;
}

bool Domain::contains(std::span<const double> x) const {
    switch (kind) {
        case Kind::kAllSpace: return true;
        case Kind::kBox: return box.contains(x);
        case Kind::kBall: {
            double r2 = 0.0;
            for (std::size_t j = 0; j < center.size(); ++j) {
                const double d = x[j] - center[j];
                r2 += d * d;
            }
            return r2 <= radius * radius;
        }
    }
    return true;
}

double Domain::project(std::span<const double> y, std::span<double> out) const {
    switch (kind) {
        case Kind::kAllSpace:
            std::copy(y.begin(), y.end(), out.begin());
            return 0.0;
        case Kind::kBox: {
            double dist2 = 0.0;
            for (std::size_t j = 0; j < y.size(); ++j) {
                const double c = std::clamp(y[j], box.lower[j], box.upper[j]);
                const double d = y[j] - c;
                dist2 += d * d;
                out[j] = c;
            }
            return std::sqrt(dist2);
        }
        case Kind::kBall: {
            double r2 = 0.0;
            for (std::size_t j = 0; j < y.size(); ++j) {
                const double d = y[j] - center[j];
                r2 += d * d;
            }
            const double r = std::sqrt(r2);
            if (r <= radius) {
                std::copy(y.begin(), y.end(), out.begin());
                return 0.0;
            }
            const double scale = radius / r;
            for (std::size_t j = 0; j < y.size(); ++j)
                out[j] = center[j] + scale * (y[j] - center[j]);
            return r - radius;
        }
    }
    return 0.0;
}

void Domain::exit_point(std::span<const double> a, std::span<const double> b,
                        std::span<double> out) const {
    double s = 1.0;  // crossing parameter along a + s*(b-a)
    switch (kind) {
        case Kind::kAllSpace:
            std::copy(b.begin(), b.end(), out.begin());
            return;
        case Kind::kBox: {
            std::size_t face = a.size();
            double wall = 0.0;
            for (std::size_t j = 0; j < a.size(); ++j) {
                const double step = b[j] - a[j];
                if (b[j] > box.upper[j] && step > 0.0) {
                    const double sj = (box.upper[j] - a[j]) / step;
                    if (sj < s || face == a.size()) {
                        s = std::min(s, sj);
                        face = j;
                        wall = box.upper[j];
                    }
                }
                if (b[j] < box.lower[j] && step < 0.0) {
                    const double sj = (box.lower[j] - a[j]) / step;
                    if (sj < s || face == a.size()) {
                        s = std::min(s, sj);
                        face = j;
                        wall = box.lower[j];
                    }
                }
            }
            s = std::clamp(s, 0.0, 1.0);
            for (std::size_t j = 0; j < a.size(); ++j) out[j] = a[j] + s * (b[j] - a[j]);
            // pin the crossing coordinate exactly onto the wall
            if (face < a.size()) out[face] = wall;
            return;
        }
        case Kind::kBall: {
            // |a + s(b-a) - c|^2 = radius^2, smallest root in (0,1]
            double qa = 0.0, qb = 0.0, qc = -radius * radius;
            for (std::size_t j = 0; j < a.size(); ++j) {
                const double u = a[j] - center[j];
                const double v = b[j] - a[j];
                qa += v * v;
                qb += 2.0 * u * v;
                qc += u * u;
            }
            if (qa > 0.0) {
                const double disc = qb * qb - 4.0 * qa * qc;
                if (disc >= 0.0) {
                    const double root = (-qb + std::sqrt(disc)) / (2.0 * qa);
                    if (root > 0.0) s = std::min(s, root);
                }
            }
            break;
        }
    }
    s = std::clamp(s, 0.0, 1.0);
    for (std::size_t j = 0; j < a.size(); ++j) out[j] = a[j] + s * (b[j] - a[j]);
    if (kind == Kind::kBall) {  // rescale exactly onto the sphere
        double r = 0.0;
        for (std::size_t j = 0; j < a.size(); ++j) {
            const double d = out[j] - center[j];
            r += d * d;
        }
        r = std::sqrt(r);
        if (r > 0.0) {
            const double scale = radius / r;
            for (std::size_t j = 0; j < a.size(); ++j)
                out[j] = center[j] + scale * (out[j] - center[j]);
        }
    }
}

Box Domain::quadrature_box() const {
    switch (kind) {
        case Kind::kBox: return box;
        case Kind::kAllSpace:
            if (!truncation)
                throw UsageError("unbounded domain without truncation box");
            return *truncation;
        case Kind::kBall: {
            Box ball_box;
            ball_box.lower.resize(center.size());
            ball_box.upper.resize(center.size());
            for (std::size_t j = 0; j < center.size(); ++j) {
                ball_box.lower[j] = center[j] - radius;
                ball_box.upper[j] = center[j] + radius;
            }
            return ball_box;
        }
    }
    throw UsageError("invalid domain kind");
}

void Domain::validate(int dim) const {
    const auto d = static_cast<std::size_t>(dim);
    switch (kind) {
        case Kind::kBox:
            if (box.lower.size() != d || box.upper.size() != d)
                throw UsageError("box bounds must match the problem dimension");
            for (std::size_t j = 0; j < d; ++j)
                if (!(box.lower[j] < box.upper[j]))
                    throw UsageError("box requires lower < upper componentwise");
            break;
        case Kind::kBall:
            if (center.size() != d) throw UsageError("ball center must match dimension");
            if (!(radius > 0.0)) throw UsageError("ball radius must be positive");
            break;
        case Kind::kAllSpace:
            if (truncation) {
                if (truncation->lower.size() != d || truncation->upper.size() != d)
                    throw UsageError("truncation box must match the problem dimension");
                for (std::size_t j = 0; j < d; ++j)
                    if (!(truncation->lower[j] < truncation->upper[j]))
                        throw UsageError("truncation box requires lower < upper");
            }
            break;
    }
    if (boundary == BoundaryKind::kRobin && robin_c < 0.0)
        throw UsageError("Robin coefficient must be >= 0");
}

bool SigmaSpec::is_constant() const {
    for (const Expr& e : entries)
        if (!e.is_constant()) return false;
    return true;
}

bool SigmaSpec::is_identity(int dim) const {
    if (!is_constant()) return false;
    switch (kind) {
        case Kind::kScalar:
            return entries.size() == 1 && entries[0].constant_value() == 1.0;
        case Kind::kDiagonal:
            if (entries.size() != static_cast<std::size_t>(dim)) return false;
            for (const Expr& e : entries)
                if (e.constant_value() != 1.0) return false;
            return true;
        case Kind::kFull:
            if (entries.size() != static_cast<std::size_t>(dim) * dim) return false;
            for (int i = 0; i < dim; ++i)
                for (int j = 0; j < dim; ++j)
                    if (entries[i * dim + j].constant_value() != (i == j ? 1.0 : 0.0))
                        return false;
            return true;
    }
    return false;
}

void SigmaSpec::matrix(std::span<const double> x, double t, int dim,
                       std::span<double> out) const {
    const ExprBindings<double> b{x, &t, {}};
    std::fill(out.begin(), out.end(), 0.0);
    switch (kind) {
        case Kind::kScalar: {
            const double s = entries[0].eval(b);
            for (int i = 0; i < dim; ++i) out[i * dim + i] = s;
            break;
        }
        case Kind::kDiagonal:
            for (int i = 0; i < dim; ++i) out[i * dim + i] = entries[i].eval(b);
            break;
        case Kind::kFull:
            for (int i = 0; i < dim * dim; ++i) out[i] = entries[i].eval(b);
            break;
    }
}

void SigmaSpec::apply(std::span<const double> x, double t, int dim,
                      std::span<const double> v, std::span<double> out) const {
    const ExprBindings<double> b{x, &t, {}};
    switch (kind) {
        case Kind::kScalar: {
            const double s = entries[0].eval(b);
            for (int i = 0; i < dim; ++i) out[i] = s * v[i];
            break;
        }
        case Kind::kDiagonal:
            for (int i = 0; i < dim; ++i) out[i] = entries[i].eval(b) * v[i];
            break;
        case Kind::kFull:
            for (int i = 0; i < dim; ++i) {
                double acc = 0.0;
                for (int j = 0; j < dim; ++j) acc += entries[i * dim + j].eval(b) * v[j];
                out[i] = acc;
            }
            break;
    }
}

bool ProblemSpec::zero_drift() const {
    if (mu.empty()) return true;
    for (const Expr& e : mu)
        if (!e.is_constant() || e.constant_value() != 0.0) return false;
    return true;
}

double ProblemSpec::potential_at(std::span<const double> x, double t) const {
    if (potential.empty()) return 0.0;
    return potential.eval(ExprBindings<double>{x, &t, {}});
}

void ProblemSpec::drift_at(std::span<const double> x, double t, std::span<double> out) const {
    if (mu.empty()) {
        std::fill(out.begin(), out.end(), 0.0);
        return;
    }
    const ExprBindings<double> b{x, &t, {}};
    for (int j = 0; j < dim; ++j) out[j] = mu[j].eval(b);
}

void ProblemSpec::validate() const {
    if (dim < 1) throw UsageError("problem dimension must be >= 1");
    if (!mu.empty() && mu.size() != static_cast<std::size_t>(dim))
        throw UsageError("drift must have one expression per dimension");
    const std::size_t want = sigma.kind == SigmaSpec::Kind::kScalar ? 1
                           : sigma.kind == SigmaSpec::Kind::kDiagonal
                               ? static_cast<std::size_t>(dim)
                               : static_cast<std::size_t>(dim) * dim;
    if (sigma.entries.size() != want)
        throw UsageError("diffusion entry count does not match its declared kind");
    domain.validate(dim);
}

}  // namespace martnet
