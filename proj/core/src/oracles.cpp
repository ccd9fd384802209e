#include "martnet/oracles.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "martnet/rng.hpp"

namespace martnet {

namespace {

// Number of eigenvalues of the symmetric tridiagonal (diag, off) strictly
// below x, by the Sturm sequence / LDL^T sign count.
int sturm_count(std::span<const double> diag, double off, double x) {
    int count = 0;
    double q = 1.0;
    const double off2 = off * off;
    for (std::size_t i = 0; i < diag.size(); ++i) {
        q = diag[i] - x - (i == 0 ? 0.0 : off2 / q);
        if (q == 0.0) q = -1e-300;
        if (q < 0.0) ++count;
    }
    return count;
}

// k-th largest eigenvalue (k = 1 is the top) by bisection.
double sturm_kth_largest(std::span<const double> diag, double off, int k) {
    const int n = static_cast<int>(diag.size());
    double lo = std::numeric_limits<double>::infinity();
    double hi = -std::numeric_limits<double>::infinity();
    for (double d : diag) {
        lo = std::min(lo, d - 2.0 * std::fabs(off));
        hi = std::max(hi, d + 2.0 * std::fabs(off));
    }
    // eigenvalue is the (n-k+1)-th smallest: count_below(x) >= n-k+1 iff x above it
    const int want = n - k + 1;
    for (int it = 0; it < 200 && hi - lo > 1e-13 * (1.0 + std::fabs(lo)); ++it) {
        const double mid = 0.5 * (lo + hi);
        if (sturm_count(diag, off, mid) >= want)
            hi = mid;
        else
            lo = mid;
    }
    return 0.5 * (lo + hi);
}

FdEigenResult fd_eigen_1d(const Expr& potential, const Box& box, int n, int count) {
    const double a = box.lower[0], b = box.upper[0];
    const double h = (b - a) / n;
    const int interior = n - 1;
    std::vector<double> diag(interior);
    for (int i = 0; i < interior; ++i) {
        const double x = a + (i + 1) * h;
        const double v = potential.empty()
                             ? 0.0
                             : potential.eval(ExprBindings<double>{std::span(&x, 1), {}, {}});
        diag[i] = -1.0 / (h * h) + v;
    }
    const double off = 0.5 / (h * h);
    FdEigenResult res;
    res.intervals = n;
    res.domain = box;
    const int want = std::min(count, interior);
    for (int k = 1; k <= want; ++k)
        res.eigenvalues.push_back(sturm_kth_largest(diag, off, k));
    return res;
}

// 2-D: shift-inverted power iteration on B = shift*I - A (SPD), with CG
// solves against the 5-point stencil. A = 1/2*Laplacian + diag(V).
struct Stencil2d {
    int nx;          // interior points per axis
    double inv_h2;   // 1/h^2
    double shift;
    std::vector<double> v;  // potential at interior points

    // y = (shift*I - A) x
    void apply(std::span<const double> x, std::span<double> y) const {
        const double c = 0.5 * inv_h2;
        for (int j = 0; j < nx; ++j) {
            for (int i = 0; i < nx; ++i) {
                const int idx = j * nx + i;
                double lap = -4.0 * x[idx];
                if (i > 0) lap += x[idx - 1];
                if (i + 1 < nx) lap += x[idx + 1];
                if (j > 0) lap += x[idx - nx];
                if (j + 1 < nx) lap += x[idx + nx];
                y[idx] = shift * x[idx] - (c * lap + v[idx] * x[idx]);
            }
        }
    }
};

double dot_vec(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

void cg_solve(const Stencil2d& op, std::span<const double> rhs, std::span<double> x) {
    const std::size_t n = rhs.size();
    std::vector<double> r(rhs.begin(), rhs.end());
    std::vector<double> p = r, ap(n);
    std::fill(x.begin(), x.end(), 0.0);
    double rr = dot_vec(r, r);
    const double tol2 = 1e-24 * std::max(1.0, rr);
    for (std::size_t it = 0; it < 4 * n && rr > tol2; ++it) {
        op.apply(p, ap);
        const double alpha = rr / dot_vec(p, ap);
        for (std::size_t i = 0; i < n; ++i) {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        const double rr_next = dot_vec(r, r);
        const double beta = rr_next / rr;
        rr = rr_next;
        for (std::size_t i = 0; i < n; ++i) p[i] = r[i] + beta * p[i];
    }
}

FdEigenResult fd_eigen_2d(const Expr& potential, const Box& box, int n, int count) {
    const double h = (box.upper[0] - box.lower[0]) / n;
    const double hy = (box.upper[1] - box.lower[1]) / n;
    if (std::fabs(h - hy) > 1e-12 * std::max(h, hy))
        throw UsageError("fd_eigen d=2 requires a square box (uniform h per axis)");
    const int nx = n - 1;
    const std::size_t total = static_cast<std::size_t>(nx) * nx;

    Stencil2d op;
    op.nx = nx;
    op.inv_h2 = 1.0 / (h * h);
    op.v.resize(total);
    double vmax = -std::numeric_limits<double>::infinity();
    for (int j = 0; j < nx; ++j) {
        for (int i = 0; i < nx; ++i) {
            const double xy[2] = {box.lower[0] + (i + 1) * h, box.lower[1] + (j + 1) * h};
            const double v = potential.empty()
                                 ? 0.0
                                 : potential.eval(ExprBindings<double>{std::span(xy, 2), {}, {}});
            op.v[static_cast<std::size_t>(j) * nx + i] = v;
            vmax = std::max(vmax, v);
        }
    }
    op.shift = vmax + 1.0;  // above the top of the spectrum, so shift*I - A is SPD

    FdEigenResult res;
    res.intervals = n;
    res.domain = box;
    std::vector<std::vector<double>> found;
    std::vector<double> vec(total), next(total);
    for (int k = 0; k < count; ++k) {
        for (std::size_t i = 0; i < total; ++i) vec[i] = unit_double(mix64(0xFDE16E2ULL, k, i)) - 0.5;
        double lambda = 0.0, prev = std::numeric_limits<double>::infinity();
        for (int it = 0; it < 400; ++it) {
            for (const auto& w : found) {  // deflate previously converged modes
                const double c = dot_vec(vec, w);
                for (std::size_t i = 0; i < total; ++i) vec[i] -= c * w[i];
            }
            const double norm = std::sqrt(dot_vec(vec, vec));
            for (std::size_t i = 0; i < total; ++i) vec[i] /= norm;
            cg_solve(op, vec, next);
            // Rayleigh quotient of A at the iterate
            op.apply(next, vec);  // vec = (shift*I - A) next
            const double nn = dot_vec(next, next);
            lambda = op.shift - dot_vec(next, vec) / nn;
            std::swap(vec, next);
            if (std::fabs(lambda - prev) < 1e-11 * (1.0 + std::fabs(lambda))) break;
            prev = lambda;
        }
        const double norm = std::sqrt(dot_vec(vec, vec));
        for (std::size_t i = 0; i < total; ++i) vec[i] /= norm;
        found.push_back(vec);
        res.eigenvalues.push_back(lambda);
    }
    return res;
}

}  // namespace

FdEigenResult fd_eigen(const Expr& potential, const Box& domain, int intervals, int dim,
                       int count) {
    if (intervals < 3) throw UsageError("fd_eigen requires n >= 3 intervals per axis");
    if (dim != 1 && dim != 2) throw UsageError("fd_eigen supports d in {1,2} only");
    if (domain.dim() != dim) throw UsageError("fd_eigen domain does not match dimension");
    for (int j = 0; j < dim; ++j)
        if (!(domain.lower[j] < domain.upper[j]))
            throw UsageError("fd_eigen domain requires lower < upper");
    return dim == 1 ? fd_eigen_1d(potential, domain, intervals, count)
                    : fd_eigen_2d(potential, domain, intervals, count);
}

double LqOracle::value(double t, std::span<const double> x) const {
    double xx = 0.0;
    for (double c : x) xx += c * c;
    return 0.5 * xx + 0.5 * dim * (horizon - t);
}

LqOracle riccati_lq(int dim, double horizon) {
    if (dim < 1 || !(horizon > 0.0)) throw UsageError("riccati_lq requires d >= 1 and T > 0");
    return LqOracle{dim, horizon};
}

std::vector<double> riccati_k_numeric(double horizon, double terminal_weight, int steps) {
    if (steps < 1) throw UsageError("riccati_k_numeric requires steps >= 1");
    std::vector<double> k(static_cast<std::size_t>(steps) + 1);
    k[steps] = terminal_weight;
    const double dt = horizon / steps;
    const auto f = [](double kk) { return kk * kk - 1.0; };
    for (int i = steps; i > 0; --i) {
        const double kk = k[i];
        const double k1 = f(kk);
        const double k2 = f(kk - 0.5 * dt * k1);
        const double k3 = f(kk - 0.5 * dt * k2);
        const double k4 = f(kk - dt * k3);
        k[i - 1] = kk - dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    return k;
}

std::pair<std::vector<double>, std::vector<double>> skorokhod_1d(std::span<const double> f) {
    std::vector<double> xi(f.size()), local(f.size());
    double running = 0.0;
    for (std::size_t i = 0; i < f.size(); ++i) {
        running = std::max(running, -f[i]);
        local[i] = running;
        xi[i] = f[i] + running;
    }
    return {std::move(xi), std::move(local)};
}

MartingaleZ martingale_mean_test(std::span<const double> increments, int paths, int steps) {
    if (paths < 30) throw UsageError("martingale_mean_test requires M >= 30");
    if (increments.size() != static_cast<std::size_t>(paths) * steps)
        throw UsageError("increment matrix size does not match (paths, steps)");

    const auto zscore = [](double mean, double var, int n) {
        if (var == 0.0)
            return mean == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
        return mean / std::sqrt(var / n);
    };

    MartingaleZ out;
    // pooled: per-path sums
    double mean = 0.0, m2 = 0.0;
    for (int m = 0; m < paths; ++m) {
        double s = 0.0;
        for (int i = 0; i < steps; ++i)
            s += increments[static_cast<std::size_t>(m) * steps + i];
        const double delta = s - mean;
        mean += delta / (m + 1);
        m2 += delta * (s - mean);
    }
    const double var = paths > 1 ? m2 / (paths - 1) : 0.0;
    out.pooled_mean = mean;
    out.pooled_se = var > 0.0 ? std::sqrt(var / paths) : 0.0;
    out.pooled = zscore(mean, var, paths);

    out.per_index.resize(static_cast<std::size_t>(steps));
    for (int i = 0; i < steps; ++i) {
        double mu = 0.0, s2 = 0.0;
        for (int m = 0; m < paths; ++m) {
            const double x = increments[static_cast<std::size_t>(m) * steps + i];
            const double delta = x - mu;
            mu += delta / (m + 1);
            s2 += delta * (x - mu);
        }
        out.per_index[static_cast<std::size_t>(i)] =
            zscore(mu, paths > 1 ? s2 / (paths - 1) : 0.0, paths);
    }
    return out;
}

}  // namespace martnet
