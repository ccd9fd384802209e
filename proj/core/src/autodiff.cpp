#include "martnet/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace martnet::ad {

Var Tape::sum(std::span<const Var> xs) {
    const auto ofs = static_cast<std::uint32_t>(args_.size());
    double v = 0.0;
    for (Var x : xs) {
        args_.push_back(x.index());
        v += vals_[x.index()];
    }
    return push(Op::kSum, ofs, static_cast<std::uint32_t>(xs.size()), 0.0, v);
}

Var Tape::dot(std::span<const Var> a, std::span<const Var> b) {
    if (a.size() != b.size()) throw UsageError("dot: operand spans differ in length");
    const auto ofs = static_cast<std::uint32_t>(args_.size());
    for (Var x : a) args_.push_back(x.index());
    for (Var x : b) args_.push_back(x.index());
    double v = 0.0;
    const std::uint32_t n = static_cast<std::uint32_t>(a.size());
    for (std::uint32_t i = 0; i < n; ++i) v += vals_[args_[ofs + i]] * vals_[args_[ofs + n + i]];
    return push(Op::kDot, ofs, n, 0.0, v);
}

Var Tape::emit1(Op op, Var a, double k) {
    const double x = vals_[a.index()];
    double v = 0.0;
    switch (op) {
        case Op::kNeg: v = -x; break;
        case Op::kPowC: v = std::pow(x, k); break;
        case Op::kExp: v = std::exp(x); break;
        case Op::kLn: v = std::log(x); break;
        case Op::kTanh: v = std::tanh(x); break;
        case Op::kSin: v = std::sin(x); break;
        case Op::kCos: v = std::cos(x); break;
        case Op::kSqrt: v = std::sqrt(x); break;
        case Op::kAbs: v = std::fabs(x); break;
        default: throw UsageError("emit1: not a unary operation");
    }
    return push(op, a.index(), 0, k, v);
}

Var Tape::emit2(Op op, Var a, Var b) {
    const double x = vals_[a.index()];
    const double y = vals_[b.index()];
    double v = 0.0;
    switch (op) {
        case Op::kAdd: v = x + y; break;
        case Op::kSub: v = x - y; break;
        case Op::kMul: v = x * y; break;
        case Op::kDiv: v = x / y; break;
        // Ties take the right branch: deterministic subgradients at kinks.
        case Op::kMax: v = (x > y) ? x : y; break;
        case Op::kMin: v = (x < y) ? x : y; break;
        default: throw UsageError("emit2: not a binary operation");
    }
    return push(op, a.index(), b.index(), 0.0, v);
}

void Tape::set_output(Var v) {
    if (v.tape() != this) throw UsageError("set_output: Var belongs to another tape");
    output_ = v.index();
}

Var Tape::output() const { return Var(const_cast<Tape*>(this), require_output()); }

std::uint32_t Tape::require_output() const {
    if (output_ < 0) throw UsageError("tape has no output set");
    return static_cast<std::uint32_t>(output_);
}

Gradient Tape::backward() const {
    const std::uint32_t out = require_output();
    for (std::size_t i = 0; i < vals_.size(); ++i) {
        if (!std::isfinite(vals_[i]))
            throw NumericError("non-finite tape value", "node " + std::to_string(i));
    }
    std::vector<double> adj(nodes_.size(), 0.0);
    adj[out] = 1.0;
    for (std::size_t i = nodes_.size(); i-- > 0;) {
        const double g = adj[i];
        if (g == 0.0) continue;
        const Node& n = nodes_[i];
        switch (n.op) {
            case Op::kInput:
            case Op::kConst:
                break;
            case Op::kAdd:
                adj[n.a] += g;
                adj[n.b] += g;
                break;
            case Op::kSub:
                adj[n.a] += g;
                adj[n.b] -= g;
                break;
            case Op::kMul:
                adj[n.a] += g * vals_[n.b];
                adj[n.b] += g * vals_[n.a];
                break;
            case Op::kDiv: {
                const double inv = 1.0 / vals_[n.b];
                adj[n.a] += g * inv;
                adj[n.b] -= g * vals_[i] * inv;
                break;
            }
            case Op::kNeg:
                adj[n.a] -= g;
                break;
            case Op::kPowC:
                adj[n.a] += g * n.k * std::pow(vals_[n.a], n.k - 1.0);
                break;
            case Op::kExp:
                adj[n.a] += g * vals_[i];
                break;
            case Op::kLn:
                adj[n.a] += g / vals_[n.a];
                break;
            case Op::kTanh:
                adj[n.a] += g * (1.0 - vals_[i] * vals_[i]);
                break;
            case Op::kSin:
                adj[n.a] += g * std::cos(vals_[n.a]);
                break;
            case Op::kCos:
                adj[n.a] -= g * std::sin(vals_[n.a]);
                break;
            case Op::kSqrt:
                adj[n.a] += g * 0.5 / vals_[i];
                break;
            case Op::kAbs:
                adj[n.a] += (vals_[n.a] >= 0.0) ? g : -g;
                break;
            case Op::kMax:
                adj[(vals_[n.a] > vals_[n.b]) ? n.a : n.b] += g;
                break;
            case Op::kMin:
                adj[(vals_[n.a] < vals_[n.b]) ? n.a : n.b] += g;
                break;
            case Op::kSum:
                for (std::uint32_t j = 0; j < n.b; ++j) adj[args_[n.a + j]] += g;
                break;
            case Op::kDot:
                for (std::uint32_t j = 0; j < n.b; ++j) {
                    adj[args_[n.a + j]] += g * vals_[args_[n.a + n.b + j]];
                    adj[args_[n.a + n.b + j]] += g * vals_[args_[n.a + j]];
                }
                break;
        }
    }
    Gradient grad;
    grad.entries.reserve(params_.size());
    for (std::uint32_t p : params_) grad.entries.push_back(adj[p]);
    return grad;
}

double Tape::eval_node(std::size_t i, const std::vector<double>& vals) const {
    const Node& n = nodes_[i];
    switch (n.op) {
        case Op::kInput:
        case Op::kConst: return vals_[i];
        case Op::kAdd: return vals[n.a] + vals[n.b];
        case Op::kSub: return vals[n.a] - vals[n.b];
        case Op::kMul: return vals[n.a] * vals[n.b];
        case Op::kDiv: return vals[n.a] / vals[n.b];
        case Op::kNeg: return -vals[n.a];
        case Op::kPowC: return std::pow(vals[n.a], n.k);
        case Op::kExp: return std::exp(vals[n.a]);
        case Op::kLn: return std::log(vals[n.a]);
        case Op::kTanh: return std::tanh(vals[n.a]);
        case Op::kSin: return std::sin(vals[n.a]);
        case Op::kCos: return std::cos(vals[n.a]);
        case Op::kSqrt: return std::sqrt(vals[n.a]);
        case Op::kAbs: return std::fabs(vals[n.a]);
        case Op::kMax: return (vals[n.a] > vals[n.b]) ? vals[n.a] : vals[n.b];
        case Op::kMin: return (vals[n.a] < vals[n.b]) ? vals[n.a] : vals[n.b];
        case Op::kSum: {
            double v = 0.0;
            for (std::uint32_t j = 0; j < n.b; ++j) v += vals[args_[n.a + j]];
            return v;
        }
        case Op::kDot: {
            double v = 0.0;
            for (std::uint32_t j = 0; j < n.b; ++j)
                v += vals[args_[n.a + j]] * vals[args_[n.a + n.b + j]];
            return v;
        }
    }
    throw UsageError("unsupported elementary operation");
}

std::vector<double> Tape::replay() const {
    std::vector<double> vals(nodes_.size());
    for (std::size_t i = 0; i < nodes_.size(); ++i) vals[i] = eval_node(i, vals);
    return vals;
}

void Tape::clear() {
    nodes_.clear();
    vals_.clear();
    args_.clear();
    params_.clear();
    output_ = -1;
}

Tape record(const Program& f, std::span<const double> inputs) {
    if (inputs.empty()) throw UsageError("record: at least one input required");
    Tape tape;
    std::vector<Var> leaves;
    leaves.reserve(inputs.size());
    for (double v : inputs) leaves.push_back(tape.param(v));
    tape.set_output(f(tape, leaves));
    return tape;
}

Gradient backward(const Tape& tape) { return tape.backward(); }

double gradient_check(const Program& f, std::span<const double> point, double step) {
    if (!(step > 0.0)) throw UsageError("gradient_check: step must be positive");
    Tape tape = record(f, point);
    const Gradient grad = tape.backward();

    std::vector<double> x(point.begin(), point.end());
    double worst = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double h = step * (1.0 + std::fabs(x[i]));
        const double saved = x[i];
        x[i] = saved + h;
        const double fp = record(f, x).output_value();
        x[i] = saved - h;
        const double fm = record(f, x).output_value();
        x[i] = saved;
        const double fd = (fp - fm) / (2.0 * h);
        const double ad = grad.entries[i];
        const double denom = std::max({1.0, std::fabs(fd), std::fabs(ad)});
        worst = std::max(worst, std::fabs(ad - fd) / denom);
    }
    return worst;
}

}  // namespace martnet::ad
