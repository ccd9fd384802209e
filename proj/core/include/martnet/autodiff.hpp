#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "martnet/errors.hpp"

namespace martnet::ad {

enum class Op : std::uint8_t {
    kInput,
    kConst,
    kAdd,
    kSub,
    kMul,
    kDiv,
    kNeg,
    kPowC,  // constant exponent in Node::k
    kExp,
    kLn,
    kTanh,
    kSin,
    kCos,
    kSqrt,
    kAbs,
    kMax,
    kMin,
    kSum,  // n-ary
    kDot,  // n-ary pairwise product sum
};

class Tape;

/// Handle to a tape node. Trivially copyable; valid until Tape::clear().
class Var {
public:
    Var() = default;
    double value() const;
    std::uint32_t index() const noexcept { return idx_; }
    Tape* tape() const noexcept { return tape_; }

private:
    friend class Tape;
    Var(Tape* t, std::uint32_t i) noexcept : tape_(t), idx_(i) {}
    Tape* tape_ = nullptr;
    std::uint32_t idx_ = 0;
};

/// Derivatives of the output with respect to the parameter-marked inputs,
/// in marking order.
struct Gradient {
    std::vector<double> entries;
};

/// Append-only record of elementary operations with eagerly computed values.
/// Confined to one thread while building; immutable (and freely readable)
/// once complete. Independent tapes may be built and differentiated in
/// parallel.
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;
    Tape(Tape&&) = default;
    Tape& operator=(Tape&&) = default;

    /// Leaf holding a value that is not a differentiation target.
    Var input(double v) { return push(Op::kInput, 0, 0, 0.0, v); }

    /// Leaf marked as a differentiation target.
    Var param(double v) {
        Var x = push(Op::kInput, 0, 0, 0.0, v);
        params_.push_back(x.idx_);
        return x;
    }

    Var constant(double v) { return push(Op::kConst, 0, 0, 0.0, v); }

    Var sum(std::span<const Var> xs);
    Var dot(std::span<const Var> a, std::span<const Var> b);

    Var emit1(Op op, Var a, double k = 0.0);
    Var emit2(Op op, Var a, Var b);

    double value(std::uint32_t idx) const { return vals_[idx]; }
    /// Handle to an existing node (for caches keyed by node index).
    Var var(std::uint32_t idx) noexcept { return Var(this, idx); }
    std::size_t size() const noexcept { return nodes_.size(); }
    std::size_t param_count() const noexcept { return params_.size(); }
    std::span<const std::uint32_t> param_marks() const noexcept { return params_; }

    void set_output(Var v);
    Var output() const;
    double output_value() const { return vals_[require_output()]; }

    /// Reverse accumulation from the stored output. Throws NumericError naming
    /// the node index if any recorded value is non-finite.
    Gradient backward() const;

    /// Recompute every node value from the recorded structure (leaves keep
    /// their stored values). Used to check replay determinism.
    std::vector<double> replay() const;

    /// Drop all nodes but keep capacity.
    void clear();

private:
    struct Node {
        Op op;
        std::uint32_t a;  // operand index, or offset into args_ for kSum/kDot
        std::uint32_t b;  // operand index, or count for kSum/kDot
        double k;         // constant exponent for kPowC
    };

    Var push(Op op, std::uint32_t a, std::uint32_t b, double k, double val) {
        nodes_.push_back(Node{op, a, b, k});
        vals_.push_back(val);
        return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
    }
    std::uint32_t require_output() const;
    double eval_node(std::size_t i, const std::vector<double>& vals) const;

    std::vector<Node> nodes_;
    std::vector<double> vals_;
    std::vector<std::uint32_t> args_;
    std::vector<std::uint32_t> params_;
    std::int64_t output_ = -1;
};

inline double Var::value() const { return tape_->value(idx_); }

// Elementary arithmetic. Every overload records one node (plus a constant
// leaf when a plain double operand appears).
inline Var operator+(Var a, Var b) { return a.tape()->emit2(Op::kAdd, a, b); }
inline Var operator-(Var a, Var b) { return a.tape()->emit2(Op::kSub, a, b); }
inline Var operator*(Var a, Var b) { return a.tape()->emit2(Op::kMul, a, b); }
inline Var operator/(Var a, Var b) { return a.tape()->emit2(Op::kDiv, a, b); }
inline Var operator-(Var a) { return a.tape()->emit1(Op::kNeg, a); }

inline Var operator+(Var a, double b) { return a + a.tape()->constant(b); }
inline Var operator+(double a, Var b) { return b.tape()->constant(a) + b; }
inline Var operator-(Var a, double b) { return a - a.tape()->constant(b); }
inline Var operator-(double a, Var b) { return b.tape()->constant(a) - b; }
inline Var operator*(Var a, double b) { return a * a.tape()->constant(b); }
inline Var operator*(double a, Var b) { return b.tape()->constant(a) * b; }
inline Var operator/(Var a, double b) { return a / a.tape()->constant(b); }
inline Var operator/(double a, Var b) { return b.tape()->constant(a) / b; }

inline Var exp(Var a) { return a.tape()->emit1(Op::kExp, a); }
inline Var ln(Var a) { return a.tape()->emit1(Op::kLn, a); }
inline Var tanh(Var a) { return a.tape()->emit1(Op::kTanh, a); }
inline Var sin(Var a) { return a.tape()->emit1(Op::kSin, a); }
inline Var cos(Var a) { return a.tape()->emit1(Op::kCos, a); }
inline Var sqrt(Var a) { return a.tape()->emit1(Op::kSqrt, a); }
inline Var abs(Var a) { return a.tape()->emit1(Op::kAbs, a); }
inline Var pow_const(Var a, double k) { return a.tape()->emit1(Op::kPowC, a, k); }
inline Var max(Var a, Var b) { return a.tape()->emit2(Op::kMax, a, b); }
inline Var min(Var a, Var b) { return a.tape()->emit2(Op::kMin, a, b); }
inline Var sum(Tape& t, std::span<const Var> xs) { return t.sum(xs); }
inline Var dot(Tape& t, std::span<const Var> a, std::span<const Var> b) { return t.dot(a, b); }

// Span forms inferring the tape from the first element, for generic kernels.
inline Var sum(std::span<const Var> xs) { return xs[0].tape()->sum(xs); }
inline Var dot(std::span<const Var> a, std::span<const Var> b) { return a[0].tape()->dot(a, b); }

/// Numeric value of a scalar, independent of its representation.
inline double scalar_value(Var v) { return v.value(); }

/// Expression-building callback: receives the tape and the leaf Vars made
/// from the inputs, returns the scalar output.
using Program = std::function<Var(Tape&, std::span<const Var>)>;

/// Build a tape by running `f` over leaves made from `inputs`; every input is
/// marked as a parameter, and the returned tape's output is f's result.
Tape record(const Program& f, std::span<const double> inputs);

/// Gradient of the recorded output with respect to all parameter marks.
Gradient backward(const Tape& tape);

/// Maximum over parameters of the relative error between backward() and a
/// central finite difference of `f` with the given step.
double gradient_check(const Program& f, std::span<const double> point, double step);

}  // namespace martnet::ad
