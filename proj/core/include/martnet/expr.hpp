#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "martnet/errors.hpp"
#include "martnet/scalar_ops.hpp"

namespace martnet {

enum class UnaryOp : std::uint8_t { kNeg, kSin, kCos, kExp, kTanh, kSqrt, kAbs, kLn };
enum class BinaryOp : std::uint8_t { kAdd, kSub, kMul, kDiv, kPow };

/// Which slot a variable reference draws from: x0..x{d-1}, t, u0..u{m-1}.
enum class SlotKind : std::uint8_t { kState, kTime, kControl };

/// Values substituted for variables during evaluation. `time` may be null
/// when the expression does not reference t.
template <class S>
struct ExprBindings {
    std::span<const S> state;
    const S* time = nullptr;
    std::span<const S> control;
};

struct ExprVars {
    std::vector<bool> state;
    bool time = false;
    std::vector<bool> control;
    bool none() const;
    std::vector<std::string> names() const;
};

/// Immutable scalar expression over the declared alphabet. Parsing honors
/// ^ > unary minus > *,/ > +,- with left associativity and parentheses;
/// evaluation is generic over plain reals or autodiff scalars.
class Expr {
public:
    Expr() = default;

    static Expr parse(std::string_view source, int dim, int control_dim);

    /// Fully parenthesized form; re-parsing yields a structurally identical tree.
    std::string to_string() const;

    ExprVars free_vars() const;
    bool is_constant() const;
    /// Value of a variable-free expression.
    double constant_value() const;

    int dim() const noexcept { return dim_; }
    int control_dim() const noexcept { return control_dim_; }
    bool empty() const noexcept { return nodes_.empty(); }

    template <class S>
    S eval(const ExprBindings<S>& b) const;

    struct Node {
        enum class Tag : std::uint8_t { kConst, kVar, kUnary, kBinary } tag;
        std::uint8_t op;    // UnaryOp or BinaryOp
        SlotKind slot;      // for kVar
        std::uint16_t slot_index = 0;
        std::uint32_t a = 0, b = 0;
        double value = 0.0;
    };

private:
    friend struct ExprParser;

    template <class S>
    S eval_nodes(const ExprBindings<S>& b, S* vals) const;

    std::vector<Node> nodes_;  // post-order; root is the last node
    int dim_ = 0;
    int control_dim_ = 0;
};

template <class S>
S Expr::eval_nodes(const ExprBindings<S>& b, S* vals) const {
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
        const Node& n = nodes_[i];
        switch (n.tag) {
            case Node::Tag::kConst:
                vals[i] = lift_constant(b, n.value);
                break;
            case Node::Tag::kVar:
                switch (n.slot) {
                    case SlotKind::kState:
                        if (n.slot_index >= b.state.size())
                            throw UsageError("expression binding missing for x" +
                                             std::to_string(n.slot_index));
                        vals[i] = b.state[n.slot_index];
                        break;
                    case SlotKind::kTime:
                        if (b.time == nullptr)
                            throw UsageError("expression binding missing for t");
                        vals[i] = *b.time;
                        break;
                    case SlotKind::kControl:
                        if (n.slot_index >= b.control.size())
                            throw UsageError("expression binding missing for u" +
                                             std::to_string(n.slot_index));
                        vals[i] = b.control[n.slot_index];
                        break;
                }
                break;
            case Node::Tag::kUnary: {
                const S& x = vals[n.a];
                switch (static_cast<UnaryOp>(n.op)) {
                    case UnaryOp::kNeg: vals[i] = -x; break;
                    case UnaryOp::kSin: vals[i] = sin(x); break;
                    case UnaryOp::kCos: vals[i] = cos(x); break;
                    case UnaryOp::kExp: vals[i] = exp(x); break;
                    case UnaryOp::kTanh: vals[i] = tanh(x); break;
                    case UnaryOp::kSqrt:
                        if (scalar_value(x) < 0.0)
                            throw NumericError("sqrt of negative value in expression");
                        vals[i] = sqrt(x);
                        break;
                    case UnaryOp::kAbs: vals[i] = abs(x); break;
                    case UnaryOp::kLn:
                        if (!(scalar_value(x) > 0.0))
                            throw NumericError("ln of non-positive value in expression");
                        vals[i] = ln(x);
                        break;
                }
                break;
            }
            case Node::Tag::kBinary: {
                const S& x = vals[n.a];
                const S& y = vals[n.b];
                switch (static_cast<BinaryOp>(n.op)) {
                    case BinaryOp::kAdd: vals[i] = x + y; break;
                    case BinaryOp::kSub: vals[i] = x - y; break;
                    case BinaryOp::kMul: vals[i] = x * y; break;
                    case BinaryOp::kDiv:
                        if (scalar_value(y) == 0.0)
                            throw NumericError("division by zero in expression");
                        vals[i] = x / y;
                        break;
                    case BinaryOp::kPow:
                        if (nodes_[n.b].tag == Node::Tag::kConst) {
                            vals[i] = pow_const(x, nodes_[n.b].value);
                        } else {
                            // general power via exp(y*ln(x))
                            if (!(scalar_value(x) > 0.0))
                                throw NumericError(
                                    "power with non-constant exponent requires positive base");
                            vals[i] = exp(y * ln(x));
                        }
                        break;
                }
                break;
            }
        }
    }
    return vals[nodes_.size() - 1];
}

namespace detail {
// Constants need a tape when S is an autodiff scalar; borrow it from any
// bound variable. Plain doubles pass through.
template <class S>
S lift_constant_impl(const ExprBindings<S>& b, double v) {
    if (!b.state.empty()) return b.state[0].tape()->constant(v);
    if (b.time != nullptr) return b.time->tape()->constant(v);
    if (!b.control.empty()) return b.control[0].tape()->constant(v);
    throw UsageError("cannot lift constant: no bound variable provides a tape");
}
inline double lift_constant_impl(const ExprBindings<double>&, double v) { return v; }
}  // namespace detail

template <class S>
S lift_constant(const ExprBindings<S>& b, double v) {
    return detail::lift_constant_impl(b, v);
}

template <class S>
S Expr::eval(const ExprBindings<S>& b) const {
    if (nodes_.empty()) throw UsageError("evaluating an empty expression");
    constexpr std::size_t kInline = 48;
    if (nodes_.size() <= kInline) {
        S buf[kInline] = {};
        return eval_nodes(b, buf);
    }
    std::vector<S> heap(nodes_.size());
    return eval_nodes(b, heap.data());
}

}  // namespace martnet
