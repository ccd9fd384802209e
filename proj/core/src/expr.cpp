#include "martnet/expr.hpp"

#include <cctype>
#include <charconv>
#include <cstdio>

namespace martnet {

bool ExprVars::none() const {
    for (bool s : state)
        if (s) return false;
    for (bool c : control)
        if (c) return false;
    return !time;
}

std::vector<std::string> ExprVars::names() const {
    std::vector<std::string> out;
    for (std::size_t i = 0; i < state.size(); ++i)
        if (state[i]) out.push_back("x" + std::to_string(i));
    if (time) out.push_back("t");
    for (std::size_t i = 0; i < control.size(); ++i)
        if (control[i]) out.push_back("u" + std::to_string(i));
    return out;
}

namespace {

bool ident_start(char c) { return std::isalpha(static_cast<unsigned char>(c)) || c == '_'; }
bool ident_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_'; }

}  // namespace

struct ExprParser {
    std::string_view src;
    std::size_t pos = 0;
    int dim;
    int control_dim;
    std::vector<Expr::Node>& nodes;

    [[noreturn]] void fail(const std::string& msg, std::size_t at) const {
        throw ParseError(msg, at + 1);  // 1-based column
    }

    void skip_ws() {
        while (pos < src.size() && std::isspace(static_cast<unsigned char>(src[pos]))) ++pos;
    }
    bool at_end() {
        skip_ws();
        return pos >= src.size();
    }
    char peek() {
        skip_ws();
        return pos < src.size() ? src[pos] : '\0';
    }

    std::uint32_t add(Expr::Node n) {
        nodes.push_back(n);
        return static_cast<std::uint32_t>(nodes.size() - 1);
    }
    std::uint32_t binary(BinaryOp op, std::uint32_t a, std::uint32_t b) {
        Expr::Node n{};
        n.tag = Expr::Node::Tag::kBinary;
        n.op = static_cast<std::uint8_t>(op);
        n.a = a;
        n.b = b;
        return add(n);
    }
    std::uint32_t unary(UnaryOp op, std::uint32_t a) {
        Expr::Node n{};
        n.tag = Expr::Node::Tag::kUnary;
        n.op = static_cast<std::uint8_t>(op);
        n.a = a;
        return add(n);
    }

    std::uint32_t parse_sum() {
        std::uint32_t idx = parse_product();
        while (true) {
            const char c = peek();
            if (c != '+' && c != '-') break;
            ++pos;
            idx = binary(c == '+' ? BinaryOp::kAdd : BinaryOp::kSub, idx, parse_product());
        }
        return idx;
    }

    std::uint32_t parse_product() {
        std::uint32_t idx = parse_unary();
        while (true) {
            const char c = peek();
            if (c != '*' && c != '/') break;
            ++pos;
            idx = binary(c == '*' ? BinaryOp::kMul : BinaryOp::kDiv, idx, parse_unary());
        }
        return idx;
    }

    // Unary minus binds looser than ^: -x0^2 parses as -(x0^2).
    std::uint32_t parse_unary() {
        if (peek() == '-') {
            ++pos;
            return unary(UnaryOp::kNeg, parse_unary());
        }
        return parse_power();
    }

    std::uint32_t parse_power() {
        std::uint32_t idx = parse_atom();
        while (peek() == '^') {
            ++pos;
            idx = binary(BinaryOp::kPow, idx, parse_atom());  // left-associative
        }
        return idx;
    }

    std::uint32_t parse_atom() {
        const char c = peek();
        if (c == '\0') fail("empty operand", pos);
        if (c == '(') {
            ++pos;
            const std::uint32_t idx = parse_sum();
            if (peek() != ')') fail("expected ')'", pos);
            ++pos;
            return idx;
        }
        if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') return parse_number();
        if (ident_start(c)) return parse_ident();
        fail(std::string("unexpected character '") + c + "'", pos);
    }

    std::uint32_t parse_number() {
        double value = 0.0;
        const char* begin = src.data() + pos;
        const char* end = src.data() + src.size();
        const auto res = std::from_chars(begin, end, value, std::chars_format::general);
        if (res.ec != std::errc{}) fail("malformed numeric literal", pos);
        pos += static_cast<std::size_t>(res.ptr - begin);
        Expr::Node n{};
        n.tag = Expr::Node::Tag::kConst;
        n.value = value;
        return add(n);
    }

    std::uint32_t parse_ident() {
        const std::size_t start = pos;
        while (pos < src.size() && ident_char(src[pos])) ++pos;
        const std::string_view name = src.substr(start, pos - start);

        if (peek() == '(') {
            UnaryOp op;
            if (name == "sin") op = UnaryOp::kSin;
            else if (name == "cos") op = UnaryOp::kCos;
            else if (name == "exp") op = UnaryOp::kExp;
            else if (name == "tanh") op = UnaryOp::kTanh;
            else if (name == "sqrt") op = UnaryOp::kSqrt;
            else if (name == "abs") op = UnaryOp::kAbs;
            else if (name == "ln") op = UnaryOp::kLn;
            else fail("unknown function '" + std::string(name) + "'", start);
            ++pos;  // '('
            const std::uint32_t arg = parse_sum();
            if (peek() != ')') fail("expected ')'", pos);
            ++pos;
            return unary(op, arg);
        }

        Expr::Node n{};
        n.tag = Expr::Node::Tag::kVar;
        if (name == "t") {
            n.slot = SlotKind::kTime;
            return add(n);
        }
        if ((name[0] == 'x' || name[0] == 'u') && name.size() > 1) {
            int index = -1;
            const auto res = std::from_chars(name.data() + 1, name.data() + name.size(), index);
            if (res.ec == std::errc{} && res.ptr == name.data() + name.size() && index >= 0) {
                const bool is_state = name[0] == 'x';
                const int limit = is_state ? dim : control_dim;
                if (index >= limit)
                    fail("unknown identifier '" + std::string(name) + "' (index out of range)",
                         start);
                n.slot = is_state ? SlotKind::kState : SlotKind::kControl;
                n.slot_index = static_cast<std::uint16_t>(index);
                return add(n);
            }
        }
        fail("unknown identifier '" + std::string(name) + "'", start);
    }
};

Expr Expr::parse(std::string_view source, int dim, int control_dim) {
    if (source.empty()) throw ParseError("empty expression", 1);
    if (dim < 0 || control_dim < 0) throw UsageError("negative dimension");
    Expr e;
    e.dim_ = dim;
    e.control_dim_ = control_dim;
    ExprParser p{source, 0, dim, control_dim, e.nodes_};
    p.parse_sum();
    if (!p.at_end()) p.fail("unexpected trailing input", p.pos);
    return e;
}

namespace {

void print_node(const std::vector<Expr::Node>&, std::uint32_t, std::string&);

void print_const(double v, std::string& out) {
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    out.append(buf, res.ptr);
}

void print_node(const std::vector<Expr::Node>& nodes, std::uint32_t idx, std::string& out) {
    const Expr::Node& n = nodes[idx];
    switch (n.tag) {
        case Expr::Node::Tag::kConst:
            print_const(n.value, out);
            break;
        case Expr::Node::Tag::kVar:
            switch (n.slot) {
                case SlotKind::kState: out += "x" + std::to_string(n.slot_index); break;
                case SlotKind::kTime: out += "t"; break;
                case SlotKind::kControl: out += "u" + std::to_string(n.slot_index); break;
            }
            break;
        case Expr::Node::Tag::kUnary: {
            static constexpr const char* kNames[] = {"-", "sin", "cos", "exp",
                                                     "tanh", "sqrt", "abs", "ln"};
            const auto op = static_cast<UnaryOp>(n.op);
            if (op == UnaryOp::kNeg) {
                out += "(-";
                print_node(nodes, n.a, out);
                out += ")";
            } else {
                out += kNames[n.op];
                out += "(";
                print_node(nodes, n.a, out);
                out += ")";
            }
            break;
        }
        case Expr::Node::Tag::kBinary: {
            static constexpr const char kOps[] = {'+', '-', '*', '/', '^'};
            out += "(";
            print_node(nodes, n.a, out);
            out += kOps[n.op];
            print_node(nodes, n.b, out);
            out += ")";
            break;
        }
    }
}

}  // namespace

std::string Expr::to_string() const {
    if (nodes_.empty()) return "";
    std::string out;
    print_node(nodes_, static_cast<std::uint32_t>(nodes_.size() - 1), out);
    return out;
}

ExprVars Expr::free_vars() const {
    ExprVars vars;
    vars.state.assign(static_cast<std::size_t>(dim_), false);
    vars.control.assign(static_cast<std::size_t>(control_dim_), false);
    for (const Node& n : nodes_) {
        if (n.tag != Node::Tag::kVar) continue;
        switch (n.slot) {
            case SlotKind::kState: vars.state[n.slot_index] = true; break;
            case SlotKind::kTime: vars.time = true; break;
            case SlotKind::kControl: vars.control[n.slot_index] = true; break;
        }
    }
    return vars;
}

bool Expr::is_constant() const { return free_vars().none(); }

double Expr::constant_value() const {
    if (!is_constant()) throw UsageError("expression is not constant: " + to_string());
    return eval(ExprBindings<double>{});
}

}  // namespace martnet
