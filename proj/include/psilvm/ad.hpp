#pragma once

#include <cmath>
#include <cstdint>
#include <utility>
#include <vector>

namespace psilvm::ad {

// Scalar reverse-mode tape. Each recorded node stores at most two parents and
// the local partial derivatives toward them; one backward sweep accumulates
// adjoints for every recorded value. Tapes are meant to be reset and reused so
// the node storage is allocated once and recycled.
class Tape {
public:
    struct Node {
        std::int32_t p1;
        std::int32_t p2;
        double w1;
        double w2;
    };

    void reset() {
        nodes_.clear();
        val_.clear();
        adj_.clear();
    }

    void reserve(std::size_t n) {
        nodes_.reserve(n);
        val_.reserve(n);
    }

    std::size_t size() const { return nodes_.size(); }

    std::int32_t leaf(double v) {
        nodes_.push_back({-1, -1, 0.0, 0.0});
        val_.push_back(v);
        return static_cast<std::int32_t>(nodes_.size()) - 1;
    }

    std::int32_t unary(std::int32_t p, double v, double dv) {
        nodes_.push_back({p, -1, dv, 0.0});
        val_.push_back(v);
        return static_cast<std::int32_t>(nodes_.size()) - 1;
    }

    std::int32_t binary(std::int32_t p1, std::int32_t p2, double v, double d1, double d2) {
        nodes_.push_back({p1, p2, d1, d2});
        val_.push_back(v);
        return static_cast<std::int32_t>(nodes_.size()) - 1;
    }

    double value(std::int32_t id) const { return val_[static_cast<std::size_t>(id)]; }

    // Seeds set the initial adjoints (typically one output with adjoint 1, or
    // many quadrature outputs each with its own weight), then a single sweep
    // runs from the last node down.
    void backward(const std::vector<std::pair<std::int32_t, double>>& seeds) {
        adj_.assign(nodes_.size(), 0.0);
        for (const auto& [id, a] : seeds) {
            adj_[static_cast<std::size_t>(id)] += a;
        }
        for (std::size_t i = nodes_.size(); i-- > 0;) {
            const double a = adj_[i];
            if (a == 0.0) continue;
            const Node& n = nodes_[i];
            if (n.p1 >= 0) adj_[static_cast<std::size_t>(n.p1)] += n.w1 * a;
            if (n.p2 >= 0) adj_[static_cast<std::size_t>(n.p2)] += n.w2 * a;
        }
    }

    double adjoint(std::int32_t id) const { return adj_[static_cast<std::size_t>(id)]; }

private:
    std::vector<Node> nodes_;
    std::vector<double> val_;
    std::vector<double> adj_;
};

// Value handle on a tape. Carries the numeric value so arithmetic does not
// have to read back through the tape.
struct Var {
    Tape* t = nullptr;
    std::int32_t id = -1;
    double v = 0.0;

    Var() = default;
    Var(Tape& tape, double value) : t(&tape), id(tape.leaf(value)), v(value) {}
    Var(Tape* tape, std::int32_t id_, double value) : t(tape), id(id_), v(value) {}
};

inline Var operator+(Var a, Var b) { return {a.t, a.t->binary(a.id, b.id, a.v + b.v, 1.0, 1.0), a.v + b.v}; }
inline Var operator-(Var a, Var b) { return {a.t, a.t->binary(a.id, b.id, a.v - b.v, 1.0, -1.0), a.v - b.v}; }
inline Var operator*(Var a, Var b) { return {a.t, a.t->binary(a.id, b.id, a.v * b.v, b.v, a.v), a.v * b.v}; }
inline Var operator/(Var a, Var b) {
    const double r = a.v / b.v;
    return {a.t, a.t->binary(a.id, b.id, r, 1.0 / b.v, -r / b.v), r};
}

inline Var operator+(Var a, double c) { return {a.t, a.t->unary(a.id, a.v + c, 1.0), a.v + c}; }
inline Var operator+(double c, Var a) { return a + c; }
inline Var operator-(Var a, double c) { return a + (-c); }
inline Var operator-(double c, Var a) { return {a.t, a.t->unary(a.id, c - a.v, -1.0), c - a.v}; }
inline Var operator*(Var a, double c) { return {a.t, a.t->unary(a.id, a.v * c, c), a.v * c}; }
inline Var operator*(double c, Var a) { return a * c; }
inline Var operator/(Var a, double c) { return a * (1.0 / c); }
inline Var operator/(double c, Var a) {
    const double r = c / a.v;
    return {a.t, a.t->unary(a.id, r, -r / a.v), r};
}
inline Var operator-(Var a) { return {a.t, a.t->unary(a.id, -a.v, -1.0), -a.v}; }

inline Var& operator+=(Var& a, Var b) { a = a + b; return a; }
inline Var& operator-=(Var& a, Var b) { a = a - b; return a; }
inline Var& operator*=(Var& a, Var b) { a = a * b; return a; }
inline Var& operator+=(Var& a, double c) { a = a + c; return a; }
inline Var& operator*=(Var& a, double c) { a = a * c; return a; }

inline Var exp(Var a) {
    const double e = std::exp(a.v);
    return {a.t, a.t->unary(a.id, e, e), e};
}
inline Var log(Var a) { return {a.t, a.t->unary(a.id, std::log(a.v), 1.0 / a.v), std::log(a.v)}; }
inline Var sqrt(Var a) {
    const double s = std::sqrt(a.v);
    // For a degenerate zero argument the forward value is exact and the
    // partial is clamped; quadrature uses sqrt only on strictly positive
    // variances so the clamp never fires on healthy inputs.
    const double d = s > 0.0 ? 0.5 / s : 0.0;
    return {a.t, a.t->unary(a.id, s, d), s};
}
inline Var sin(Var a) { return {a.t, a.t->unary(a.id, std::sin(a.v), std::cos(a.v)), std::sin(a.v)}; }
inline Var cos(Var a) { return {a.t, a.t->unary(a.id, std::cos(a.v), -std::sin(a.v)), std::cos(a.v)}; }
inline Var tanh(Var a) {
    const double th = std::tanh(a.v);
    return {a.t, a.t->unary(a.id, th, 1.0 - th * th), th};
}

inline double value_of(double x) { return x; }
inline double value_of(Var x) { return x.v; }

}  // namespace psilvm::ad
