#pragma once

#include <Eigen/Dense>

#include <optional>
#include <string>
#include <vector>

#include "psilvm/ad.hpp"
#include "psilvm/errors.hpp"

namespace psilvm {

enum class KernelKind { RbfArd, Linear, Matern32, Periodic, MlpRbf, Sum };

std::string kernel_kind_name(KernelKind k);

struct MlpShape {
    int input = 0;
    int hidden = 0;
    int output = 0;
};

// Kernel structure plus its parameters. Parameters are stored unconstrained:
// log for positive scalars (variances, lengthscales, period), raw for MLP
// weights. pack()/set_params() flatten the tree into one vector and back;
// the two are an exact bijection.
//
// Parameter layout per node:
//   rbf_ard   [log sf2, log l_1 .. log l_k]
//   linear    [log s2]
//   matern32  [log sf2, log l_1 .. log l_k]
//   periodic  [log sf2, log period, log l_1 .. log l_k]
//   mlp_rbf   [log sf2, log l, W1 (h x in), b1 (h), W2 (out x h), b2 (out)]
//   sum       children concatenated in order
// where k = 1 (isotropic) or input_dim (ARD).
class KernelSpec {
public:
    static KernelSpec rbf(int input_dim, bool ard = true);
    static KernelSpec linear(int input_dim);
    static KernelSpec matern32(int input_dim, bool ard = true);
    static KernelSpec periodic(int input_dim, bool ard = true, double period = 1.0);
    static KernelSpec mlp_rbf(int input_dim, int hidden, int output, std::uint64_t weight_seed = 0);
    static KernelSpec sum(std::vector<KernelSpec> children);

    KernelKind kind() const { return kind_; }
    int input_dim() const { return input_dim_; }
    int num_lengthscales() const { return num_lengthscales_; }
    const MlpShape& mlp_shape() const { return mlp_; }
    const std::vector<KernelSpec>& children() const { return children_; }

    int param_count() const;
    Eigen::VectorXd pack() const;
    void set_params(const Eigen::VectorXd& packed);
    std::vector<std::string> param_names() const;

    // Own (non-child) parameters of this node, unconstrained.
    const Eigen::VectorXd& own_params() const { return own_params_; }
    void set_own_params(const Eigen::VectorXd& p);

    // sigma_f^2 of kinds whose k(x,x) is constant; nullopt for linear and
    // for sums containing it.
    std::optional<double> constant_diag() const;

    // First node in tree order carrying per-dimension lengthscales; used for
    // ARD dimension selection. Returns the lengthscale vector (length
    // input_dim) or throws NoArdKernel.
    Eigen::VectorXd ard_lengthscales() const;

private:
    KernelKind kind_ = KernelKind::RbfArd;
    int input_dim_ = 0;
    int num_lengthscales_ = 0;
    MlpShape mlp_;
    std::vector<KernelSpec> children_;
    Eigen::VectorXd own_params_;

    int own_param_count() const;
    void append_names(const std::string& prefix, std::vector<std::string>& out) const;
};

// ---------------------------------------------------------------------------
// Evaluation. The templated core runs on double or on ad::Var so gradients of
// everything downstream (psi statistics, the collapsed bound) come from the
// same code path that computes values.
// ---------------------------------------------------------------------------

namespace kernel_detail {

inline double make_const(double v, double*) { return v; }
inline ad::Var make_const(double v, ad::Tape* t) { return ad::Var(*t, v); }

template <class T>
T matern32_core(T u);

template <>
inline double matern32_core<double>(double u) {
    const double r = std::sqrt(u);
    const double e = std::exp(-std::sqrt(3.0) * r);
    return (1.0 + std::sqrt(3.0) * r) * e;
}

// d/du [(1+sqrt(3)r)e^{-sqrt(3)r}] with r = sqrt(u) is -(3/2)e^{-sqrt(3)r},
// finite at u = 0 even though r itself is not differentiable there.
template <>
inline ad::Var matern32_core<ad::Var>(ad::Var u) {
    const double r = std::sqrt(u.v);
    const double e = std::exp(-std::sqrt(3.0) * r);
    const double val = (1.0 + std::sqrt(3.0) * r) * e;
    return {u.t, u.t->unary(u.id, val, -1.5 * e), val};
}

}  // namespace kernel_detail

// Evaluation-ready transform of the unconstrained parameters: exponentials
// are applied once here instead of per point pair.
//
// Prepared layout per node:
//   rbf_ard   [sf2, 0.5/l_q^2 ...]            (k entries, broadcast if k=1)
//   linear    [s2]
//   matern32  [sf2, 1/l_q^2 ...]
//   periodic  [sf2, pi/period, 2/l_q^2 ...]
//   mlp_rbf   [sf2, 0.5/l^2, W1, b1, W2, b2]
//   sum       children concatenated
template <class T>
struct PreparedKernel {
    const KernelSpec* spec = nullptr;
    std::vector<T> t;
    mutable std::vector<T> scratch_a;  // MLP hidden activations
    mutable std::vector<T> scratch_b;  // MLP outputs for x
    mutable std::vector<T> scratch_c;  // MLP outputs for x2
};

namespace kernel_detail {

template <class T>
void prepare_node(const KernelSpec& s, const T* p, std::vector<T>& out) {
    using std::exp;
    switch (s.kind()) {
        case KernelKind::RbfArd: {
            out.push_back(exp(p[0]));
            for (int q = 0; q < s.num_lengthscales(); ++q) {
                out.push_back(0.5 * exp(-2.0 * p[1 + q]));
            }
            break;
        }
        case KernelKind::Linear:
            out.push_back(exp(p[0]));
            break;
        case KernelKind::Matern32: {
            out.push_back(exp(p[0]));
            for (int q = 0; q < s.num_lengthscales(); ++q) {
                out.push_back(exp(-2.0 * p[1 + q]));
            }
            break;
        }
        case KernelKind::Periodic: {
            out.push_back(exp(p[0]));
            out.push_back(M_PI * exp(-p[1]));
            for (int q = 0; q < s.num_lengthscales(); ++q) {
                out.push_back(2.0 * exp(-2.0 * p[2 + q]));
            }
            break;
        }
        case KernelKind::MlpRbf: {
            out.push_back(exp(p[0]));
            out.push_back(0.5 * exp(-2.0 * p[1]));
            const MlpShape& m = s.mlp_shape();
            const int nw = m.hidden * m.input + m.hidden + m.output * m.hidden + m.output;
            for (int i = 0; i < nw; ++i) out.push_back(p[2 + i]);
            break;
        }
        case KernelKind::Sum: {
            int off = 0;
            for (const KernelSpec& c : s.children()) {
                prepare_node(c, p + off, out);
                off += c.param_count();
            }
            break;
        }
    }
}

// tanh hidden layer, linear output.
template <class T>
void mlp_apply(const MlpShape& m, const T* w, const T* x, std::vector<T>& hidden, T* out) {
    using std::tanh;
    const T* w1 = w;
    const T* b1 = w1 + m.hidden * m.input;
    const T* w2 = b1 + m.hidden;
    const T* b2 = w2 + m.output * m.hidden;
    hidden.resize(static_cast<std::size_t>(m.hidden));
    for (int h = 0; h < m.hidden; ++h) {
        T acc = b1[h];
        for (int i = 0; i < m.input; ++i) acc += w1[h * m.input + i] * x[i];
        hidden[static_cast<std::size_t>(h)] = tanh(acc);
    }
    for (int o = 0; o < m.output; ++o) {
        T acc = b2[o];
        for (int h = 0; h < m.hidden; ++h) acc += w2[o * m.hidden + h] * hidden[static_cast<std::size_t>(h)];
        out[o] = acc;
    }
}

template <class T>
T eval_node(const KernelSpec& s, const PreparedKernel<T>& pk, std::size_t& off, const T* x, const T* x2) {
    using std::exp;
    using std::sin;
    const T* t = pk.t.data() + off;
    switch (s.kind()) {
        case KernelKind::RbfArd: {
            const int k = s.num_lengthscales();
            off += 1 + static_cast<std::size_t>(k);
            T u = (x[0] - x2[0]) * (x[0] - x2[0]) * t[1];
            for (int q = 1; q < s.input_dim(); ++q) {
                const T d = x[q] - x2[q];
                u += d * d * t[k == 1 ? 1 : 1 + q];
            }
            return t[0] * exp(-u);
        }
        case KernelKind::Linear: {
            off += 1;
            T dot = x[0] * x2[0];
            for (int q = 1; q < s.input_dim(); ++q) dot += x[q] * x2[q];
            return t[0] * dot;
        }
        case KernelKind::Matern32: {
            const int k = s.num_lengthscales();
            off += 1 + static_cast<std::size_t>(k);
            T u = (x[0] - x2[0]) * (x[0] - x2[0]) * t[1];
            for (int q = 1; q < s.input_dim(); ++q) {
                const T d = x[q] - x2[q];
                u += d * d * t[k == 1 ? 1 : 1 + q];
            }
            return t[0] * matern32_core(u);
        }
        case KernelKind::Periodic: {
            const int k = s.num_lengthscales();
            off += 2 + static_cast<std::size_t>(k);
            const T s0 = sin(t[1] * (x[0] - x2[0]));
            T u = t[2] * s0 * s0;
            for (int q = 1; q < s.input_dim(); ++q) {
                const T sv = sin(t[1] * (x[q] - x2[q]));
                u += t[k == 1 ? 2 : 2 + q] * sv * sv;
            }
            return t[0] * exp(-u);
        }
        case KernelKind::MlpRbf: {
            const MlpShape& m = s.mlp_shape();
            const int nw = m.hidden * m.input + m.hidden + m.output * m.hidden + m.output;
            off += 2 + static_cast<std::size_t>(nw);
            pk.scratch_b.resize(static_cast<std::size_t>(m.output));
            pk.scratch_c.resize(static_cast<std::size_t>(m.output));
            mlp_apply(m, t + 2, x, pk.scratch_a, pk.scratch_b.data());
            mlp_apply(m, t + 2, x2, pk.scratch_a, pk.scratch_c.data());
            T u = (pk.scratch_b[0] - pk.scratch_c[0]) * (pk.scratch_b[0] - pk.scratch_c[0]) * t[1];
            for (int o = 1; o < m.output; ++o) {
                const T d = pk.scratch_b[static_cast<std::size_t>(o)] - pk.scratch_c[static_cast<std::size_t>(o)];
                u += d * d * t[1];
            }
            return t[0] * exp(-u);
        }
        case KernelKind::Sum: {
            T acc = eval_node(s.children()[0], pk, off, x, x2);
            for (std::size_t c = 1; c < s.children().size(); ++c) {
                acc += eval_node(s.children()[c], pk, off, x, x2);
            }
            return acc;
        }
    }
    throw InvalidInput("eval_node: unknown kernel kind");
}

}  // namespace kernel_detail

// p points at the packed unconstrained parameters (length param_count()).
template <class T>
PreparedKernel<T> prepare_kernel(const KernelSpec& spec, const T* p) {
    PreparedKernel<T> pk;
    pk.spec = &spec;
    pk.t.reserve(static_cast<std::size_t>(spec.param_count()) + 4);
    kernel_detail::prepare_node(spec, p, pk.t);
    return pk;
}

template <class T>
T eval_prepared(const PreparedKernel<T>& pk, const T* x, const T* x2) {
    std::size_t off = 0;
    return kernel_detail::eval_node(*pk.spec, pk, off, x, x2);
}

// ---------------------------------------------------------------------------
// Plain-double convenience interface (parameters taken from the spec itself).
// ---------------------------------------------------------------------------

double kernel_eval(const KernelSpec& spec, const Eigen::VectorXd& x, const Eigen::VectorXd& x2);

Eigen::MatrixXd gram(const KernelSpec& spec, const Eigen::MatrixXd& X, const Eigen::MatrixXd& X2);

// Text form of the kernel structure, e.g.
//   rbf(5) | rbf(5,iso) | linear(3) | matern32(2,iso)
//   periodic(12,iso,period=12) | mlp(10,8,2,seed=1) | sum(rbf(2),linear(2))
// parse_kernel_spec builds a fresh spec (parameters at their initial values);
// kernel_spec_str emits the structure only, so a round trip preserves shape
// and dimensions but not trained parameter values (serialize pack() for
// those). Throws InvalidConfig on malformed text.
KernelSpec parse_kernel_spec(const std::string& text);
std::string kernel_spec_str(const KernelSpec& spec);

// Feed-forward warp of the mlp_rbf kernel (throws WrongKernelKind otherwise).
Eigen::VectorXd mlp_forward(const KernelSpec& spec, const Eigen::VectorXd& x);

}  // namespace psilvm
