#include "psilvm/kernels.hpp"

#include <cmath>

#include "psilvm/util.hpp"

namespace psilvm {

std::string kernel_kind_name(KernelKind k) {
    switch (k) {
        case KernelKind::RbfArd: return "rbf_ard";
        case KernelKind::Linear: return "linear";
        case KernelKind::Matern32: return "matern32";
        case KernelKind::Periodic: return "periodic";
        case KernelKind::MlpRbf: return "mlp_rbf";
        case KernelKind::Sum: return "sum";
    }
    return "?";
}

namespace {

void check_dim(int input_dim) {
    if (input_dim < 1) throw InvalidInput("kernel input_dim must be >= 1");
}

}  // namespace

KernelSpec KernelSpec::rbf(int input_dim, bool ard) {
    check_dim(input_dim);
    KernelSpec s;
    s.kind_ = KernelKind::RbfArd;
    s.input_dim_ = input_dim;
    s.num_lengthscales_ = ard ? input_dim : 1;
    s.own_params_ = Eigen::VectorXd::Zero(1 + s.num_lengthscales_);
    return s;
}

KernelSpec KernelSpec::linear(int input_dim) {
    check_dim(input_dim);
    KernelSpec s;
    s.kind_ = KernelKind::Linear;
    s.input_dim_ = input_dim;
    s.own_params_ = Eigen::VectorXd::Zero(1);
    return s;
}

KernelSpec KernelSpec::matern32(int input_dim, bool ard) {
    check_dim(input_dim);
    KernelSpec s;
    s.kind_ = KernelKind::Matern32;
    s.input_dim_ = input_dim;
    s.num_lengthscales_ = ard ? input_dim : 1;
    s.own_params_ = Eigen::VectorXd::Zero(1 + s.num_lengthscales_);
    return s;
}

KernelSpec KernelSpec::periodic(int input_dim, bool ard, double period) {
    check_dim(input_dim);
    if (!(period > 0.0)) throw InvalidInput("periodic kernel period must be positive");
    KernelSpec s;
    s.kind_ = KernelKind::Periodic;
    s.input_dim_ = input_dim;
    s.num_lengthscales_ = ard ? input_dim : 1;
    s.own_params_ = Eigen::VectorXd::Zero(2 + s.num_lengthscales_);
    s.own_params_[1] = std::log(period);
    return s;
}

KernelSpec KernelSpec::mlp_rbf(int input_dim, int hidden, int output, std::uint64_t weight_seed) {
    check_dim(input_dim);
    if (hidden < 1 || output < 1) throw InvalidInput("mlp_rbf layer sizes must be >= 1");
    KernelSpec s;
    s.kind_ = KernelKind::MlpRbf;
    s.input_dim_ = input_dim;
    s.num_lengthscales_ = 1;
    s.mlp_ = MlpShape{input_dim, hidden, output};
    const int nw = hidden * input_dim + hidden + output * hidden + output;
    s.own_params_ = Eigen::VectorXd::Zero(2 + nw);
    // W1 and W2 start at N(0, 1/fan_in) so the warp neither saturates the
    // tanh nor collapses; biases start at zero.
    std::uint64_t ctr = 0;
    const double sd1 = 1.0 / std::sqrt(static_cast<double>(input_dim));
    for (int i = 0; i < hidden * input_dim; ++i) {
        s.own_params_[2 + i] = sd1 * counter_normal(weight_seed, ctr++);
    }
    ctr = 1u << 20;
    const double sd2 = 1.0 / std::sqrt(static_cast<double>(hidden));
    const int w2_off = 2 + hidden * input_dim + hidden;
    for (int i = 0; i < output * hidden; ++i) {
        s.own_params_[w2_off + i] = sd2 * counter_normal(weight_seed, ctr++);
    }
    return s;
}

KernelSpec KernelSpec::sum(std::vector<KernelSpec> children) {
    if (children.size() < 2) throw InvalidInput("sum kernel needs at least two children");
    const int d = children.front().input_dim();
    for (const KernelSpec& c : children) {
        if (c.input_dim() != d) throw DimensionMismatch("sum kernel children disagree on input_dim");
    }
    KernelSpec s;
    s.kind_ = KernelKind::Sum;
    s.input_dim_ = d;
    s.children_ = std::move(children);
    return s;
}

int KernelSpec::own_param_count() const {
    switch (kind_) {
        case KernelKind::RbfArd:
        case KernelKind::Matern32:
            return 1 + num_lengthscales_;
        case KernelKind::Linear:
            return 1;
        case KernelKind::Periodic:
            return 2 + num_lengthscales_;
        case KernelKind::MlpRbf:
            return 2 + mlp_.hidden * mlp_.input + mlp_.hidden + mlp_.output * mlp_.hidden + mlp_.output;
        case KernelKind::Sum:
            return 0;
    }
    return 0;
}

int KernelSpec::param_count() const {
    int n = own_param_count();
    for (const KernelSpec& c : children_) n += c.param_count();
    return n;
}

Eigen::VectorXd KernelSpec::pack() const {
    Eigen::VectorXd out(param_count());
    int off = own_param_count();
    out.head(off) = own_params_;
    for (const KernelSpec& c : children_) {
        const int n = c.param_count();
        out.segment(off, n) = c.pack();
        off += n;
    }
    return out;
}

void KernelSpec::set_params(const Eigen::VectorXd& packed) {
    if (packed.size() != param_count()) {
        throw DimensionMismatch("kernel set_params: expected " + std::to_string(param_count()) +
                                " values, got " + std::to_string(packed.size()));
    }
    int off = own_param_count();
    own_params_ = packed.head(off);
    for (KernelSpec& c : children_) {
        const int n = c.param_count();
        c.set_params(packed.segment(off, n));
        off += n;
    }
}

void KernelSpec::set_own_params(const Eigen::VectorXd& p) {
    if (p.size() != own_param_count()) throw DimensionMismatch("kernel set_own_params size");
    own_params_ = p;
}

void KernelSpec::append_names(const std::string& prefix, std::vector<std::string>& out) const {
    switch (kind_) {
        case KernelKind::RbfArd:
        case KernelKind::Matern32:
            out.push_back(prefix + "log_sf2");
            for (int q = 0; q < num_lengthscales_; ++q) out.push_back(prefix + "log_l" + std::to_string(q));
            break;
        case KernelKind::Linear:
            out.push_back(prefix + "log_s2");
            break;
        case KernelKind::Periodic:
            out.push_back(prefix + "log_sf2");
            out.push_back(prefix + "log_period");
            for (int q = 0; q < num_lengthscales_; ++q) out.push_back(prefix + "log_l" + std::to_string(q));
            break;
        case KernelKind::MlpRbf: {
            out.push_back(prefix + "log_sf2");
            out.push_back(prefix + "log_l");
            const int nw = mlp_.hidden * mlp_.input + mlp_.hidden + mlp_.output * mlp_.hidden + mlp_.output;
            for (int i = 0; i < nw; ++i) out.push_back(prefix + "w" + std::to_string(i));
            break;
        }
        case KernelKind::Sum:
            for (std::size_t c = 0; c < children_.size(); ++c) {
                children_[c].append_names(prefix + "k" + std::to_string(c) + ".", out);
            }
            break;
    }
}

std::vector<std::string> KernelSpec::param_names() const {
    std::vector<std::string> out;
    append_names(kernel_kind_name(kind_) + ".", out);
    return out;
}

std::optional<double> KernelSpec::constant_diag() const {
    switch (kind_) {
        case KernelKind::RbfArd:
        case KernelKind::Matern32:
        case KernelKind::Periodic:
        case KernelKind::MlpRbf:
            return std::exp(own_params_[0]);
        case KernelKind::Linear:
            return std::nullopt;
        case KernelKind::Sum: {
            double acc = 0.0;
            for (const KernelSpec& c : children_) {
                const std::optional<double> d = c.constant_diag();
                if (!d) return std::nullopt;
                acc += *d;
            }
            return acc;
        }
    }
    return std::nullopt;
}

Eigen::VectorXd KernelSpec::ard_lengthscales() const {
    switch (kind_) {
        case KernelKind::RbfArd:
        case KernelKind::Matern32:
            if (num_lengthscales_ == input_dim_) {
                return own_params_.segment(1, input_dim_).array().exp().matrix();
            }
            break;
        case KernelKind::Periodic:
            if (num_lengthscales_ == input_dim_) {
                return own_params_.segment(2, input_dim_).array().exp().matrix();
            }
            break;
        case KernelKind::Sum:
            for (const KernelSpec& c : children_) {
                try {
                    return c.ard_lengthscales();
                } catch (const NoArdKernel&) {
                }
            }
            break;
        default:
            break;
    }
    throw NoArdKernel("kernel has no per-dimension lengthscales");
}

double kernel_eval(const KernelSpec& spec, const Eigen::VectorXd& x, const Eigen::VectorXd& x2) {
    if (x.size() != spec.input_dim() || x2.size() != spec.input_dim()) {
        throw DimensionMismatch("kernel_eval: point dimension does not match kernel input_dim");
    }
    const Eigen::VectorXd p = spec.pack();
    const PreparedKernel<double> pk = prepare_kernel(spec, p.data());
    return eval_prepared(pk, x.data(), x2.data());
}

Eigen::MatrixXd gram(const KernelSpec& spec, const Eigen::MatrixXd& X, const Eigen::MatrixXd& X2) {
    if (X.cols() != spec.input_dim() || X2.cols() != spec.input_dim()) {
        throw DimensionMismatch("gram: point dimension does not match kernel input_dim");
    }
    const Eigen::VectorXd p = spec.pack();
    const PreparedKernel<double> pk = prepare_kernel(spec, p.data());
    using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    const RowMat A = X;
    const RowMat B = X2;
    Eigen::MatrixXd out(A.rows(), B.rows());
    for (Eigen::Index i = 0; i < A.rows(); ++i) {
        for (Eigen::Index j = 0; j < B.rows(); ++j) {
            out(i, j) = eval_prepared(pk, A.row(i).data(), B.row(j).data());
        }
    }
    return out;
}

namespace {

std::string strip(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t");
    return s.substr(a, b - a + 1);
}

// Split on commas that are not nested inside parentheses.
std::vector<std::string> split_args(const std::string& s) {
    std::vector<std::string> out;
    int depth = 0;
    std::string cur;
    for (char c : s) {
        if (c == '(') ++depth;
        if (c == ')') --depth;
        if (c == ',' && depth == 0) {
            out.push_back(strip(cur));
            cur.clear();
        } else {
            cur += c;
        }
    }
    if (!strip(cur).empty() || !out.empty()) out.push_back(strip(cur));
    return out;
}

long parse_int_arg(const std::string& tok, const std::string& what) {
    std::size_t used = 0;
    long v = 0;
    try {
        v = std::stol(tok, &used);
    } catch (const std::exception&) {
        throw InvalidConfig("kernel spec: bad " + what + " '" + tok + "'");
    }
    if (used != tok.size()) throw InvalidConfig("kernel spec: bad " + what + " '" + tok + "'");
    return v;
}

double parse_real_arg(const std::string& tok, const std::string& what) {
    std::size_t used = 0;
    double v = 0;
    try {
        v = std::stod(tok, &used);
    } catch (const std::exception&) {
        throw InvalidConfig("kernel spec: bad " + what + " '" + tok + "'");
    }
    if (used != tok.size()) throw InvalidConfig("kernel spec: bad " + what + " '" + tok + "'");
    return v;
}

}  // namespace

KernelSpec parse_kernel_spec(const std::string& text) {
    const std::string s = strip(text);
    const std::size_t open = s.find('(');
    if (open == std::string::npos || s.back() != ')') {
        throw InvalidConfig("kernel spec: expected name(args), got '" + text + "'");
    }
    const std::string name = strip(s.substr(0, open));
    const std::string inner = s.substr(open + 1, s.size() - open - 2);
    const std::vector<std::string> args = split_args(inner);

    if (name == "sum") {
        if (args.size() < 2) throw InvalidConfig("kernel spec: sum needs at least two children");
        std::vector<KernelSpec> children;
        children.reserve(args.size());
        for (const std::string& a : args) children.push_back(parse_kernel_spec(a));
        return KernelSpec::sum(std::move(children));
    }

    if (args.empty()) throw InvalidConfig("kernel spec: '" + name + "' needs an input dimension");
    const int dim = static_cast<int>(parse_int_arg(args[0], "input dimension"));
    if (dim < 1) throw InvalidConfig("kernel spec: input dimension must be positive");

    bool ard = true;
    double period = 1.0;
    std::uint64_t seed = 0;
    int hidden = -1, output = -1;
    std::size_t pos_idx = 1;
    for (std::size_t i = 1; i < args.size(); ++i) {
        const std::string& a = args[i];
        if (a == "iso") {
            ard = false;
        } else if (a == "ard") {
            ard = true;
        } else if (a.rfind("period=", 0) == 0) {
            period = parse_real_arg(a.substr(7), "period");
            if (!(period > 0.0)) throw InvalidConfig("kernel spec: period must be positive");
        } else if (a.rfind("seed=", 0) == 0) {
            seed = static_cast<std::uint64_t>(parse_int_arg(a.substr(5), "seed"));
        } else if (name == "mlp" && pos_idx <= 2) {
            // mlp positional args: input, hidden, output.
            const int v = static_cast<int>(parse_int_arg(a, "mlp size"));
            if (v < 1) throw InvalidConfig("kernel spec: mlp sizes must be positive");
            (pos_idx == 1 ? hidden : output) = v;
            ++pos_idx;
        } else {
            throw InvalidConfig("kernel spec: unexpected argument '" + a + "' for " + name);
        }
    }

    if (name == "rbf") return KernelSpec::rbf(dim, ard);
    if (name == "linear") return KernelSpec::linear(dim);
    if (name == "matern32") return KernelSpec::matern32(dim, ard);
    if (name == "periodic") return KernelSpec::periodic(dim, ard, period);
    if (name == "mlp") {
        if (hidden < 1 || output < 1) {
            throw InvalidConfig("kernel spec: mlp needs input, hidden and output sizes");
        }
        return KernelSpec::mlp_rbf(dim, hidden, output, seed);
    }
    throw InvalidConfig("kernel spec: unknown kernel '" + name + "'");
}

std::string kernel_spec_str(const KernelSpec& spec) {
    const std::string dim = std::to_string(spec.input_dim());
    const bool iso = spec.num_lengthscales() == 1 && spec.input_dim() > 1;
    switch (spec.kind()) {
        case KernelKind::RbfArd:
            return "rbf(" + dim + (iso ? ",iso" : "") + ")";
        case KernelKind::Linear:
            return "linear(" + dim + ")";
        case KernelKind::Matern32:
            return "matern32(" + dim + (iso ? ",iso" : "") + ")";
        case KernelKind::Periodic:
            return "periodic(" + dim + (iso ? ",iso" : "") + ")";
        case KernelKind::MlpRbf:
            return "mlp(" + dim + "," + std::to_string(spec.mlp_shape().hidden) + "," +
                   std::to_string(spec.mlp_shape().output) + ")";
        case KernelKind::Sum: {
            std::string out = "sum(";
            for (std::size_t i = 0; i < spec.children().size(); ++i) {
                if (i) out += ",";
                out += kernel_spec_str(spec.children()[i]);
            }
            return out + ")";
        }
    }
    throw InvalidInput("kernel_spec_str: unknown kernel kind");
}

Eigen::VectorXd mlp_forward(const KernelSpec& spec, const Eigen::VectorXd& x) {
    if (spec.kind() != KernelKind::MlpRbf) {
        throw WrongKernelKind("mlp_forward needs an mlp_rbf kernel, got " + kernel_kind_name(spec.kind()));
    }
    if (x.size() != spec.input_dim()) throw DimensionMismatch("mlp_forward: input dimension mismatch");
    const MlpShape& m = spec.mlp_shape();
    const Eigen::VectorXd& p = spec.own_params();
    std::vector<double> hidden;
    Eigen::VectorXd out(m.output);
    kernel_detail::mlp_apply(m, p.data() + 2, x.data(), hidden, out.data());
    return out;
}

}  // namespace psilvm
