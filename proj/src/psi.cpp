#include "psilvm/psi.hpp"

#include <cmath>
#include <vector>

#include "psilvm/ad.hpp"
#include "psilvm/errors.hpp"
#include "psilvm/util.hpp"

namespace psilvm {

DiagGaussian LatentBatch::q_at(int i) const {
    if (i < 0 || i >= size()) throw InvalidInput("LatentBatch: point index out of range");
    DiagGaussian q;
    q.mean = mean.row(i).transpose();
    q.var = var.row(i).transpose();
    return q;
}

void LatentBatch::validate() const {
    if (mean.rows() < 1) throw InvalidInput("LatentBatch: needs at least one point");
    if (inducing.rows() < 1) throw InvalidInput("LatentBatch: needs at least one inducing point");
    if (var.rows() != mean.rows() || var.cols() != mean.cols() || inducing.cols() != mean.cols()) {
        throw DimensionMismatch("LatentBatch: mean/var/inducing shapes disagree");
    }
    if (!mean.allFinite() || !inducing.allFinite()) {
        throw InvalidInput("LatentBatch: non-finite entries");
    }
    for (Eigen::Index i = 0; i < var.rows(); ++i) {
        for (Eigen::Index q = 0; q < var.cols(); ++q) {
            if (!std::isfinite(var(i, q))) throw InvalidInput("LatentBatch: non-finite variance");
            if (!(var(i, q) > 0.0)) throw NonPositiveVariance("LatentBatch: variance must be positive");
        }
    }
}

PsiBackend PsiBackend::make_analytic() {
    PsiBackend b;
    b.analytic = true;
    return b;
}

PsiBackend PsiBackend::quadrature(const SchemeTag& tag) {
    PsiBackend b;
    b.scheme = tag;
    return b;
}

PsiBackend PsiBackend::parse(const std::string& text) {
    if (text == "analytic") return make_analytic();
    return quadrature(SchemeTag::parse(text));
}

std::string PsiBackend::str() const { return analytic ? "analytic" : scheme.str(); }

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// mc draws must differ across data points; derive a per-point seed
SchemeTag per_point_tag(const SchemeTag& tag, int i) {
    if (tag.kind != SchemeKind::MonteCarlo) return tag;
    return SchemeTag::mc(tag.mc_samples, hash_combine(tag.mc_seed, static_cast<std::uint64_t>(i)));
}

void check_kernel_dim(const KernelSpec& kernel, const LatentBatch& latent) {
    if (kernel.input_dim() != latent.dim()) {
        throw DimensionMismatch("psi: kernel input_dim " + std::to_string(kernel.input_dim()) +
                                " does not match latent dim " + std::to_string(latent.dim()));
    }
}

// --------------------------------------------------------------------------
// Analytic closed forms: rbf_ard alone, or sum(rbf_ard, linear). The cross
// expectations E[k_rbf(x,z_j) k_lin(x,z_m)] follow from the Gaussian product
// rule: N(x|mu,S) exp(-|x-z|^2/(2 l^2)) has first moment Psi1rbf * m with
// m_q = (mu_q l_q^2 + z_q s_q^2) / (s_q^2 + l_q^2).
// --------------------------------------------------------------------------

struct AnalyticForm {
    bool has_rbf = false;
    bool has_lin = false;
    int rbf_off = 0;  // offset of the rbf node inside the packed parameter vector
    int lin_off = 0;
    int rbf_num_l = 0;
};

AnalyticForm analytic_form_or_throw(const KernelSpec& kernel) {
    AnalyticForm f;
    if (kernel.kind() == KernelKind::RbfArd) {
        f.has_rbf = true;
        f.rbf_num_l = kernel.num_lengthscales();
        return f;
    }
    if (kernel.kind() == KernelKind::Sum && kernel.children().size() == 2) {
        const KernelSpec& a = kernel.children()[0];
        const KernelSpec& b = kernel.children()[1];
        const auto fill = [&](const KernelSpec& child, int off) {
            if (child.kind() == KernelKind::RbfArd) {
                f.has_rbf = true;
                f.rbf_off = off;
                f.rbf_num_l = child.num_lengthscales();
            } else if (child.kind() == KernelKind::Linear) {
                f.has_lin = true;
                f.lin_off = off;
            }
        };
        fill(a, 0);
        fill(b, a.param_count());
        if (f.has_rbf && f.has_lin) return f;
    }
    throw WrongKernelKind("analytic psi covers rbf_ard or sum(rbf_ard, linear), got " +
                          kernel_kind_name(kernel.kind()));
}

template <class T>
struct AnalyticParams {
    bool has_rbf = false;
    bool has_lin = false;
    T sf2{};
    std::vector<T> l2;  // length D after broadcast
    T s2{};
};

template <class T>
AnalyticParams<T> analytic_params(const AnalyticForm& form, const T* packed, int dim) {
    using std::exp;
    AnalyticParams<T> ap;
    ap.has_rbf = form.has_rbf;
    ap.has_lin = form.has_lin;
    if (form.has_rbf) {
        ap.sf2 = exp(packed[form.rbf_off]);
        ap.l2.reserve(static_cast<std::size_t>(dim));
        for (int q = 0; q < dim; ++q) {
            const int idx = form.rbf_num_l == 1 ? 0 : q;
            ap.l2.push_back(exp(2.0 * packed[form.rbf_off + 1 + idx]));
        }
    }
    if (form.has_lin) ap.s2 = exp(packed[form.lin_off]);
    return ap;
}

// Per-point closed forms. Fills psi1_row (length M), returns the psi0
// contribution, and reports the point's psi2 term through cb(j, m, value)
// for j <= m (the full matrix is symmetric).
template <class T, class Cb>
T analytic_point(const AnalyticParams<T>& ap, const T* mu, const T* var, const T* z, int m_count,
                 int dim, T* psi1_row, Cb&& cb) {
    using std::exp;
    using std::sqrt;

    std::vector<T> psi1_rbf;
    std::vector<T> lin_dot;
    std::vector<T> cross_mean;  // M x D product-Gaussian means, only for rbf+lin

    if (ap.has_rbf) {
        psi1_rbf.reserve(static_cast<std::size_t>(m_count));
        for (int j = 0; j < m_count; ++j) {
            T t = ap.sf2;
            for (int q = 0; q < dim; ++q) {
                const T denom = ap.l2[static_cast<std::size_t>(q)] + var[q];
                const T d = mu[q] - z[j * dim + q];
                t = t * exp(-0.5 * d * d / denom) /
                    sqrt(1.0 + var[q] / ap.l2[static_cast<std::size_t>(q)]);
            }
            psi1_rbf.push_back(t);
        }
    }
    if (ap.has_lin) {
        lin_dot.reserve(static_cast<std::size_t>(m_count));
        for (int j = 0; j < m_count; ++j) {
            T dot = mu[0] * z[j * dim];
            for (int q = 1; q < dim; ++q) dot += mu[q] * z[j * dim + q];
            lin_dot.push_back(dot);
        }
    }
    if (ap.has_rbf && ap.has_lin) {
        cross_mean.reserve(static_cast<std::size_t>(m_count * dim));
        for (int j = 0; j < m_count; ++j) {
            for (int q = 0; q < dim; ++q) {
                const T denom = var[q] + ap.l2[static_cast<std::size_t>(q)];
                cross_mean.push_back(
                    (mu[q] * ap.l2[static_cast<std::size_t>(q)] + z[j * dim + q] * var[q]) / denom);
            }
        }
    }

    for (int j = 0; j < m_count; ++j) {
        if (ap.has_rbf && ap.has_lin) {
            psi1_row[j] = psi1_rbf[static_cast<std::size_t>(j)] + ap.s2 * lin_dot[static_cast<std::size_t>(j)];
        } else if (ap.has_rbf) {
            psi1_row[j] = psi1_rbf[static_cast<std::size_t>(j)];
        } else {
            psi1_row[j] = ap.s2 * lin_dot[static_cast<std::size_t>(j)];
        }
    }

    for (int j = 0; j < m_count; ++j) {
        for (int m = j; m < m_count; ++m) {
            T val{};
            bool first = true;
            if (ap.has_rbf) {
                T t = ap.sf2 * ap.sf2;
                for (int q = 0; q < dim; ++q) {
                    const T l2q = ap.l2[static_cast<std::size_t>(q)];
                    const T dz = z[j * dim + q] - z[m * dim + q];
                    const T zbar = 0.5 * (z[j * dim + q] + z[m * dim + q]);
                    const T dmu = mu[q] - zbar;
                    t = t * exp(-0.25 * dz * dz / l2q - dmu * dmu / (2.0 * var[q] + l2q)) /
                        sqrt(1.0 + 2.0 * var[q] / l2q);
                }
                val = t;
                first = false;
            }
            if (ap.has_lin) {
                T zz = z[j * dim] * z[m * dim] * var[0];
                for (int q = 1; q < dim; ++q) zz += z[j * dim + q] * z[m * dim + q] * var[q];
                const T lin = ap.s2 * ap.s2 *
                              (zz + lin_dot[static_cast<std::size_t>(j)] * lin_dot[static_cast<std::size_t>(m)]);
                val = first ? lin : val + lin;
                first = false;
            }
            if (ap.has_rbf && ap.has_lin) {
                // E[k_rbf(x,z_j) k_lin(x,z_m)] + E[k_rbf(x,z_m) k_lin(x,z_j)]
                T zm_dot_mj = z[m * dim] * cross_mean[static_cast<std::size_t>(j * dim)];
                for (int q = 1; q < dim; ++q) {
                    zm_dot_mj += z[m * dim + q] * cross_mean[static_cast<std::size_t>(j * dim + q)];
                }
                T zj_dot_mm = z[j * dim] * cross_mean[static_cast<std::size_t>(m * dim)];
                for (int q = 1; q < dim; ++q) {
                    zj_dot_mm += z[j * dim + q] * cross_mean[static_cast<std::size_t>(m * dim + q)];
                }
                val += ap.s2 * (zm_dot_mj * psi1_rbf[static_cast<std::size_t>(j)] +
                                zj_dot_mm * psi1_rbf[static_cast<std::size_t>(m)]);
            }
            cb(j, m, val);
        }
    }

    T psi0{};
    bool have = false;
    if (ap.has_rbf) {
        psi0 = ap.sf2;
        have = true;
    }
    if (ap.has_lin) {
        T sq = mu[0] * mu[0] + var[0];
        for (int q = 1; q < dim; ++q) sq += mu[q] * mu[q] + var[q];
        psi0 = have ? psi0 + ap.s2 * sq : ap.s2 * sq;
    }
    return psi0;
}

}  // namespace

PsiStats psi_quadrature(const KernelSpec& kernel, const LatentBatch& latent, const SchemeTag& scheme,
                        bool include_psi2) {
    latent.validate();
    check_kernel_dim(kernel, latent);
    const int n = latent.size();
    const int m = latent.num_inducing();
    const int d = latent.dim();

    const Eigen::VectorXd kp = kernel.pack();
    const PreparedKernel<double> pk = prepare_kernel(kernel, kp.data());
    const RowMat z = latent.inducing;

    PsiStats out;
    out.psi1 = Eigen::MatrixXd::Zero(n, m);
    out.psi2 = Eigen::MatrixXd::Zero(m, m);

    PointSet base;
    if (scheme.deterministic()) base = unit_points(scheme, d);

    Eigen::VectorXd s(d), kappa(m);
    std::int64_t per_point = 0;
    for (int i = 0; i < n; ++i) {
        const PointSet& unit =
            scheme.deterministic() ? base : (base = unit_points(per_point_tag(scheme, i), d));
        per_point = unit.eval_count;
        const Eigen::ArrayXd sd = latent.var.row(i).transpose().array().sqrt();
        for (Eigen::Index k = 0; k < unit.points.rows(); ++k) {
            s = latent.mean.row(i).transpose().array() + sd * unit.points.row(k).transpose().array();
            for (int j = 0; j < m; ++j) kappa[j] = eval_prepared(pk, s.data(), z.row(j).data());
            const double w = unit.weights[k];
            out.psi0 += w * eval_prepared(pk, s.data(), s.data());
            out.psi1.row(i) += w * kappa.transpose();
            if (include_psi2) out.psi2.noalias() += w * kappa * kappa.transpose();
        }
    }
    out.psi2 = (0.5 * (out.psi2 + out.psi2.transpose())).eval();
    out.total_evals = static_cast<std::int64_t>(n) * per_point;
    return out;
}

PsiStats psi_analytic(const KernelSpec& kernel, const LatentBatch& latent) {
    latent.validate();
    check_kernel_dim(kernel, latent);
    const AnalyticForm form = analytic_form_or_throw(kernel);
    const int n = latent.size();
    const int m = latent.num_inducing();
    const int d = latent.dim();

    const Eigen::VectorXd kp = kernel.pack();
    const AnalyticParams<double> ap = analytic_params(form, kp.data(), d);
    const RowMat z = latent.inducing;
    const RowMat mu = latent.mean;
    const RowMat var = latent.var;

    PsiStats out;
    out.psi1 = Eigen::MatrixXd::Zero(n, m);
    out.psi2 = Eigen::MatrixXd::Zero(m, m);
    std::vector<double> row(static_cast<std::size_t>(m));
    for (int i = 0; i < n; ++i) {
        out.psi0 += analytic_point<double>(
            ap, mu.row(i).data(), var.row(i).data(), z.data(), m, d, row.data(),
            [&](int j, int mm, double v) {
                out.psi2(j, mm) += v;
                if (j != mm) out.psi2(mm, j) += v;
            });
        for (int j = 0; j < m; ++j) out.psi1(i, j) += row[static_cast<std::size_t>(j)];
    }
    out.total_evals = 0;
    return out;
}

PsiStats psi_analytic_rbf(const KernelSpec& kernel, const LatentBatch& latent) {
    if (kernel.kind() != KernelKind::RbfArd) {
        throw WrongKernelKind("psi_analytic_rbf needs rbf_ard, got " + kernel_kind_name(kernel.kind()));
    }
    return psi_analytic(kernel, latent);
}

bool analytic_applicable(const KernelSpec& kernel) {
    try {
        analytic_form_or_throw(kernel);
        return true;
    } catch (const WrongKernelKind&) {
        return false;
    }
}

PsiStats compute_psi(const KernelSpec& kernel, const LatentBatch& latent, const PsiBackend& backend) {
    return backend.analytic ? psi_analytic(kernel, latent)
                            : psi_quadrature(kernel, latent, backend.scheme);
}

PsiErrorReport psi_error_report(const KernelSpec& kernel, const LatentBatch& latent,
                                const SchemeTag& scheme, const PsiStats& reference) {
    const PsiStats got = psi_quadrature(kernel, latent, scheme);
    if (reference.psi1.rows() != got.psi1.rows() || reference.psi1.cols() != got.psi1.cols() ||
        reference.psi2.rows() != got.psi2.rows() || reference.psi2.cols() != got.psi2.cols()) {
        throw DimensionMismatch("psi_error_report: reference shapes do not match");
    }
    PsiErrorReport r;
    r.scheme = scheme;
    r.psi0_abs = std::abs(got.psi0 - reference.psi0);
    r.psi0_rel = r.psi0_abs / std::max(std::abs(reference.psi0), 1e-300);
    const Eigen::MatrixXd d1 = got.psi1 - reference.psi1;
    const Eigen::MatrixXd d2 = got.psi2 - reference.psi2;
    r.psi1_max_abs = d1.cwiseAbs().maxCoeff();
    r.psi2_max_abs = d2.cwiseAbs().maxCoeff();
    r.psi1_rel_fro = d1.norm() / std::max(reference.psi1.norm(), 1e-300);
    r.psi2_rel_fro = d2.norm() / std::max(reference.psi2.norm(), 1e-300);
    r.evals = got.total_evals;
    return r;
}

// ---------------------------------------------------------------------------
// Reverse mode. One short-lived tape per data point keeps memory flat: the
// point's contribution to (psi0, psi1 row i, psi2) is re-traced, seeded with
// the incoming adjoints, and swept. Adjoints accumulate across points.
// ---------------------------------------------------------------------------

namespace {

struct GradSlots {
    std::vector<ad::Var> kp;  // kernel params
    std::vector<ad::Var> mu;  // D
    std::vector<ad::Var> lv;  // D, log variance
    std::vector<ad::Var> z;   // M*D row-major
    std::vector<ad::Var> var;  // exp(lv)
};

GradSlots make_slots(ad::Tape& tape, const Eigen::VectorXd& kp, const LatentBatch& latent, int i) {
    GradSlots s;
    const int d = latent.dim();
    const int m = latent.num_inducing();
    s.kp.reserve(static_cast<std::size_t>(kp.size()));
    for (Eigen::Index p = 0; p < kp.size(); ++p) s.kp.emplace_back(tape, kp[p]);
    s.mu.reserve(static_cast<std::size_t>(d));
    s.lv.reserve(static_cast<std::size_t>(d));
    s.var.reserve(static_cast<std::size_t>(d));
    for (int q = 0; q < d; ++q) {
        s.mu.emplace_back(tape, latent.mean(i, q));
        s.lv.emplace_back(tape, std::log(latent.var(i, q)));
    }
    for (int q = 0; q < d; ++q) s.var.push_back(ad::exp(s.lv[static_cast<std::size_t>(q)]));
    s.z.reserve(static_cast<std::size_t>(m * d));
    for (int j = 0; j < m; ++j) {
        for (int q = 0; q < d; ++q) s.z.emplace_back(tape, latent.inducing(j, q));
    }
    return s;
}

void harvest(const ad::Tape& tape, const GradSlots& s, int i, PsiGradient& g) {
    for (std::size_t p = 0; p < s.kp.size(); ++p) {
        g.kernel[static_cast<Eigen::Index>(p)] += tape.adjoint(s.kp[p].id);
    }
    const int d = static_cast<int>(s.mu.size());
    for (int q = 0; q < d; ++q) {
        g.q_mean(i, q) += tape.adjoint(s.mu[static_cast<std::size_t>(q)].id);
        g.q_log_var(i, q) += tape.adjoint(s.lv[static_cast<std::size_t>(q)].id);
    }
    const int m = static_cast<int>(s.z.size()) / d;
    for (int j = 0; j < m; ++j) {
        for (int q = 0; q < d; ++q) {
            g.inducing(j, q) += tape.adjoint(s.z[static_cast<std::size_t>(j * d + q)].id);
        }
    }
}

PsiGradient zero_gradient(const KernelSpec& kernel, const LatentBatch& latent) {
    PsiGradient g;
    g.kernel = Eigen::VectorXd::Zero(kernel.param_count());
    g.q_mean = Eigen::MatrixXd::Zero(latent.size(), latent.dim());
    g.q_log_var = Eigen::MatrixXd::Zero(latent.size(), latent.dim());
    g.inducing = Eigen::MatrixXd::Zero(latent.num_inducing(), latent.dim());
    return g;
}

void check_adjoint_shapes(const LatentBatch& latent, const PsiAdjoints& bar) {
    if (bar.psi1_bar.rows() != latent.size() || bar.psi1_bar.cols() != latent.num_inducing() ||
        bar.psi2_bar.rows() != latent.num_inducing() || bar.psi2_bar.cols() != latent.num_inducing()) {
        throw DimensionMismatch("psi_backward: adjoint shapes do not match latent batch");
    }
}

PsiGradient quadrature_backward(const KernelSpec& kernel, const LatentBatch& latent,
                                const SchemeTag& scheme, const PsiAdjoints& bar) {
    const int n = latent.size();
    const int m = latent.num_inducing();
    const int d = latent.dim();
    const Eigen::VectorXd kp = kernel.pack();
    // d(psi2)/d(kappa_j) at a point uses the symmetrized adjoint bar + bar^T
    const Eigen::MatrixXd s_sym = bar.psi2_bar + bar.psi2_bar.transpose();

    PsiGradient g = zero_gradient(kernel, latent);
    PointSet base;
    if (scheme.deterministic()) base = unit_points(scheme, d);

    ad::Tape tape;
    std::vector<ad::Var> kappa;
    std::vector<std::pair<std::int32_t, double>> seeds;
    std::vector<ad::Var> s(static_cast<std::size_t>(d), ad::Var{});
    for (int i = 0; i < n; ++i) {
        tape.reset();
        const GradSlots slots = make_slots(tape, kp, latent, i);
        const PreparedKernel<ad::Var> pk = prepare_kernel(kernel, slots.kp.data());
        const PointSet& unit =
            scheme.deterministic() ? base : (base = unit_points(per_point_tag(scheme, i), d));

        seeds.clear();
        for (Eigen::Index k = 0; k < unit.points.rows(); ++k) {
            const double w = unit.weights[k];
            for (int q = 0; q < d; ++q) {
                s[static_cast<std::size_t>(q)] =
                    slots.mu[static_cast<std::size_t>(q)] +
                    ad::sqrt(slots.var[static_cast<std::size_t>(q)]) * unit.points(k, q);
            }
            kappa.clear();
            for (int j = 0; j < m; ++j) {
                kappa.push_back(eval_prepared(pk, s.data(), slots.z.data() + j * d));
            }
            const ad::Var kss = eval_prepared(pk, s.data(), s.data());
            for (int j = 0; j < m; ++j) {
                double sk = 0.0;
                for (int mm = 0; mm < m; ++mm) sk += s_sym(j, mm) * kappa[static_cast<std::size_t>(mm)].v;
                seeds.emplace_back(kappa[static_cast<std::size_t>(j)].id, w * (bar.psi1_bar(i, j) + sk));
            }
            seeds.emplace_back(kss.id, w * bar.psi0_bar);
        }
        tape.backward(seeds);
        harvest(tape, slots, i, g);
    }
    return g;
}

PsiGradient analytic_backward(const KernelSpec& kernel, const LatentBatch& latent,
                              const PsiAdjoints& bar) {
    const AnalyticForm form = analytic_form_or_throw(kernel);
    const int n = latent.size();
    const int m = latent.num_inducing();
    const int d = latent.dim();
    const Eigen::VectorXd kp = kernel.pack();

    PsiGradient g = zero_gradient(kernel, latent);
    ad::Tape tape;
    std::vector<ad::Var> row(static_cast<std::size_t>(m), ad::Var{});
    std::vector<std::pair<std::int32_t, double>> seeds;
    for (int i = 0; i < n; ++i) {
        tape.reset();
        const GradSlots slots = make_slots(tape, kp, latent, i);
        const AnalyticParams<ad::Var> ap = analytic_params(form, slots.kp.data(), d);
        seeds.clear();
        const ad::Var psi0_i = analytic_point<ad::Var>(
            ap, slots.mu.data(), slots.var.data(), slots.z.data(), m, d, row.data(),
            [&](int j, int mm, const ad::Var& v) {
                const double w = j == mm ? bar.psi2_bar(j, j) : bar.psi2_bar(j, mm) + bar.psi2_bar(mm, j);
                seeds.emplace_back(v.id, w);
            });
        for (int j = 0; j < m; ++j) {
            seeds.emplace_back(row[static_cast<std::size_t>(j)].id, bar.psi1_bar(i, j));
        }
        seeds.emplace_back(psi0_i.id, bar.psi0_bar);
        tape.backward(seeds);
        harvest(tape, slots, i, g);
    }
    return g;
}

}  // namespace

PsiGradient psi_backward(const KernelSpec& kernel, const LatentBatch& latent,
                         const PsiBackend& backend, const PsiAdjoints& bar) {
    latent.validate();
    check_kernel_dim(kernel, latent);
    check_adjoint_shapes(latent, bar);
    return backend.analytic ? analytic_backward(kernel, latent, bar)
                            : quadrature_backward(kernel, latent, backend.scheme, bar);
}

}  // namespace psilvm
