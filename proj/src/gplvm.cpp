#include "psilvm/gplvm.hpp"

#include "taped_chol.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "json.hpp"
#include "psilvm/evalkit.hpp"
#include "psilvm/util.hpp"

namespace psilvm {

namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

double kl_of_batch(const LatentBatch& latent) {
    const auto& mu = latent.mean.array();
    const auto& s2 = latent.var.array();
    return 0.5 * (mu.square() + s2 - s2.log() - 1.0).sum();
}

// Everything the collapsed bound needs from the double-precision path. The
// jitter coefficient actually used is recorded so the taped recomputation can
// take the same branch.
struct BoundCore {
    PsiStats psi;
    MatrixXd K;  // jittered inducing covariance
    Eigen::LLT<MatrixXd> lltK, lltA;
    MatrixXd C;  // Psi1^T Y, M x D_y
    MatrixXd G;  // A^-1 C
    double beta = 0.0;
    double jitter_coef = 1e-6;
    ElboParts parts;
};

BoundCore bound_core(const GplvmModel& m) {
    m.validate();
    BoundCore bc;
    bc.psi = compute_psi(m.kernel, m.latent, m.backend);

    const int N = m.latent.size();
    const int M = m.latent.num_inducing();
    const int Dy = m.data_dim();

    const MatrixXd Kz = gram(m.kernel, m.latent.inducing, m.latent.inducing);
    const double md = Kz.diagonal().mean();
    double coef = 1e-6;
    bc.K = Kz + coef * md * MatrixXd::Identity(M, M);
    bc.lltK.compute(bc.K);
    if (bc.lltK.info() != Eigen::Success) {
        coef = 1e-5;
        bc.K = Kz + coef * md * MatrixXd::Identity(M, M);
        bc.lltK.compute(bc.K);
        if (bc.lltK.info() != Eigen::Success) {
            throw NotPositiveDefinite(
                "inducing covariance failed Cholesky after jitter retry (degenerate inducing set?)");
        }
    }
    bc.jitter_coef = coef;

    bc.beta = 1.0 / m.noise_var;
    const MatrixXd A = bc.K + bc.beta * bc.psi.psi2;
    bc.lltA.compute(A);
    if (bc.lltA.info() != Eigen::Success) {
        throw NotPositiveDefinite("collapsed-bound matrix Kz + psi2/noise_var is not positive definite");
    }

    bc.C = bc.psi.psi1.transpose() * m.Y;
    bc.G = bc.lltA.solve(bc.C);

    const double logdet_k = 2.0 * bc.lltK.matrixLLT().diagonal().array().log().sum();
    const double logdet_a = 2.0 * bc.lltA.matrixLLT().diagonal().array().log().sum();
    const double quad = (bc.C.array() * bc.G.array()).sum();
    const double tr_kinv_psi2 = bc.lltK.solve(bc.psi.psi2).trace();

    bc.parts.fit_term = Dy * (-0.5 * N * std::log(2.0 * M_PI) - 0.5 * N * std::log(m.noise_var)) +
                        0.5 * Dy * (logdet_k - logdet_a) - 0.5 * bc.beta * m.Y.squaredNorm() +
                        0.5 * bc.beta * bc.beta * quad;
    bc.parts.trace_term = 0.5 * Dy * bc.beta * (bc.psi.psi0 - tr_kinv_psi2);
    bc.parts.kl_term = kl_of_batch(m.latent);
    if (!std::isfinite(bc.parts.fit_term) || !std::isfinite(bc.parts.trace_term) ||
        !std::isfinite(bc.parts.kl_term)) {
        throw NotPositiveDefinite("collapsed bound is not finite (degenerate factorization)");
    }
    return bc;
}

// ---------------------------------------------------------------------------
// Taped dense linear algebra on row-major Var matrices. Sizes here are the
// number of inducing points, so cubic costs stay small.
// ---------------------------------------------------------------------------

nlohmann::json mat_to_json(const MatrixXd& m) {
    nlohmann::json rows = nlohmann::json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        nlohmann::json row = nlohmann::json::array();
        for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
        rows.push_back(std::move(row));
    }
    return rows;
}

MatrixXd mat_from_json(const nlohmann::json& j, const std::string& what) {
    if (!j.is_array()) throw InvalidInput("model json: " + what + " must be an array of rows");
    const Eigen::Index rows = static_cast<Eigen::Index>(j.size());
    Eigen::Index cols = 0;
    if (rows > 0) cols = static_cast<Eigen::Index>(j[0].size());
    MatrixXd m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i) {
        if (static_cast<Eigen::Index>(j[static_cast<std::size_t>(i)].size()) != cols) {
            throw InvalidInput("model json: ragged rows in " + what);
        }
        for (Eigen::Index c = 0; c < cols; ++c) {
            m(i, c) = j[static_cast<std::size_t>(i)][static_cast<std::size_t>(c)].get<double>();
        }
    }
    return m;
}

}  // namespace

void GplvmModel::validate() const {
    latent.validate();
    if (!(noise_var > 0.0) || !std::isfinite(noise_var)) {
        throw InvalidInput("gplvm: noise variance must be positive and finite");
    }
    if (kernel.input_dim() != latent.dim()) {
        throw DimensionMismatch("gplvm: kernel input_dim does not match the latent dimension");
    }
    if (Y.cols() > 0 && Y.rows() != latent.mean.rows()) {
        throw DimensionMismatch("gplvm: Y rows do not match the number of latent points");
    }
    if (Y.size() > 0 && !Y.allFinite()) throw InvalidInput("gplvm: Y has non-finite entries");
    if (latent.num_inducing() > latent.size()) {
        log_warn("gplvm: more inducing points than data points (M > N)");
    }
}

int packed_size(const GplvmModel& m) {
    const int nd = m.latent.size() * m.latent.dim();
    return m.kernel.param_count() + 1 + 2 * nd + m.latent.num_inducing() * m.latent.dim();
}

Eigen::VectorXd pack_model(const GplvmModel& m) {
    const int nkp = m.kernel.param_count();
    const int n = m.latent.size(), d = m.latent.dim(), mi = m.latent.num_inducing();
    VectorXd p(packed_size(m));
    p.segment(0, nkp) = m.kernel.pack();
    p[nkp] = std::log(m.noise_var);
    int off = nkp + 1;
    Eigen::Map<RowMat>(p.data() + off, n, d) = m.latent.mean;
    off += n * d;
    Eigen::Map<RowMat>(p.data() + off, n, d) = m.latent.var.array().log();
    off += n * d;
    Eigen::Map<RowMat>(p.data() + off, mi, d) = m.latent.inducing;
    return p;
}

void unpack_model(GplvmModel& m, const Eigen::VectorXd& p) {
    const int nkp = m.kernel.param_count();
    const int n = m.latent.size(), d = m.latent.dim(), mi = m.latent.num_inducing();
    if (p.size() != packed_size(m)) throw DimensionMismatch("unpack_model: wrong packed length");
    m.kernel.set_params(p.segment(0, nkp));
    m.noise_var = std::exp(p[nkp]);
    int off = nkp + 1;
    m.latent.mean = Eigen::Map<const RowMat>(p.data() + off, n, d);
    off += n * d;
    m.latent.var = Eigen::Map<const RowMat>(p.data() + off, n, d).array().exp();
    off += n * d;
    m.latent.inducing = Eigen::Map<const RowMat>(p.data() + off, mi, d);
}

ElboParts elbo(const GplvmModel& m) {
    if (m.data_dim() == 0) {
        m.validate();
        ElboParts parts;
        parts.kl_term = kl_of_batch(m.latent);
        return parts;
    }
    return bound_core(m).parts;
}

ElboParts elbo_with_gradient(const GplvmModel& m, Eigen::VectorXd& grad) {
    const int nkp = m.kernel.param_count();
    const int n = m.latent.size(), d = m.latent.dim(), mi = m.latent.num_inducing();
    const int dy = m.data_dim();
    grad.setZero(packed_size(m));

    // KL part in closed form; its gradient never needs the tape.
    auto add_kl_gradient = [&] {
        int off = nkp + 1;
        Eigen::Map<RowMat>(grad.data() + off, n, d) -= m.latent.mean;
        off += n * d;
        Eigen::Map<RowMat>(grad.data() + off, n, d) -= (0.5 * (m.latent.var.array() - 1.0)).matrix();
    };

    if (dy == 0) {
        m.validate();
        ElboParts parts;
        parts.kl_term = kl_of_batch(m.latent);
        add_kl_gradient();
        return parts;
    }

    BoundCore bc = bound_core(m);

    // Stage 2: rebuild fit - trace on a tape whose leaves are the kernel
    // parameters, log noise variance, inducing inputs, and the psi statistics
    // (psi1 enters only through C = Psi1^T Y, so C's entries stand in for it;
    // the constant Jacobian Y maps the C adjoints back to psi1 adjoints).
    ad::Tape tape;
    const VectorXd kp_vals = m.kernel.pack();
    std::vector<ad::Var> kp(static_cast<std::size_t>(nkp));
    for (int i = 0; i < nkp; ++i) kp[static_cast<std::size_t>(i)] = ad::Var(tape, kp_vals[i]);
    ad::Var lsn(tape, std::log(m.noise_var));
    std::vector<ad::Var> z(static_cast<std::size_t>(mi * d));
    for (int j = 0; j < mi; ++j) {
        for (int q = 0; q < d; ++q) {
            z[static_cast<std::size_t>(j * d + q)] = ad::Var(tape, m.latent.inducing(j, q));
        }
    }
    ad::Var psi0_leaf(tape, bc.psi.psi0);
    std::vector<ad::Var> c_leaf(static_cast<std::size_t>(mi * dy));
    for (int j = 0; j < mi; ++j) {
        for (int c = 0; c < dy; ++c) {
            c_leaf[static_cast<std::size_t>(j * dy + c)] = ad::Var(tape, bc.C(j, c));
        }
    }
    std::vector<ad::Var> psi2_leaf(static_cast<std::size_t>(mi * mi));
    for (int j = 0; j < mi; ++j) {
        for (int c = 0; c < mi; ++c) {
            psi2_leaf[static_cast<std::size_t>(j * mi + c)] = ad::Var(tape, bc.psi.psi2(j, c));
        }
    }

    const PreparedKernel<ad::Var> pk = prepare_kernel(m.kernel, kp.data());
    std::vector<ad::Var> kz(static_cast<std::size_t>(mi * mi));
    for (int j = 0; j < mi; ++j) {
        for (int c = 0; c <= j; ++c) {
            kz[static_cast<std::size_t>(j * mi + c)] =
                eval_prepared(pk, &z[static_cast<std::size_t>(j * d)], &z[static_cast<std::size_t>(c * d)]);
        }
    }
    ad::Var diag_sum = kz[0];
    for (int j = 1; j < mi; ++j) diag_sum += kz[static_cast<std::size_t>(j * mi + j)];
    const ad::Var jit = diag_sum * (bc.jitter_coef / mi);
    for (int j = 0; j < mi; ++j) {
        kz[static_cast<std::size_t>(j * mi + j)] += jit;
    }
    const ad::Var beta = exp(-lsn);

    // A = Kz + beta Psi2, lower triangle only (the factorizations read no more).
    std::vector<ad::Var> a_mat(static_cast<std::size_t>(mi * mi));
    for (int j = 0; j < mi; ++j) {
        for (int c = 0; c <= j; ++c) {
            a_mat[static_cast<std::size_t>(j * mi + c)] =
                kz[static_cast<std::size_t>(j * mi + c)] + beta * psi2_leaf[static_cast<std::size_t>(j * mi + c)];
        }
    }
    std::vector<ad::Var> lk = kz;
    detail::chol_lower(lk, mi);
    std::vector<ad::Var> la = a_mat;
    detail::chol_lower(la, mi);

    ad::Var logdet_k = log(lk[0]);
    ad::Var logdet_a = log(la[0]);
    for (int j = 1; j < mi; ++j) {
        logdet_k += log(lk[static_cast<std::size_t>(j * mi + j)]);
        logdet_a += log(la[static_cast<std::size_t>(j * mi + j)]);
    }
    logdet_k *= 2.0;
    logdet_a *= 2.0;

    std::vector<ad::Var> g_mat = c_leaf;
    detail::solve_lower_inplace(la, mi, g_mat, dy);
    detail::solve_lower_transpose_inplace(la, mi, g_mat, dy);
    ad::Var quad = c_leaf[0] * g_mat[0];
    for (std::size_t i = 1; i < c_leaf.size(); ++i) quad += c_leaf[i] * g_mat[i];

    std::vector<ad::Var> v_mat = psi2_leaf;
    detail::solve_lower_inplace(lk, mi, v_mat, mi);
    detail::solve_lower_transpose_inplace(lk, mi, v_mat, mi);
    ad::Var tr_kinv_psi2 = v_mat[0];
    for (int j = 1; j < mi; ++j) tr_kinv_psi2 += v_mat[static_cast<std::size_t>(j * mi + j)];

    const double c0 = -0.5 * n * dy * std::log(2.0 * M_PI);
    ad::Var fit = lsn * (-0.5 * n * dy) + (logdet_k - logdet_a) * (0.5 * dy) +
                  beta * (-0.5 * m.Y.squaredNorm()) + quad * beta * beta * 0.5 + c0;
    ad::Var trace_t = beta * (psi0_leaf - tr_kinv_psi2) * (0.5 * dy);
    ad::Var core = fit - trace_t;
    tape.backward({{core.id, 1.0}});

    for (int i = 0; i < nkp; ++i) grad[i] = tape.adjoint(kp[static_cast<std::size_t>(i)].id);
    grad[nkp] = tape.adjoint(lsn.id);
    {
        const int off = nkp + 1 + 2 * n * d;
        for (int j = 0; j < mi; ++j) {
            for (int q = 0; q < d; ++q) {
                grad[off + j * d + q] = tape.adjoint(z[static_cast<std::size_t>(j * d + q)].id);
            }
        }
    }

    PsiAdjoints bar;
    bar.psi0_bar = tape.adjoint(psi0_leaf.id);
    MatrixXd c_bar(mi, dy);
    for (int j = 0; j < mi; ++j) {
        for (int c = 0; c < dy; ++c) {
            c_bar(j, c) = tape.adjoint(c_leaf[static_cast<std::size_t>(j * dy + c)].id);
        }
    }
    bar.psi1_bar = m.Y * c_bar.transpose();
    bar.psi2_bar.resize(mi, mi);
    for (int j = 0; j < mi; ++j) {
        for (int c = 0; c < mi; ++c) {
            bar.psi2_bar(j, c) = tape.adjoint(psi2_leaf[static_cast<std::size_t>(j * mi + c)].id);
        }
    }

    const PsiGradient pg = psi_backward(m.kernel, m.latent, m.backend, bar);
    grad.segment(0, nkp) += pg.kernel;
    int off = nkp + 1;
    Eigen::Map<RowMat>(grad.data() + off, n, d) += pg.q_mean;
    off += n * d;
    Eigen::Map<RowMat>(grad.data() + off, n, d) += pg.q_log_var;
    off += n * d;
    Eigen::Map<RowMat>(grad.data() + off, mi, d) += pg.inducing;

    add_kl_gradient();
    return bc.parts;
}

Eigen::VectorXd elbo_gradient(const GplvmModel& m) {
    VectorXd g;
    elbo_with_gradient(m, g);
    return g;
}

FitResult fit(const GplvmModel& m, const OptimizerConfig& opt, std::uint64_t seed) {
    m.validate();
    const bool mc = !m.backend.analytic && m.backend.scheme.kind == SchemeKind::MonteCarlo;
    if (mc && opt.kind == OptimizerKind::Lbfgs) {
        throw InvalidConfig("fit: the mc scheme is stochastic and must use adam, not lbfgs");
    }

    GplvmModel work = m;
    std::uint64_t draw = 0;
    const Objective objective = [&](const VectorXd& x, VectorXd& g) -> double {
        unpack_model(work, x);
        if (mc) {
            work.backend.scheme.mc_seed =
                hash_combine(hash_combine(m.backend.scheme.mc_seed, seed), draw++);
        }
        try {
            const ElboParts parts = elbo_with_gradient(work, g);
            g = -g;
            return -parts.elbo();
        } catch (const NotPositiveDefinite&) {
            g.setZero(x.size());
            return std::numeric_limits<double>::quiet_NaN();
        } catch (const InvalidInput&) {
            g.setZero(x.size());
            return std::numeric_limits<double>::quiet_NaN();
        }
    };

    const OptimResult r = minimize(objective, pack_model(m), opt);

    FitResult out;
    out.model = m;
    if (r.x.size() == packed_size(m)) unpack_model(out.model, r.x);
    out.model.backend = m.backend;  // fit never changes the scheme (or its seed)
    out.converged = r.converged;
    out.diverged = r.diverged;
    out.trace = r.trace;
    for (IterRecord& rec : out.trace) rec.value = -rec.value;
    out.initial_elbo = out.trace.empty() ? std::numeric_limits<double>::quiet_NaN() : out.trace.front().value;
    out.final_elbo = out.trace.empty() ? std::numeric_limits<double>::quiet_NaN() : out.trace.back().value;
    return out;
}

GplvmPredictor::GplvmPredictor(const GplvmModel& m) : model_(m) {
    BoundCore bc = bound_core(model_);
    B_ = bc.beta * bc.G;
    const MatrixXd eye = MatrixXd::Identity(model_.latent.num_inducing(), model_.latent.num_inducing());
    posterior_ = bc.lltK.solve(eye) - bc.lltA.solve(eye);
}

namespace {

Eigen::VectorXd floored_var(double raw, int dy, double noise_var) {
    if (raw < noise_var - 1e-10) {
        log_warn("predict: variance " + format_double(raw) + " fell below the noise floor; clamped");
    }
    return VectorXd::Constant(dy, std::max(raw, noise_var));
}

}  // namespace

PredictiveDist GplvmPredictor::certain(const Eigen::VectorXd& xstar) const {
    if (xstar.size() != model_.latent.dim()) {
        throw DimensionMismatch("predict_certain: test point dimension mismatch");
    }
    const MatrixXd kvec = gram(model_.kernel, xstar.transpose(), model_.latent.inducing);  // 1 x M
    const double kss = kernel_eval(model_.kernel, xstar, xstar);
    PredictiveDist out;
    out.mean = (kvec * B_).transpose();
    const double raw = kss - (kvec * posterior_ * kvec.transpose())(0, 0) + model_.noise_var;
    out.var = floored_var(raw, model_.data_dim(), model_.noise_var);
    return out;
}

PredictiveDist GplvmPredictor::uncertain(const DiagGaussian& qstar, std::int64_t* evals_out) const {
    qstar.validate();
    if (qstar.dim() != model_.latent.dim()) {
        throw DimensionMismatch("predict_uncertain: test distribution dimension mismatch");
    }
    LatentBatch star;
    star.mean = qstar.mean.transpose();
    star.var = qstar.var.transpose();
    star.inducing = model_.latent.inducing;
    const PsiStats ps = compute_psi(model_.kernel, star, model_.backend);
    if (evals_out) *evals_out = ps.total_evals;

    PredictiveDist out;
    out.mean = (ps.psi1 * B_).transpose();  // psi1 is 1 x M here
    const double common = ps.psi0 - (posterior_.array() * ps.psi2.array()).sum() + model_.noise_var;
    const MatrixXd tmp = ps.psi2 * B_;
    out.var.resize(model_.data_dim());
    for (int c = 0; c < model_.data_dim(); ++c) {
        const double raw = B_.col(c).dot(tmp.col(c)) - out.mean[c] * out.mean[c] + common;
        out.var[c] = floored_var(raw, 1, model_.noise_var)[0];
    }
    return out;
}

PredictiveDist predict_certain(const GplvmModel& m, const Eigen::VectorXd& xstar) {
    return GplvmPredictor(m).certain(xstar);
}

PredictiveDist predict_uncertain(const GplvmModel& m, const DiagGaussian& qstar) {
    return GplvmPredictor(m).uncertain(qstar);
}

GplvmModel init_gplvm(const Eigen::MatrixXd& Y, int q, int m, const KernelSpec& kernel,
                      const PsiBackend& backend, double init_latent_var, std::uint64_t seed) {
    if (q < 1 || m < 1) throw InvalidConfig("init_gplvm: latent dimension and inducing count must be positive");
    if (m > static_cast<int>(Y.rows())) throw InvalidConfig("init_gplvm: more inducing points than data rows");
    if (!(init_latent_var > 0.0)) throw InvalidConfig("init_gplvm: initial latent variance must be positive");

    const PcaResult pca = pca_project(Y, q);
    MatrixXd means = pca.scores;
    // Unit-variance latent start keeps the standard-normal prior and the
    // default unit lengthscales on the same scale as the data.
    for (int c = 0; c < q; ++c) {
        const double sd = std::sqrt(means.col(c).squaredNorm() / means.rows());
        if (sd > 1e-12) means.col(c) /= sd;
    }

    GplvmModel model;
    model.kernel = kernel;
    model.backend = backend;
    model.Y = Y;
    model.latent.mean = means;
    model.latent.var = MatrixXd::Constant(Y.rows(), q, init_latent_var);

    std::vector<int> idx(static_cast<std::size_t>(Y.rows()));
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(i);
    deterministic_shuffle(idx, seed);
    model.latent.inducing.resize(m, q);
    for (int j = 0; j < m; ++j) model.latent.inducing.row(j) = means.row(idx[static_cast<std::size_t>(j)]);

    const Eigen::RowVectorXd col_mean = Y.colwise().mean();
    const double total_var = (Y.rowwise() - col_mean).squaredNorm() / std::max<double>(1, Y.size());
    model.noise_var = std::max(1e-6, 0.1 * total_var);
    return model;
}

std::string model_to_json(const GplvmModel& m) {
    m.validate();
    nlohmann::json doc;
    doc["format"] = "psilvm-model";
    doc["code_version"] = kVersion;
    doc["kernel"]["spec"] = kernel_spec_str(m.kernel);
    const VectorXd kp = m.kernel.pack();
    doc["kernel"]["params"] = std::vector<double>(kp.data(), kp.data() + kp.size());
    doc["noise_var"] = m.noise_var;
    doc["backend"] = m.backend.str();
    doc["latent"]["mean"] = mat_to_json(m.latent.mean);
    doc["latent"]["var"] = mat_to_json(m.latent.var);
    doc["latent"]["inducing"] = mat_to_json(m.latent.inducing);
    doc["y"] = mat_to_json(m.Y);
    doc["content_hash"] = to_hex(fnv1a(doc.dump()));
    return doc.dump(2) + "\n";
}

GplvmModel model_from_json(const std::string& text) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw InvalidInput(std::string("model json: parse failed: ") + e.what());
    }
    try {
        const std::string stored_hash = doc.at("content_hash").get<std::string>();
        nlohmann::json unhashed = doc;
        unhashed.erase("content_hash");
        if (to_hex(fnv1a(unhashed.dump())) != stored_hash) {
            throw InvalidInput("model json: content hash mismatch (file corrupt or edited)");
        }
        GplvmModel m;
        m.kernel = parse_kernel_spec(doc.at("kernel").at("spec").get<std::string>());
        const std::vector<double> kp = doc.at("kernel").at("params").get<std::vector<double>>();
        m.kernel.set_params(Eigen::Map<const VectorXd>(kp.data(), static_cast<Eigen::Index>(kp.size())));
        m.noise_var = doc.at("noise_var").get<double>();
        m.backend = PsiBackend::parse(doc.at("backend").get<std::string>());
        m.latent.mean = mat_from_json(doc.at("latent").at("mean"), "latent.mean");
        m.latent.var = mat_from_json(doc.at("latent").at("var"), "latent.var");
        m.latent.inducing = mat_from_json(doc.at("latent").at("inducing"), "latent.inducing");
        m.Y = mat_from_json(doc.at("y"), "y");
        m.validate();
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw InvalidInput(std::string("model json: ") + e.what());
    }
}

void save_model(const GplvmModel& m, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InvalidInput("save_model: cannot open " + path);
    out << model_to_json(m);
    if (!out) throw InvalidInput("save_model: write failed for " + path);
}

GplvmModel load_model(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InvalidInput("load_model: cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return model_from_json(ss.str());
}

}  // namespace psilvm
