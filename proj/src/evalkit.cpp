#include "psilvm/evalkit.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>

#include "psilvm/errors.hpp"
#include "psilvm/util.hpp"

namespace psilvm {

namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;
using Clock = std::chrono::steady_clock;

}  // namespace

PcaResult pca_project(const Eigen::MatrixXd& y, int q) {
    const int n = static_cast<int>(y.rows());
    const int dy = static_cast<int>(y.cols());
    if (n < 1 || dy < 1) throw InvalidInput("pca_project: empty data");
    if (q < 1 || q > std::min(n, dy)) {
        throw InvalidInput("pca_project: q must lie in [1, min(N, D)]");
    }
    MatrixXd centered = y.rowwise() - y.colwise().mean();
    if (centered.norm() < 1e-14) throw DegenerateData("pca_project: data has zero variance");

    Eigen::BDCSVD<MatrixXd> svd(centered, Eigen::ComputeThinU | Eigen::ComputeThinV);
    PcaResult out;
    out.components = svd.matrixV().leftCols(q);
    // Deterministic orientation: the largest-magnitude loading of each
    // component points up, so repeated runs agree bit for bit.
    for (int c = 0; c < q; ++c) {
        Eigen::Index imax = 0;
        out.components.col(c).cwiseAbs().maxCoeff(&imax);
        if (out.components(imax, c) < 0.0) out.components.col(c) = -out.components.col(c);
    }
    out.scores = centered * out.components;
    out.explained = svd.singularValues().head(q);
    return out;
}

std::vector<int> select_ard_dims(const KernelSpec& kernel, int k) {
    const VectorXd ell = kernel.ard_lengthscales();
    if (k < 1 || k > static_cast<int>(ell.size())) {
        throw InvalidInput("select_ard_dims: k must lie in [1, input_dim]");
    }
    std::vector<int> idx(static_cast<std::size_t>(ell.size()));
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) {
        return 1.0 / ell[a] > 1.0 / ell[b];  // stable sort keeps ties in index order
    });
    idx.resize(static_cast<std::size_t>(k));
    return idx;
}

MetricReport knn_cv_accuracy(const Eigen::MatrixXd& x, const std::vector<int>& labels, int folds,
                             int k, std::uint64_t seed) {
    const int n = static_cast<int>(x.rows());
    if (static_cast<int>(labels.size()) != n) throw LengthMismatch("knn_cv_accuracy: labels/rows differ");
    if (folds < 2) throw InvalidInput("knn_cv_accuracy: need at least 2 folds");
    if (n < folds) throw TooFewSamples("knn_cv_accuracy: fewer samples than folds");
    if (k < 1) throw InvalidInput("knn_cv_accuracy: k must be positive");

    // Stratified folds: shuffle each class separately, deal round robin.
    std::vector<int> fold_of(static_cast<std::size_t>(n), 0);
    {
        std::vector<int> classes = labels;
        std::sort(classes.begin(), classes.end());
        classes.erase(std::unique(classes.begin(), classes.end()), classes.end());
        for (std::size_t ci = 0; ci < classes.size(); ++ci) {
            std::vector<int> members;
            for (int i = 0; i < n; ++i) {
                if (labels[static_cast<std::size_t>(i)] == classes[ci]) members.push_back(i);
            }
            deterministic_shuffle(members, hash_combine(seed, ci));
            for (std::size_t r = 0; r < members.size(); ++r) {
                fold_of[static_cast<std::size_t>(members[r])] = static_cast<int>(r % folds);
            }
        }
    }

    for (int f = 0; f < folds; ++f) {
        if (std::count(fold_of.begin(), fold_of.end(), f) == 0) {
            throw TooFewSamples("knn_cv_accuracy: stratification left fold " + std::to_string(f) +
                                " without test points; reduce folds or add samples");
        }
    }

    std::vector<double> fold_acc(static_cast<std::size_t>(folds), 0.0);
    for (int f = 0; f < folds; ++f) {
        int correct = 0, total = 0;
        for (int i = 0; i < n; ++i) {
            if (fold_of[static_cast<std::size_t>(i)] != f) continue;
            // Gather the k nearest training points (squared Euclidean).
            std::vector<std::pair<double, int>> near;
            for (int j = 0; j < n; ++j) {
                if (fold_of[static_cast<std::size_t>(j)] == f) continue;
                near.emplace_back((x.row(i) - x.row(j)).squaredNorm(), j);
            }
            if (near.empty()) throw TooFewSamples("knn_cv_accuracy: empty training fold");
            const std::size_t kk = std::min<std::size_t>(static_cast<std::size_t>(k), near.size());
            std::partial_sort(near.begin(), near.begin() + static_cast<std::ptrdiff_t>(kk), near.end());
            // Majority vote; ties go to the class of the nearest member.
            int best_label = labels[static_cast<std::size_t>(near[0].second)];
            int best_count = 0;
            for (std::size_t a = 0; a < kk; ++a) {
                const int la = labels[static_cast<std::size_t>(near[a].second)];
                int count = 0;
                for (std::size_t b = 0; b < kk; ++b) {
                    if (labels[static_cast<std::size_t>(near[b].second)] == la) ++count;
                }
                if (count > best_count) {
                    best_count = count;
                    best_label = la;
                }
            }
            correct += best_label == labels[static_cast<std::size_t>(i)] ? 1 : 0;
            ++total;
        }
        fold_acc[static_cast<std::size_t>(f)] = total > 0 ? static_cast<double>(correct) / total : 0.0;
    }

    MetricReport rep;
    rep.name = std::to_string(k) + "nn_cv_accuracy";
    rep.n_units = folds;
    rep.value = std::accumulate(fold_acc.begin(), fold_acc.end(), 0.0) / folds;
    double ss = 0.0;
    for (double a : fold_acc) ss += (a - rep.value) * (a - rep.value);
    rep.dispersion = std::sqrt(ss / folds);
    return rep;
}

double rmse(const Eigen::VectorXd& y, const Eigen::VectorXd& mu) {
    if (y.size() != mu.size()) throw LengthMismatch("rmse: length mismatch");
    if (y.size() == 0) throw InvalidInput("rmse: empty input");
    return std::sqrt((y - mu).squaredNorm() / y.size());
}

double nlpd(const Eigen::VectorXd& y, const Eigen::VectorXd& mu, const Eigen::VectorXd& var) {
    if (y.size() != mu.size() || y.size() != var.size()) throw LengthMismatch("nlpd: length mismatch");
    if (y.size() == 0) throw InvalidInput("nlpd: empty input");
    if ((var.array() <= 0.0).any()) throw NonPositiveVariance("nlpd: nonpositive predictive variance");
    const auto r2 = (y - mu).array().square();
    return 0.5 * std::log(2.0 * M_PI) + 0.5 * (var.array().log() + r2 / var.array()).mean();
}

namespace {

LatentBatch bench_batch(int n, int m, int dim, std::uint64_t seed) {
    LatentBatch b;
    b.mean.resize(n, dim);
    b.var.resize(n, dim);
    b.inducing.resize(m, dim);
    std::uint64_t c = 0;
    for (int i = 0; i < n; ++i) {
        for (int q = 0; q < dim; ++q) {
            b.mean(i, q) = counter_normal(seed, c++);
            b.var(i, q) = 0.1 + 0.2 * counter_uniform(seed, c++);
        }
    }
    for (int j = 0; j < m; ++j) {
        for (int q = 0; q < dim; ++q) b.inducing(j, q) = counter_normal(seed, c++);
    }
    return b;
}

std::int64_t saturating_budget(const PsiBackend& backend, int dim) {
    if (backend.analytic) return 0;
    switch (backend.scheme.kind) {
        case SchemeKind::Unscented:
            return 2 * static_cast<std::int64_t>(dim);
        case SchemeKind::MonteCarlo:
            return backend.scheme.mc_samples;
        case SchemeKind::GaussHermite: {
            std::int64_t total = 1;
            for (int q = 0; q < dim; ++q) {
                if (total > std::numeric_limits<std::int64_t>::max() / backend.scheme.gh_order) {
                    return std::numeric_limits<std::int64_t>::max();
                }
                total *= backend.scheme.gh_order;
            }
            return total;
        }
    }
    return 0;
}

}  // namespace

std::vector<BenchRow> bench_psi(const std::vector<int>& dims, const std::vector<PsiBackend>& backends,
                                int n, int m, int repeats, std::uint64_t seed, bool include_psi2) {
    if (dims.empty() || backends.empty()) throw InvalidInput("bench_psi: empty dims or schemes");
    if (n < 1 || m < 1 || repeats < 1) throw InvalidInput("bench_psi: n, m, repeats must be positive");

    std::vector<BenchRow> rows;
    std::vector<double> ut_time_at_dim(dims.size(), 0.0);

    for (std::size_t di = 0; di < dims.size(); ++di) {
        const int dim = dims[di];
        if (dim < 1) throw InvalidInput("bench_psi: dimensions must be positive");
        const KernelSpec kernel = KernelSpec::rbf(dim);
        const LatentBatch batch = bench_batch(n, m, dim, hash_combine(seed, static_cast<std::uint64_t>(dim)));

        for (const PsiBackend& backend : backends) {
            BenchRow row;
            row.backend = backend;
            row.dim = dim;
            row.eval_count = saturating_budget(backend, dim);
            if (!backend.analytic && backend.scheme.kind == SchemeKind::GaussHermite &&
                row.eval_count > kGhEvalCap) {
                row.capped = true;
                rows.push_back(row);
                continue;
            }

            auto run_once = [&] {
                volatile double sink;
                if (backend.analytic) {
                    sink = psi_analytic(kernel, batch).psi0;
                } else {
                    sink = psi_quadrature(kernel, batch, backend.scheme, include_psi2).psi0;
                }
                (void)sink;
            };

            // Calibrate the inner loop so one timing sample spans >= ~20 ms.
            int loops = 1;
            for (;;) {
                const auto t0 = Clock::now();
                for (int l = 0; l < loops; ++l) run_once();
                const double dt = std::chrono::duration<double>(Clock::now() - t0).count();
                if (dt >= 0.02 || loops >= (1 << 20)) break;
                loops = dt <= 0.0 ? loops * 16
                                  : std::min(1 << 20, std::max(loops + 1, static_cast<int>(loops * 0.022 / dt)));
            }

            std::vector<double> samples(static_cast<std::size_t>(repeats));
            for (int r = 0; r < repeats; ++r) {
                const auto t0 = Clock::now();
                for (int l = 0; l < loops; ++l) run_once();
                samples[static_cast<std::size_t>(r)] =
                    std::chrono::duration<double>(Clock::now() - t0).count() / loops;
            }
            std::sort(samples.begin(), samples.end());
            row.wall_time = samples[samples.size() / 2];

            if (!backend.analytic && backend.scheme.kind == SchemeKind::Unscented) {
                ut_time_at_dim[di] = row.wall_time;
            }
            rows.push_back(row);
        }
    }

    for (BenchRow& row : rows) {
        for (std::size_t di = 0; di < dims.size(); ++di) {
            if (dims[di] == row.dim && ut_time_at_dim[di] > 0.0) {
                row.relative_time_vs_ut = row.capped ? 0.0 : row.wall_time / ut_time_at_dim[di];
            }
        }
    }
    return rows;
}

}  // namespace psilvm
