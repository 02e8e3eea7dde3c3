#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <string>
#include <vector>

#include "psilvm/kernels.hpp"
#include "psilvm/psi.hpp"

namespace psilvm {

struct MetricReport {
    std::string name;
    double value = 0.0;
    double dispersion = 0.0;  // std over folds or repeats, >= 0
    int n_units = 0;          // folds/repeats the dispersion is taken over
};

struct PcaResult {
    Eigen::MatrixXd scores;      // N x q, centered, columns by decreasing variance
    Eigen::MatrixXd components;  // D_y x q, orthonormal columns
    Eigen::VectorXd explained;   // q singular values (scaled: score column norms)
};

// Principal component scores of the centered data. Throws DegenerateData when
// the data has no variance at all.
PcaResult pca_project(const Eigen::MatrixXd& y, int q);

// Indices of the k most relevant dimensions by descending inverse lengthscale
// (ties broken toward the lower index). For a sum kernel the first child with
// per-dimension lengthscales decides. Throws NoArdKernel when none exists.
std::vector<int> select_ard_dims(const KernelSpec& kernel, int k);

// Stratified k-fold cross-validated k-NN accuracy (Euclidean), mean +- std
// over folds. Folds are dealt per class after a seeded shuffle.
MetricReport knn_cv_accuracy(const Eigen::MatrixXd& x, const std::vector<int>& labels, int folds = 5,
                             int k = 1, std::uint64_t seed = 0);

double rmse(const Eigen::VectorXd& y, const Eigen::VectorXd& mu);

// Average negative log predictive density under per-point Gaussians:
// 0.5 log 2 pi + (1 / 2n) sum [log var + (y - mu)^2 / var].
double nlpd(const Eigen::VectorXd& y, const Eigen::VectorXd& mu, const Eigen::VectorXd& var);

struct BenchRow {
    PsiBackend backend;
    int dim = 0;
    std::int64_t eval_count = 0;  // per-point budget (0 for analytic)
    double wall_time = 0.0;       // seconds per psi evaluation, median over repeats
    double relative_time_vs_ut = 0.0;
    bool capped = false;  // gh budget exceeded the cap; row reported, not run
};

// Times psi computation (psi1 only by default, matching the cost figure the
// schemes are compared on) over random N x dim batches. Rows run sequentially;
// each timing sample loops the computation until it spans at least ~20 ms so
// the clock resolution stays irrelevant.
std::vector<BenchRow> bench_psi(const std::vector<int>& dims, const std::vector<PsiBackend>& backends,
                                int n = 40, int m = 20, int repeats = 5, std::uint64_t seed = 0,
                                bool include_psi2 = false);

}  // namespace psilvm
