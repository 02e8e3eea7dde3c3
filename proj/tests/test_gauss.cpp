#include "doctest.h"
#include "psilvm/gauss.hpp"
#include "psilvm/util.hpp"

#include <cmath>

using namespace psilvm;

namespace {

Eigen::MatrixXd random_spd(int n, std::uint64_t seed, double diag_boost = 0.0) {
    Eigen::MatrixXd b(n, n);
    std::uint64_t ctr = 0;
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) b(i, j) = counter_normal(seed, ctr++);
    }
    Eigen::MatrixXd a = b * b.transpose();
    a.diagonal().array() += diag_boost + 1e-3;
    return a;
}

}  // namespace

TEST_CASE("cholesky of identity is identity") {
    const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(3, 3);
    const CholFactor f = cholesky(eye);
    CHECK((f.lower - eye).norm() == doctest::Approx(0.0).epsilon(1e-14));
}

TEST_CASE("cholesky of diagonal takes square roots") {
    Eigen::MatrixXd m(2, 2);
    m << 4.0, 0.0, 0.0, 9.0;
    const CholFactor f = cholesky(m);
    CHECK(f.lower(0, 0) == doctest::Approx(2.0));
    CHECK(f.lower(1, 1) == doctest::Approx(3.0));
    CHECK(f.lower(0, 1) == 0.0);
    CHECK(f.lower(1, 0) == 0.0);
}

TEST_CASE("cholesky reconstructs random SPD matrices") {
    for (std::uint64_t seed : {1u, 2u, 3u, 4u}) {
        const Eigen::MatrixXd a = random_spd(5, seed);
        const CholFactor f = cholesky(a);
        const double rel = (f.lower * f.lower.transpose() - a).norm() / a.norm();
        CHECK(rel < 1e-10);
        CHECK(f.lower.diagonal().minCoeff() > 0.0);
        // strictly lower-triangular above the diagonal
        for (int i = 0; i < 5; ++i) {
            for (int j = i + 1; j < 5; ++j) CHECK(f.lower(i, j) == 0.0);
        }
    }
}

TEST_CASE("cholesky rejects indefinite and singular input") {
    Eigen::MatrixXd indef(2, 2);
    indef << 1.0, 2.0, 2.0, 1.0;
    CHECK_THROWS_AS(cholesky(indef), NotPositiveDefinite);

    Eigen::MatrixXd sing = Eigen::MatrixXd::Ones(3, 3);
    CHECK_THROWS_AS(cholesky(sing), NotPositiveDefinite);

    Eigen::MatrixXd asym(2, 2);
    asym << 1.0, 0.5, -0.5, 1.0;
    CHECK_THROWS_AS(cholesky(asym), NotPositiveDefinite);
}

TEST_CASE("kl_diag_to_standard closed-form values") {
    DiagGaussian q;
    q.mean = Eigen::VectorXd::Zero(3);
    q.var = Eigen::VectorXd::Ones(3);
    CHECK(kl_diag_to_standard(q) == doctest::Approx(0.0).epsilon(1e-14));

    q.mean = Eigen::VectorXd::Ones(1);
    q.var = Eigen::VectorXd::Ones(1);
    CHECK(kl_diag_to_standard(q) == doctest::Approx(0.5));

    q.mean = Eigen::VectorXd::Zero(1);
    q.var = Eigen::VectorXd::Constant(1, 2.0);
    CHECK(kl_diag_to_standard(q) == doctest::Approx(0.5 * (2.0 - std::log(2.0) - 1.0)));
}

TEST_CASE("kl_diag_to_standard is permutation-invariant and additive") {
    DiagGaussian q;
    q.mean = Eigen::VectorXd(3);
    q.mean << 0.3, -1.2, 0.7;
    q.var = Eigen::VectorXd(3);
    q.var << 0.5, 2.0, 1.3;

    DiagGaussian perm;
    perm.mean = Eigen::VectorXd(3);
    perm.mean << 0.7, 0.3, -1.2;
    perm.var = Eigen::VectorXd(3);
    perm.var << 1.3, 0.5, 2.0;
    CHECK(kl_diag_to_standard(q) == doctest::Approx(kl_diag_to_standard(perm)).epsilon(1e-14));

    double sum = 0.0;
    for (int d = 0; d < 3; ++d) {
        DiagGaussian one;
        one.mean = q.mean.segment(d, 1);
        one.var = q.var.segment(d, 1);
        sum += kl_diag_to_standard(one);
    }
    CHECK(kl_diag_to_standard(q) == doctest::Approx(sum).epsilon(1e-13));
    CHECK(kl_diag_to_standard(q) >= 0.0);
}

TEST_CASE("diag gaussian validation rejects nonpositive variances") {
    DiagGaussian q;
    q.mean = Eigen::VectorXd::Zero(2);
    q.var = Eigen::VectorXd::Ones(2);
    q.var[1] = 0.0;
    CHECK_THROWS_AS(q.validate(), NonPositiveVariance);
    q.var[1] = -1.0;
    CHECK_THROWS_AS(q.validate(), NonPositiveVariance);
}

TEST_CASE("solve_psd identity and diagonal cases") {
    const CholFactor eye = cholesky(Eigen::MatrixXd::Identity(3, 3));
    Eigen::MatrixXd b(3, 2);
    b << 1, 2, 3, 4, 5, 6;
    CHECK((solve_psd(eye, b) - b).norm() < 1e-14);

    const CholFactor d4 = cholesky(Eigen::MatrixXd::Constant(1, 1, 4.0));
    Eigen::MatrixXd rhs(1, 1);
    rhs << 2.0;
    CHECK(solve_psd(d4, rhs)(0, 0) == doctest::Approx(0.5));
}

TEST_CASE("solve_psd matches explicit inverse on random systems") {
    const Eigen::MatrixXd a = random_spd(4, 9);
    const CholFactor f = cholesky(a);
    Eigen::MatrixXd b(4, 3);
    std::uint64_t ctr = 0;
    for (int i = 0; i < 4; ++i) {
        for (int j = 0; j < 3; ++j) b(i, j) = counter_normal(11, ctr++);
    }
    const Eigen::MatrixXd x = solve_psd(f, b);
    const Eigen::MatrixXd oracle = a.inverse() * b;
    CHECK((x - oracle).norm() / oracle.norm() < 1e-8);
    CHECK((a * x - b).norm() / b.norm() < 1e-8);
}

TEST_CASE("solve_psd rejects mismatched dimensions") {
    const CholFactor f = cholesky(Eigen::MatrixXd::Identity(3, 3));
    CHECK_THROWS_AS(solve_psd(f, Eigen::MatrixXd::Ones(2, 2)), DimensionMismatch);
}

TEST_CASE("log_det via cholesky diagonal") {
    Eigen::MatrixXd m(2, 2);
    m << 4.0, 0.0, 0.0, 9.0;
    CHECK(log_det(cholesky(m)) == doctest::Approx(std::log(36.0)));

    const Eigen::MatrixXd a = random_spd(5, 21);
    CHECK(log_det(cholesky(a)) == doctest::Approx(std::log(a.determinant())).epsilon(1e-9));
}
