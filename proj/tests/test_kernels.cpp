#include "doctest.h"
#include "psilvm/kernels.hpp"
#include "psilvm/util.hpp"

#include <cmath>
#include <vector>

using namespace psilvm;

namespace {

Eigen::VectorXd random_vec(int n, std::uint64_t seed, std::uint64_t& ctr) {
    Eigen::VectorXd v(n);
    for (int i = 0; i < n; ++i) v[i] = counter_normal(seed, ctr++);
    return v;
}

Eigen::MatrixXd random_mat(int r, int c, std::uint64_t seed) {
    Eigen::MatrixXd m(r, c);
    std::uint64_t ctr = 0;
    for (int i = 0; i < r; ++i) {
        for (int j = 0; j < c; ++j) m(i, j) = counter_normal(seed, ctr++);
    }
    return m;
}

std::vector<KernelSpec> all_kinds(int d) {
    std::vector<KernelSpec> kinds;
    kinds.push_back(KernelSpec::rbf(d));
    kinds.push_back(KernelSpec::rbf(d, false));
    kinds.push_back(KernelSpec::linear(d));
    kinds.push_back(KernelSpec::matern32(d));
    kinds.push_back(KernelSpec::periodic(d, true, 2.5));
    kinds.push_back(KernelSpec::mlp_rbf(d, 4, 3, 7));
    kinds.push_back(KernelSpec::sum({KernelSpec::rbf(d), KernelSpec::linear(d)}));
    return kinds;
}

// randomize parameters moderately so tests exercise non-default values
void jitter_params(KernelSpec& k, std::uint64_t seed) {
    Eigen::VectorXd p = k.pack();
    for (Eigen::Index i = 0; i < p.size(); ++i) p[i] += 0.3 * counter_normal(seed, static_cast<std::uint64_t>(i));
    k.set_params(p);
}

}  // namespace

TEST_CASE("kernel values at coincident and known points") {
    const Eigen::VectorXd z1 = Eigen::VectorXd::Zero(1);
    CHECK(kernel_eval(KernelSpec::rbf(1), z1, z1) == doctest::Approx(1.0));
    CHECK(kernel_eval(KernelSpec::matern32(1), z1, z1) == doctest::Approx(1.0));

    Eigen::VectorXd x2(1);
    x2 << std::sqrt(2.0);
    CHECK(kernel_eval(KernelSpec::rbf(1), z1, x2) == doctest::Approx(std::exp(-1.0)).epsilon(1e-12));

    // matern32 at unit scaled distance: (1+sqrt(3))exp(-sqrt(3))
    Eigen::VectorXd one(1);
    one << 1.0;
    const double expected = (1.0 + std::sqrt(3.0)) * std::exp(-std::sqrt(3.0));
    CHECK(kernel_eval(KernelSpec::matern32(1), z1, one) == doctest::Approx(expected).epsilon(1e-12));

    // periodic closed form in one dimension
    KernelSpec per = KernelSpec::periodic(1, true, 2.5);
    Eigen::VectorXd xa(1), xb(1);
    xa << 0.4;
    xb << 1.1;
    const double s = std::sin(M_PI * (0.4 - 1.1) / 2.5);
    CHECK(kernel_eval(per, xa, xb) == doctest::Approx(std::exp(-2.0 * s * s)).epsilon(1e-12));
}

TEST_CASE("gram of linear kernel on orthonormal rows is identity") {
    const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(2, 2);
    const Eigen::MatrixXd g = gram(KernelSpec::linear(2), eye, eye);
    CHECK((g - eye).norm() < 1e-14);
}

TEST_CASE("stationary kinds have constant sigma_f^2 diagonal") {
    const Eigen::MatrixXd x = random_mat(6, 3, 31);
    for (KernelSpec k : {KernelSpec::rbf(3), KernelSpec::matern32(3),
                         KernelSpec::periodic(3, true, 2.0), KernelSpec::mlp_rbf(3, 5, 2, 3)}) {
        jitter_params(k, 77);
        const Eigen::MatrixXd g = gram(k, x, x);
        const double sf2 = *k.constant_diag();
        for (int i = 0; i < 6; ++i) CHECK(g(i, i) == doctest::Approx(sf2).epsilon(1e-12));
    }
    CHECK(!KernelSpec::linear(3).constant_diag().has_value());
    CHECK(!KernelSpec::sum({KernelSpec::rbf(3), KernelSpec::linear(3)}).constant_diag().has_value());
    const auto sum_diag =
        KernelSpec::sum({KernelSpec::rbf(3), KernelSpec::matern32(3)}).constant_diag();
    CHECK(*sum_diag == doctest::Approx(2.0));
}

TEST_CASE("gram matches entrywise kernel_eval loop") {
    const Eigen::MatrixXd x = random_mat(5, 3, 41);
    const Eigen::MatrixXd x2 = random_mat(4, 3, 42);
    for (KernelSpec k : all_kinds(3)) {
        jitter_params(k, 55);
        const Eigen::MatrixXd g = gram(k, x, x2);
        for (int i = 0; i < 5; ++i) {
            for (int j = 0; j < 4; ++j) {
                CHECK(g(i, j) ==
                      doctest::Approx(kernel_eval(k, x.row(i).transpose(), x2.row(j).transpose()))
                          .epsilon(1e-13));
            }
        }
    }
}

TEST_CASE("kernel symmetry on random pairs, every kind") {
    std::uint64_t ctr = 0;
    for (KernelSpec k : all_kinds(4)) {
        jitter_params(k, 91);
        for (int rep = 0; rep < 5; ++rep) {
            const Eigen::VectorXd a = random_vec(4, 17, ctr);
            const Eigen::VectorXd b = random_vec(4, 17, ctr);
            CHECK(kernel_eval(k, a, b) == doctest::Approx(kernel_eval(k, b, a)).epsilon(1e-13));
        }
    }
}

TEST_CASE("gram matrices are positive semidefinite") {
    const Eigen::MatrixXd x = random_mat(8, 3, 61);
    for (KernelSpec k : all_kinds(3)) {
        jitter_params(k, 62);
        const Eigen::MatrixXd g = gram(k, x, x);
        CHECK((g - g.transpose()).norm() < 1e-12);
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(g);
        CHECK(es.eigenvalues().minCoeff() >= -1e-8 * g.trace());
    }
}

TEST_CASE("periodic kernel repeats at integer periods") {
    const double period = 1.7;
    KernelSpec k = KernelSpec::periodic(3, true, period);
    jitter_params(k, 71);
    // restore the period after jitter so the property is exact
    Eigen::VectorXd p = k.pack();
    p[1] = std::log(period);
    k.set_params(p);
    std::uint64_t ctr = 0;
    const Eigen::VectorXd x = random_vec(3, 19, ctr);
    const double self = kernel_eval(k, x, x);
    for (int q = 0; q < 3; ++q) {
        Eigen::VectorXd shifted = x;
        shifted[q] += period;
        CHECK(kernel_eval(k, x, shifted) == doctest::Approx(self).epsilon(1e-12));
    }
}

TEST_CASE("large ARD lengthscale switches a coordinate off") {
    KernelSpec k = KernelSpec::rbf(3);
    Eigen::VectorXd p = k.pack();
    p[2] = 40.0;  // log lengthscale of coordinate 1
    k.set_params(p);
    std::uint64_t ctr = 0;
    const Eigen::VectorXd a = random_vec(3, 23, ctr);
    Eigen::VectorXd b = a;
    b[1] += 5.0;
    CHECK(std::abs(kernel_eval(k, a, b) - kernel_eval(k, a, a)) < 1e-10);
}

TEST_CASE("sum kernel gram equals sum of child grams") {
    const Eigen::MatrixXd x = random_mat(5, 2, 81);
    KernelSpec a = KernelSpec::periodic(2, true, 3.0);
    KernelSpec b = KernelSpec::rbf(2);
    KernelSpec c = KernelSpec::linear(2);
    jitter_params(a, 82);
    jitter_params(b, 83);
    jitter_params(c, 84);
    const KernelSpec s = KernelSpec::sum({a, b, c});
    const Eigen::MatrixXd g = gram(s, x, x);
    const Eigen::MatrixXd parts = gram(a, x, x) + gram(b, x, x) + gram(c, x, x);
    CHECK((g - parts).norm() == doctest::Approx(0.0).epsilon(1e-15));
}

TEST_CASE("parameter packing round-trips") {
    for (KernelSpec k : all_kinds(3)) {
        jitter_params(k, 93);
        const Eigen::VectorXd p = k.pack();
        CHECK(p.size() == k.param_count());
        CHECK(k.param_names().size() == static_cast<std::size_t>(p.size()));
        KernelSpec other = k;
        Eigen::VectorXd zeros = Eigen::VectorXd::Zero(p.size());
        other.set_params(zeros);
        other.set_params(p);
        CHECK((other.pack() - p).norm() == 0.0);
        CHECK_THROWS_AS(other.set_params(Eigen::VectorXd::Zero(p.size() + 1)), DimensionMismatch);
    }
}

TEST_CASE("mlp_forward: zero weights map everything to zero") {
    KernelSpec k = KernelSpec::mlp_rbf(3, 4, 2, 5);
    k.set_params(Eigen::VectorXd::Zero(k.param_count()));
    std::uint64_t ctr = 0;
    const Eigen::VectorXd x = random_vec(3, 29, ctr);
    CHECK(mlp_forward(k, x).norm() == 0.0);
}

TEST_CASE("mlp_forward matches hand-computed layer product") {
    const int in = 2, hid = 3, out = 2;
    KernelSpec k = KernelSpec::mlp_rbf(in, hid, out, 11);
    std::uint64_t ctr = 0;
    Eigen::VectorXd p = k.pack();
    for (Eigen::Index i = 2; i < p.size(); ++i) p[i] = 0.5 * counter_normal(97, ctr++);
    k.set_params(p);

    Eigen::MatrixXd w1(hid, in);
    Eigen::VectorXd b1(hid);
    Eigen::MatrixXd w2(out, hid);
    Eigen::VectorXd b2(out);
    int off = 2;
    for (int h = 0; h < hid; ++h) {
        for (int i = 0; i < in; ++i) w1(h, i) = p[off++];
    }
    for (int h = 0; h < hid; ++h) b1[h] = p[off++];
    for (int o = 0; o < out; ++o) {
        for (int h = 0; h < hid; ++h) w2(o, h) = p[off++];
    }
    for (int o = 0; o < out; ++o) b2[o] = p[off++];

    const Eigen::VectorXd x = random_vec(in, 31, ctr);
    const Eigen::VectorXd expected = w2 * (w1 * x + b1).array().tanh().matrix() + b2;
    CHECK((mlp_forward(k, x) - expected).norm() < 1e-14);

    // same construction seed gives identical weights
    const KernelSpec again = KernelSpec::mlp_rbf(in, hid, out, 11);
    CHECK((again.pack() - KernelSpec::mlp_rbf(in, hid, out, 11).pack()).norm() == 0.0);
}

TEST_CASE("mlp_forward rejects other kinds and bad dimensions") {
    CHECK_THROWS_AS(mlp_forward(KernelSpec::rbf(2), Eigen::VectorXd::Zero(2)), WrongKernelKind);
    CHECK_THROWS_AS(mlp_forward(KernelSpec::mlp_rbf(3, 4, 2), Eigen::VectorXd::Zero(2)),
                    DimensionMismatch);
    CHECK_THROWS_AS(kernel_eval(KernelSpec::rbf(2), Eigen::VectorXd::Zero(3), Eigen::VectorXd::Zero(2)),
                    DimensionMismatch);
}

TEST_CASE("ard_lengthscales finds per-dimension scales") {
    KernelSpec k = KernelSpec::rbf(3);
    Eigen::VectorXd p = k.pack();
    p[1] = std::log(0.5);
    p[2] = std::log(2.0);
    p[3] = std::log(4.0);
    k.set_params(p);
    const Eigen::VectorXd l = k.ard_lengthscales();
    CHECK(l[0] == doctest::Approx(0.5));
    CHECK(l[2] == doctest::Approx(4.0));

    const KernelSpec s = KernelSpec::sum({KernelSpec::linear(3), k});
    CHECK((s.ard_lengthscales() - l).norm() < 1e-15);

    CHECK_THROWS_AS(KernelSpec::linear(2).ard_lengthscales(), NoArdKernel);
    CHECK_THROWS_AS(KernelSpec::rbf(2, false).ard_lengthscales(), NoArdKernel);
}

TEST_CASE("taped kernel evaluation matches values and finite differences") {
    const int d = 2;
    for (KernelSpec k : all_kinds(d)) {
        jitter_params(k, 113);
        const Eigen::VectorXd p0 = k.pack();
        std::uint64_t ctr = 0;
        const Eigen::VectorXd xa = random_vec(d, 37, ctr);
        const Eigen::VectorXd xb = random_vec(d, 37, ctr);

        // joint parameter vector [kernel params, xa, xb]
        auto plain = [&](const Eigen::VectorXd& joint) {
            KernelSpec kk = k;
            kk.set_params(joint.head(p0.size()));
            return kernel_eval(kk, joint.segment(p0.size(), d), joint.tail(d));
        };
        Eigen::VectorXd joint(p0.size() + 2 * d);
        joint << p0, xa, xb;

        ad::Tape tape;
        std::vector<ad::Var> leaves;
        for (Eigen::Index i = 0; i < joint.size(); ++i) leaves.emplace_back(tape, joint[i]);
        const PreparedKernel<ad::Var> pk = prepare_kernel(k, leaves.data());
        const ad::Var out = eval_prepared(pk, leaves.data() + p0.size(), leaves.data() + p0.size() + d);

        CHECK(out.v == doctest::Approx(plain(joint)).epsilon(1e-12));

        tape.backward({{out.id, 1.0}});
        const double h = 1e-6;
        for (Eigen::Index i = 0; i < joint.size(); ++i) {
            Eigen::VectorXd up = joint, dn = joint;
            up[i] += h;
            dn[i] -= h;
            const double fd = (plain(up) - plain(dn)) / (2.0 * h);
            const double got = tape.adjoint(leaves[static_cast<std::size_t>(i)].id);
            CHECK(got == doctest::Approx(fd).epsilon(5e-5).scale(std::max(1.0, std::abs(fd))));
        }
    }
}

TEST_CASE("matern32 gradient stays finite at coincident points") {
    KernelSpec k = KernelSpec::matern32(2);
    const Eigen::VectorXd p0 = k.pack();
    ad::Tape tape;
    std::vector<ad::Var> leaves;
    for (Eigen::Index i = 0; i < p0.size(); ++i) leaves.emplace_back(tape, p0[i]);
    std::vector<ad::Var> x;
    for (int q = 0; q < 2; ++q) x.emplace_back(tape, 0.7);
    const PreparedKernel<ad::Var> pk = prepare_kernel(k, leaves.data());
    const ad::Var out = eval_prepared(pk, x.data(), x.data());
    tape.backward({{out.id, 1.0}});
    for (const ad::Var& v : leaves) CHECK(std::isfinite(tape.adjoint(v.id)));
    for (const ad::Var& v : x) CHECK(std::isfinite(tape.adjoint(v.id)));
}
