#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <string>

#include "psilvm/gauss.hpp"

namespace psilvm {

enum class SchemeKind { Unscented, GaussHermite, MonteCarlo };

// Quadrature scheme selector. Text grammar: "ut", "gh:H", "mc:P" or
// "mc:P:seed".
struct SchemeTag {
    SchemeKind kind = SchemeKind::Unscented;
    int gh_order = 0;
    int mc_samples = 0;
    std::uint64_t mc_seed = 0;

    static SchemeTag ut();
    static SchemeTag gh(int order);
    static SchemeTag mc(int samples, std::uint64_t seed = 0);
    static SchemeTag parse(const std::string& text);

    std::string str() const;
    bool deterministic() const { return kind != SchemeKind::MonteCarlo; }
    bool operator==(const SchemeTag&) const = default;
};

struct PointSet {
    Eigen::MatrixXd points;   // P x D, rows are evaluation points
    Eigen::VectorXd weights;  // length P, sums to 1
    std::int64_t eval_count = 0;
    SchemeTag scheme;
};

// 1-D Gauss-Hermite rule for the standard normal weight. Cached per order;
// nodes are symmetric about zero.
struct Gh1d {
    Eigen::VectorXd nodes;
    Eigen::VectorXd weights;
};

const Gh1d& gh_rule(int order);

inline constexpr std::int64_t kGhEvalCap = std::int64_t{1} << 20;

// Number of function evaluations a scheme spends in D dimensions: 2D for ut,
// H^D for gh (throws OrderTooLarge past the cap), P for mc.
std::int64_t eval_budget(const SchemeTag& scheme, int dim, std::int64_t cap = kGhEvalCap);

// Point sets for the standard normal N(0, I_dim). Concrete distributions are
// reached by the affine map x = mu + sqrt(var) * xi per coordinate.
PointSet unit_points(const SchemeTag& scheme, int dim);

PointSet ut_points(const DiagGaussian& q);
PointSet ut_points(const FullGaussian& q);
PointSet gh_points(const DiagGaussian& q, int order);
PointSet mc_points(const DiagGaussian& q, int samples, std::uint64_t seed);

Eigen::VectorXd expect(const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& f,
                       const PointSet& ps);

Eigen::MatrixXd expect_cov(const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& f,
                           const PointSet& ps);

double expect_scalar(const std::function<double(const Eigen::VectorXd&)>& f, const PointSet& ps);

}  // namespace psilvm
