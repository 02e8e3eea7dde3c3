#include "psilvm/expectation.hpp"

#include <cmath>
#include <map>
#include <mutex>

#include "psilvm/errors.hpp"
#include "psilvm/util.hpp"

namespace psilvm {

SchemeTag SchemeTag::ut() { return SchemeTag{SchemeKind::Unscented, 0, 0, 0}; }

SchemeTag SchemeTag::gh(int order) {
    if (order < 1) throw InvalidInput("gh order must be >= 1");
    return SchemeTag{SchemeKind::GaussHermite, order, 0, 0};
}

SchemeTag SchemeTag::mc(int samples, std::uint64_t seed) {
    if (samples < 1) throw InvalidInput("mc sample count must be >= 1");
    return SchemeTag{SchemeKind::MonteCarlo, 0, samples, seed};
}

namespace {

long parse_positive(const std::string& text, const std::string& what) {
    std::size_t used = 0;
    long v = 0;
    try {
        v = std::stol(text, &used);
    } catch (const std::exception&) {
        throw InvalidInput("bad scheme " + what + ": '" + text + "'");
    }
    if (used != text.size() || v < 1) throw InvalidInput("bad scheme " + what + ": '" + text + "'");
    return v;
}

}  // namespace

SchemeTag SchemeTag::parse(const std::string& text) {
    if (text == "ut") return ut();
    if (text.rfind("gh:", 0) == 0) {
        return gh(static_cast<int>(parse_positive(text.substr(3), "gh order")));
    }
    if (text.rfind("mc:", 0) == 0) {
        const std::string rest = text.substr(3);
        const std::size_t colon = rest.find(':');
        if (colon == std::string::npos) {
            return mc(static_cast<int>(parse_positive(rest, "mc sample count")));
        }
        const int samples = static_cast<int>(parse_positive(rest.substr(0, colon), "mc sample count"));
        const std::string seed_text = rest.substr(colon + 1);
        std::size_t used = 0;
        std::uint64_t seed = 0;
        try {
            seed = std::stoull(seed_text, &used);
        } catch (const std::exception&) {
            throw InvalidInput("bad scheme mc seed: '" + seed_text + "'");
        }
        if (used != seed_text.size()) throw InvalidInput("bad scheme mc seed: '" + seed_text + "'");
        return mc(samples, seed);
    }
    throw InvalidInput("unknown scheme '" + text + "' (expected ut, gh:H, or mc:P[:seed])");
}

std::string SchemeTag::str() const {
    switch (kind) {
        case SchemeKind::Unscented:
            return "ut";
        case SchemeKind::GaussHermite:
            return "gh:" + std::to_string(gh_order);
        case SchemeKind::MonteCarlo:
            return "mc:" + std::to_string(mc_samples) + ":" + std::to_string(mc_seed);
    }
    return "?";
}

const Gh1d& gh_rule(int order) {
    if (order < 1) throw InvalidInput("gh order must be >= 1");
    static std::mutex mu;
    static std::map<int, Gh1d> cache;
    std::lock_guard<std::mutex> lock(mu);
    auto it = cache.find(order);
    if (it != cache.end()) return it->second;

    Gh1d rule;
    if (order == 1) {
        rule.nodes = Eigen::VectorXd::Zero(1);
        rule.weights = Eigen::VectorXd::Ones(1);
    } else {
        // Golub-Welsch on the Jacobi matrix of the probabilists' Hermite
        // recurrence: zero diagonal, off-diagonal sqrt(k). Eigenvalues are
        // the nodes; squared first eigenvector components are the weights
        // (total mass of N(0,1) is 1).
        Eigen::VectorXd diag = Eigen::VectorXd::Zero(order);
        Eigen::VectorXd sub(order - 1);
        for (int k = 1; k < order; ++k) sub[k - 1] = std::sqrt(static_cast<double>(k));
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es;
        es.computeFromTridiagonal(diag, sub, Eigen::ComputeEigenvectors);
        if (es.info() != Eigen::Success) throw InvalidInput("gh rule eigensolve failed");
        rule.nodes = es.eigenvalues();
        rule.weights = es.eigenvectors().row(0).transpose().array().square();
        rule.weights /= rule.weights.sum();
        // Enforce the symmetry the rule has in exact arithmetic.
        Eigen::VectorXd n2 = rule.nodes, w2 = rule.weights;
        for (int k = 0; k < order; ++k) {
            n2[k] = 0.5 * (rule.nodes[k] - rule.nodes[order - 1 - k]);
            w2[k] = 0.5 * (rule.weights[k] + rule.weights[order - 1 - k]);
        }
        if (order % 2 == 1) n2[order / 2] = 0.0;
        rule.nodes = n2;
        rule.weights = w2;
    }
    return cache.emplace(order, std::move(rule)).first->second;
}

std::int64_t eval_budget(const SchemeTag& scheme, int dim, std::int64_t cap) {
    if (dim < 1) throw InvalidInput("eval_budget: dim must be >= 1");
    switch (scheme.kind) {
        case SchemeKind::Unscented:
            return 2 * static_cast<std::int64_t>(dim);
        case SchemeKind::GaussHermite: {
            std::int64_t n = 1;
            for (int q = 0; q < dim; ++q) {
                n *= scheme.gh_order;
                if (n > cap) {
                    throw OrderTooLarge("gh:" + std::to_string(scheme.gh_order) + " in " +
                                        std::to_string(dim) + " dimensions needs more than " +
                                        std::to_string(cap) + " evaluations");
                }
            }
            return n;
        }
        case SchemeKind::MonteCarlo:
            return scheme.mc_samples;
    }
    throw InvalidInput("eval_budget: unknown scheme kind");
}

PointSet unit_points(const SchemeTag& scheme, int dim) {
    if (dim < 1) throw InvalidInput("unit_points: dim must be >= 1");
    PointSet ps;
    ps.scheme = scheme;
    switch (scheme.kind) {
        case SchemeKind::Unscented: {
            const double r = std::sqrt(static_cast<double>(dim));
            ps.points = Eigen::MatrixXd::Zero(2 * dim, dim);
            for (int q = 0; q < dim; ++q) {
                ps.points(q, q) = r;
                ps.points(dim + q, q) = -r;
            }
            ps.weights = Eigen::VectorXd::Constant(2 * dim, 1.0 / (2.0 * dim));
            break;
        }
        case SchemeKind::GaussHermite: {
            const std::int64_t total = eval_budget(scheme, dim);
            const Gh1d& rule = gh_rule(scheme.gh_order);
            const int h = scheme.gh_order;
            ps.points = Eigen::MatrixXd(total, dim);
            ps.weights = Eigen::VectorXd(total);
            for (std::int64_t k = 0; k < total; ++k) {
                std::int64_t rem = k;
                double w = 1.0;
                for (int q = dim - 1; q >= 0; --q) {
                    const int digit = static_cast<int>(rem % h);
                    rem /= h;
                    ps.points(k, q) = rule.nodes[digit];
                    w *= rule.weights[digit];
                }
                ps.weights[k] = w;
            }
            break;
        }
        case SchemeKind::MonteCarlo: {
            const int p = scheme.mc_samples;
            ps.points = Eigen::MatrixXd(p, dim);
            for (int k = 0; k < p; ++k) {
                for (int q = 0; q < dim; ++q) {
                    ps.points(k, q) = counter_normal(
                        scheme.mc_seed, static_cast<std::uint64_t>(k) * static_cast<std::uint64_t>(dim) +
                                            static_cast<std::uint64_t>(q));
                }
            }
            ps.weights = Eigen::VectorXd::Constant(p, 1.0 / p);
            break;
        }
    }
    ps.eval_count = ps.points.rows();
    return ps;
}

namespace {

PointSet affine_map(PointSet ps, const DiagGaussian& q) {
    q.validate();
    const Eigen::ArrayXd sd = q.var.array().sqrt();
    for (Eigen::Index k = 0; k < ps.points.rows(); ++k) {
        ps.points.row(k) = (q.mean.array() + sd * ps.points.row(k).transpose().array()).transpose();
    }
    return ps;
}

}  // namespace

PointSet ut_points(const DiagGaussian& q) { return affine_map(unit_points(SchemeTag::ut(), q.dim()), q); }

PointSet ut_points(const FullGaussian& q) {
    q.validate();
    const int d = q.dim();
    const Eigen::MatrixXd scaled = static_cast<double>(d) * q.cov;
    const CholFactor chol = cholesky(scaled);
    PointSet ps;
    ps.scheme = SchemeTag::ut();
    ps.points = Eigen::MatrixXd(2 * d, d);
    for (int i = 0; i < d; ++i) {
        ps.points.row(i) = (q.mean + chol.lower.col(i)).transpose();
        ps.points.row(d + i) = (q.mean - chol.lower.col(i)).transpose();
    }
    ps.weights = Eigen::VectorXd::Constant(2 * d, 1.0 / (2.0 * d));
    ps.eval_count = 2 * d;
    return ps;
}

PointSet gh_points(const DiagGaussian& q, int order) {
    return affine_map(unit_points(SchemeTag::gh(order), q.dim()), q);
}

PointSet mc_points(const DiagGaussian& q, int samples, std::uint64_t seed) {
    return affine_map(unit_points(SchemeTag::mc(samples, seed), q.dim()), q);
}

Eigen::VectorXd expect(const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& f,
                       const PointSet& ps) {
    if (ps.points.rows() == 0) throw InvalidInput("expect: empty point set");
    Eigen::VectorXd acc = ps.weights[0] * f(ps.points.row(0).transpose());
    for (Eigen::Index k = 1; k < ps.points.rows(); ++k) {
        acc += ps.weights[k] * f(ps.points.row(k).transpose());
    }
    return acc;
}

Eigen::MatrixXd expect_cov(const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& f,
                           const PointSet& ps) {
    if (ps.points.rows() == 0) throw InvalidInput("expect_cov: empty point set");
    std::vector<Eigen::VectorXd> vals;
    vals.reserve(static_cast<std::size_t>(ps.points.rows()));
    for (Eigen::Index k = 0; k < ps.points.rows(); ++k) {
        vals.push_back(f(ps.points.row(k).transpose()));
    }
    Eigen::VectorXd mean = ps.weights[0] * vals[0];
    for (Eigen::Index k = 1; k < ps.points.rows(); ++k) mean += ps.weights[k] * vals[static_cast<std::size_t>(k)];
    Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(mean.size(), mean.size());
    for (Eigen::Index k = 0; k < ps.points.rows(); ++k) {
        const Eigen::VectorXd d = vals[static_cast<std::size_t>(k)] - mean;
        cov.noalias() += ps.weights[k] * d * d.transpose();
    }
    return cov;
}

double expect_scalar(const std::function<double(const Eigen::VectorXd&)>& f, const PointSet& ps) {
    if (ps.points.rows() == 0) throw InvalidInput("expect_scalar: empty point set");
    double acc = 0.0;
    for (Eigen::Index k = 0; k < ps.points.rows(); ++k) {
        acc += ps.weights[k] * f(ps.points.row(k).transpose());
    }
    return acc;
}

}  // namespace psilvm
