#pragma once

#include <vector>

#include "psilvm/ad.hpp"

namespace psilvm::detail {

// In-place Cholesky and triangular solves on row-major n x n tape variables.
// The caller guarantees positive definiteness (checked on the double path
// first), so sqrt() here never sees a nonpositive pivot on the same data.

inline void chol_lower(std::vector<ad::Var>& a, int n) {
    for (int j = 0; j < n; ++j) {
        ad::Var d = a[static_cast<std::size_t>(j * n + j)];
        for (int k = 0; k < j; ++k) {
            const ad::Var& l = a[static_cast<std::size_t>(j * n + k)];
            d -= l * l;
        }
        const ad::Var ljj = sqrt(d);
        a[static_cast<std::size_t>(j * n + j)] = ljj;
        for (int i = j + 1; i < n; ++i) {
            ad::Var s = a[static_cast<std::size_t>(i * n + j)];
            for (int k = 0; k < j; ++k) {
                s -= a[static_cast<std::size_t>(i * n + k)] * a[static_cast<std::size_t>(j * n + k)];
            }
            a[static_cast<std::size_t>(i * n + j)] = s / ljj;
        }
    }
}

inline void solve_lower_inplace(const std::vector<ad::Var>& l, int n, std::vector<ad::Var>& b,
                                int cols) {
    for (int i = 0; i < n; ++i) {
        for (int c = 0; c < cols; ++c) {
            ad::Var s = b[static_cast<std::size_t>(i * cols + c)];
            for (int k = 0; k < i; ++k) {
                s -= l[static_cast<std::size_t>(i * n + k)] * b[static_cast<std::size_t>(k * cols + c)];
            }
            b[static_cast<std::size_t>(i * cols + c)] = s / l[static_cast<std::size_t>(i * n + i)];
        }
    }
}

inline void solve_lower_transpose_inplace(const std::vector<ad::Var>& l, int n,
                                          std::vector<ad::Var>& b, int cols) {
    for (int i = n - 1; i >= 0; --i) {
        for (int c = 0; c < cols; ++c) {
            ad::Var s = b[static_cast<std::size_t>(i * cols + c)];
            for (int k = i + 1; k < n; ++k) {
                s -= l[static_cast<std::size_t>(k * n + i)] * b[static_cast<std::size_t>(k * cols + c)];
            }
            b[static_cast<std::size_t>(i * cols + c)] = s / l[static_cast<std::size_t>(i * n + i)];
        }
    }
}

}  // namespace psilvm::detail
