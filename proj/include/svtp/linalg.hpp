/*
 * Copyright 2026 The svtp Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 *
 */
#pragma once

#include <cmath>
#include <string>
#include <string_view>

#include <Eigen/Dense>

#include "svtp/error.hpp"

namespace svtp {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

namespace linalg {

/// Relative jitter added on the first failed factorization attempt.
inline constexpr double kJitterRatio = 1e-6;
/// Number of times the jitter is doubled before giving up.
inline constexpr int kJitterDoublings = 4;

/**
 * Lower Cholesky factor of an SPD matrix together with the amount of
 * diagonal jitter that had to be added to obtain it.
 */
struct Cholesky {
    Matrix L;
    double added_jitter = 0.0;

    Index size() const { return L.rows(); }

    double log_det() const { return 2.0 * L.diagonal().array().log().sum(); }

    /// L^{-1} B
    template <typename Derived>
    Matrix solve_lower(const Eigen::MatrixBase<Derived>& B) const {
        return L.triangularView<Eigen::Lower>().solve(B);
    }

    /// K^{-1} B
    template <typename Derived>
    Matrix solve(const Eigen::MatrixBase<Derived>& B) const {
        Matrix tmp = L.triangularView<Eigen::Lower>().solve(B);
        L.triangularView<Eigen::Lower>().transpose().solveInPlace(tmp);
        return tmp;
    }

    Vector solve_vec(const Vector& b) const {
        Vector tmp = L.triangularView<Eigen::Lower>().solve(b);
        L.triangularView<Eigen::Lower>().transpose().solveInPlace(tmp);
        return tmp;
    }

    Matrix inverse() const { return solve(Matrix::Identity(size(), size())); }

    /// Reconstructs K (including any added jitter).
    Matrix matrix() const { return L * L.transpose(); }
};

namespace detail {

inline bool try_llt(const Matrix& K, Matrix& L) {
    Eigen::LLT<Matrix> llt(K);
    if (llt.info() != Eigen::Success) return false;
    L = llt.matrixL();
    for (Index i = 0; i < L.rows(); ++i) {
        const double d = L(i, i);
        if (!(d > 0.0) || !std::isfinite(d)) return false;
    }
    return true;
}

} // namespace detail

/**
 * Cholesky factorization with jitter repair: on failure, lambda * mean(diag)
 * is added to the diagonal (lambda = 1e-6), doubling up to four times.
 */
inline Cholesky robust_cholesky(const Matrix& K, std::string_view what = "matrix") {
    if (K.rows() != K.cols()) {
        throw ShapeError(std::string(what) + ": Cholesky of a non-square matrix");
    }
    Cholesky out;
    if (K.rows() == 0) {
        out.L.resize(0, 0);
        return out;
    }
    if (!K.allFinite()) {
        throw DecompositionError(std::string(what) + ": non-finite entries");
    }
    if (detail::try_llt(K, out.L)) return out;

    const double mean_diag = K.diagonal().mean();
    if (!(mean_diag > 0.0)) {
        throw DecompositionError(std::string(what) + ": non-positive diagonal, cannot jitter");
    }
    double jitter = kJitterRatio * mean_diag;
    for (int attempt = 0; attempt <= kJitterDoublings; ++attempt, jitter *= 2.0) {
        Matrix Kj = K;
        Kj.diagonal().array() += jitter;
        if (detail::try_llt(Kj, out.L)) {
            out.added_jitter = jitter;
            return out;
        }
    }
    throw DecompositionError(std::string(what) + ": not positive definite after jitter");
}

/// Lower-triangular part of a square matrix (strict upper part zeroed).
inline Matrix tril(const Matrix& A) {
    Matrix out = A.triangularView<Eigen::Lower>();
    return out;
}

} // namespace linalg
} // namespace svtp
