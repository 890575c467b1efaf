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

#include "svtp/error.hpp"
#include "svtp/linalg.hpp"

namespace svtp {

/**
 * Squared-exponential (RBF) kernel hyperparameters.
 *
 * k(x, x') = signal_variance * exp(-1/2 sum_k ((x_k - x'_k) / l_k)^2)
 *
 * With `ard == false` all lengthscales are tied and optimized as one value.
 * `jitter` is added to the diagonal of every symmetric Gram matrix.
 */
struct KernelParams {
    double signal_variance = 1.0;
    Vector lengthscales = Vector::Ones(1);
    double jitter = 1e-6;
    bool ard = true;

    Index dim() const { return lengthscales.size(); }

    void validate() const {
        if (!(signal_variance > 0.0)) throw DomainError("KernelParams: signal_variance must be > 0");
        if (lengthscales.size() < 1) throw ShapeError("KernelParams: no lengthscales");
        if (!(lengthscales.array() > 0.0).all()) {
            throw DomainError("KernelParams: lengthscales must be > 0");
        }
        if (!(jitter >= 0.0)) throw DomainError("KernelParams: jitter must be >= 0");
    }

    static KernelParams isotropic(Index d, double signal_variance = 1.0, double lengthscale = 1.0,
                                  double jitter = 1e-6) {
        return KernelParams{signal_variance, Vector::Constant(d, lengthscale), jitter, true};
    }
};

/// Gradient of a scalar with respect to the log-space kernel hyperparameters.
struct KernelGradient {
    double log_signal_variance = 0.0;
    Vector log_lengthscales;

    explicit KernelGradient(Index d = 0) : log_lengthscales(Vector::Zero(d)) {}
};

namespace detail {

inline void check_kernel_inputs(const Matrix& A, const KernelParams& kp, const char* where) {
    if (A.cols() != kp.dim()) {
        throw ShapeError(std::string(where) + ": input has " + std::to_string(A.cols()) +
                         " columns but kernel has " + std::to_string(kp.dim()) + " lengthscales");
    }
}

/// Unit-free squared-exponential entry without the signal variance.
inline Matrix se_shape(const Matrix& A, const Matrix& B, const Vector& lengthscales) {
    const Vector inv = lengthscales.cwiseInverse();
    const Matrix As = A * inv.asDiagonal();
    const Matrix Bs = B * inv.asDiagonal();
    Matrix out(A.rows(), B.rows());
    for (Index j = 0; j < B.rows(); ++j) {
        for (Index i = 0; i < A.rows(); ++i) {
            out(i, j) = std::exp(-0.5 * (As.row(i) - Bs.row(j)).squaredNorm());
        }
    }
    return out;
}

} // namespace detail

/// Cross-covariance between the rows of A and the rows of B (no jitter).
inline Matrix gram_cross(const Matrix& A, const Matrix& B, const KernelParams& kp) {
    kp.validate();
    detail::check_kernel_inputs(A, kp, "gram");
    detail::check_kernel_inputs(B, kp, "gram");
    return kp.signal_variance * detail::se_shape(A, B, kp.lengthscales);
}

/// Symmetric Gram matrix of A with jitter on the diagonal.
inline Matrix gram(const Matrix& A, const KernelParams& kp) {
    kp.validate();
    detail::check_kernel_inputs(A, kp, "gram");
    Matrix K(A.rows(), A.rows());
    const Vector inv = kp.lengthscales.cwiseInverse();
    const Matrix As = A * inv.asDiagonal();
    for (Index j = 0; j < A.rows(); ++j) {
        K(j, j) = kp.signal_variance + kp.jitter;
        for (Index i = j + 1; i < A.rows(); ++i) {
            const double v =
                kp.signal_variance * std::exp(-0.5 * (As.row(i) - As.row(j)).squaredNorm());
            K(i, j) = v;
            K(j, i) = v;
        }
    }
    return K;
}

/// gram(A, B); when A and B are the same object the symmetric form with jitter is used.
inline Matrix gram(const Matrix& A, const Matrix& B, const KernelParams& kp) {
    if (&A == &B) return gram(A, kp);
    return gram_cross(A, B, kp);
}

/// Prior variance per row: signal_variance + jitter.
inline Vector gram_diag(const Matrix& A, const KernelParams& kp) {
    kp.validate();
    detail::check_kernel_inputs(A, kp, "gram_diag");
    return Vector::Constant(A.rows(), kp.signal_variance + kp.jitter);
}

/**
 * Back-propagates an adjoint Kbar of a symmetric Gram matrix K = gram(Z)
 * (entries treated as independent) into the kernel hyperparameters and Z.
 */
inline void gram_backward(const Matrix& Z, const Matrix& K, const Matrix& Kbar,
                          const KernelParams& kp, KernelGradient& grad, Matrix* Zbar) {
    // Jitter has no parameters; only the SE part carries gradient.
    Matrix G = Kbar.cwiseProduct(K);
    G.diagonal() = Kbar.diagonal() * kp.signal_variance;
    grad.log_signal_variance += G.sum();

    const Vector inv_l2 = kp.lengthscales.array().square().inverse();
    const Matrix Gs = G + G.transpose();
    const Vector row = Gs.rowwise().sum();
    // sum_ij G_ij (z_ik - z_jk)^2 = 1/2 sum_ij Gs_ij (z_ik - z_jk)^2
    //                             = sum_i row_i z_ik^2 - sum_ij Gs_ij z_ik z_jk
    const Matrix GsZ = Gs * Z;
    for (Index k = 0; k < Z.cols(); ++k) {
        const double quad = row.dot(Z.col(k).cwiseAbs2()) - Z.col(k).dot(GsZ.col(k));
        grad.log_lengthscales(k) += quad * inv_l2(k);
    }
    if (Zbar) {
        // d/dz_ik = -sum_j Gs_ij (z_ik - z_jk) / l_k^2
        *Zbar += (GsZ - row.asDiagonal() * Z) * inv_l2.asDiagonal();
    }
}

/// Adjoint of a cross-covariance K = gram_cross(X, Z) into hyperparameters and Z.
inline void gram_cross_backward(const Matrix& X, const Matrix& Z, const Matrix& K,
                                const Matrix& Kbar, const KernelParams& kp,
                                KernelGradient& grad, Matrix* Zbar) {
    const Matrix H = Kbar.cwiseProduct(K);
    grad.log_signal_variance += H.sum();
    const Vector inv_l2 = kp.lengthscales.array().square().inverse();
    const Vector rows = H.rowwise().sum();
    const Vector cols = H.colwise().sum().transpose();
    const Matrix HZ = H * Z;       // B x d
    const Matrix HtX = H.transpose() * X;  // M x d
    for (Index k = 0; k < X.cols(); ++k) {
        const double quad = rows.dot(X.col(k).cwiseAbs2()) + cols.dot(Z.col(k).cwiseAbs2()) -
                            2.0 * X.col(k).dot(HZ.col(k));
        grad.log_lengthscales(k) += quad * inv_l2(k);
    }
    if (Zbar) {
        // d/dz_jk = sum_i H_ij (x_ik - z_jk) / l_k^2
        *Zbar += (HtX - cols.asDiagonal() * Z) * inv_l2.asDiagonal();
    }
}

/// Adjoint of gram_diag into the signal variance.
inline void gram_diag_backward(const Vector& kbar, const KernelParams& kp, KernelGradient& grad) {
    grad.log_signal_variance += kbar.sum() * kp.signal_variance;
}

} // namespace svtp
