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
#include <cstdint>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "svtp/error.hpp"
#include "svtp/linalg.hpp"
#include "svtp/special.hpp"

namespace svtp {

/// Random stream used throughout the library. Every stochastic routine takes
/// one explicitly so results are reproducible from a seed.
using Rng = std::mt19937_64;

/**
 * Multivariate Student-t with degrees of freedom nu, location phi and scale
 * matrix. The density is normalized with (nu - 2), so for nu > 2 the scale
 * matrix is the covariance of the distribution.
 */
struct MvtParams {
    double nu = 5.0;
    Vector phi;
    Matrix scale;

    Index dim() const { return phi.size(); }

    void validate() const {
        if (!(nu > 2.0)) {
            throw DomainError("MvtParams: degrees of freedom must exceed 2, got " +
                              std::to_string(nu));
        }
        if (phi.size() < 1) throw ShapeError("MvtParams: empty location vector");
        if (scale.rows() != phi.size() || scale.cols() != phi.size()) {
            throw ShapeError("MvtParams: scale must be " + std::to_string(phi.size()) +
                             "x" + std::to_string(phi.size()));
        }
    }
};

/// Split of 0..n-1 into a conditioning block (idx1) and a target block (idx2).
struct Partition {
    std::vector<Index> idx1;
    std::vector<Index> idx2;

    /// First n1 coordinates condition the remaining n - n1.
    static Partition leading(Index n1, Index n) {
        Partition p;
        for (Index i = 0; i < n; ++i) (i < n1 ? p.idx1 : p.idx2).push_back(i);
        return p;
    }

    void validate(Index n) const {
        if (static_cast<Index>(idx1.size() + idx2.size()) != n) {
            throw ShapeError("Partition: index sets must cover all " + std::to_string(n) +
                             " coordinates");
        }
        std::vector<char> seen(static_cast<std::size_t>(n), 0);
        for (const auto* set : {&idx1, &idx2}) {
            for (Index i : *set) {
                if (i < 0 || i >= n || seen[static_cast<std::size_t>(i)]) {
                    throw ShapeError("Partition: index sets must be disjoint and in range");
                }
                seen[static_cast<std::size_t>(i)] = 1;
            }
        }
    }
};

namespace detail {

inline void require_nu(double nu, const char* where) {
    if (!(nu > 2.0)) {
        throw DomainError(std::string(where) + ": degrees of freedom must exceed 2, got " +
                          std::to_string(nu));
    }
}

inline Vector gather(const Vector& v, const std::vector<Index>& idx) {
    Vector out(static_cast<Index>(idx.size()));
    for (std::size_t i = 0; i < idx.size(); ++i) out(static_cast<Index>(i)) = v(idx[i]);
    return out;
}

inline Matrix gather(const Matrix& A, const std::vector<Index>& rows,
                     const std::vector<Index>& cols) {
    Matrix out(static_cast<Index>(rows.size()), static_cast<Index>(cols.size()));
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t j = 0; j < cols.size(); ++j)
            out(static_cast<Index>(i), static_cast<Index>(j)) = A(rows[i], cols[j]);
    return out;
}

} // namespace detail

/// Log normalizing constant log Gamma((nu+n)/2) - log Gamma(nu/2) - n/2 log((nu-2) pi)
/// - 1/2 log|K|.
inline double mvt_log_normalizer(double nu, Index n, double log_det_scale) {
    detail::require_nu(nu, "mvt_log_normalizer");
    const double dn = static_cast<double>(n);
    return log_gamma(0.5 * (nu + dn)) - log_gamma(0.5 * nu) -
           0.5 * dn * std::log((nu - 2.0) * std::numbers::pi) - 0.5 * log_det_scale;
}

/// Log density given an already factorized scale matrix.
inline double mvt_log_pdf(const Vector& y, const Vector& phi, double nu,
                          const linalg::Cholesky& chol) {
    detail::require_nu(nu, "mvt_log_pdf");
    if (y.size() != phi.size() || chol.size() != phi.size()) {
        throw ShapeError("mvt_log_pdf: dimension mismatch");
    }
    const Vector v = chol.solve_lower(y - phi);
    const double beta = v.squaredNorm();
    const double n = static_cast<double>(y.size());
    return mvt_log_normalizer(nu, y.size(), chol.log_det()) -
           0.5 * (nu + n) * std::log1p(beta / (nu - 2.0));
}

inline double mvt_log_pdf(const Vector& y, const MvtParams& p) {
    p.validate();
    if (y.size() != p.dim()) throw ShapeError("mvt_log_pdf: dim(y) != dim(phi)");
    const auto chol = linalg::robust_cholesky(p.scale, "mvt_log_pdf scale");
    return mvt_log_pdf(y, p.phi, p.nu, chol);
}

/// Univariate case with variance-normalized scale.
inline double student_t_log_pdf(double y, double nu, double loc, double var) {
    detail::require_nu(nu, "student_t_log_pdf");
    if (!(var > 0.0)) throw DomainError("student_t_log_pdf: variance must be positive");
    const double z2 = (y - loc) * (y - loc) / var;
    return log_gamma(0.5 * (nu + 1.0)) - log_gamma(0.5 * nu) -
           0.5 * std::log((nu - 2.0) * std::numbers::pi * var) -
           0.5 * (nu + 1.0) * std::log1p(z2 / (nu - 2.0));
}

inline double gaussian_log_pdf(double y, double mean, double var) {
    const double d = y - mean;
    return -0.5 * std::log(2.0 * std::numbers::pi * var) - 0.5 * d * d / var;
}

/// Marginal over the given coordinates (consistency under marginalization).
inline MvtParams mvt_marginal(const MvtParams& p, const std::vector<Index>& idx) {
    p.validate();
    return MvtParams{p.nu, detail::gather(p.phi, idx), detail::gather(p.scale, idx, idx)};
}

/**
 * Distribution of y2 given y1 = value:
 * ST(nu + n1, phi2 + K21 K11^{-1}(y1 - phi1), (nu + beta1 - 2)/(nu + n1 - 2) * t)
 * with beta1 the Mahalanobis term of y1 and t the Schur complement of K11.
 */
inline MvtParams mvt_condition(const MvtParams& p, const Partition& part, const Vector& y1) {
    p.validate();
    part.validate(p.dim());
    if (part.idx2.empty()) throw ShapeError("mvt_condition: nothing left to condition");
    if (y1.size() != static_cast<Index>(part.idx1.size())) {
        throw ShapeError("mvt_condition: dim(y1) != n1");
    }
    const Vector phi1 = detail::gather(p.phi, part.idx1);
    const Vector phi2 = detail::gather(p.phi, part.idx2);
    const Matrix K11 = detail::gather(p.scale, part.idx1, part.idx1);
    const Matrix K21 = detail::gather(p.scale, part.idx2, part.idx1);
    const Matrix K22 = detail::gather(p.scale, part.idx2, part.idx2);

    const double n1 = static_cast<double>(part.idx1.size());
    if (part.idx1.empty()) return MvtParams{p.nu, phi2, K22};

    const auto chol = linalg::robust_cholesky(K11, "mvt_condition K11");
    const Vector diff = y1 - phi1;
    const Vector white = chol.solve_lower(diff);
    const double beta1 = white.squaredNorm();
    const Matrix V = chol.solve_lower(K21.transpose());  // L^{-1} K12

    MvtParams out;
    out.nu = p.nu + n1;
    out.phi = phi2 + V.transpose() * white;
    const Matrix schur = K22 - V.transpose() * V;
    out.scale = ((p.nu + beta1 - 2.0) / (p.nu + n1 - 2.0)) * schur;
    return out;
}

/**
 * Noise behind one reparameterized Student-t draw: u = sqrt(r (nu-2)) L eps + phi,
 * with r^{-1} a chi-square draw taken at `nu` degrees of freedom.
 */
struct StudentNoise {
    Vector eps;
    double r = 1.0;
    double nu = 0.0;
};

/// r with r^{-1} ~ Gamma(shape nu/2, rate 1/2), i.e. a chi-square with nu dof.
inline double draw_inverse_chi2(double nu, Rng& rng) {
    std::gamma_distribution<double> gamma(0.5 * nu, 2.0);
    double g = gamma(rng);
    while (!(g > 0.0)) g = gamma(rng);
    return 1.0 / g;
}

/// Value and derivative in the degrees of freedom.
struct ValueWithSlope {
    double value = 0.0;
    double d_nu = 0.0;
};

/**
 * Inverse chi-square draw `r` taken at `nu_drawn` dof, re-evaluated at `nu`
 * with its CDF level held fixed, and dr/dnu along that path.
 */
inline ValueWithSlope inverse_chi2_at(double r, double nu_drawn, double nu, bool with_slope) {
    ValueWithSlope out;
    const double x0 = 0.5 / r;  // Gamma(nu_drawn / 2, 1) draw
    const double x = gamma_same_level(0.5 * nu_drawn, x0, 0.5 * nu);
    out.value = nu == nu_drawn ? r : 0.5 / x;
    if (with_slope) out.d_nu = -out.value * out.value * gamma_quantile_shape_derivative(0.5 * nu, x);
    return out;
}

inline Vector draw_standard_normal(Index n, Rng& rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    Vector out(n);
    for (Index i = 0; i < n; ++i) out(i) = normal(rng);
    return out;
}

inline StudentNoise draw_student_noise(double nu, Index n, Rng& rng) {
    StudentNoise noise;
    noise.r = draw_inverse_chi2(nu, rng);
    noise.nu = nu;
    noise.eps = draw_standard_normal(n, rng);
    return noise;
}

/// Affine map from noise to a sample; differentiable in phi and the factor L.
inline Vector student_affine(const Vector& phi, const Matrix& L, double nu,
                             const StudentNoise& noise) {
    const double c = std::sqrt(noise.r * (nu - 2.0));
    const Vector spread = L.triangularView<Eigen::Lower>() * noise.eps;
    return phi + c * spread;
}

/// count x n matrix of draws from p.
inline Matrix mvt_sample(const MvtParams& p, std::size_t count, Rng& rng) {
    p.validate();
    Matrix out(static_cast<Index>(count), p.dim());
    if (count == 0) return out;
    const auto chol = linalg::robust_cholesky(p.scale, "mvt_sample scale");
    for (std::size_t i = 0; i < count; ++i) {
        const auto noise = draw_student_noise(p.nu, p.dim(), rng);
        out.row(static_cast<Index>(i)) = student_affine(p.phi, chol.L, p.nu, noise).transpose();
    }
    return out;
}

} // namespace svtp
