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

// Machinery shared by the Student-t and Gaussian sparse models: factorized
// inducing prior, per-minibatch projections, noise containers, and the
// reparameterized expected log-likelihood with its reverse pass.

#include <cmath>
#include <numbers>
#include <vector>

#include "svtp/distributions.hpp"
#include "svtp/kernels.hpp"
#include "svtp/linalg.hpp"
#include "svtp/model.hpp"

namespace svtp {

/// Monte-Carlo estimate with its standard error.
struct McEstimate {
    double mean = 0.0;
    double std_error = 0.0;
};

/// Per-point noise of the factorized f | u draws; `r` was drawn at `nu` dof.
struct PointNoise {
    Vector eps;
    Vector r;
    double nu = 0.0;
};

/// Noise behind one outer sample of the expected log-likelihood.
struct LikelihoodNoise {
    StudentNoise u;
    PointNoise f;
};

/// All randomness consumed by one ELBO evaluation. Holding it fixed makes the
/// ELBO a deterministic, differentiable function of the parameters.
struct ElboNoise {
    std::vector<LikelihoodNoise> likelihood;
    std::vector<StudentNoise> kl;
};

/// Per-point predictive summary.
struct Prediction {
    Vector mean;
    Vector variance;
    /// Log predictive density of the supplied targets (empty if none given).
    Vector log_density;
};

inline McEstimate summarize(const std::vector<double>& values) {
    McEstimate est;
    const double s = static_cast<double>(values.size());
    if (values.empty()) return est;
    double sum = 0.0;
    for (double v : values) sum += v;
    est.mean = sum / s;
    if (values.size() > 1) {
        double ss = 0.0;
        for (double v : values) ss += (v - est.mean) * (v - est.mean);
        est.std_error = std::sqrt(ss / (s - 1.0) / s);
    }
    return est;
}

namespace detail {

inline constexpr double kVarianceFloor = 1e-12;

/// Kzz and its factor.
struct InducingPrior {
    Matrix Kzz;
    linalg::Cholesky chol;

    explicit InducingPrior(const SparseState& s)
        : Kzz(gram(s.Z, s.kernel)), chol(linalg::robust_cholesky(Kzz, "K_ZZ")) {}
};

/**
 * Quantities of a minibatch that do not depend on u:
 * Kxz, T = L^{-1} Kzx, W = Kxz Kzz^{-1}, and the conditional variances
 * Sigma_i = k(x_i, x_i) - k_i^T Kzz^{-1} k_i (floored at a tiny positive value).
 */
struct BatchProjection {
    Matrix Kxz;
    Matrix T;
    Matrix W;
    Vector kxx;
    Vector sigma;
    std::vector<char> floored;

    BatchProjection(const SparseState& s, const InducingPrior& prior, const Matrix& X)
        : Kxz(gram_cross(X, s.Z, s.kernel)), kxx(gram_diag(X, s.kernel)) {
        T = prior.chol.solve_lower(Kxz.transpose());
        Matrix tmp = T;
        prior.chol.L.triangularView<Eigen::Lower>().transpose().solveInPlace(tmp);
        W = tmp.transpose();
        sigma.resize(X.rows());
        floored.assign(static_cast<std::size_t>(X.rows()), 0);
        for (Index i = 0; i < X.rows(); ++i) {
            const double v = kxx(i) - T.col(i).squaredNorm();
            if (v > kVarianceFloor) {
                sigma(i) = v;
            } else {
                sigma(i) = kVarianceFloor;
                floored[static_cast<std::size_t>(i)] = 1;
            }
        }
    }
};

/// Reverse-mode accumulators for the matrices feeding an objective.
struct Adjoints {
    Matrix Kzz;
    Matrix Kxz;
    Vector kxx;
    ModelGradient grad;
    /// When false the expected log-likelihood leaves the nu_tilde gradient untouched.
    bool loglik_nu_tilde_path = true;

    Adjoints(const SparseState& s, Index batch)
        : Kzz(Matrix::Zero(s.num_inducing(), s.num_inducing())),
          Kxz(Matrix::Zero(batch, s.num_inducing())),
          kxx(Vector::Zero(batch)),
          grad(ModelGradient::zeros_like(s)) {}

    /// Pushes the matrix adjoints through the kernel into Z and hyperparameters.
    void finalize(const SparseState& s, const InducingPrior& prior, const BatchProjection* proj,
                  const Matrix* X) {
        gram_backward(s.Z, prior.Kzz, Kzz, s.kernel, grad.kernel, &grad.Z);
        if (proj && X && X->rows() > 0) {
            gram_cross_backward(*X, s.Z, proj->Kxz, Kxz, s.kernel, grad.kernel, &grad.Z);
            gram_diag_backward(kxx, s.kernel, grad.kernel);
        }
    }
};

/// Scale sqrt(r (nu_tilde - 2)) of a q(u) draw and its derivative in nu_tilde.
template <typename Model>
ValueWithSlope u_noise_scale(const Model& model, const StudentNoise& noise, bool with_slope) {
    if constexpr (is_student_model<Model>) {
        const double nt = model.nu_tilde;
        const ValueWithSlope r = inverse_chi2_at(noise.r, noise.nu, nt, with_slope);
        const double c = std::sqrt(r.value * (nt - 2.0));
        return {c, with_slope ? 0.5 * c * (r.d_nu / r.value + 1.0 / (nt - 2.0)) : 0.0};
    } else {
        (void)model;
        (void)noise;
        (void)with_slope;
        return {1.0, 0.0};
    }
}

/// Per-point r at the current nu + M and dr/dnu.
template <typename Model>
void point_scales(const Model& model, const PointNoise& noise, bool with_slope, Vector& r, Vector& slope) {
    const Index B = noise.r.size();
    slope = Vector::Zero(B);
    if constexpr (is_student_model<Model>) {
        const double nu_f = model.nu + static_cast<double>(model.num_inducing());
        if (noise.nu == nu_f && !with_slope) {
            r = noise.r;
            return;
        }
        r.resize(B);
        for (Index i = 0; i < B; ++i) {
            const ValueWithSlope v = inverse_chi2_at(noise.r(i), noise.nu, nu_f, with_slope);
            r(i) = v.value;
            slope(i) = v.d_nu;
        }
    } else {
        (void)model;
        (void)with_slope;
        r = noise.r;
    }
}

template <typename Model>
LikelihoodNoise draw_likelihood_noise(const Model& model, Index batch, Rng& rng) {
    LikelihoodNoise noise;
    const Index M = model.num_inducing();
    if constexpr (is_student_model<Model>) {
        noise.u = draw_student_noise(model.nu_tilde, M, rng);
        const double nu_f = model.nu + static_cast<double>(M);
        noise.f.r.resize(batch);
        noise.f.nu = nu_f;
        for (Index i = 0; i < batch; ++i) noise.f.r(i) = draw_inverse_chi2(nu_f, rng);
    } else {
        noise.u.r = 1.0;
        noise.u.eps = draw_standard_normal(M, rng);
        noise.f.r = Vector::Ones(batch);
    }
    noise.f.eps = draw_standard_normal(batch, rng);
    return noise;
}

/**
 * Expected log-likelihood (n_total / B) * mean_j sum_i log N(y_i | f_ij, noise^2)
 * with u_j ~ q(u) and f_ij ~ p(f_i | u_j), all through the affine
 * reparameterization. Returns the per-sample estimates; when `adj` is given,
 * accumulates `scale` times the gradient of their mean.
 */
template <typename Model>
std::vector<double> expected_log_lik_eval(const Model& model, const InducingPrior& prior,
                                          const BatchProjection& proj, const Vector& yb,
                                          Index n_total,
                                          const std::vector<LikelihoodNoise>& noise,
                                          Adjoints* adj, double scale = 1.0) {
    const Index B = yb.size();
    const double s = static_cast<double>(noise.size());
    const double rescale = static_cast<double>(n_total) / static_cast<double>(B);
    const double noise_var = model.noise_sd * model.noise_sd;
    const double log_norm = -0.5 * std::log(2.0 * std::numbers::pi) - std::log(model.noise_sd);
    const Matrix L = linalg::tril(model.S_factor);

    std::vector<double> per_sample;
    per_sample.reserve(noise.size());
    Vector sigma_bar = Vector::Zero(B);
    Vector r, r_slope;

    for (const auto& draw : noise) {
        const Vector Leps = L * draw.u.eps;
        const ValueWithSlope scale_u = u_noise_scale(model, draw.u, adj != nullptr);
        const double cu = scale_u.value;
        point_scales(model, draw.f, adj != nullptr, r, r_slope);
        const Vector u = model.m + cu * Leps;
        const Vector alpha = prior.chol.solve_vec(u);
        const double beta = u.dot(alpha);
        const Vector mu = proj.Kxz * alpha;

        double factor = 1.0;
        if constexpr (is_student_model<Model>) factor = model.nu + beta - 2.0;
        const Vector g = (r.array() * factor * proj.sigma.array()).sqrt().matrix();
        const Vector f = mu + g.cwiseProduct(draw.f.eps);
        const Vector resid = yb - f;
        const double ll = static_cast<double>(B) * log_norm - 0.5 * resid.squaredNorm() / noise_var;
        per_sample.push_back(rescale * ll);

        if (!adj) continue;
        const double w = scale * rescale / s;
        const Vector f_bar = (w / noise_var) * resid;
        adj->grad.log_noise_sd += w * (resid.squaredNorm() / noise_var - static_cast<double>(B));

        const Vector g_bar = f_bar.cwiseProduct(draw.f.eps);
        for (Index i = 0; i < B; ++i) {
            if (!proj.floored[static_cast<std::size_t>(i)]) {
                sigma_bar(i) += g_bar(i) * g(i) / (2.0 * proj.sigma(i));
            }
        }
        double beta_bar = 0.0;
        if constexpr (is_student_model<Model>) {
            const double t = g_bar.dot(g) / (2.0 * factor);
            beta_bar = t;
            // g_i depends on nu through the factor and through r_i(nu + M)
            adj->grad.nu += t + 0.5 * (g_bar.array() * g.array() * r_slope.array() / r.array()).sum();
        }
        adj->Kxz.noalias() += f_bar * alpha.transpose();
        const Vector alpha_bar = proj.Kxz.transpose() * f_bar;
        const Vector A_alpha_bar = prior.chol.solve_vec(alpha_bar);
        const Vector u_bar = A_alpha_bar + 2.0 * beta_bar * alpha;
        adj->Kzz.noalias() -= A_alpha_bar * alpha.transpose();
        adj->Kzz.noalias() -= beta_bar * alpha * alpha.transpose();

        adj->grad.m += u_bar;
        adj->grad.S_factor += cu * linalg::tril(u_bar * draw.u.eps.transpose());
        if constexpr (is_student_model<Model>) {
            if (adj->loglik_nu_tilde_path) adj->grad.nu_tilde += u_bar.dot(Leps) * scale_u.d_nu;
        }
    }

    if (adj) {
        // Sigma_i = kxx_i - k_i^T A k_i
        adj->kxx += sigma_bar;
        adj->Kxz.noalias() -= 2.0 * sigma_bar.asDiagonal() * proj.W;
        adj->Kzz.noalias() += proj.W.transpose() * sigma_bar.asDiagonal() * proj.W;
    }
    return per_sample;
}

/// Pointwise Gaussian-conditional moments k*^T A u and k** - k*^T A k*.
struct PointwiseConditional {
    Vector mean;
    Vector schur;
    double beta = 0.0;
};

inline PointwiseConditional pointwise_conditional(const InducingPrior& prior,
                                                  const BatchProjection& proj, const Vector& u) {
    PointwiseConditional out;
    const Vector alpha = prior.chol.solve_vec(u);
    out.beta = u.dot(alpha);
    out.mean = proj.Kxz * alpha;
    out.schur = proj.sigma;
    return out;
}

} // namespace detail
} // namespace svtp
