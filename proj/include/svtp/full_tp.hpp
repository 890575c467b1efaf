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

#include "svtp/distributions.hpp"
#include "svtp/kernels.hpp"
#include "svtp/linalg.hpp"
#include "svtp/special.hpp"

namespace svtp {

/// Largest n for which the dense reference model is evaluated.
inline constexpr Index kFullTpMaxSize = 2048;

/// Exact Student-t process regression: y ~ ST(nu, 0, K_XX + noise^2 I).
struct FullTpModel {
    KernelParams kernel;
    double nu = 5.0;
    double noise_sd = 0.10;
};

struct FullTpGradient {
    KernelGradient kernel;
    double nu = 0.0;
    double log_noise_sd = 0.0;
};

/**
 * Log marginal likelihood of the dense model and, optionally, its gradient in
 * log signal variance, log lengthscales, nu and log noise_sd.
 */
inline double full_tp_log_likelihood(const FullTpModel& model, const Matrix& X, const Vector& y,
                                     FullTpGradient* grad = nullptr) {
    model.kernel.validate();
    if (X.rows() != y.size()) throw ShapeError("full_tp_log_likelihood: X and y row counts differ");
    if (X.rows() > kFullTpMaxSize) throw ConfigError("full_tp_log_likelihood: n exceeds dense limit of 2048");
    if (!(model.nu > 2.0)) throw DomainError("full_tp_log_likelihood: nu must exceed 2");
    const double n = static_cast<double>(y.size());
    const double noise_var = model.noise_sd * model.noise_sd;
    const Matrix K = gram(X, model.kernel);
    Matrix C = K;
    C.diagonal().array() += noise_var;
    const auto chol = linalg::robust_cholesky(C, "full TP covariance");
    const Vector alpha = chol.solve_vec(y);
    const double beta = y.dot(alpha);
    const double nu = model.nu;
    const double ll = mvt_log_normalizer(nu, y.size(), chol.log_det()) - 0.5 * (nu + n) * std::log1p(beta / (nu - 2.0));
    if (grad) {
        const double w = 0.5 * (nu + n) / (nu - 2.0 + beta);
        const Matrix Cbar = w * alpha * alpha.transpose() - 0.5 * chol.inverse();
        grad->kernel = KernelGradient(model.kernel.dim());
        gram_backward(X, K, Cbar, model.kernel, grad->kernel, nullptr);
        grad->log_noise_sd = 2.0 * noise_var * Cbar.trace();
        grad->nu = 0.5 * digamma(0.5 * (nu + n)) - 0.5 * digamma(0.5 * nu) - 0.5 * n / (nu - 2.0) -
                   0.5 * std::log1p(beta / (nu - 2.0)) + 0.5 * (nu + n) * beta / ((nu - 2.0) * (nu - 2.0 + beta));
    }
    return ll;
}

} // namespace svtp
