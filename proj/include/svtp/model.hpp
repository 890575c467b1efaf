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
#include <type_traits>

#include "svtp/error.hpp"
#include "svtp/kernels.hpp"
#include "svtp/linalg.hpp"

namespace svtp {

enum class ElboMethod { UB, MC };

inline const char* to_string(ElboMethod m) { return m == ElboMethod::UB ? "UB" : "MC"; }

/// Terms of one ELBO evaluation; elbo == expected_loglik - kl_term.
struct ElboBreakdown {
    double expected_loglik = 0.0;
    double kl_term = 0.0;
    double elbo = 0.0;
    ElboMethod method = ElboMethod::UB;
    int mc_samples = 0;
};

/// Common state of the sparse models: inducing inputs, kernel, Gaussian-shaped
/// q(u) location and lower Cholesky factor of its scale, observation noise.
struct SparseState {
    Matrix Z;
    KernelParams kernel;
    Vector m;
    Matrix S_factor;
    double noise_sd = 0.10;

    Index num_inducing() const { return Z.rows(); }
    Index input_dim() const { return Z.cols(); }
    Matrix S() const {
        const Matrix L = linalg::tril(S_factor);
        return L * L.transpose();
    }

    void validate_state() const {
        kernel.validate();
        if (Z.rows() < 1) throw ShapeError("model: at least one inducing point is required");
        if (Z.cols() != kernel.dim()) throw ShapeError("model: Z columns != kernel dimension");
        if (m.size() != Z.rows()) throw ShapeError("model: m must have one entry per inducing point");
        if (S_factor.rows() != Z.rows() || S_factor.cols() != Z.rows()) {
            throw ShapeError("model: S_factor must be M x M");
        }
        if (!(S_factor.diagonal().array() > 0.0).all()) {
            throw DomainError("model: S_factor diagonal must be positive");
        }
        if (!(noise_sd > 0.0)) throw DomainError("model: noise_sd must be positive");
    }
};

/// Sparse variational Student-t process: prior u ~ ST(nu, 0, Kzz), q(u) = ST(nu_tilde, m, S).
struct InducingModel : SparseState {
    double nu = 5.0;
    double nu_tilde = 5.0;

    void validate() const {
        validate_state();
        if (!(nu > 2.0)) throw DomainError("model: nu must exceed 2");
        if (!(nu_tilde > 2.0)) throw DomainError("model: nu_tilde must exceed 2");
    }
};

/// Sparse variational Gaussian process baseline: q(u) = N(m, S).
struct SvgpModel : SparseState {
    void validate() const { validate_state(); }
};

template <typename Model>
inline constexpr bool is_student_model = std::is_same_v<Model, InducingModel>;

/// Gradient of a scalar objective in natural coordinates (raw S_factor entries,
/// nu and nu_tilde themselves, log-space kernel hyperparameters and noise).
struct ModelGradient {
    Matrix Z;
    KernelGradient kernel;
    Vector m;
    Matrix S_factor;
    double nu = 0.0;
    double nu_tilde = 0.0;
    double log_noise_sd = 0.0;

    static ModelGradient zeros_like(const SparseState& s) {
        ModelGradient g;
        g.Z = Matrix::Zero(s.Z.rows(), s.Z.cols());
        g.kernel = KernelGradient(s.kernel.dim());
        g.m = Vector::Zero(s.m.size());
        g.S_factor = Matrix::Zero(s.S_factor.rows(), s.S_factor.cols());
        return g;
    }
};

/// Which parameters are free during optimization and how they are tied.
struct ParameterOptions {
    bool train_noise = false;
    /// nu_tilde = nu + tie_offset instead of being a free parameter.
    bool tie_nu_tilde = false;
    double tie_offset = 0.0;
};

inline double softplus(double x) { return x > 30.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }
inline double softplus_inverse(double y) {
    if (!(y > 0.0)) throw DomainError("softplus_inverse: argument must be positive");
    return y > 30.0 ? y + std::log(-std::expm1(-y)) : std::log(std::expm1(y));
}
inline double sigmoid(double x) {
    return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

/// Number of free (unconstrained) coordinates for a model.
template <typename Model>
Index parameter_count(const Model& model, const ParameterOptions& opt = {}) {
    const Index M = model.num_inducing();
    const Index d = model.input_dim();
    Index n = 1 + (model.kernel.ard ? d : 1) + M * d + M + M * (M + 1) / 2;
    if constexpr (is_student_model<Model>) n += opt.tie_nu_tilde ? 1 : 2;
    if (opt.train_noise) n += 1;
    return n;
}

/**
 * Flat unconstrained parameter vector. Layout: log signal variance, log
 * lengthscales (one if tied), Z row-major, m, S_factor lower triangle
 * row-major with log diagonal, then softplus^{-1}(nu - 2) and
 * softplus^{-1}(nu_tilde - 2) for the Student-t model, then log noise_sd.
 */
template <typename Model>
Vector pack(const Model& model, const ParameterOptions& opt = {}) {
    model.validate();
    Vector theta(parameter_count(model, opt));
    Index k = 0;
    theta(k++) = std::log(model.kernel.signal_variance);
    if (model.kernel.ard) {
        for (Index j = 0; j < model.input_dim(); ++j) theta(k++) = std::log(model.kernel.lengthscales(j));
    } else {
        theta(k++) = std::log(model.kernel.lengthscales(0));
    }
    for (Index i = 0; i < model.Z.rows(); ++i)
        for (Index j = 0; j < model.Z.cols(); ++j) theta(k++) = model.Z(i, j);
    for (Index i = 0; i < model.m.size(); ++i) theta(k++) = model.m(i);
    for (Index i = 0; i < model.S_factor.rows(); ++i)
        for (Index j = 0; j <= i; ++j)
            theta(k++) = i == j ? std::log(model.S_factor(i, i)) : model.S_factor(i, j);
    if constexpr (is_student_model<Model>) {
        theta(k++) = softplus_inverse(model.nu - 2.0);
        if (!opt.tie_nu_tilde) theta(k++) = softplus_inverse(model.nu_tilde - 2.0);
    }
    if (opt.train_noise) theta(k++) = std::log(model.noise_sd);
    return theta;
}

/// Writes theta back into an existing model (shapes are taken from it).
template <typename Model>
void unpack(const Vector& theta, Model& model, const ParameterOptions& opt = {}) {
    if (theta.size() != parameter_count(model, opt)) {
        throw ShapeError("unpack: parameter vector has wrong length");
    }
    Index k = 0;
    model.kernel.signal_variance = std::exp(theta(k++));
    if (model.kernel.ard) {
        for (Index j = 0; j < model.input_dim(); ++j) model.kernel.lengthscales(j) = std::exp(theta(k++));
    } else {
        model.kernel.lengthscales.setConstant(std::exp(theta(k++)));
    }
    for (Index i = 0; i < model.Z.rows(); ++i)
        for (Index j = 0; j < model.Z.cols(); ++j) model.Z(i, j) = theta(k++);
    for (Index i = 0; i < model.m.size(); ++i) model.m(i) = theta(k++);
    model.S_factor.setZero();
    for (Index i = 0; i < model.S_factor.rows(); ++i)
        for (Index j = 0; j <= i; ++j)
            model.S_factor(i, j) = i == j ? std::exp(theta(k++)) : theta(k++);
    if constexpr (is_student_model<Model>) {
        model.nu = 2.0 + softplus(theta(k++));
        model.nu_tilde = opt.tie_nu_tilde ? model.nu + opt.tie_offset : 2.0 + softplus(theta(k++));
    }
    if (opt.train_noise) model.noise_sd = std::exp(theta(k++));
}

/// Chain rule from natural-coordinate gradient to the packed layout.
template <typename Model>
Vector pack_gradient(const Model& model, const ModelGradient& g, const ParameterOptions& opt = {}) {
    Vector out(parameter_count(model, opt));
    Index k = 0;
    out(k++) = g.kernel.log_signal_variance;
    if (model.kernel.ard) {
        for (Index j = 0; j < model.input_dim(); ++j) out(k++) = g.kernel.log_lengthscales(j);
    } else {
        out(k++) = g.kernel.log_lengthscales.sum();
    }
    for (Index i = 0; i < model.Z.rows(); ++i)
        for (Index j = 0; j < model.Z.cols(); ++j) out(k++) = g.Z(i, j);
    for (Index i = 0; i < model.m.size(); ++i) out(k++) = g.m(i);
    for (Index i = 0; i < model.S_factor.rows(); ++i)
        for (Index j = 0; j <= i; ++j)
            out(k++) = i == j ? g.S_factor(i, i) * model.S_factor(i, i) : g.S_factor(i, j);
    if constexpr (is_student_model<Model>) {
        const double dnu = g.nu + (opt.tie_nu_tilde ? g.nu_tilde : 0.0);
        out(k++) = dnu * sigmoid(softplus_inverse(model.nu - 2.0));
        if (!opt.tie_nu_tilde) out(k++) = g.nu_tilde * sigmoid(softplus_inverse(model.nu_tilde - 2.0));
    }
    if (opt.train_noise) out(k++) = g.log_noise_sd;
    return out;
}

} // namespace svtp
