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
#include <optional>

#include "svtp/core.hpp"
#include "svtp/distributions.hpp"
#include "svtp/kernels.hpp"
#include "svtp/model.hpp"
#include "svtp/sparse.hpp"

// Uncollapsed sparse variational GP: same sampling path as the Student-t model
// with Gaussian draws, and the closed-form Gaussian KL.

namespace svtp {

namespace detail {

/// KL(N(m, S) || N(0, Kzz)) with optional reverse pass.
inline double kl_gaussian_eval(const SvgpModel& model, const InducingPrior& prior, Adjoints* adj,
                               double scale) {
    const double M = static_cast<double>(model.num_inducing());
    const Matrix L = linalg::tril(model.S_factor);
    const Vector Am = prior.chol.solve_vec(model.m);
    const Matrix AL = prior.chol.solve(L);
    const double trace = L.cwiseProduct(AL).sum() + model.m.dot(Am);
    const double log_det_S = 2.0 * L.diagonal().array().log().sum();
    const double kl = 0.5 * (trace - M + prior.chol.log_det() - log_det_S);
    if (adj) {
        adj->Kzz += (0.5 * scale) * (prior.chol.inverse() - AL * AL.transpose() - Am * Am.transpose());
        Matrix dL = linalg::tril(AL);
        dL.diagonal() -= L.diagonal().cwiseInverse();
        adj->grad.S_factor += scale * dL;
        adj->grad.m += scale * Am;
    }
    return kl;
}

} // namespace detail

/// Closed-form KL between q(u) = N(m, S) and p(u) = N(0, Kzz).
inline double kl_gaussian(const SvgpModel& model) {
    model.validate();
    const detail::InducingPrior prior(model);
    return detail::kl_gaussian_eval(model, prior, nullptr, 0.0);
}

inline ElboNoise draw_elbo_noise(const SvgpModel& model, Index batch, int s, Rng& rng) {
    detail::check_samples(s, "draw_elbo_noise");
    ElboNoise noise;
    noise.likelihood = detail::draw_likelihood_noise_set(model, batch, s, rng);
    return noise;
}

inline ElboBreakdown elbo_svgp_from_noise(const SvgpModel& model, const Matrix& Xb, const Vector& yb,
                                          Index n_total, const ElboNoise& noise,
                                          ModelGradient* grad = nullptr) {
    model.validate();
    detail::check_batch(model, Xb, yb, n_total, "elbo_svgp");
    if (noise.likelihood.empty()) throw DomainError("elbo_svgp: at least one Monte-Carlo sample is required");
    const detail::InducingPrior prior(model);
    const detail::BatchProjection proj(model, prior, Xb);
    std::optional<detail::Adjoints> adj;
    if (grad) adj.emplace(model, Xb.rows());
    detail::Adjoints* a = adj ? &*adj : nullptr;

    ElboBreakdown out;
    out.method = ElboMethod::UB;  // closed-form KL; the method tag is informational here
    out.mc_samples = static_cast<int>(noise.likelihood.size());
    out.expected_loglik =
        summarize(detail::expected_log_lik_eval(model, prior, proj, yb, n_total, noise.likelihood, a, 1.0)).mean;
    out.kl_term = detail::kl_gaussian_eval(model, prior, a, -1.0);
    out.elbo = out.expected_loglik - out.kl_term;
    if (a) {
        a->finalize(model, prior, &proj, &Xb);
        *grad = std::move(a->grad);
    }
    return out;
}

inline ElboBreakdown elbo_svgp(const SvgpModel& model, const Matrix& Xb, const Vector& yb, Index n_total,
                               int s, Rng& rng) {
    model.validate();
    const auto noise = draw_elbo_noise(model, Xb.rows(), s, rng);
    return elbo_svgp_from_noise(model, Xb, yb, n_total, noise);
}

inline ElboBreakdown elbo_svgp_with_gradient(const SvgpModel& model, const Matrix& Xb, const Vector& yb,
                                             Index n_total, int s, Rng& rng, ModelGradient& grad) {
    model.validate();
    const auto noise = draw_elbo_noise(model, Xb.rows(), s, rng);
    return elbo_svgp_from_noise(model, Xb, yb, n_total, noise, &grad);
}

/// Gaussian conditional p(f* | u) = N(k*^T Kzz^{-1} u, k** - k*^T Kzz^{-1} k*).
struct GaussianParams {
    Vector mean;
    Matrix cov;
};

inline GaussianParams conditional_svgp(const SparseState& model, const Matrix& Xstar, const Vector& u) {
    model.validate_state();
    if (u.size() != model.num_inducing()) throw ShapeError("conditional_svgp: dim(u) != M");
    const detail::InducingPrior prior(model);
    const Matrix Kxz = gram_cross(Xstar, model.Z, model.kernel);
    const Matrix T = prior.chol.solve_lower(Kxz.transpose());
    return GaussianParams{Kxz * prior.chol.solve_vec(u), gram(Xstar, model.kernel) - T.transpose() * T};
}

/**
 * Predictive mean k*^T A m and variance k** - k*^T A (Kzz - S) A k* with
 * q(u) integrated out analytically; noise variance added when requested.
 * Passing targets fills the Gaussian log predictive densities (noise included).
 */
inline Prediction predict_svgp(const SvgpModel& model, const Matrix& Xstar, bool with_noise = false,
                               const Vector* ystar = nullptr) {
    model.validate();
    if (ystar && ystar->size() != Xstar.rows()) throw ShapeError("predict_svgp: y* size mismatch");
    const detail::InducingPrior prior(model);
    const detail::BatchProjection proj(model, prior, Xstar);
    const Matrix LtW = linalg::tril(model.S_factor).transpose() * proj.W.transpose();  // M x T
    Prediction out;
    out.mean = proj.W * model.m;
    out.variance = proj.kxx - proj.T.colwise().squaredNorm().transpose() + LtW.colwise().squaredNorm().transpose();
    const double noise_var = model.noise_sd * model.noise_sd;
    if (with_noise) out.variance.array() += noise_var;
    if (ystar) {
        out.log_density.resize(Xstar.rows());
        for (Index i = 0; i < Xstar.rows(); ++i) {
            const double var = out.variance(i) + (with_noise ? 0.0 : noise_var);
            out.log_density(i) = gaussian_log_pdf((*ystar)(i), out.mean(i), var);
        }
    }
    return out;
}

} // namespace svtp
