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

#include <algorithm>
#include <cmath>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "svtp/distributions.hpp"
#include "svtp/kernels.hpp"
#include "svtp/linalg.hpp"
#include "svtp/model.hpp"
#include "svtp/sparse.hpp"
#include "svtp/special.hpp"

namespace svtp {

/**
 * Conditional p(f | u) at inputs X:
 * ST(nu + M, Kxz Kzz^{-1} u, (nu + beta - 2)/(nu + M - 2) * (Kxx - Kxz Kzz^{-1} Kzx))
 * with beta = u^T Kzz^{-1} u.
 */
inline MvtParams conditional_f_given_u(const InducingModel& model, const Matrix& X, const Vector& u) {
    model.validate();
    if (X.rows() < 1) throw ShapeError("conditional_f_given_u: empty input batch");
    if (u.size() != model.num_inducing()) throw ShapeError("conditional_f_given_u: dim(u) != M");
    const detail::InducingPrior prior(model);
    const Matrix Kxz = gram_cross(X, model.Z, model.kernel);
    const Matrix T = prior.chol.solve_lower(Kxz.transpose());
    const Vector alpha = prior.chol.solve_vec(u);
    const double beta = u.dot(alpha);
    const double M = static_cast<double>(model.num_inducing());

    MvtParams out;
    out.nu = model.nu + M;
    out.phi = Kxz * alpha;
    out.scale = ((model.nu + beta - 2.0) / (model.nu + M - 2.0)) *
                (gram(X, model.kernel) - T.transpose() * T);
    return out;
}

/// Per-point marginals of p(f | u): common dof, means and variances.
struct PointwiseStudent {
    double nu = 0.0;
    Vector mean;
    Vector variance;
};

inline PointwiseStudent conditional_f_given_u_diag(const InducingModel& model, const Matrix& X,
                                                   const Vector& u) {
    model.validate();
    if (u.size() != model.num_inducing()) throw ShapeError("conditional_f_given_u_diag: dim(u) != M");
    const detail::InducingPrior prior(model);
    const detail::BatchProjection proj(model, prior, X);
    const auto c = detail::pointwise_conditional(prior, proj, u);
    const double M = static_cast<double>(model.num_inducing());
    return PointwiseStudent{model.nu + M, c.mean,
                            ((model.nu + c.beta - 2.0) / (model.nu + M - 2.0)) * c.schur};
}

/// The variational distribution q(u) = ST(nu_tilde, m, S).
inline MvtParams q_u(const InducingModel& model) {
    return MvtParams{model.nu_tilde, model.m, model.S()};
}

/// The prior p(u) = ST(nu, 0, Kzz).
inline MvtParams p_u(const InducingModel& model) {
    return MvtParams{model.nu, Vector::Zero(model.num_inducing()), gram(model.Z, model.kernel)};
}

/// count x M draws u = sqrt(r (nu_tilde - 2)) S_factor eps + m.
inline Matrix sample_q_u(const InducingModel& model, std::size_t count, Rng& rng) {
    model.validate();
    const Index M = model.num_inducing();
    Matrix out(static_cast<Index>(count), M);
    const Matrix L = linalg::tril(model.S_factor);
    for (std::size_t i = 0; i < count; ++i) {
        const auto noise = draw_student_noise(model.nu_tilde, M, rng);
        out.row(static_cast<Index>(i)) = student_affine(model.m, L, model.nu_tilde, noise).transpose();
    }
    return out;
}

namespace detail {

inline void check_batch(const SparseState& model, const Matrix& Xb, const Vector& yb,
                        Index n_total, const char* where) {
    if (Xb.rows() != yb.size()) throw ShapeError(std::string(where) + ": X and y row counts differ");
    if (Xb.rows() < 1) throw ShapeError(std::string(where) + ": empty minibatch");
    if (Xb.cols() != model.input_dim()) throw ShapeError(std::string(where) + ": X has wrong column count");
    if (n_total < Xb.rows()) throw ConfigError(std::string(where) + ": batch larger than n_total");
}

inline void check_samples(int s, const char* where) {
    if (s < 1) throw DomainError(std::string(where) + ": at least one Monte-Carlo sample is required");
}

/// Upper bound of KL(q || p) with L2 replaced by its Jensen bound; optional reverse pass.
inline double kl_ub_eval(const InducingModel& model, const InducingPrior& prior, Adjoints* adj,
                         double scale) {
    const double M = static_cast<double>(model.num_inducing());
    const double nu = model.nu;
    const double nt = model.nu_tilde;
    const Matrix L = linalg::tril(model.S_factor);

    const Vector Am = prior.chol.solve_vec(model.m);
    const Matrix AL = prior.chol.solve(L);
    const double trace = L.cwiseProduct(AL).sum() + model.m.dot(Am);
    const double log_det_S = 2.0 * L.diagonal().array().log().sum();

    const double l1 = digamma(0.5 * (nt + M)) - digamma(0.5 * nt);
    const double l2 = std::log1p(trace / (nu - 2.0));
    const double c = 0.5 * (prior.chol.log_det() - log_det_S) +
                     0.5 * M * (std::log(nu - 2.0) - std::log(nt - 2.0)) + log_gamma(0.5 * (nt + M)) -
                     log_gamma(0.5 * nt) - log_gamma(0.5 * (nu + M)) + log_gamma(0.5 * nu);
    const double kl = c - 0.5 * (nt + M) * l1 + 0.5 * (nu + M) * l2;

    if (adj) {
        const double c2 = 0.5 * (nu + M) / (nu - 2.0 + trace);
        adj->Kzz += scale * (0.5 * prior.chol.inverse() - c2 * (AL * AL.transpose() + Am * Am.transpose()));
        Matrix dL = 2.0 * c2 * linalg::tril(AL);
        dL.diagonal() -= L.diagonal().cwiseInverse();
        adj->grad.S_factor += scale * dL;
        adj->grad.m += scale * 2.0 * c2 * Am;
        adj->grad.nu += scale * (0.5 * M / (nu - 2.0) - 0.5 * digamma(0.5 * (nu + M)) +
                                 0.5 * digamma(0.5 * nu) + 0.5 * l2 +
                                 0.5 * (nu + M) * (1.0 / (nu - 2.0 + trace) - 1.0 / (nu - 2.0)));
        adj->grad.nu_tilde +=
            scale * (-0.5 * M / (nt - 2.0) + 0.5 * digamma(0.5 * (nt + M)) - 0.5 * digamma(0.5 * nt) -
                     0.5 * l1 - 0.25 * (nt + M) * (trigamma(0.5 * (nt + M)) - trigamma(0.5 * nt)));
    }
    return kl;
}

/// Per-sample log q(u_j) - log p(u_j) with u_j ~ q; optional reverse pass of their mean.
inline std::vector<double> kl_mc_eval(const InducingModel& model, const InducingPrior& prior,
                                      const std::vector<StudentNoise>& noise, Adjoints* adj,
                                      double scale) {
    const double M = static_cast<double>(model.num_inducing());
    const double nu = model.nu;
    const double nt = model.nu_tilde;
    const Matrix L = linalg::tril(model.S_factor);
    const double log_det_S = 2.0 * L.diagonal().array().log().sum();
    const double log_det_K = prior.chol.log_det();
    const double q_const = log_gamma(0.5 * (nt + M)) - log_gamma(0.5 * nt) -
                           0.5 * M * std::log((nt - 2.0) * std::numbers::pi) - 0.5 * log_det_S;
    const double p_const = log_gamma(0.5 * (nu + M)) - log_gamma(0.5 * nu) -
                           0.5 * M * std::log((nu - 2.0) * std::numbers::pi) - 0.5 * log_det_K;
    const double dq_dnt_const = 0.5 * digamma(0.5 * (nt + M)) - 0.5 * digamma(0.5 * nt) - 0.5 * M / (nt - 2.0);
    const double dp_dnu_const = 0.5 * digamma(0.5 * (nu + M)) - 0.5 * digamma(0.5 * nu) - 0.5 * M / (nu - 2.0);

    std::vector<double> per_sample;
    per_sample.reserve(noise.size());
    const double b = noise.empty() ? 0.0 : scale / static_cast<double>(noise.size());
    if (adj && !noise.empty()) {
        adj->Kzz += (0.5 * scale) * prior.chol.inverse();
        adj->grad.S_factor.diagonal() -= scale * L.diagonal().cwiseInverse();
    }

    for (const auto& draw : noise) {
        const Vector Leps = L * draw.eps;
        const ValueWithSlope r = inverse_chi2_at(draw.r, draw.nu, nt, adj != nullptr);
        const double cu = std::sqrt(r.value * (nt - 2.0));
        const Vector u = model.m + cu * Leps;
        // (u - m)^T S^{-1} (u - m) / (nu_tilde - 2) = r |eps|^2 under the affine map.
        const double eps2 = draw.eps.squaredNorm();
        const double zq = r.value * eps2;
        const double log_q = q_const - 0.5 * (nt + M) * std::log1p(zq);
        const Vector alpha = prior.chol.solve_vec(u);
        const double beta = u.dot(alpha);
        const double log_p = p_const - 0.5 * (nu + M) * std::log1p(beta / (nu - 2.0));
        per_sample.push_back(log_q - log_p);

        if (!adj) continue;
        adj->grad.nu_tilde += b * (dq_dnt_const - 0.5 * std::log1p(zq) - 0.5 * (nt + M) * eps2 * r.d_nu / (1.0 + zq));
        const double beta_bar = b * 0.5 * (nu + M) / (nu - 2.0 + beta);
        adj->Kzz.noalias() -= beta_bar * alpha * alpha.transpose();
        adj->grad.nu -= b * (dp_dnu_const - 0.5 * std::log1p(beta / (nu - 2.0)) +
                             0.5 * (nu + M) * beta / ((nu - 2.0) * (nu - 2.0 + beta)));
        const Vector u_bar = 2.0 * beta_bar * alpha;
        adj->grad.m += u_bar;
        adj->grad.S_factor += cu * linalg::tril(u_bar * draw.eps.transpose());
        adj->grad.nu_tilde += u_bar.dot(Leps) * 0.5 * cu * (r.d_nu / r.value + 1.0 / (nt - 2.0));
    }
    return per_sample;
}

inline std::vector<StudentNoise> draw_kl_noise(const InducingModel& model, int s, Rng& rng) {
    std::vector<StudentNoise> out;
    out.reserve(static_cast<std::size_t>(s));
    for (int j = 0; j < s; ++j) out.push_back(draw_student_noise(model.nu_tilde, model.num_inducing(), rng));
    return out;
}

template <typename Model>
std::vector<LikelihoodNoise> draw_likelihood_noise_set(const Model& model, Index batch, int s, Rng& rng) {
    std::vector<LikelihoodNoise> out;
    out.reserve(static_cast<std::size_t>(s));
    for (int j = 0; j < s; ++j) out.push_back(draw_likelihood_noise(model, batch, rng));
    return out;
}

} // namespace detail

/// Noise for one ELBO evaluation: s likelihood draws, then s KL draws for MC.
inline ElboNoise draw_elbo_noise(const InducingModel& model, Index batch, ElboMethod method, int s,
                                 Rng& rng) {
    detail::check_samples(s, "draw_elbo_noise");
    ElboNoise noise;
    noise.likelihood = detail::draw_likelihood_noise_set(model, batch, s, rng);
    if (method == ElboMethod::MC) noise.kl = detail::draw_kl_noise(model, s, rng);
    return noise;
}

/// Expected log-likelihood with its Monte-Carlo standard error.
inline McEstimate expected_log_lik_estimate(const InducingModel& model, const Matrix& Xb,
                                            const Vector& yb, Index n_total, int s, Rng& rng) {
    model.validate();
    detail::check_batch(model, Xb, yb, n_total, "expected_log_lik");
    detail::check_samples(s, "expected_log_lik");
    const detail::InducingPrior prior(model);
    const detail::BatchProjection proj(model, prior, Xb);
    const auto noise = detail::draw_likelihood_noise_set(model, Xb.rows(), s, rng);
    return summarize(detail::expected_log_lik_eval(model, prior, proj, yb, n_total, noise, nullptr));
}

inline double expected_log_lik(const InducingModel& model, const Matrix& Xb, const Vector& yb,
                               Index n_total, int s, Rng& rng) {
    return expected_log_lik_estimate(model, Xb, yb, n_total, s, rng).mean;
}

/// Monte-Carlo KL(q(u) || p(u)) with its standard error.
inline McEstimate kl_mc_estimate(const InducingModel& model, int s, Rng& rng) {
    model.validate();
    detail::check_samples(s, "kl_mc");
    const detail::InducingPrior prior(model);
    const auto noise = detail::draw_kl_noise(model, s, rng);
    return summarize(detail::kl_mc_eval(model, prior, noise, nullptr, 0.0));
}

inline double kl_mc(const InducingModel& model, int s, Rng& rng) { return kl_mc_estimate(model, s, rng).mean; }

/// Closed-form upper bound on KL(q(u) || p(u)).
inline double kl_ub(const InducingModel& model) {
    model.validate();
    const detail::InducingPrior prior(model);
    return detail::kl_ub_eval(model, prior, nullptr, 0.0);
}

/**
 * ELBO for fixed noise. When `grad` is non-null it receives the exact gradient
 * of the returned elbo with respect to the model parameters.
 *
 * With `expected_nu_tilde_gradient` the nu_tilde component instead carries only
 * the KL contribution: the first two moments of q(u) do not depend on nu_tilde,
 * so the expected log-likelihood has zero nu_tilde derivative and its sampled
 * derivative is pure noise.
 */
inline ElboBreakdown elbo_from_noise(const InducingModel& model, const Matrix& Xb, const Vector& yb,
                                     Index n_total, ElboMethod method, const ElboNoise& noise,
                                     ModelGradient* grad = nullptr, bool expected_nu_tilde_gradient = false) {
    model.validate();
    detail::check_batch(model, Xb, yb, n_total, "elbo");
    if (noise.likelihood.empty()) throw DomainError("elbo: at least one Monte-Carlo sample is required");
    if (method == ElboMethod::MC && noise.kl.empty()) throw DomainError("elbo: MC method needs KL draws");

    const detail::InducingPrior prior(model);
    const detail::BatchProjection proj(model, prior, Xb);
    std::optional<detail::Adjoints> adj;
    if (grad) {
        adj.emplace(model, Xb.rows());
        adj->loglik_nu_tilde_path = !expected_nu_tilde_gradient;
    }
    detail::Adjoints* a = adj ? &*adj : nullptr;

    ElboBreakdown out;
    out.method = method;
    out.mc_samples = static_cast<int>(noise.likelihood.size());
    out.expected_loglik =
        summarize(detail::expected_log_lik_eval(model, prior, proj, yb, n_total, noise.likelihood, a, 1.0)).mean;
    if (method == ElboMethod::UB) {
        out.kl_term = detail::kl_ub_eval(model, prior, a, -1.0);
    } else {
        out.kl_term = summarize(detail::kl_mc_eval(model, prior, noise.kl, a, -1.0)).mean;
    }
    out.elbo = out.expected_loglik - out.kl_term;
    if (a) {
        a->finalize(model, prior, &proj, &Xb);
        *grad = std::move(a->grad);
    }
    return out;
}

inline ElboBreakdown elbo(const InducingModel& model, const Matrix& Xb, const Vector& yb, Index n_total,
                          ElboMethod method, int s, Rng& rng) {
    model.validate();
    detail::check_samples(s, "elbo");
    const auto noise = draw_elbo_noise(model, Xb.rows(), method, s, rng);
    return elbo_from_noise(model, Xb, yb, n_total, method, noise);
}

inline ElboBreakdown elbo_with_gradient(const InducingModel& model, const Matrix& Xb, const Vector& yb,
                                        Index n_total, ElboMethod method, int s, Rng& rng,
                                        ModelGradient& grad) {
    model.validate();
    detail::check_samples(s, "elbo");
    const auto noise = draw_elbo_noise(model, Xb.rows(), method, s, rng);
    return elbo_from_noise(model, Xb, yb, n_total, method, noise, &grad);
}

/**
 * Predictive distribution of f* at Xstar given u:
 * ST(nu + M, k*^T Kzz^{-1} u, (nu + beta - 2)/(nu + M - 2) (k** - k*^T Kzz^{-1} k*)).
 * With `with_noise` the observation variance is added to the diagonal.
 */
inline MvtParams predict(const InducingModel& model, const Matrix& Xstar, const Vector& u,
                         bool with_noise = false) {
    MvtParams out = conditional_f_given_u(model, Xstar, u);
    if (with_noise) out.scale.diagonal().array() += model.noise_sd * model.noise_sd;
    return out;
}

/**
 * Exact mean and variance of f* (plus noise if requested) with u ~ q(u)
 * integrated out: mean W m and variance
 * (nu + Tr(A S) + m^T A m - 2)/(nu + M - 2) Sigma + diag(W S W^T), W = K*z A.
 */
inline Prediction predict_moments(const InducingModel& model, const Matrix& Xstar, bool with_noise = false) {
    model.validate();
    const double M = static_cast<double>(model.num_inducing());
    const detail::InducingPrior prior(model);
    const detail::BatchProjection proj(model, prior, Xstar);
    const Matrix L = linalg::tril(model.S_factor);
    const double expected_beta = L.cwiseProduct(prior.chol.solve(L)).sum() + model.m.dot(prior.chol.solve_vec(model.m));
    const Matrix LtW = L.transpose() * proj.W.transpose();
    Prediction out;
    out.mean = proj.W * model.m;
    out.variance = ((model.nu + expected_beta - 2.0) / (model.nu + M - 2.0)) * proj.sigma +
                   LtW.colwise().squaredNorm().transpose();
    if (with_noise) out.variance.array() += model.noise_sd * model.noise_sd;
    return out;
}

/**
 * Predictive summary averaged over u ~ q(u). Mean and variance are the exact
 * mixture moments including observation noise; log densities of y* are the
 * log-mean over s draws of u of the per-draw Student-t densities.
 */
inline Prediction predict_marginalized(const InducingModel& model, const Matrix& Xstar, int s, Rng& rng,
                                       const Vector* ystar = nullptr) {
    model.validate();
    detail::check_samples(s, "predict_marginalized");
    if (ystar && ystar->size() != Xstar.rows()) throw ShapeError("predict_marginalized: y* size mismatch");
    Prediction out = predict_moments(model, Xstar, true);
    if (!ystar) return out;
    const Index T = Xstar.rows();
    const double nu_f = model.nu + static_cast<double>(model.num_inducing());
    const double noise_var = model.noise_sd * model.noise_sd;
    const detail::InducingPrior prior(model);
    const detail::BatchProjection proj(model, prior, Xstar);
    const Matrix us = sample_q_u(model, static_cast<std::size_t>(s), rng);

    Matrix logd(T, s);
    for (int j = 0; j < s; ++j) {
        const auto c = detail::pointwise_conditional(prior, proj, us.row(j).transpose());
        const Vector var = ((model.nu + c.beta - 2.0) / (nu_f - 2.0)) * c.schur;
        for (Index i = 0; i < T; ++i) {
            logd(i, j) = student_t_log_pdf((*ystar)(i), nu_f, c.mean(i), var(i) + noise_var);
        }
    }
    out.log_density.resize(T);
    const double ds = static_cast<double>(s);
    for (Index i = 0; i < T; ++i) {
        const double mx = logd.row(i).maxCoeff();
        out.log_density(i) = mx + std::log((logd.row(i).array() - mx).exp().sum() / ds);
    }
    return out;
}

/**
 * Closed-form marginal of f under q(u) in the tied regime nu_tilde = nu + n:
 * ST(nu, Kxz A m, Kxx - Kxz A (Kzz - S) A Kzx) with A = Kzz^{-1}.
 * If `tied_n` is given the model must satisfy nu_tilde == nu + tied_n.
 */
inline MvtParams marginal_q_f(const InducingModel& model, const Matrix& X,
                              std::optional<Index> tied_n = std::nullopt) {
    model.validate();
    if (tied_n) {
        const double expected = model.nu + static_cast<double>(*tied_n);
        if (std::abs(model.nu_tilde - expected) > 1e-9 * std::max(1.0, expected)) {
            throw DomainError("marginal_q_f: requires nu_tilde == nu + n");
        }
    }
    const detail::InducingPrior prior(model);
    const Matrix Kxz = gram_cross(X, model.Z, model.kernel);
    const Matrix T = prior.chol.solve_lower(Kxz.transpose());
    const Matrix W = prior.chol.solve(Kxz.transpose());  // A Kzx
    const Matrix LtW = linalg::tril(model.S_factor).transpose() * W;

    MvtParams out;
    out.nu = model.nu;
    out.phi = W.transpose() * model.m;
    out.scale = gram(X, model.kernel) - T.transpose() * T + LtW.transpose() * LtW;
    linalg::robust_cholesky(out.scale, "marginal_q_f covariance");
    return out;
}

} // namespace svtp
