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
#include <chrono>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "svtp/core.hpp"
#include "svtp/data.hpp"
#include "svtp/model.hpp"
#include "svtp/svgp.hpp"

namespace svtp {

enum class OptimizerKind { SGD, Adam };

inline const char* to_string(OptimizerKind k) { return k == OptimizerKind::SGD ? "SGD" : "Adam"; }

struct TrainConfig {
    int max_iters = 5000;
    int batch_size = 1024;
    double learning_rate = 0.01;
    OptimizerKind optimizer = OptimizerKind::Adam;
    /// Unset picks UB below kAutoMcThreshold training points and MC otherwise.
    std::optional<ElboMethod> elbo_method;
    int mc_samples = 8;
    std::uint64_t seed = 0;
    /// Absolute inducing count; 0 means use inducing_fraction * n.
    int inducing_count = 0;
    double inducing_fraction = 0.25;
    double noise_sd = 0.10;
    bool train_noise = false;
    /// Ties nu_tilde = nu + n_train during optimization.
    bool tie_nu_tilde = false;
    bool ard = true;
    bool kmeans_init = false;
    /// Drops the zero-mean sampled nu_tilde path of the expected log-likelihood gradient.
    bool expected_nu_tilde_gradient = true;
    double initial_nu = 5.0;
    /// Samples of u used for predictive log densities in evaluate().
    int eval_samples = 64;
    /// Samples used for the final Monte-Carlo KL report.
    int kl_report_samples = 2048;

    void validate() const {
        if (max_iters < 0) throw ConfigError("TrainConfig: max_iters must be >= 0");
        if (batch_size < 1) throw ConfigError("TrainConfig: batch_size must be >= 1");
        if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
            throw ConfigError("TrainConfig: learning_rate must be a finite non-negative number");
        }
        if (mc_samples < 1) throw ConfigError("TrainConfig: mc_samples must be >= 1");
        if (inducing_count < 0) throw ConfigError("TrainConfig: inducing_count must be >= 0 (0 selects inducing_fraction)");
        if (inducing_count == 0 && !(inducing_fraction > 0.0 && inducing_fraction <= 1.0)) {
            throw ConfigError("TrainConfig: inducing_fraction must lie in (0, 1]");
        }
        if (!(noise_sd > 0.0)) throw ConfigError("TrainConfig: noise_sd must be positive");
        if (!(initial_nu > 2.0)) throw ConfigError("TrainConfig: initial_nu must exceed 2");
        if (eval_samples < 1 || kl_report_samples < 1) throw ConfigError("TrainConfig: sample counts must be >= 1");
    }
};

inline constexpr Index kAutoMcThreshold = 2000;

inline ElboMethod resolve_elbo_method(const TrainConfig& cfg, Index n_train) {
    if (cfg.elbo_method) return *cfg.elbo_method;
    return n_train < kAutoMcThreshold ? ElboMethod::UB : ElboMethod::MC;
}

inline Index resolve_inducing_count(const TrainConfig& cfg, Index n) {
    Index M = cfg.inducing_count > 0
                  ? static_cast<Index>(cfg.inducing_count)
                  : static_cast<Index>(std::llround(cfg.inducing_fraction * static_cast<double>(n)));
    M = std::max<Index>(M, 1);
    if (M > n) {
        throw ConfigError("inducing_count " + std::to_string(M) + " exceeds training size " + std::to_string(n));
    }
    return M;
}

struct TraceRecord {
    int step = 0;
    int epoch = 0;
    ElboBreakdown terms;
};

template <typename Model>
struct TrainReport {
    Model model;
    std::vector<TraceRecord> trace;
    std::vector<double> epoch_seconds;
    /// KL term of the final parameters: the bound for UB, a large-sample MC mean for MC.
    double kl_final = 0.0;
    std::uint64_t seed = 0;
    ElboMethod method = ElboMethod::UB;
    Index n_train = 0;
};

namespace detail {

/// Lloyd iterations from a random-subset start.
inline Matrix kmeans(const Matrix& X, Matrix centers, int iters = 25) {
    const Index M = centers.rows();
    std::vector<Index> assign(static_cast<std::size_t>(X.rows()), 0);
    for (int it = 0; it < iters; ++it) {
        for (Index i = 0; i < X.rows(); ++i) {
            Index best = 0;
            (centers.rowwise() - X.row(i)).rowwise().squaredNorm().minCoeff(&best);
            assign[static_cast<std::size_t>(i)] = best;
        }
        Matrix sums = Matrix::Zero(M, X.cols());
        Vector counts = Vector::Zero(M);
        for (Index i = 0; i < X.rows(); ++i) {
            sums.row(assign[static_cast<std::size_t>(i)]) += X.row(i);
            counts(assign[static_cast<std::size_t>(i)]) += 1.0;
        }
        for (Index k = 0; k < M; ++k)
            if (counts(k) > 0.0) centers.row(k) = sums.row(k) / counts(k);
    }
    return centers;
}

inline ParameterOptions parameter_options(const TrainConfig& cfg, Index n_train) {
    return ParameterOptions{cfg.train_noise, cfg.tie_nu_tilde, static_cast<double>(n_train)};
}

inline ElboBreakdown objective(const InducingModel& model, const Matrix& Xb, const Vector& yb, Index n,
                               const TrainConfig& cfg, Rng& rng, ModelGradient* grad) {
    const ElboMethod method = resolve_elbo_method(cfg, n);
    const auto noise = draw_elbo_noise(model, Xb.rows(), method, cfg.mc_samples, rng);
    return elbo_from_noise(model, Xb, yb, n, method, noise, grad, cfg.expected_nu_tilde_gradient);
}

inline ElboBreakdown objective(const SvgpModel& model, const Matrix& Xb, const Vector& yb, Index n,
                               const TrainConfig& cfg, Rng& rng, ModelGradient* grad) {
    const auto noise = draw_elbo_noise(model, Xb.rows(), cfg.mc_samples, rng);
    return elbo_svgp_from_noise(model, Xb, yb, n, noise, grad);
}

inline void require_finite(const ElboBreakdown& t, int step) {
    const auto fail = [&](const char* term, double v) {
        throw NumericalError("non-finite " + std::string(term) + " (" + std::to_string(v) + ") at step " +
                             std::to_string(step));
    };
    if (!std::isfinite(t.expected_loglik)) fail("expected log-likelihood", t.expected_loglik);
    if (!std::isfinite(t.kl_term)) fail("KL term", t.kl_term);
    if (!std::isfinite(t.elbo)) fail("ELBO", t.elbo);
}

} // namespace detail

/**
 * Initial model: Z a random subset of the training inputs (optionally refined
 * by k-means), m = 0, S_factor = chol(Kzz), unit signal variance, lengthscales
 * equal to the per-dimension input std, nu = nu_tilde = cfg.initial_nu.
 */
template <typename Model>
Model init_model(const Dataset& train, const TrainConfig& cfg, Rng& rng) {
    cfg.validate();
    const Index n = train.size();
    const Index d = train.dim();
    if (n < 1 || d < 1) throw ConfigError("init_model: empty training set");
    const Index M = resolve_inducing_count(cfg, n);

    std::vector<Index> idx(static_cast<std::size_t>(n));
    std::iota(idx.begin(), idx.end(), Index{0});
    std::shuffle(idx.begin(), idx.end(), rng);
    Model model;
    model.Z.resize(M, d);
    for (Index i = 0; i < M; ++i) model.Z.row(i) = train.X.row(idx[static_cast<std::size_t>(i)]);
    if (cfg.kmeans_init) model.Z = detail::kmeans(train.X, model.Z);

    Vector ell(d);
    for (Index j = 0; j < d; ++j) {
        const double sd = n > 1 ? mean_std(train.X.col(j)).second : 1.0;
        ell(j) = sd > 0.0 ? sd : 1.0;
    }
    model.kernel.signal_variance = 1.0;
    model.kernel.ard = cfg.ard;
    model.kernel.lengthscales = cfg.ard ? ell : Vector::Constant(d, ell.mean());
    model.m = Vector::Zero(M);
    model.S_factor = linalg::robust_cholesky(gram(model.Z, model.kernel), "init K_ZZ").L;
    model.noise_sd = cfg.noise_sd;
    if constexpr (is_student_model<Model>) {
        model.nu = cfg.initial_nu;
        model.nu_tilde = cfg.tie_nu_tilde ? cfg.initial_nu + static_cast<double>(n) : cfg.initial_nu;
    }
    model.validate();
    return model;
}

inline McEstimate final_kl(const InducingModel& model, const TrainConfig& cfg, Rng& rng) {
    if (cfg.elbo_method.value_or(ElboMethod::UB) == ElboMethod::UB) return McEstimate{kl_ub(model), 0.0};
    return kl_mc_estimate(model, cfg.kl_report_samples, rng);
}

inline McEstimate final_kl(const SvgpModel& model, const TrainConfig&, Rng&) {
    return McEstimate{kl_gaussian(model), 0.0};
}

/**
 * Stochastic-gradient ascent on the ELBO over shuffled minibatches with the
 * n / B scaling. Deterministic given the dataset and cfg.seed.
 */
template <typename Model>
TrainReport<Model> train(const Dataset& train_set, const TrainConfig& cfg) {
    cfg.validate();
    const Index n = train_set.size();
    Rng rng(cfg.seed);
    if (!cfg.elbo_method) {
        TrainConfig resolved = cfg;
        resolved.elbo_method = resolve_elbo_method(cfg, n);
        return train<Model>(train_set, resolved);
    }
    TrainReport<Model> report;
    report.seed = cfg.seed;
    report.method = *cfg.elbo_method;
    report.n_train = n;
    report.model = init_model<Model>(train_set, cfg, rng);
    Model& model = report.model;

    const ParameterOptions opt = detail::parameter_options(cfg, n);
    Vector theta = pack(model, opt);
    Vector m1 = Vector::Zero(theta.size());
    Vector m2 = Vector::Zero(theta.size());
    constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;

    const Index B = std::min<Index>(cfg.batch_size, n);
    std::vector<Index> perm(static_cast<std::size_t>(n));
    std::iota(perm.begin(), perm.end(), Index{0});
    Matrix Xb;
    Vector yb;
    report.trace.reserve(static_cast<std::size_t>(cfg.max_iters));

    int step = 0;
    int epoch = 0;
    while (step < cfg.max_iters) {
        const auto t0 = std::chrono::steady_clock::now();
        std::shuffle(perm.begin(), perm.end(), rng);
        for (Index start = 0; start < n && step < cfg.max_iters; start += B) {
            const Index len = std::min(B, n - start);
            Xb.resize(len, train_set.dim());
            yb.resize(len);
            for (Index i = 0; i < len; ++i) {
                Xb.row(i) = train_set.X.row(perm[static_cast<std::size_t>(start + i)]);
                yb(i) = train_set.y(perm[static_cast<std::size_t>(start + i)]);
            }
            ModelGradient g;
            const ElboBreakdown terms = detail::objective(model, Xb, yb, n, cfg, rng, &g);
            detail::require_finite(terms, step);
            const Vector grad = pack_gradient(model, g, opt);
            if (!grad.allFinite()) {
                throw NumericalError("non-finite ELBO gradient at step " + std::to_string(step));
            }
            report.trace.push_back(TraceRecord{step, epoch, terms});
            ++step;

            if (cfg.learning_rate > 0.0) {
                if (cfg.optimizer == OptimizerKind::Adam) {
                    m1 = b1 * m1 + (1.0 - b1) * grad;
                    m2 = b2 * m2 + (1.0 - b2) * grad.cwiseAbs2();
                    const double c1 = 1.0 - std::pow(b1, step);
                    const double c2 = 1.0 - std::pow(b2, step);
                    theta.array() += cfg.learning_rate * (m1.array() / c1) / ((m2.array() / c2).sqrt() + eps);
                } else {
                    theta += cfg.learning_rate * grad;
                }
                unpack(theta, model, opt);
            }
        }
        const auto t1 = std::chrono::steady_clock::now();
        report.epoch_seconds.push_back(std::chrono::duration<double>(t1 - t0).count());
        ++epoch;
    }
    report.kl_final = final_kl(model, cfg, rng).mean;
    if (!std::isfinite(report.kl_final)) throw NumericalError("non-finite KL term after training");
    return report;
}

struct Metrics {
    double mse = 0.0;
    double ll = 0.0;
    Index n = 0;
};

/// Mean squared error of the predictive mean and summed log predictive density.
inline Metrics metrics_from(const Prediction& pred, const Vector& y) {
    Metrics m;
    m.n = y.size();
    m.mse = (pred.mean - y).squaredNorm() / static_cast<double>(y.size());
    m.ll = pred.log_density.sum();
    return m;
}

inline Metrics evaluate(const InducingModel& model, const Dataset& test, int s, Rng& rng) {
    if (test.size() == 0) throw ConfigError("evaluate: empty test split");
    return metrics_from(predict_marginalized(model, test.X, s, rng, &test.y), test.y);
}

inline Metrics evaluate(const SvgpModel& model, const Dataset& test, int, Rng&) {
    if (test.size() == 0) throw ConfigError("evaluate: empty test split");
    return metrics_from(predict_svgp(model, test.X, true, &test.y), test.y);
}

} // namespace svtp
