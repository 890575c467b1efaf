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
#include <gtest/gtest.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>

#include "svtp/training.hpp"
#include "test_support.hpp"

using namespace svtp;

namespace {

Dataset synth_1d(Index n, std::uint64_t seed) {
    Rng rng(seed);
    return standardize(synth_tp(n, 1, 5.0, KernelParams::isotropic(1, 1.0, 1.0), 0.1, rng));
}

TrainConfig small_config(int iters) {
    TrainConfig cfg;
    cfg.max_iters = iters;
    cfg.batch_size = 32;
    cfg.inducing_count = 8;
    cfg.mc_samples = 2;
    cfg.seed = 3;
    return cfg;
}

template <typename Model>
void expect_same_state(const Model& a, const Model& b) {
    EXPECT_EQ(a.Z, b.Z);
    EXPECT_EQ(a.m, b.m);
    EXPECT_EQ(a.S_factor, b.S_factor);
    EXPECT_EQ(a.kernel.lengthscales, b.kernel.lengthscales);
    EXPECT_EQ(a.kernel.signal_variance, b.kernel.signal_variance);
    EXPECT_EQ(a.noise_sd, b.noise_sd);
}

double moving_average(const std::vector<TraceRecord>& trace, std::size_t from, std::size_t len) {
    double s = 0.0;
    for (std::size_t i = from; i < from + len; ++i) s += trace[i].terms.elbo;
    return s / static_cast<double>(len);
}

double min_step_seconds(Index M, Index B, int reps) {
    Rng rng(1);
    const InducingModel model = fixtures::random_svtp(rng, M, 4);
    const Matrix X = fixtures::uniform_matrix(rng, B, 4, -2.0, 2.0);
    const Vector y = fixtures::uniform_matrix(rng, B, 1, -1.0, 1.0);
    double best = std::numeric_limits<double>::infinity();
    for (int r = 0; r < reps; ++r) {
        ModelGradient g;
        const auto t0 = std::chrono::steady_clock::now();
        elbo_with_gradient(model, X, y, 4096, ElboMethod::UB, 1, rng, g);
        best = std::min(best, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    }
    return best;
}

} // namespace

TEST(InitModel, FullInducingSetIsPermutationOfInputs) {
    const Dataset ds = synth_1d(20, 1);
    TrainConfig cfg = small_config(1);
    cfg.inducing_count = 20;
    Rng rng(5);
    const auto model = init_model<InducingModel>(ds, cfg, rng);
    std::vector<double> z(model.Z.data(), model.Z.data() + 20), x(ds.X.data(), ds.X.data() + 20);
    std::sort(z.begin(), z.end());
    std::sort(x.begin(), x.end());
    EXPECT_EQ(z, x);
}

TEST(InitModel, StartsAtPriorAndIsReproducible) {
    const Dataset ds = synth_1d(40, 2);
    const TrainConfig cfg = small_config(1);
    Rng a(9), b(9);
    const auto m1 = init_model<InducingModel>(ds, cfg, a);
    const auto m2 = init_model<InducingModel>(ds, cfg, b);
    expect_same_state(m1, m2);
    EXPECT_EQ(m1.num_inducing(), 8);
    EXPECT_TRUE(m1.m.isZero());
    EXPECT_EQ(m1.nu, 5.0);
    EXPECT_EQ(m1.nu_tilde, 5.0);
    EXPECT_EQ(m1.kernel.signal_variance, 1.0);
    EXPECT_NEAR(m1.kernel.lengthscales(0), 1.0, 1e-12);  // standardized input
    const double nu = 5.0, M = 8.0;
    const double closed = 0.5 * (nu + M) * (std::log1p(M / (nu - 2.0)) - digamma(0.5 * (nu + M)) + digamma(0.5 * nu));
    EXPECT_NEAR(kl_ub(m1), closed, 1e-8);

    TrainConfig tied = cfg;
    tied.tie_nu_tilde = true;
    Rng c(9);
    EXPECT_EQ(init_model<InducingModel>(ds, tied, c).nu_tilde, 45.0);
}

TEST(InitModel, Errors) {
    const Dataset ds = synth_1d(10, 3);
    TrainConfig cfg = small_config(1);
    cfg.inducing_count = 11;
    Rng rng(1);
    EXPECT_THROW(init_model<InducingModel>(ds, cfg, rng), ConfigError);
    cfg = small_config(1);
    cfg.batch_size = 0;
    EXPECT_THROW(cfg.validate(), ConfigError);
    cfg = small_config(1);
    cfg.learning_rate = -1.0;
    EXPECT_THROW(cfg.validate(), ConfigError);
    cfg = small_config(1);
    cfg.inducing_count = 0;
    cfg.inducing_fraction = 0.25;
    EXPECT_EQ(resolve_inducing_count(cfg, 100), 25);
    EXPECT_EQ(resolve_inducing_count(cfg, 2), 1);
}

TEST(Train, KlMethodDefaultsBySizeUnlessSet) {
    TrainConfig cfg;
    EXPECT_EQ(resolve_elbo_method(cfg, 1999), ElboMethod::UB);
    EXPECT_EQ(resolve_elbo_method(cfg, 2000), ElboMethod::MC);
    cfg.elbo_method = ElboMethod::UB;
    EXPECT_EQ(resolve_elbo_method(cfg, 50000), ElboMethod::UB);
    cfg.elbo_method = ElboMethod::MC;
    EXPECT_EQ(resolve_elbo_method(cfg, 10), ElboMethod::MC);
}

TEST(Train, ZeroLearningRateLeavesParametersUnchanged) {
    const Dataset ds = synth_1d(64, 4);
    TrainConfig cfg = small_config(20);
    cfg.learning_rate = 0.0;
    const auto report = train<InducingModel>(ds, cfg);
    Rng rng(cfg.seed);
    const auto init = init_model<InducingModel>(ds, cfg, rng);
    expect_same_state(report.model, init);
    EXPECT_EQ(report.model.nu, init.nu);
    ASSERT_EQ(report.trace.size(), 20u);
    for (const auto& r : report.trace) EXPECT_EQ(r.terms.kl_term, report.trace.front().terms.kl_term);
}

TEST(Train, ElboIncreasesOnOneDimensionalSynth) {
    const Dataset ds = synth_1d(64, 5);
    for (ElboMethod method : {ElboMethod::UB, ElboMethod::MC}) {
        TrainConfig cfg = small_config(600);
        cfg.elbo_method = method;
        const auto report = train<InducingModel>(ds, cfg);
        ASSERT_EQ(report.trace.size(), 600u);
        EXPECT_GT(moving_average(report.trace, 550, 50), moving_average(report.trace, 0, 50));
        EXPECT_EQ(report.trace.back().epoch, 299);
        EXPECT_EQ(report.epoch_seconds.size(), 300u);
    }
    const auto g = train<SvgpModel>(ds, small_config(600));
    EXPECT_GT(moving_average(g.trace, 550, 50), moving_average(g.trace, 0, 50));
}

TEST(Train, PlainSgdAlsoAscends) {
    const Dataset ds = synth_1d(64, 6);
    TrainConfig cfg = small_config(400);
    cfg.optimizer = OptimizerKind::SGD;
    cfg.learning_rate = 1e-6;
    const auto report = train<InducingModel>(ds, cfg);
    EXPECT_GT(moving_average(report.trace, 350, 50), moving_average(report.trace, 0, 50));
}

TEST(Train, DeterministicGivenSeed) {
    const Dataset ds = synth_1d(64, 7);
    TrainConfig cfg = small_config(50);
    cfg.elbo_method = ElboMethod::MC;
    const auto a = train<InducingModel>(ds, cfg);
    const auto b = train<InducingModel>(ds, cfg);
    expect_same_state(a.model, b.model);
    EXPECT_EQ(a.model.nu, b.model.nu);
    EXPECT_EQ(a.model.nu_tilde, b.model.nu_tilde);
    EXPECT_EQ(a.kl_final, b.kl_final);
    ASSERT_EQ(a.trace.size(), b.trace.size());
    for (std::size_t i = 0; i < a.trace.size(); ++i) EXPECT_EQ(a.trace[i].terms.elbo, b.trace[i].terms.elbo);
    cfg.seed = 4;
    EXPECT_NE(train<InducingModel>(ds, cfg).trace.back().terms.elbo, a.trace.back().terms.elbo);
}

TEST(Train, NonFiniteTermIsNamedInDiagnostic) {
    Dataset ds = synth_1d(32, 8);
    ds.y(3) = std::numeric_limits<double>::quiet_NaN();
    TrainConfig cfg = small_config(5);
    cfg.batch_size = 32;
    try {
        train<InducingModel>(ds, cfg);
        FAIL() << "expected NumericalError";
    } catch (const NumericalError& e) {
        EXPECT_NE(std::string(e.what()).find("expected log-likelihood"), std::string::npos) << e.what();
        EXPECT_NE(std::string(e.what()).find("step 0"), std::string::npos) << e.what();
    }
    ElboBreakdown bad;
    bad.kl_term = std::numeric_limits<double>::infinity();
    try {
        detail::require_finite(bad, 7);
        FAIL();
    } catch (const NumericalError& e) {
        EXPECT_NE(std::string(e.what()).find("KL term"), std::string::npos);
    }
}

TEST(Train, UpperBoundDominatesMonteCarloKlAtConvergedParameters) {
    const Dataset ds = synth_1d(128, 9);
    TrainConfig cfg = small_config(800);
    cfg.inducing_count = 16;
    for (ElboMethod method : {ElboMethod::UB, ElboMethod::MC}) {
        cfg.elbo_method = method;
        const auto report = train<InducingModel>(ds, cfg);
        Rng rng(1);
        const McEstimate mc = kl_mc_estimate(report.model, 4096, rng);
        EXPECT_GE(kl_ub(report.model), mc.mean - 3.0 * mc.std_error);
        EXPECT_NEAR(report.kl_final, method == ElboMethod::UB ? kl_ub(report.model) : mc.mean, 5.0 * mc.std_error + 1e-9);
    }
}

TEST(Evaluate, PerfectAndZeroPredictors) {
    const Dataset ds = synth_1d(50, 10);
    Prediction perfect{ds.y, Vector::Constant(50, 1e-6), Vector::Zero(50)};
    EXPECT_NEAR(metrics_from(perfect, ds.y).mse, 0.0, 1e-15);
    Prediction zero{Vector::Zero(50), Vector::Ones(50), Vector::Zero(50)};
    EXPECT_NEAR(metrics_from(zero, ds.y).mse, 1.0, 1e-12);
    Rng rng(1);
    EXPECT_THROW(evaluate(fixtures::random_svtp(rng, 2, 1), subset(ds, {}), 8, rng), ConfigError);
}

TEST(Evaluate, InflatedVarianceLowersLogLikelihood) {
    const Dataset ds = synth_1d(80, 11);
    const auto report = train<SvgpModel>(ds, small_config(300));
    const Prediction p = predict_svgp(report.model, ds.X, true, &ds.y);
    double inflated = 0.0;
    for (Index i = 0; i < ds.size(); ++i) inflated += gaussian_log_pdf(ds.y(i), p.mean(i), 100.0 * p.variance(i));
    EXPECT_LT(inflated, p.log_density.sum());
    Rng rng(2);
    const Metrics m = evaluate(report.model, ds, 8, rng);
    EXPECT_NEAR(m.ll, p.log_density.sum(), 1e-12);
    EXPECT_EQ(m.n, 80);

    const auto t = train<InducingModel>(ds, small_config(300));
    Rng r1(3);
    const Metrics base = evaluate(t.model, ds, 32, r1);
    InducingModel wide = t.model;
    wide.noise_sd *= 10.0;
    Rng r2(3);
    const Metrics widened = evaluate(wide, ds, 32, r2);
    EXPECT_NEAR(widened.mse, base.mse, 1e-12);
    EXPECT_LT(widened.ll, base.ll);
}

TEST(Complexity, StepTimeScalesCubicallyInInducingCount) {
    const double ratio = min_step_seconds(512, 64, 3) / min_step_seconds(256, 64, 5);
    EXPECT_GE(ratio, 4.0);
    EXPECT_LE(ratio, 12.0);
}

TEST(Complexity, StepTimeScalesLinearlyInBatchSize) {
    const double ratio = min_step_seconds(32, 4096, 5) / min_step_seconds(32, 2048, 5);
    EXPECT_GE(ratio, 1.4);
    EXPECT_LE(ratio, 3.0);
}
