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

// Experiment commands: cross-validated training, timing benchmark, KL-term
// comparison and density reports, all driven by one JSON config.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <exception>
#include <iomanip>
#include <mutex>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "svtp/data.hpp"
#include "svtp/full_tp.hpp"
#include "svtp/io.hpp"
#include "svtp/training.hpp"

namespace svtp {

enum class ModelKind { SvtpUB, SvtpMC, Svgp };

inline std::string to_string(ModelKind k) {
    switch (k) {
        case ModelKind::SvtpUB: return "SVTP-UB";
        case ModelKind::SvtpMC: return "SVTP-MC";
        case ModelKind::Svgp: return "SVGP";
    }
    return "?";
}

inline ModelKind parse_model_kind(const std::string& s) {
    if (s == "SVTP-UB") return ModelKind::SvtpUB;
    if (s == "SVTP-MC") return ModelKind::SvtpMC;
    if (s == "SVGP") return ModelKind::Svgp;
    throw ConfigError("unknown model kind '" + s + "' (expected SVTP-UB, SVTP-MC or SVGP)");
}

struct SynthSpec {
    Index n = 512;
    Index d = 4;
    double nu = 5.0;
    double signal_variance = 1.0;
    double lengthscale = 1.0;
    double noise_sd = 0.10;
};

struct OutlierSpec {
    bool enabled = false;
    double fraction = 0.05;
    double magnitude = 3.0;
    bool symmetric = false;
};

struct DatasetSpec {
    /// CSV path; empty when `synthetic` is set.
    std::string path;
    std::string target;
    std::string name;
    bool synthetic = false;
    SynthSpec synth;
    OutlierSpec outliers;
    bool leak_free = true;
};

struct BenchmarkSpec {
    std::vector<double> inducing_fractions{0.1, 0.25};
    /// Dataset sizes to time; empty means the dataset as loaded.
    std::vector<Index> sizes;
    int epochs = 3;
    bool full_tp = true;
};

struct ExperimentConfig {
    DatasetSpec dataset;
    ModelKind model = ModelKind::SvtpUB;
    TrainConfig train;
    std::string out_dir = "out";
    int repetitions = 1;
    /// Worker threads for independent folds.
    int threads = 1;
    BenchmarkSpec benchmark;
    std::optional<double> density_bandwidth;

    void validate() const {
        train.validate();
        if (repetitions < 1) throw ConfigError("config: repetitions must be >= 1");
        if (threads < 1) throw ConfigError("config: threads must be >= 1");
        if (!dataset.synthetic && dataset.path.empty()) throw ConfigError("config: dataset.path or dataset.synthetic required");
        if (benchmark.epochs < 1) throw ConfigError("config: benchmark.epochs must be >= 1");
        for (double f : benchmark.inducing_fractions)
            if (!(f > 0.0 && f <= 1.0)) throw ConfigError("config: inducing fractions must lie in (0, 1]");
        if (density_bandwidth && !(*density_bandwidth > 0.0)) throw ConfigError("config: density bandwidth must be positive");
    }
};

namespace detail {

using Json = nlohmann::json;

inline void check_keys(const Json& j, const std::set<std::string>& allowed, const std::string& where) {
    if (!j.is_object()) throw ConfigError("config: '" + where + "' must be an object");
    for (const auto& [key, value] : j.items()) {
        if (!allowed.count(key)) throw ConfigError("config: unknown key '" + key + "' in " + where);
    }
}

template <typename T>
void read_key(const Json& j, const char* key, T& out) {
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<T>();
    } catch (const Json::exception& e) {
        throw ConfigError(std::string("config: bad value for '") + key + "': " + e.what());
    }
}

} // namespace detail

inline nlohmann::json config_to_json(const ExperimentConfig& c) {
    using Json = nlohmann::json;
    const auto& t = c.train;
    Json train = {{"max_iters", t.max_iters},
                  {"batch_size", t.batch_size},
                  {"learning_rate", t.learning_rate},
                  {"optimizer", to_string(t.optimizer)},
                  {"mc_samples", t.mc_samples},
                  {"seed", t.seed},
                  {"inducing_count", t.inducing_count},
                  {"inducing_fraction", t.inducing_fraction},
                  {"noise_sd", t.noise_sd},
                  {"train_noise", t.train_noise},
                  {"tie_nu_tilde", t.tie_nu_tilde},
                  {"ard", t.ard},
                  {"kmeans_init", t.kmeans_init},
                  {"expected_nu_tilde_gradient", t.expected_nu_tilde_gradient},
                  {"initial_nu", t.initial_nu},
                  {"eval_samples", t.eval_samples},
                  {"kl_report_samples", t.kl_report_samples}};
    const auto& d = c.dataset;
    Json dataset = {{"path", d.path},
                    {"target", d.target},
                    {"name", d.name},
                    {"synthetic", d.synthetic},
                    {"synth",
                     {{"n", d.synth.n},
                      {"d", d.synth.d},
                      {"nu", d.synth.nu},
                      {"signal_variance", d.synth.signal_variance},
                      {"lengthscale", d.synth.lengthscale},
                      {"noise_sd", d.synth.noise_sd}}},
                    {"outliers",
                     {{"enabled", d.outliers.enabled},
                      {"fraction", d.outliers.fraction},
                      {"magnitude", d.outliers.magnitude},
                      {"symmetric", d.outliers.symmetric}}},
                    {"leak_free", d.leak_free}};
    Json bench = {{"inducing_fractions", c.benchmark.inducing_fractions},
                  {"sizes", c.benchmark.sizes},
                  {"epochs", c.benchmark.epochs},
                  {"full_tp", c.benchmark.full_tp}};
    Json out = {{"dataset", dataset},
                {"model", to_string(c.model)},
                {"train", train},
                {"out_dir", c.out_dir},
                {"repetitions", c.repetitions},
                {"threads", c.threads},
                {"benchmark", bench}};
    out["density_bandwidth"] = c.density_bandwidth ? Json(*c.density_bandwidth) : Json(nullptr);
    return out;
}

/// Parses a config object; absent keys keep their defaults, unknown keys are errors.
inline ExperimentConfig config_from_json(const nlohmann::json& j) {
    using detail::read_key;
    ExperimentConfig c;
    detail::check_keys(j, {"dataset", "model", "train", "out_dir", "repetitions", "threads", "benchmark",
                           "density_bandwidth"},
                       "config");
    if (j.contains("dataset")) {
        const auto& d = j.at("dataset");
        detail::check_keys(d, {"path", "target", "name", "synthetic", "synth", "outliers", "leak_free"}, "dataset");
        read_key(d, "path", c.dataset.path);
        read_key(d, "target", c.dataset.target);
        read_key(d, "name", c.dataset.name);
        read_key(d, "synthetic", c.dataset.synthetic);
        read_key(d, "leak_free", c.dataset.leak_free);
        if (d.contains("synth")) {
            const auto& s = d.at("synth");
            detail::check_keys(s, {"n", "d", "nu", "signal_variance", "lengthscale", "noise_sd"}, "dataset.synth");
            read_key(s, "n", c.dataset.synth.n);
            read_key(s, "d", c.dataset.synth.d);
            read_key(s, "nu", c.dataset.synth.nu);
            read_key(s, "signal_variance", c.dataset.synth.signal_variance);
            read_key(s, "lengthscale", c.dataset.synth.lengthscale);
            read_key(s, "noise_sd", c.dataset.synth.noise_sd);
        }
        if (d.contains("outliers")) {
            const auto& o = d.at("outliers");
            detail::check_keys(o, {"enabled", "fraction", "magnitude", "symmetric"}, "dataset.outliers");
            read_key(o, "enabled", c.dataset.outliers.enabled);
            read_key(o, "fraction", c.dataset.outliers.fraction);
            read_key(o, "magnitude", c.dataset.outliers.magnitude);
            read_key(o, "symmetric", c.dataset.outliers.symmetric);
        }
    }
    if (j.contains("model")) {
        std::string m;
        read_key(j, "model", m);
        c.model = parse_model_kind(m);
    }
    if (j.contains("train")) {
        const auto& t = j.at("train");
        detail::check_keys(t, {"max_iters", "batch_size", "learning_rate", "optimizer", "mc_samples", "seed",
                               "inducing_count", "inducing_fraction", "noise_sd", "train_noise", "tie_nu_tilde",
                               "ard", "kmeans_init", "expected_nu_tilde_gradient", "initial_nu", "eval_samples", "kl_report_samples"},
                           "train");
        read_key(t, "max_iters", c.train.max_iters);
        read_key(t, "batch_size", c.train.batch_size);
        read_key(t, "learning_rate", c.train.learning_rate);
        if (t.contains("optimizer")) {
            std::string o;
            read_key(t, "optimizer", o);
            if (o == "Adam") {
                c.train.optimizer = OptimizerKind::Adam;
            } else if (o == "SGD") {
                c.train.optimizer = OptimizerKind::SGD;
            } else {
                throw ConfigError("config: optimizer must be Adam or SGD");
            }
        }
        read_key(t, "mc_samples", c.train.mc_samples);
        read_key(t, "seed", c.train.seed);
        read_key(t, "inducing_count", c.train.inducing_count);
        read_key(t, "inducing_fraction", c.train.inducing_fraction);
        read_key(t, "noise_sd", c.train.noise_sd);
        read_key(t, "train_noise", c.train.train_noise);
        read_key(t, "tie_nu_tilde", c.train.tie_nu_tilde);
        read_key(t, "ard", c.train.ard);
        read_key(t, "kmeans_init", c.train.kmeans_init);
        read_key(t, "expected_nu_tilde_gradient", c.train.expected_nu_tilde_gradient);
        read_key(t, "initial_nu", c.train.initial_nu);
        read_key(t, "eval_samples", c.train.eval_samples);
        read_key(t, "kl_report_samples", c.train.kl_report_samples);
    }
    read_key(j, "out_dir", c.out_dir);
    read_key(j, "repetitions", c.repetitions);
    read_key(j, "threads", c.threads);
    if (j.contains("benchmark")) {
        const auto& b = j.at("benchmark");
        detail::check_keys(b, {"inducing_fractions", "sizes", "epochs", "full_tp"}, "benchmark");
        read_key(b, "inducing_fractions", c.benchmark.inducing_fractions);
        read_key(b, "sizes", c.benchmark.sizes);
        read_key(b, "epochs", c.benchmark.epochs);
        read_key(b, "full_tp", c.benchmark.full_tp);
    }
    if (j.contains("density_bandwidth") && !j.at("density_bandwidth").is_null()) {
        double bw = 0.0;
        read_key(j, "density_bandwidth", bw);
        c.density_bandwidth = bw;
    }
    return c;
}

inline ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config '" + path + "'");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config '" + path + "': " + e.what());
    }
    return config_from_json(j);
}

/// Method implied by the model kind; SVGP ignores it.
inline TrainConfig train_config_for(const ExperimentConfig& cfg, ModelKind kind) {
    TrainConfig t = cfg.train;
    t.elbo_method = kind == ModelKind::SvtpMC ? ElboMethod::MC : ElboMethod::UB;
    return t;
}

/// Loads or generates the dataset, injects outliers, and assigns folds, all from `seed`.
inline Dataset prepare_dataset(const DatasetSpec& spec, std::uint64_t seed) {
    Dataset ds;
    if (spec.synthetic) {
        Rng rng(seed);
        const auto kernel = KernelParams::isotropic(spec.synth.d, spec.synth.signal_variance, spec.synth.lengthscale);
        ds = synth_tp(spec.synth.n, spec.synth.d, spec.synth.nu, kernel, spec.synth.noise_sd, rng);
    } else {
        ds = load_csv(spec.path, spec.target, seed);
    }
    if (!spec.name.empty()) ds.name = spec.name;
    if (spec.outliers.enabled) {
        Rng rng(seed ^ 0x5eed0f0f0f0f0f0fULL);
        ds = inject_outliers(ds, spec.outliers.fraction, spec.outliers.magnitude, rng, spec.outliers.symmetric);
        if (spec.name.empty()) ds.name += "_outliers";
    }
    ds.fold_ids = assign_folds(ds.size(), seed);
    return ds;
}

struct FoldResult {
    int repetition = 0;
    int fold = 0;
    std::uint64_t seed = 0;
    bool ok = false;
    bool numerical_failure = false;
    std::string error;
    Metrics metrics;
    double kl_final = 0.0;
    double elbo_final = 0.0;
    int steps = 0;
    std::string trace;
    std::string checkpoint;
};

struct RangeStat {
    double mean = 0.0;
    double min = 0.0;
    double max = 0.0;
    double half_range() const { return 0.5 * (max - min); }
};

inline RangeStat range_stat(const std::vector<double>& v) {
    RangeStat s;
    if (v.empty()) return s;
    s.min = *std::min_element(v.begin(), v.end());
    s.max = *std::max_element(v.begin(), v.end());
    double sum = 0.0;
    for (double x : v) sum += x;
    s.mean = sum / static_cast<double>(v.size());
    return s;
}

struct CvResult {
    std::string dataset;
    ModelKind model = ModelKind::SvtpUB;
    Index n = 0;
    Index d = 0;
    std::vector<FoldResult> folds;

    bool all_ok() const {
        return std::all_of(folds.begin(), folds.end(), [](const FoldResult& f) { return f.ok; });
    }
    bool any_numerical_failure() const {
        return std::any_of(folds.begin(), folds.end(), [](const FoldResult& f) { return f.numerical_failure; });
    }
    RangeStat mse() const { return collect([](const FoldResult& f) { return f.metrics.mse; }); }
    RangeStat ll() const { return collect([](const FoldResult& f) { return f.metrics.ll; }); }

private:
    template <typename F>
    RangeStat collect(F f) const {
        std::vector<double> v;
        for (const auto& r : folds)
            if (r.ok) v.push_back(f(r));
        return range_stat(v);
    }
};

namespace detail {

template <typename Model>
void run_fold(const Dataset& ds, const TrainConfig& tc, bool leak_free, FoldResult& out, bool keep_outputs) {
    const Split split = make_fold_split(ds, out.fold, leak_free);
    TrainConfig cfg = tc;
    cfg.seed = out.seed;
    const auto report = train<Model>(split.train, cfg);
    Rng eval_rng(out.seed ^ 0xe7a1e7a1e7a1e7a1ULL);
    out.metrics = evaluate(report.model, split.test, cfg.eval_samples, eval_rng);
    if (!std::isfinite(out.metrics.mse) || !std::isfinite(out.metrics.ll)) {
        throw NumericalError("non-finite test metrics");
    }
    out.kl_final = report.kl_final;
    out.elbo_final = report.trace.empty() ? 0.0 : report.trace.back().terms.elbo;
    out.steps = static_cast<int>(report.trace.size());
    if (keep_outputs) {
        io::Json extra = {{"fold", out.fold},
                          {"repetition", out.repetition},
                          {"test_mse", out.metrics.mse},
                          {"test_ll", out.metrics.ll},
                          {"n_test", out.metrics.n}};
        out.trace = io::trace_jsonl(report, extra);
        out.checkpoint = io::checkpoint_json(report.model, out.seed).dump(2) + "\n";
    }
}

/// Runs jobs 0..count-1 on up to `threads` workers; results are indexed, so order is irrelevant.
template <typename F>
void parallel_for(int count, int threads, F job) {
    const int workers = std::max(1, std::min(threads, count));
    if (workers == 1) {
        for (int i = 0; i < count; ++i) job(i);
        return;
    }
    std::atomic<int> next{0};
    std::mutex failure_lock;
    std::exception_ptr failure;
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            for (int i = next++; i < count; i = next++) {
                try {
                    job(i);
                } catch (...) {
                    const std::lock_guard<std::mutex> guard(failure_lock);
                    if (!failure) failure = std::current_exception();
                }
            }
        });
    }
    for (auto& t : pool) t.join();
    if (failure) std::rethrow_exception(failure);
}

inline std::string fmt(double v, int precision = 4) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(precision) << v;
    return os.str();
}

inline std::string fmt_g(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

} // namespace detail

/// Seed of repetition r; fold k trains with seed + k.
inline std::uint64_t repetition_seed(std::uint64_t base, int r) { return base + 1000ULL * static_cast<std::uint64_t>(r); }

/**
 * Five-fold cross-validation of one model kind, repeated `repetitions` times.
 * A fold that throws a numerical error is recorded as failed and the others continue.
 */
inline CvResult run_cross_validation(const ExperimentConfig& cfg, ModelKind kind, bool keep_outputs = false) {
    cfg.validate();
    CvResult result;
    result.model = kind;
    const TrainConfig tc = train_config_for(cfg, kind);
    std::vector<Dataset> datasets;
    for (int r = 0; r < cfg.repetitions; ++r) datasets.push_back(prepare_dataset(cfg.dataset, repetition_seed(cfg.train.seed, r)));
    result.dataset = datasets.front().name;
    result.n = datasets.front().size();
    result.d = datasets.front().dim();

    const int jobs = cfg.repetitions * kNumFolds;
    result.folds.resize(static_cast<std::size_t>(jobs));
    for (int i = 0; i < jobs; ++i) {
        auto& f = result.folds[static_cast<std::size_t>(i)];
        f.repetition = i / kNumFolds;
        f.fold = i % kNumFolds;
        f.seed = repetition_seed(cfg.train.seed, f.repetition) + static_cast<std::uint64_t>(f.fold);
    }
    detail::parallel_for(jobs, cfg.threads, [&](int i) {
        auto& f = result.folds[static_cast<std::size_t>(i)];
        const Dataset& ds = datasets[static_cast<std::size_t>(f.repetition)];
        try {
            if (kind == ModelKind::Svgp) {
                detail::run_fold<SvgpModel>(ds, tc, cfg.dataset.leak_free, f, keep_outputs);
            } else {
                detail::run_fold<InducingModel>(ds, tc, cfg.dataset.leak_free, f, keep_outputs);
            }
            f.ok = true;
        } catch (const ConfigError&) {
            throw;
        } catch (const Error& e) {
            f.ok = false;
            f.numerical_failure = true;
            f.error = e.what();
        }
    });
    return result;
}

/// Table-style row: dataset | model | MSE mean ± half-range | LL mean ± half-range.
inline std::string cv_summary_row(const CvResult& r) {
    const RangeStat mse = r.mse();
    const RangeStat ll = r.ll();
    std::ostringstream os;
    os << r.dataset << " | " << to_string(r.model) << " | " << detail::fmt(mse.mean) << " ± "
       << detail::fmt(mse.half_range()) << " | " << detail::fmt(ll.mean, 2) << " ± " << detail::fmt(ll.half_range(), 2);
    return os.str();
}

inline std::string cv_summary_text(const CvResult& r) {
    std::ostringstream os;
    os << "dataset | model | MSE | LL\n";
    os << cv_summary_row(r) << '\n';
    std::size_t ok = 0;
    for (const auto& f : r.folds) ok += f.ok ? 1 : 0;
    os << "# n=" << r.n << " d=" << r.d << " folds_ok=" << ok << "/" << r.folds.size()
       << " (values: mean ± half the range across folds)\n";
    for (const auto& f : r.folds)
        if (!f.ok) os << "# failed rep " << f.repetition << " fold " << f.fold << ": " << f.error << '\n';
    return os.str();
}

inline std::string cv_summary_csv(const CvResult& r) {
    std::ostringstream os;
    os << "dataset,model,repetition,fold,seed,status,mse,ll,n_test,kl_final,elbo_final,steps\n";
    for (const auto& f : r.folds) {
        os << r.dataset << ',' << to_string(r.model) << ',' << f.repetition << ',' << f.fold << ',' << f.seed << ','
           << (f.ok ? "ok" : "failed") << ',' << detail::fmt_g(f.metrics.mse) << ',' << detail::fmt_g(f.metrics.ll)
           << ',' << f.metrics.n << ',' << detail::fmt_g(f.kl_final) << ',' << detail::fmt_g(f.elbo_final) << ','
           << f.steps << '\n';
    }
    return os.str();
}

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 1;
inline constexpr int kExitNumerical = 2;

namespace detail {

inline std::filesystem::path prepare_out_dir(const ExperimentConfig& cfg) {
    namespace fs = std::filesystem;
    const fs::path out(cfg.out_dir);
    std::error_code ec;
    fs::create_directories(out, ec);
    if (ec || !fs::is_directory(out)) throw ConfigError("output directory '" + cfg.out_dir + "' is not writable");
    io::write_text((out / "config.json").string(), config_to_json(cfg).dump(2) + "\n");
    return out;
}

} // namespace detail

/// Cross-validated training with per-fold traces and checkpoints plus summaries.
inline int cmd_train(const ExperimentConfig& cfg) {
    cfg.validate();
    const auto out = detail::prepare_out_dir(cfg);
    const CvResult r = run_cross_validation(cfg, cfg.model, true);
    for (const auto& f : r.folds) {
        std::filesystem::path dir = out;
        if (cfg.repetitions > 1) dir /= "rep_" + std::to_string(f.repetition);
        dir /= "fold_" + std::to_string(f.fold);
        std::filesystem::create_directories(dir);
        if (f.ok) {
            io::write_text((dir / "trace.jsonl").string(), f.trace);
            io::write_text((dir / "checkpoint.json").string(), f.checkpoint);
        } else {
            io::write_text((dir / "error.txt").string(), f.error + "\n");
        }
    }
    io::write_text((out / "summary.txt").string(), cv_summary_text(r));
    io::write_text((out / "summary.csv").string(), cv_summary_csv(r));
    return r.all_ok() ? kExitOk : kExitNumerical;
}

struct TimingCell {
    std::string column;
    Index inducing = 0;
    std::optional<double> seconds;
    double seconds_sd = 0.0;
};

struct TimingRow {
    std::string dataset;
    Index n = 0;
    Index d = 0;
    std::vector<TimingCell> cells;
};

inline std::pair<double, double> mean_sd(const std::vector<double>& v) {
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    return {mean, v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1)) : 0.0};
}

/// Per-epoch seconds of SVTP-UB training with M inducing points.
inline std::vector<double> time_sparse_epochs(const Dataset& ds, const TrainConfig& base, Index M, int epochs) {
    TrainConfig tc = base;
    tc.elbo_method = ElboMethod::UB;
    tc.inducing_count = static_cast<int>(M);
    const Index B = std::min<Index>(tc.batch_size, ds.size());
    const Index steps_per_epoch = (ds.size() + B - 1) / B;
    tc.max_iters = static_cast<int>(steps_per_epoch * epochs);
    return train<InducingModel>(ds, tc).epoch_seconds;
}

/// Seconds per full-batch log-likelihood and gradient evaluation of the dense model.
inline std::vector<double> time_full_tp_epochs(const Dataset& ds, const TrainConfig& base, int epochs) {
    FullTpModel model;
    model.kernel = KernelParams::isotropic(ds.dim(), 1.0, 1.0);
    model.kernel.ard = base.ard;
    model.nu = base.initial_nu;
    model.noise_sd = base.noise_sd;
    std::vector<double> out;
    for (int e = 0; e < epochs; ++e) {
        FullTpGradient g;
        const auto t0 = std::chrono::steady_clock::now();
        const double ll = full_tp_log_likelihood(model, ds.X, ds.y, &g);
        const auto t1 = std::chrono::steady_clock::now();
        if (!std::isfinite(ll)) throw NumericalError("non-finite full TP log-likelihood");
        out.push_back(std::chrono::duration<double>(t1 - t0).count());
    }
    return out;
}

inline Dataset benchmark_dataset(const ExperimentConfig& cfg, std::optional<Index> size, std::uint64_t seed) {
    DatasetSpec spec = cfg.dataset;
    if (size && spec.synthetic) spec.synth.n = *size;
    Dataset ds = prepare_dataset(spec, seed);
    if (size && !spec.synthetic && *size < ds.size()) {
        Rng rng(seed);
        std::vector<Index> rows(static_cast<std::size_t>(ds.size()));
        std::iota(rows.begin(), rows.end(), Index{0});
        std::shuffle(rows.begin(), rows.end(), rng);
        rows.resize(static_cast<std::size_t>(*size));
        std::sort(rows.begin(), rows.end());
        ds = subset(ds, rows);
    }
    return standardize(ds);
}

/**
 * Mean per-epoch wall-clock for each inducing fraction plus the dense
 * reference; the dense cell is empty for n above its limit.
 */
inline std::vector<TimingRow> run_benchmark(const ExperimentConfig& cfg) {
    cfg.validate();
    std::vector<std::optional<Index>> sizes;
    if (cfg.benchmark.sizes.empty()) sizes.push_back(std::nullopt);
    for (Index s : cfg.benchmark.sizes) sizes.emplace_back(s);
    std::vector<TimingRow> rows;
    for (const auto& size : sizes) {
        const Dataset ds = benchmark_dataset(cfg, size, cfg.train.seed);
        TimingRow row{ds.name, ds.size(), ds.dim(), {}};
        for (double frac : cfg.benchmark.inducing_fractions) {
            const Index M = std::max<Index>(1, static_cast<Index>(std::llround(frac * static_cast<double>(ds.size()))));
            const auto [mean, sd] = mean_sd(time_sparse_epochs(ds, cfg.train, M, cfg.benchmark.epochs));
            row.cells.push_back(TimingCell{"m=" + detail::fmt(frac, 2) + "n", M, mean, sd});
        }
        TimingCell full{"full TP", ds.size(), std::nullopt, 0.0};
        if (cfg.benchmark.full_tp && ds.size() <= kFullTpMaxSize) {
            const auto [mean, sd] = mean_sd(time_full_tp_epochs(ds, cfg.train, cfg.benchmark.epochs));
            full.seconds = mean;
            full.seconds_sd = sd;
        }
        row.cells.push_back(full);
        rows.push_back(std::move(row));
    }
    return rows;
}

inline std::string benchmark_text(const std::vector<TimingRow>& rows) {
    std::ostringstream os;
    if (rows.empty()) return "";
    os << "dataset | n | d";
    for (const auto& c : rows.front().cells) os << " | " << c.column;
    os << '\n';
    for (const auto& r : rows) {
        os << r.dataset << " | " << r.n << " | " << r.d;
        for (const auto& c : r.cells) os << " | " << (c.seconds ? detail::fmt(*c.seconds, 4) : std::string("−"));
        os << '\n';
    }
    os << "# seconds per epoch (SVTP-UB for sparse columns, one full-batch gradient for full TP)\n";
    return os.str();
}

inline std::string benchmark_csv(const std::vector<TimingRow>& rows) {
    std::ostringstream os;
    os << "dataset,n,d,column,inducing,seconds_mean,seconds_sd\n";
    for (const auto& r : rows)
        for (const auto& c : r.cells)
            os << r.dataset << ',' << r.n << ',' << r.d << ',' << c.column << ',' << c.inducing << ','
               << (c.seconds ? detail::fmt_g(*c.seconds) : std::string("-")) << ',' << detail::fmt_g(c.seconds_sd)
               << '\n';
    return os.str();
}

inline int cmd_benchmark(const ExperimentConfig& cfg) {
    const auto out = detail::prepare_out_dir(cfg);
    const auto rows = run_benchmark(cfg);
    io::write_text((out / "benchmark.txt").string(), benchmark_text(rows));
    io::write_text((out / "benchmark.csv").string(), benchmark_csv(rows));
    return kExitOk;
}

struct KlComparison {
    std::string dataset;
    std::uint64_t seed = 0;
    double kl_ub = 0.0;
    double kl_mc = 0.0;
    double kl_mc_se = 0.0;
};

/// Trains SVTP-UB and SVTP-MC on the standardized dataset and reports each converged KL term.
inline std::vector<KlComparison> run_kl_compare(const ExperimentConfig& cfg) {
    cfg.validate();
    std::vector<KlComparison> rows;
    for (int r = 0; r < cfg.repetitions; ++r) {
        const std::uint64_t seed = repetition_seed(cfg.train.seed, r);
        const Dataset ds = standardize(prepare_dataset(cfg.dataset, seed));
        TrainConfig tc = cfg.train;
        tc.seed = seed;
        KlComparison row{ds.name, seed, 0.0, 0.0, 0.0};
        tc.elbo_method = ElboMethod::UB;
        row.kl_ub = train<InducingModel>(ds, tc).kl_final;
        tc.elbo_method = ElboMethod::MC;
        const auto mc = train<InducingModel>(ds, tc);
        Rng rng(seed ^ 0x4b4c4b4c4b4c4b4cULL);
        const McEstimate est = kl_mc_estimate(mc.model, tc.kl_report_samples, rng);
        row.kl_mc = est.mean;
        row.kl_mc_se = est.std_error;
        rows.push_back(row);
    }
    return rows;
}

inline std::string kl_compare_text(const std::vector<KlComparison>& rows) {
    std::ostringstream os;
    os << "dataset | seed | SVTP-UB KL | SVTP-MC KL\n";
    for (const auto& r : rows) {
        os << r.dataset << " | " << r.seed << " | " << detail::fmt(r.kl_ub, 4) << " | " << detail::fmt(r.kl_mc, 4)
           << " ± " << detail::fmt(r.kl_mc_se, 4) << '\n';
    }
    return os.str();
}

inline std::string kl_compare_csv(const std::vector<KlComparison>& rows) {
    std::ostringstream os;
    os << "dataset,seed,kl_ub,kl_mc,kl_mc_se\n";
    for (const auto& r : rows)
        os << r.dataset << ',' << r.seed << ',' << detail::fmt_g(r.kl_ub) << ',' << detail::fmt_g(r.kl_mc) << ','
           << detail::fmt_g(r.kl_mc_se) << '\n';
    return os.str();
}

inline int cmd_kl_compare(const ExperimentConfig& cfg) {
    const auto out = detail::prepare_out_dir(cfg);
    const auto rows = run_kl_compare(cfg);
    io::write_text((out / "kl_compare.txt").string(), kl_compare_text(rows));
    io::write_text((out / "kl_compare.csv").string(), kl_compare_csv(rows));
    return kExitOk;
}

inline DensityReport run_density(const ExperimentConfig& cfg) {
    cfg.validate();
    const Dataset ds = prepare_dataset(cfg.dataset, cfg.train.seed);
    return density_report(ds.y, cfg.density_bandwidth, ds.name);
}

inline std::string density_summary(const DensityReport& rep, Index n) {
    std::ostringstream os;
    os << "dataset | n | bandwidth | kde integral | kde mass |y|>3\n";
    os << rep.name << " | " << n << " | " << detail::fmt(rep.bandwidth, 6) << " | " << detail::fmt(rep.kde_integral(), 6)
       << " | " << detail::fmt(rep.kde_tail_mass(3.0), 6) << '\n';
    return os.str();
}

inline int cmd_density(const ExperimentConfig& cfg) {
    const auto out = detail::prepare_out_dir(cfg);
    const Dataset ds = prepare_dataset(cfg.dataset, cfg.train.seed);
    const DensityReport rep = density_report(ds.y, cfg.density_bandwidth, ds.name);
    io::write_text((out / ("density_" + rep.name + ".csv")).string(), rep.to_csv());
    io::write_text((out / "density_summary.txt").string(), density_summary(rep, ds.size()));
    return kExitOk;
}

} // namespace svtp
