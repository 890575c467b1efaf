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

// JSON checkpoints and line-delimited training traces.

#include <fstream>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "svtp/error.hpp"
#include "svtp/model.hpp"
#include "svtp/training.hpp"

namespace svtp::io {

using Json = nlohmann::json;

inline constexpr const char* kCheckpointFormat = "svtp-checkpoint";
inline constexpr int kCheckpointVersion = 1;

inline Json to_json(const Vector& v) { return Json(std::vector<double>(v.data(), v.data() + v.size())); }

/// Row-major with explicit shape.
inline Json to_json(const Matrix& A) {
    Json data = Json::array();
    for (Index i = 0; i < A.rows(); ++i)
        for (Index j = 0; j < A.cols(); ++j) data.push_back(A(i, j));
    return Json{{"rows", A.rows()}, {"cols", A.cols()}, {"data", std::move(data)}};
}

inline Vector vector_from_json(const Json& j) {
    const auto v = j.get<std::vector<double>>();
    return Eigen::Map<const Vector>(v.data(), static_cast<Index>(v.size()));
}

inline Matrix matrix_from_json(const Json& j) {
    const Index rows = j.at("rows").get<Index>();
    const Index cols = j.at("cols").get<Index>();
    const auto data = j.at("data").get<std::vector<double>>();
    if (static_cast<Index>(data.size()) != rows * cols) throw ShapeError("checkpoint: matrix data has wrong length");
    Matrix A(rows, cols);
    for (Index i = 0; i < rows; ++i)
        for (Index j2 = 0; j2 < cols; ++j2) A(i, j2) = data[static_cast<std::size_t>(i * cols + j2)];
    return A;
}

template <typename Model>
constexpr const char* model_kind_tag() {
    return is_student_model<Model> ? "student_t" : "gaussian";
}

/// Self-describing checkpoint with natural-space values and the transforms used in training.
template <typename Model>
Json checkpoint_json(const Model& model, std::uint64_t seed = 0) {
    Json j;
    j["format"] = kCheckpointFormat;
    j["version"] = kCheckpointVersion;
    j["model"] = model_kind_tag<Model>();
    j["seed"] = seed;
    j["kernel"] = {{"type", "squared_exponential"},
                   {"signal_variance", model.kernel.signal_variance},
                   {"lengthscales", to_json(model.kernel.lengthscales)},
                   {"jitter", model.kernel.jitter},
                   {"ard", model.kernel.ard}};
    j["Z"] = to_json(model.Z);
    j["m"] = to_json(model.m);
    j["S_factor"] = to_json(model.S_factor);
    j["noise_sd"] = model.noise_sd;
    Json transforms = {{"signal_variance", "log"},
                       {"lengthscales", "log"},
                       {"S_factor_diagonal", "log"},
                       {"noise_sd", "log"}};
    if constexpr (is_student_model<Model>) {
        j["nu"] = model.nu;
        j["nu_tilde"] = model.nu_tilde;
        transforms["nu"] = "2 + softplus";
        transforms["nu_tilde"] = "2 + softplus";
    }
    j["transforms"] = transforms;
    return j;
}

template <typename Model>
Model model_from_json(const Json& j) {
    try {
        if (j.at("format").get<std::string>() != kCheckpointFormat) throw ConfigError("checkpoint: unknown format");
        if (j.at("version").get<int>() != kCheckpointVersion) throw ConfigError("checkpoint: unsupported version");
        if (j.at("model").get<std::string>() != model_kind_tag<Model>()) {
            throw ConfigError("checkpoint: model kind '" + j.at("model").get<std::string>() + "' does not match");
        }
        Model model;
        const Json& k = j.at("kernel");
        model.kernel.signal_variance = k.at("signal_variance").get<double>();
        model.kernel.lengthscales = vector_from_json(k.at("lengthscales"));
        model.kernel.jitter = k.at("jitter").get<double>();
        model.kernel.ard = k.at("ard").get<bool>();
        model.Z = matrix_from_json(j.at("Z"));
        model.m = vector_from_json(j.at("m"));
        model.S_factor = matrix_from_json(j.at("S_factor"));
        model.noise_sd = j.at("noise_sd").get<double>();
        if constexpr (is_student_model<Model>) {
            model.nu = j.at("nu").get<double>();
            model.nu_tilde = j.at("nu_tilde").get<double>();
        }
        model.validate();
        return model;
    } catch (const Json::exception& e) {
        throw ConfigError(std::string("checkpoint: malformed JSON: ") + e.what());
    }
}

template <typename Model>
void save_checkpoint(const std::string& path, const Model& model, std::uint64_t seed = 0) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write checkpoint '" + path + "'");
    out << checkpoint_json(model, seed).dump(2) << '\n';
}

template <typename Model>
Model load_checkpoint(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open checkpoint '" + path + "'");
    Json j;
    try {
        in >> j;
    } catch (const Json::exception& e) {
        throw ConfigError("checkpoint '" + path + "': " + e.what());
    }
    return model_from_json<Model>(j);
}

inline Json to_json(const ElboBreakdown& t) {
    return Json{{"expected_loglik", t.expected_loglik},
                {"kl_term", t.kl_term},
                {"elbo", t.elbo},
                {"method", to_string(t.method)},
                {"mc_samples", t.mc_samples}};
}

/**
 * One JSON object per line: a "step" record per optimizer step, an "epoch"
 * record with its wall-clock seconds, and a closing "summary" record.
 */
template <typename Model>
std::string trace_jsonl(const TrainReport<Model>& report, const Json& summary_extra = Json::object()) {
    std::ostringstream os;
    for (const auto& rec : report.trace) {
        Json line = to_json(rec.terms);
        line["type"] = "step";
        line["step"] = rec.step;
        line["epoch"] = rec.epoch;
        os << line.dump() << '\n';
    }
    for (std::size_t e = 0; e < report.epoch_seconds.size(); ++e) {
        os << Json{{"type", "epoch"}, {"epoch", e}, {"seconds", report.epoch_seconds[e]}}.dump() << '\n';
    }
    Json summary = summary_extra;
    summary["type"] = "summary";
    summary["seed"] = report.seed;
    summary["method"] = to_string(report.method);
    summary["steps"] = report.trace.size();
    summary["n_train"] = report.n_train;
    summary["kl_final"] = report.kl_final;
    if (!report.trace.empty()) summary["final"] = to_json(report.trace.back().terms);
    summary["parameters"] = checkpoint_json(report.model, report.seed);
    os << summary.dump() << '\n';
    return os.str();
}

inline void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot write '" + path + "'");
    out << text;
    if (!out) throw ConfigError("write failed for '" + path + "'");
}

} // namespace svtp::io
