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

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "svtp/experiment.hpp"

namespace {

struct Overrides {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> model;
    std::optional<std::string> dataset;
    std::optional<std::string> out;
};

svtp::ExperimentConfig resolve(const Overrides& o) {
    svtp::ExperimentConfig cfg = o.config.empty() ? svtp::ExperimentConfig{} : svtp::load_config(o.config);
    if (o.seed) cfg.train.seed = *o.seed;
    if (o.model) cfg.model = svtp::parse_model_kind(*o.model);
    if (o.dataset) {
        if (*o.dataset == "synth") {
            cfg.dataset.synthetic = true;
            cfg.dataset.path.clear();
        } else {
            cfg.dataset.synthetic = false;
            cfg.dataset.path = *o.dataset;
        }
    }
    if (o.out) cfg.out_dir = *o.out;
    cfg.validate();
    return cfg;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Sparse variational Student-t process experiments"};
    app.require_subcommand(1);
    app.fallthrough();

    Overrides o;
    app.add_option("--config", o.config, "JSON experiment config")->check(CLI::ExistingFile);
    app.add_option("--seed", o.seed, "Run seed (overrides train.seed)");
    app.add_option("--model", o.model, "SVTP-UB, SVTP-MC or SVGP")
        ->check(CLI::IsMember({"SVTP-UB", "SVTP-MC", "SVGP"}));
    app.add_option("--dataset", o.dataset, "CSV path, or 'synth' for the synthetic generator");
    app.add_option("--out", o.out, "Output directory");

    auto* train = app.add_subcommand("train", "Five-fold cross-validated training");
    auto* bench = app.add_subcommand("benchmark", "Per-epoch timing table");
    auto* kl = app.add_subcommand("kl-compare", "Converged KL term of SVTP-UB and SVTP-MC");
    auto* density = app.add_subcommand("density", "Histogram and KDE of standardized targets");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : svtp::kExitConfig;
    }

    try {
        const auto cfg = resolve(o);
        int code = svtp::kExitOk;
        if (*train) {
            code = svtp::cmd_train(cfg);
        } else if (*bench) {
            code = svtp::cmd_benchmark(cfg);
        } else if (*kl) {
            code = svtp::cmd_kl_compare(cfg);
        } else if (*density) {
            code = svtp::cmd_density(cfg);
        }
        if (code != svtp::kExitOk) std::cerr << "error: one or more folds aborted; see " << cfg.out_dir << "\n";
        return code;
    } catch (const svtp::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return svtp::kExitConfig;
    } catch (const svtp::Error& e) {
        std::cerr << "numerical error: " << e.what() << "\n";
        return svtp::kExitNumerical;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return svtp::kExitConfig;
    }
}
