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
#include <sys/wait.h>

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

namespace fs = std::filesystem;

namespace {

const std::string kCli = SVTP_CLI_PATH;
const std::string kTinyCsv = std::string(SVTP_TEST_DATA_DIR) + "/tiny.csv";

class CliTest : public ::testing::Test {
protected:
    void SetUp() override {
        root_ = fs::temp_directory_path() /
                ("svtp_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
        fs::remove_all(root_);
        fs::create_directories(root_);
    }
    void TearDown() override { fs::remove_all(root_); }

    std::string write_config(const std::string& name, const std::string& json) const {
        const fs::path p = root_ / name;
        std::ofstream(p) << json;
        return p.string();
    }

    /// Runs the CLI with the given arguments and returns its exit status.
    int run(const std::string& args) const {
        const std::string cmd = "'" + kCli + "' " + args + " > '" + (root_ / "log.txt").string() + "' 2>&1";
        const int status = std::system(cmd.c_str());
        return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    }

    std::string out(const std::string& name) const { return (root_ / name).string(); }

    fs::path root_;
};

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

const char* kTinyTrain = R"({"dataset": {"target": "target"},
 "train": {"max_iters": 150, "batch_size": 64, "mc_samples": 2, "eval_samples": 16, "kl_report_samples": 64}})";

} // namespace

TEST_F(CliTest, TinyCsvTrainsFiveFoldsQuickly) {
    const std::string cfg = write_config("c.json", kTinyTrain);
    const auto t0 = std::chrono::steady_clock::now();
    const int code = run("--config '" + cfg + "' --dataset '" + kTinyCsv + "' --out '" + out("run") + "' --seed 7 train");
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    ASSERT_EQ(code, 0) << slurp(root_ / "log.txt");
    EXPECT_LT(seconds, 60.0);
    for (int k = 0; k < 5; ++k) {
        const fs::path dir = root_ / "run" / ("fold_" + std::to_string(k));
        EXPECT_TRUE(fs::exists(dir / "trace.jsonl")) << dir;
        EXPECT_TRUE(fs::exists(dir / "checkpoint.json")) << dir;
    }
    const std::string summary = slurp(root_ / "run" / "summary.txt");
    EXPECT_NE(summary.find("tiny | SVTP-UB | "), std::string::npos) << summary;
    EXPECT_NE(summary.find("folds_ok=5/5"), std::string::npos) << summary;
    EXPECT_TRUE(fs::exists(root_ / "run" / "config.json"));
}

TEST_F(CliTest, RerunWithSameSeedIsByteIdentical) {
    const std::string cfg = write_config("c.json", kTinyTrain);
    const std::string base = "--config '" + cfg + "' --dataset '" + kTinyCsv + "' --model SVTP-MC --seed 11 ";
    ASSERT_EQ(run(base + "--out '" + out("a") + "' train"), 0);
    ASSERT_EQ(run(base + "--out '" + out("b") + "' train"), 0);
    for (const char* f : {"summary.txt", "summary.csv", "fold_3/checkpoint.json"}) {
        EXPECT_EQ(slurp(root_ / "a" / f), slurp(root_ / "b" / f)) << f;
    }
    ASSERT_EQ(run(base + "--out '" + out("c") + "' kl-compare"), 0);
    ASSERT_EQ(run(base + "--out '" + out("d") + "' kl-compare"), 0);
    EXPECT_EQ(slurp(root_ / "c" / "kl_compare.txt"), slurp(root_ / "d" / "kl_compare.txt"));
    ASSERT_EQ(run("--config '" + cfg + "' --dataset '" + kTinyCsv + "' --seed 12 --out '" + out("e") + "' train"), 0);
    EXPECT_NE(slurp(root_ / "a" / "summary.csv"), slurp(root_ / "e" / "summary.csv"));
}

TEST_F(CliTest, BaselineRowIsLabelled) {
    const std::string cfg = write_config("c.json", kTinyTrain);
    ASSERT_EQ(run("--config '" + cfg + "' --dataset '" + kTinyCsv + "' --model SVGP --out '" + out("g") + "' train"), 0);
    EXPECT_NE(slurp(root_ / "g" / "summary.txt").find("tiny | SVGP | "), std::string::npos);
}

TEST_F(CliTest, BenchmarkMarksDenseColumnMissingAboveLimit) {
    const std::string cfg = write_config("b.json", R"({"dataset": {"synthetic": true, "synth": {"d": 2}},
 "train": {"batch_size": 1024},
 "benchmark": {"inducing_fractions": [0.005], "sizes": [64, 2100], "epochs": 1}})");
    ASSERT_EQ(run("--config '" + cfg + "' --out '" + out("bench") + "' benchmark"), 0) << slurp(root_ / "log.txt");
    const std::string table = slurp(root_ / "bench" / "benchmark.txt");
    std::istringstream lines(table);
    std::string header, small, large;
    std::getline(lines, header);
    std::getline(lines, small);
    std::getline(lines, large);
    EXPECT_NE(header.find("full TP"), std::string::npos);
    EXPECT_EQ(small.find("−"), std::string::npos) << small;
    EXPECT_NE(large.find("| 2100 |"), std::string::npos) << large;
    EXPECT_EQ(large.substr(large.size() - 3), "−") << large;
}

TEST_F(CliTest, DensityCommandWritesGridTable) {
    ASSERT_EQ(run("--dataset '" + kTinyCsv + "' --out '" + out("dens") + "' density"), 0);
    const std::string csv = slurp(root_ / "dens" / "density_tiny.csv");
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 257);
    EXPECT_NE(slurp(root_ / "dens" / "density_summary.txt").find("tiny | 50 |"), std::string::npos);
}

TEST_F(CliTest, ConfigProblemsExitWithOne) {
    EXPECT_EQ(run("--config /nonexistent/c.json train"), 1);
    EXPECT_EQ(run("--dataset '" + kTinyCsv + "' --model GP train"), 1);
    EXPECT_EQ(run("train"), 1);
    EXPECT_EQ(run("--dataset '" + kTinyCsv + "'"), 1);
    const std::string unknown = write_config("u.json", R"({"dataset": {"path": "x.csv"}, "tarin": {}})");
    EXPECT_EQ(run("--config '" + unknown + "' train"), 1);
    EXPECT_NE(slurp(root_ / "log.txt").find("tarin"), std::string::npos);
    EXPECT_EQ(run("--dataset /nonexistent/data.csv --out '" + out("x") + "' train"), 1);
}

TEST_F(CliTest, DivergentTrainingExitsWithTwoAndKeepsPartialResults) {
    const std::string cfg = write_config("d.json", R"({"dataset": {"target": "target"},
 "train": {"max_iters": 50, "batch_size": 64, "learning_rate": 1e6, "mc_samples": 1}})");
    EXPECT_EQ(run("--config '" + cfg + "' --dataset '" + kTinyCsv + "' --out '" + out("div") + "' train"), 2);
    EXPECT_TRUE(fs::exists(root_ / "div" / "summary.txt"));
    EXPECT_TRUE(fs::exists(root_ / "div" / "fold_0" / "error.txt"));
    EXPECT_NE(slurp(root_ / "div" / "summary.csv").find("failed"), std::string::npos);
}
