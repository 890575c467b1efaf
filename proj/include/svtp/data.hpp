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
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numbers>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "svtp/distributions.hpp"
#include "svtp/error.hpp"
#include "svtp/kernels.hpp"
#include "svtp/linalg.hpp"

namespace svtp {

inline constexpr int kNumFolds = 5;

/// Per-column affine maps used to standardize inputs and targets.
struct Standardization {
    Vector feature_means;
    Vector feature_stds;
    double y_mean = 0.0;
    double y_std = 1.0;

    Matrix apply_X(const Matrix& X) const {
        return (X.rowwise() - feature_means.transpose()).array().rowwise() /
               feature_stds.transpose().array();
    }
    Vector apply_y(const Vector& y) const { return (y.array() - y_mean) / y_std; }
    Vector invert_y(const Vector& y) const { return (y.array() * y_std + y_mean).matrix(); }
};

struct Dataset {
    std::string name;
    Matrix X;
    Vector y;
    std::vector<std::string> feature_names;
    std::string target_name;
    Standardization stats;
    bool standardized = false;
    std::vector<int> fold_ids;
    std::vector<Index> outlier_indices;

    Index size() const { return X.rows(); }
    Index dim() const { return X.cols(); }
};

struct Split {
    Dataset train;
    Dataset test;
};

/// Population mean and standard deviation.
inline std::pair<double, double> mean_std(const Vector& v) {
    const double n = static_cast<double>(v.size());
    const double mean = v.mean();
    const double var = (v.array() - mean).square().sum() / n;
    return {mean, std::sqrt(var)};
}

/// Fold labels 0..4 from a seeded shuffle; fold sizes differ by at most one.
inline std::vector<int> assign_folds(Index n, std::uint64_t seed, int folds = kNumFolds) {
    std::vector<Index> perm(static_cast<std::size_t>(n));
    std::iota(perm.begin(), perm.end(), Index{0});
    Rng rng(seed);
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<int> ids(static_cast<std::size_t>(n), 0);
    for (std::size_t i = 0; i < perm.size(); ++i) {
        ids[static_cast<std::size_t>(perm[i])] = static_cast<int>(i % static_cast<std::size_t>(folds));
    }
    return ids;
}

inline std::string column_label(const Dataset& ds, Index j) {
    if (j < static_cast<Index>(ds.feature_names.size())) return ds.feature_names[static_cast<std::size_t>(j)];
    return "x" + std::to_string(j);
}

/// Statistics of X and y; a constant column is an error naming the column.
inline Standardization fit_standardization(const Dataset& ds) {
    if (ds.size() < 2) throw ConfigError("standardization needs at least two rows");
    Standardization st;
    st.feature_means.resize(ds.dim());
    st.feature_stds.resize(ds.dim());
    for (Index j = 0; j < ds.dim(); ++j) {
        const auto [mean, sd] = mean_std(ds.X.col(j));
        if (!(sd > 0.0)) throw ConfigError("zero-variance feature column '" + column_label(ds, j) + "'");
        st.feature_means(j) = mean;
        st.feature_stds(j) = sd;
    }
    const auto [ym, ys] = mean_std(ds.y);
    if (!(ys > 0.0)) throw ConfigError("zero-variance target column '" + ds.target_name + "'");
    st.y_mean = ym;
    st.y_std = ys;
    return st;
}

inline Dataset apply_standardization(const Dataset& ds, const Standardization& st) {
    Dataset out = ds;
    out.X = st.apply_X(ds.X);
    out.y = st.apply_y(ds.y);
    out.stats = st;
    out.standardized = true;
    return out;
}

/// Standardizes with statistics of the whole dataset.
inline Dataset standardize(const Dataset& ds) { return apply_standardization(ds, fit_standardization(ds)); }

inline Dataset subset(const Dataset& ds, const std::vector<Index>& rows) {
    Dataset out;
    out.name = ds.name;
    out.feature_names = ds.feature_names;
    out.target_name = ds.target_name;
    out.stats = ds.stats;
    out.standardized = ds.standardized;
    out.X.resize(static_cast<Index>(rows.size()), ds.dim());
    out.y.resize(static_cast<Index>(rows.size()));
    for (std::size_t i = 0; i < rows.size(); ++i) {
        out.X.row(static_cast<Index>(i)) = ds.X.row(rows[i]);
        out.y(static_cast<Index>(i)) = ds.y(rows[i]);
    }
    return out;
}

/**
 * Train/test split for one fold. With `leak_free` the statistics come from
 * the training rows only and are applied to both parts; otherwise from all rows.
 */
inline Split make_fold_split(const Dataset& ds, int fold, bool leak_free = true) {
    if (ds.fold_ids.size() != static_cast<std::size_t>(ds.size())) {
        throw ConfigError("make_fold_split: dataset has no fold assignment");
    }
    if (fold < 0 || fold >= kNumFolds) throw ConfigError("make_fold_split: fold out of range");
    std::vector<Index> train_rows, test_rows;
    for (Index i = 0; i < ds.size(); ++i) {
        (ds.fold_ids[static_cast<std::size_t>(i)] == fold ? test_rows : train_rows).push_back(i);
    }
    if (test_rows.empty()) throw ConfigError("make_fold_split: empty test fold");
    Split split{subset(ds, train_rows), subset(ds, test_rows)};
    const Standardization st = leak_free ? fit_standardization(split.train) : fit_standardization(ds);
    split.train = apply_standardization(split.train, st);
    split.test = apply_standardization(split.test, st);
    return split;
}

namespace detail {

inline std::string trim(std::string s) {
    const auto ws = [](unsigned char c) { return std::isspace(c) != 0; };
    while (!s.empty() && ws(static_cast<unsigned char>(s.back()))) s.pop_back();
    std::size_t i = 0;
    while (i < s.size() && ws(static_cast<unsigned char>(s[i]))) ++i;
    s.erase(0, i);
    if (s.size() >= 2 && s.front() == '"' && s.back() == '"') s = s.substr(1, s.size() - 2);
    return s;
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) out.push_back(trim(cell));
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

inline bool parse_double(const std::string& s, double& out) {
    if (s.empty()) return false;
    const char* begin = s.data();
    if (*begin == '+') ++begin;
    const auto [ptr, ec] = std::from_chars(begin, s.data() + s.size(), out);
    return ec == std::errc() && ptr == s.data() + s.size() && std::isfinite(out);
}

} // namespace detail

/**
 * Numeric CSV with a header row. `target_column` names the target (empty means
 * the last column); every other column is a feature. Fold ids come from a
 * shuffle seeded with `seed`.
 */
inline Dataset parse_csv(std::istream& in, const std::string& target_column, std::uint64_t seed = 0,
                         const std::string& name = "dataset") {
    std::string line;
    std::vector<std::string> header;
    while (std::getline(in, line)) {
        if (!detail::trim(line).empty()) {
            header = detail::split_csv_line(line);
            break;
        }
    }
    if (header.empty()) throw ConfigError("CSV '" + name + "' is empty");

    std::size_t target = header.size() - 1;
    if (!target_column.empty()) {
        const auto it = std::find(header.begin(), header.end(), target_column);
        if (it == header.end()) throw ConfigError("CSV '" + name + "' has no target column '" + target_column + "'");
        target = static_cast<std::size_t>(it - header.begin());
    }
    if (header.size() < 2) throw ConfigError("CSV '" + name + "' needs at least one feature column");

    std::vector<std::vector<double>> rows;
    std::vector<std::size_t> bad_rows;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (detail::trim(line).empty()) continue;
        const auto cells = detail::split_csv_line(line);
        std::vector<double> row(header.size());
        bool ok = cells.size() == header.size();
        for (std::size_t j = 0; ok && j < cells.size(); ++j) ok = detail::parse_double(cells[j], row[j]);
        if (ok) {
            rows.push_back(std::move(row));
        } else {
            bad_rows.push_back(line_no);
        }
    }
    if (!bad_rows.empty()) {
        std::string msg = "CSV '" + name + "' has non-numeric or malformed rows at lines";
        for (std::size_t i = 0; i < bad_rows.size() && i < 20; ++i) msg += " " + std::to_string(bad_rows[i]);
        if (bad_rows.size() > 20) msg += " ...";
        throw ConfigError(msg);
    }
    if (rows.empty()) throw ConfigError("CSV '" + name + "' has no data rows");

    Dataset ds;
    ds.name = name;
    ds.target_name = header[target];
    const Index n = static_cast<Index>(rows.size());
    const Index d = static_cast<Index>(header.size()) - 1;
    ds.X.resize(n, d);
    ds.y.resize(n);
    for (std::size_t j = 0; j < header.size(); ++j)
        if (j != target) ds.feature_names.push_back(header[j]);
    for (Index i = 0; i < n; ++i) {
        Index col = 0;
        for (std::size_t j = 0; j < header.size(); ++j) {
            const double v = rows[static_cast<std::size_t>(i)][j];
            if (j == target) {
                ds.y(i) = v;
            } else {
                ds.X(i, col++) = v;
            }
        }
    }
    for (Index j = 0; j < d; ++j) {
        if (n > 1 && !(mean_std(ds.X.col(j)).second > 0.0)) {
            throw ConfigError("zero-variance feature column '" + ds.feature_names[static_cast<std::size_t>(j)] + "'");
        }
    }
    ds.fold_ids = assign_folds(n, seed);
    return ds;
}

inline Dataset load_csv(const std::string& path, const std::string& target_column, std::uint64_t seed = 0) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open CSV file '" + path + "'");
    std::string name = path;
    if (const auto slash = name.find_last_of('/'); slash != std::string::npos) name = name.substr(slash + 1);
    if (const auto dot = name.find_last_of('.'); dot != std::string::npos) name = name.substr(0, dot);
    return parse_csv(in, target_column, seed, name);
}

/**
 * Adds magnitude * std(y) to ceil(fraction * n) targets chosen uniformly
 * without replacement. The shift is positive unless `symmetric`, in which case
 * each sign is drawn uniformly. The chosen indices are recorded.
 */
inline Dataset inject_outliers(const Dataset& ds, double fraction, double magnitude, Rng& rng,
                               bool symmetric = false) {
    if (!(fraction > 0.0 && fraction <= 1.0)) throw ConfigError("inject_outliers: fraction must lie in (0, 1]");
    const Index n = ds.size();
    if (n < 1) throw ConfigError("inject_outliers: empty dataset");
    const Index k = std::min<Index>(n, static_cast<Index>(std::ceil(fraction * static_cast<double>(n) - 1e-9)));
    std::vector<Index> idx(static_cast<std::size_t>(n));
    std::iota(idx.begin(), idx.end(), Index{0});
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(static_cast<std::size_t>(std::max<Index>(k, 1)));
    std::sort(idx.begin(), idx.end());

    const double shift = magnitude * mean_std(ds.y).second;
    Dataset out = ds;
    std::bernoulli_distribution coin(0.5);
    for (Index i : idx) {
        const double sign = symmetric && coin(rng) ? -1.0 : 1.0;
        out.y(i) += sign * shift;
    }
    out.outlier_indices = idx;
    return out;
}

inline constexpr Index kMaxSynthSize = 4096;

/**
 * X ~ U[-3, 3]^d, f ~ ST(nu, 0, K_XX), y = f + N(0, noise_sd^2).
 */
inline Dataset synth_tp(Index n, Index d, double nu, const KernelParams& kernel, double noise_sd, Rng& rng) {
    if (n < 1 || d < 1) throw ConfigError("synth_tp: n and d must be positive");
    if (n > kMaxSynthSize) throw ConfigError("synth_tp: n exceeds dense sampling limit of 4096");
    if (kernel.dim() != d) throw ShapeError("synth_tp: kernel dimension does not match d");
    if (!(noise_sd >= 0.0)) throw ConfigError("synth_tp: noise_sd must be >= 0");
    Dataset ds;
    ds.name = "synth_tp";
    ds.target_name = "y";
    std::uniform_real_distribution<double> unif(-3.0, 3.0);
    ds.X.resize(n, d);
    for (Index i = 0; i < n; ++i)
        for (Index j = 0; j < d; ++j) ds.X(i, j) = unif(rng);
    for (Index j = 0; j < d; ++j) ds.feature_names.push_back("x" + std::to_string(j));
    const MvtParams prior{nu, Vector::Zero(n), gram(ds.X, kernel)};
    ds.y = mvt_sample(prior, 1, rng).row(0).transpose();
    if (noise_sd > 0.0) ds.y += noise_sd * draw_standard_normal(n, rng);
    ds.fold_ids = assign_folds(n, rng());
    return ds;
}

struct DensityRow {
    double x = 0.0;
    double histogram = 0.0;
    double kde = 0.0;
};

struct DensityReport {
    std::string name;
    double bandwidth = 0.0;
    std::vector<DensityRow> rows;

    std::string to_csv() const {
        std::ostringstream os;
        os.precision(10);
        os << "x,histogram_density,kde_density\n";
        for (const auto& r : rows) os << r.x << ',' << r.histogram << ',' << r.kde << '\n';
        return os.str();
    }

    /// Trapezoid integral of the KDE over the grid points with |x| > threshold.
    double kde_tail_mass(double threshold) const {
        double mass = 0.0;
        for (std::size_t i = 1; i < rows.size(); ++i) {
            const double a = rows[i - 1].x, b = rows[i].x;
            if (std::abs(a) > threshold && std::abs(b) > threshold) {
                mass += 0.5 * (rows[i - 1].kde + rows[i].kde) * (b - a);
            }
        }
        return mass;
    }

    double kde_integral() const {
        double mass = 0.0;
        for (std::size_t i = 1; i < rows.size(); ++i) {
            mass += 0.5 * (rows[i - 1].kde + rows[i].kde) * (rows[i].x - rows[i - 1].x);
        }
        return mass;
    }
};

inline constexpr int kDensityGridPoints = 256;

/// Silverman's rule: 0.9 min(sd, IQR / 1.34) n^{-1/5}.
inline double silverman_bandwidth(const Vector& y) {
    std::vector<double> v(y.data(), y.data() + y.size());
    std::sort(v.begin(), v.end());
    const auto quantile = [&](double q) {
        const double pos = q * static_cast<double>(v.size() - 1);
        const auto lo = static_cast<std::size_t>(std::floor(pos));
        const auto hi = std::min(lo + 1, v.size() - 1);
        return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
    };
    const double sd = mean_std(y).second;
    const double iqr = quantile(0.75) - quantile(0.25);
    const double spread = iqr > 0.0 ? std::min(sd, iqr / 1.34) : sd;
    return 0.9 * spread * std::pow(static_cast<double>(y.size()), -0.2);
}

inline double gaussian_kde(const Vector& samples, double bandwidth, double x) {
    const double norm = 1.0 / (static_cast<double>(samples.size()) * bandwidth * std::sqrt(2.0 * std::numbers::pi));
    return norm * ((samples.array() - x) / bandwidth).square().unaryExpr([](double z) { return std::exp(-0.5 * z); }).sum();
}

/**
 * Histogram and Gaussian KDE of the standardized targets on a 256-point grid
 * spanning [min - 1, max + 1].
 */
inline DensityReport density_report(const Vector& y_raw, std::optional<double> bandwidth = std::nullopt,
                                    const std::string& name = "dataset") {
    if (y_raw.size() < 2) throw ConfigError("density_report: needs at least two targets");
    const auto [mean, sd] = mean_std(y_raw);
    if (!(sd > 0.0)) throw ConfigError("density_report: targets have zero variance");
    const Vector y = (y_raw.array() - mean) / sd;
    DensityReport rep;
    rep.name = name;
    rep.bandwidth = bandwidth ? *bandwidth : silverman_bandwidth(y);
    if (!(rep.bandwidth > 0.0)) throw ConfigError("density_report: bandwidth must be positive");
    const double lo = y.minCoeff() - 1.0;
    const double hi = y.maxCoeff() + 1.0;
    const double step = (hi - lo) / (kDensityGridPoints - 1);
    const double n = static_cast<double>(y.size());
    rep.rows.resize(kDensityGridPoints);
    for (int k = 0; k < kDensityGridPoints; ++k) {
        const double x = lo + step * k;
        const double count = static_cast<double>(
            (y.array() >= x - 0.5 * step && y.array() < x + 0.5 * step).count());
        rep.rows[static_cast<std::size_t>(k)] = DensityRow{x, count / (n * step), gaussian_kde(y, rep.bandwidth, x)};
    }
    return rep;
}

} // namespace svtp
