/*
 * Copyright (c) 2026 The proxytta Authors. All Rights Reserved
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *    http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#ifndef PROXYTTA_EVAL_REPORT_HPP_
#define PROXYTTA_EVAL_REPORT_HPP_

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "proxytta/datasets.hpp"
#include "proxytta/model.hpp"
#include "proxytta/proxy.hpp"

namespace proxytta {

/// Evaluation depth window in meters, inclusive on both ends.
struct DepthRange {
  double min = 0.0;
  double max = 80.0;
  /// Rows dropped from the top of the raster before scoring (real lidar
  /// data has no returns there); 0 scores the full frame.
  int crop_top = 0;
};
inline constexpr DepthRange kOutdoorRange{0.0, 80.0};
inline constexpr DepthRange kIndoorRange{0.2, 5.0};

/// The one meters-to-millimeters conversion used for every reported error.
inline constexpr double to_millimeters(double meters) { return meters * 1000.0; }

struct MetricsRecord {
  double mae_mm = 0.0;
  double rmse_mm = 0.0;
  std::size_t n_pixels = 0;
  DepthRange range;
  std::string dataset;
  std::string method;
};

/// Errors over pixels with valid gt inside `range`. Throws EmptySupportError
/// when no pixel qualifies.
MetricsRecord compute_metrics(const DepthMap& pred, const DepthMap& gt,
                              DepthRange range);

/// Dataset-level metrics: the mean of per-sample MAE and RMSE, with pixel
/// counts summed.
class MetricsAccumulator {
 public:
  explicit MetricsAccumulator(DepthRange range = {}) : range_(range) {}

  void add(const MetricsRecord& sample_record);
  void add(const DepthMap& pred, const DepthMap& gt);
  std::size_t samples() const { return samples_; }
  /// Throws EmptySupportError when nothing was added.
  MetricsRecord result() const;

 private:
  DepthRange range_;
  std::size_t samples_ = 0;
  std::size_t pixels_ = 0;
  double mae_sum_ = 0.0;
  double rmse_sum_ = 0.0;
};

enum class InputMode { Both, DepthOnly, ImageOnly };
const char* to_string(InputMode m);
InputMode parse_input_mode(const std::string& s);

/// Eval-mode predictions for a list of samples, batched.
std::vector<DepthMap> predict(ModelParams& params,
                              const std::vector<const Sample*>& samples,
                              InputMode mode = InputMode::Both,
                              int batch_size = 16);

MetricsRecord evaluate(const ModelParams& params,
                       const std::vector<Sample>& dataset, InputMode mode,
                       DepthRange range, int batch_size = 16);

struct SensitivityRow {
  InputMode mode = InputMode::Both;
  double density = 0.0;
  double mae_mm = 0.0;
  double rmse_mm = 0.0;
  std::size_t n_pixels = 0;
};

/// Metrics for (I, z), (I_0, z) and (I, z_0) at each density. Sparse maps are
/// resampled from gt at the requested density; an empty `densities` list
/// evaluates the dataset's own sparse maps and reports their mean density.
/// `jobs` > 1 evaluates rows on worker threads; row order is fixed.
std::vector<SensitivityRow> sensitivity_study(
    const ModelParams& params, const std::vector<Sample>& dataset,
    const std::vector<double>& densities, DepthRange range,
    std::uint64_t seed = 0, int jobs = 1);

struct CentroidReport {
  static constexpr const char* kClouds[4] = {"source_q", "source_p", "target_q",
                                             "target_p"};
  /// Cosine distance (1 - cos) between cloud centroids, indexed as kClouds.
  double distance[4][4] = {};
  /// dist(target_p, source_q) < dist(target_q, source_q)
  bool proxy_closer = false;

  double at(const std::string& a, const std::string& b) const;
};

/// q clouds come from g'(e(I, z)); p clouds from h(g(e(I_0, z))).
CentroidReport centroid_analysis(const ModelParams& params,
                                 const ProxyHeads& heads,
                                 const std::vector<Sample>& source,
                                 const std::vector<Sample>& target);

/// 1 - cos(a, b) between two centroids.
double centroid_distance(const std::vector<double>& a,
                         const std::vector<double>& b);

// ---------------------------------------------------------------------------
// CSV rows and report emission.

struct MetricsRow {
  std::string dataset;
  std::string method;
  std::uint64_t seed = 0;
  std::string mode = "both";
  double density = 0.0;
  double mae_mm = 0.0;
  double rmse_mm = 0.0;
  std::size_t n_pixels = 0;
};

inline constexpr const char* kMetricsHeader =
    "dataset,method,seed,mode,density,mae_mm,rmse_mm,n_pixels";

void write_metrics_csv(const std::filesystem::path& path,
                       const std::vector<MetricsRow>& rows);
std::vector<MetricsRow> read_metrics_csv(const std::filesystem::path& path);

/// Sample standard deviation (n - 1 denominator); 0 for fewer than 2 values.
double sample_std(const std::vector<double>& values);
double mean(const std::vector<double>& values);

struct SummaryCell {
  std::string dataset;
  std::string method;
  std::size_t seeds = 0;
  double mae_mean = 0.0;
  double mae_std = 0.0;
  double rmse_mean = 0.0;
  double rmse_std = 0.0;
  bool best_mae = false;
  bool best_rmse = false;
};

/// Aggregates mode=both rows over seeds per (dataset, method) and marks the
/// lowest mean per dataset column.
std::vector<SummaryCell> summarize(const std::vector<MetricsRow>& rows);

/// Reads metrics.csv (and losses.csv when present) of each run directory and
/// writes <out>/summary.csv, <out>/summary.md and <out>/plots/<run>.png.
/// Throws ReportError naming every run directory lacking metrics.csv.
/// `jobs` > 1 renders plots on worker threads.
void emit_report(const std::vector<std::filesystem::path>& runs,
                 const std::filesystem::path& out_dir, int jobs = 1);

}  // namespace proxytta

#endif  // PROXYTTA_EVAL_REPORT_HPP_
