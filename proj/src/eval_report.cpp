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

#include "proxytta/eval_report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <functional>
#include <thread>

#include "png_io.hpp"
#include "proxytta/errors.hpp"
#include "proxytta/losses.hpp"

namespace proxytta {

namespace {

// Runs fn(0..count-1) over `jobs` threads with a fixed task-to-thread
// assignment; the first exception (by worker index) is rethrown.
void parallel_for(std::size_t count, int jobs,
                  const std::function<void(std::size_t)>& fn) {
  const int workers = std::max(1, std::min<int>(jobs, static_cast<int>(count)));
  if (workers == 1) {
    for (std::size_t t = 0; t < count; ++t) fn(t);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(workers);
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t t = w; t < count; t += workers) fn(t);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace

MetricsRecord compute_metrics(const DepthMap& pred, const DepthMap& gt,
                              DepthRange range) {
  if (pred.height != gt.height || pred.width != gt.width) {
    throw ContractError("compute_metrics: raster size mismatch");
  }
  double abs_sum = 0.0, sq_sum = 0.0;
  std::size_t n = 0;
  const std::size_t first = static_cast<std::size_t>(std::max(range.crop_top, 0)) * gt.width;
  for (std::size_t i = first; i < gt.size(); ++i) {
    const double g = gt.data[i];
    if (!gt.valid[i] || g < range.min || g > range.max) continue;
    const double e = pred.data[i] - g;
    abs_sum += std::abs(e);
    sq_sum += e * e;
    ++n;
  }
  if (n == 0) {
    throw EmptySupportError("compute_metrics: no valid gt pixel inside range");
  }
  MetricsRecord r;
  r.mae_mm = to_millimeters(abs_sum / n);
  r.rmse_mm = to_millimeters(std::sqrt(sq_sum / n));
  r.n_pixels = n;
  r.range = range;
  return r;
}

void MetricsAccumulator::add(const MetricsRecord& rec) {
  ++samples_;
  pixels_ += rec.n_pixels;
  mae_sum_ += rec.mae_mm;
  rmse_sum_ += rec.rmse_mm;
}

void MetricsAccumulator::add(const DepthMap& pred, const DepthMap& gt) {
  add(compute_metrics(pred, gt, range_));
}

MetricsRecord MetricsAccumulator::result() const {
  if (samples_ == 0) throw EmptySupportError("no samples were evaluated");
  MetricsRecord r;
  r.mae_mm = mae_sum_ / samples_;
  r.rmse_mm = rmse_sum_ / samples_;
  r.n_pixels = pixels_;
  r.range = range_;
  return r;
}

const char* to_string(InputMode m) {
  switch (m) {
    case InputMode::Both: return "both";
    case InputMode::DepthOnly: return "depth_only";
    case InputMode::ImageOnly: return "image_only";
  }
  return "?";
}

InputMode parse_input_mode(const std::string& s) {
  for (InputMode m : {InputMode::Both, InputMode::DepthOnly, InputMode::ImageOnly}) {
    if (s == to_string(m)) return m;
  }
  throw ConfigError("unknown input mode '" + s + "'");
}

std::vector<DepthMap> predict(ModelParams& params,
                              const std::vector<const Sample*>& samples,
                              InputMode mode, int batch_size) {
  std::vector<DepthMap> out;
  out.reserve(samples.size());
  if (samples.empty()) return out;
  const auto [null_image, null_depth] =
      make_null_inputs(samples[0]->image.height, samples[0]->image.width);
  for (std::size_t b = 0; b < samples.size(); b += batch_size) {
    const std::size_t e = std::min(samples.size(), b + batch_size);
    std::vector<const Image*> images;
    std::vector<const DepthMap*> sparse;
    for (std::size_t i = b; i < e; ++i) {
      images.push_back(mode == InputMode::DepthOnly ? &null_image : &samples[i]->image);
      sparse.push_back(mode == InputMode::ImageOnly ? &null_depth : &samples[i]->sparse);
    }
    const ForwardResult fr = forward(params, image_tensor(images),
                                     sparse_tensor(sparse), {Mode::Eval, false});
    for (DepthMap& d : to_depth_maps(fr.depth->value)) out.push_back(std::move(d));
  }
  return out;
}

MetricsRecord evaluate(const ModelParams& params,
                       const std::vector<Sample>& dataset, InputMode mode,
                       DepthRange range, int batch_size) {
  ModelParams local = params;
  local.freeze_all();
  std::vector<const Sample*> ptrs;
  for (const Sample& s : dataset) ptrs.push_back(&s);
  const std::vector<DepthMap> preds = predict(local, ptrs, mode, batch_size);
  MetricsAccumulator acc(range);
  for (std::size_t i = 0; i < dataset.size(); ++i) acc.add(preds[i], dataset[i].gt);
  return acc.result();
}

std::vector<SensitivityRow> sensitivity_study(const ModelParams& params,
                                              const std::vector<Sample>& dataset,
                                              const std::vector<double>& densities,
                                              DepthRange range,
                                              std::uint64_t seed, int jobs) {
  if (dataset.empty()) throw EmptySupportError("sensitivity_study: empty dataset");
  struct Task {
    double density;  // < 0: native sparse maps
    InputMode mode;
  };
  std::vector<Task> tasks;
  const std::vector<double> levels =
      densities.empty() ? std::vector<double>{-1.0} : densities;
  for (double d : levels) {
    if (d >= 0.0 && !(d > 0.0 && d <= 1.0)) {
      throw ConfigError("sensitivity_study: densities must lie in (0, 1]");
    }
    for (InputMode m : {InputMode::Both, InputMode::DepthOnly, InputMode::ImageOnly}) {
      tasks.push_back({d, m});
    }
  }

  // One resampled copy of the dataset per density, shared by its three modes.
  std::map<double, std::vector<Sample>> resampled;
  for (double d : levels) {
    if (d < 0.0) continue;
    std::vector<Sample> copy = dataset;
    for (std::size_t i = 0; i < copy.size(); ++i) {
      copy[i].sparse = sample_sparse_depth(copy[i].gt, d, SamplingStrategy::Uniform,
                                           seed * 7919 + i * 104729 + 13);
    }
    resampled.emplace(d, std::move(copy));
  }
  double native_density = 0.0;
  for (const Sample& s : dataset) {
    native_density += static_cast<double>(s.sparse.valid_count()) / s.sparse.size();
  }
  native_density /= dataset.size();

  std::vector<SensitivityRow> rows(tasks.size());
  auto run = [&](std::size_t t) {
    const Task& task = tasks[t];
    const std::vector<Sample>& data =
        task.density < 0.0 ? dataset : resampled.at(task.density);
    const MetricsRecord r = evaluate(params, data, task.mode, range);
    rows[t] = SensitivityRow{task.mode,
                             task.density < 0.0 ? native_density : task.density,
                             r.mae_mm, r.rmse_mm, r.n_pixels};
  };
  parallel_for(tasks.size(), jobs, run);
  return rows;
}

double centroid_distance(const std::vector<double>& a,
                         const std::vector<double>& b) {
  return cosine_loss(a, b);
}

double CentroidReport::at(const std::string& a, const std::string& b) const {
  auto index = [](const std::string& name) {
    for (int i = 0; i < 4; ++i) {
      if (name == kClouds[i]) return i;
    }
    throw ContractError("unknown embedding cloud '" + name + "'");
  };
  return distance[index(a)][index(b)];
}

namespace {

// Centroids of q = g'(e(I, z)) and p = h(g(e(I_0, z))) over a dataset.
std::pair<std::vector<double>, std::vector<double>> embedding_centroids(
    ModelParams& params, ProxyHeads& heads, const std::vector<Sample>& data) {
  if (data.empty()) throw EmptySupportError("centroid_analysis: empty dataset");
  const int dim = heads.config.embed_dim;
  std::vector<double> q_sum(dim, 0.0), p_sum(dim, 0.0);
  const auto [null_image, null_depth] =
      make_null_inputs(data[0].image.height, data[0].image.width);
  constexpr std::size_t kBatch = 16;
  for (std::size_t b = 0; b < data.size(); b += kBatch) {
    const std::size_t e = std::min(data.size(), b + kBatch);
    std::vector<const Image*> images, nulls;
    std::vector<const DepthMap*> sparse;
    for (std::size_t i = b; i < e; ++i) {
      images.push_back(&data[i].image);
      nulls.push_back(&null_image);
      sparse.push_back(&data[i].sparse);
    }
    const Tensor z = sparse_tensor(sparse);
    const ForwardOptions eval{Mode::Eval, false};
    const Var both = forward(params, image_tensor(images), z, eval).taps.fused_feat;
    const Var depth_only = forward(params, image_tensor(nulls), z, eval).taps.fused_feat;
    const Var q = apply_head(heads, HeadGroup::TargetProjector, pool_features(both));
    const Var p = apply_head(
        heads, HeadGroup::Predictor,
        apply_head(heads, HeadGroup::OnlineProjector, pool_features(depth_only)));
    for (int i = 0; i < q->value.n(); ++i) {
      for (int k = 0; k < dim; ++k) {
        q_sum[k] += q->value.at(i, k, 0, 0);
        p_sum[k] += p->value.at(i, k, 0, 0);
      }
    }
  }
  for (int k = 0; k < dim; ++k) {
    q_sum[k] /= data.size();
    p_sum[k] /= data.size();
  }
  return {q_sum, p_sum};
}

}  // namespace

CentroidReport centroid_analysis(const ModelParams& params,
                                 const ProxyHeads& heads,
                                 const std::vector<Sample>& source,
                                 const std::vector<Sample>& target) {
  if (!heads.prepared) {
    throw LifecycleError("centroid_analysis requires prepared proxy heads");
  }
  ModelParams model = params;
  model.freeze_all();
  ProxyHeads local = heads;
  local.freeze();
  const auto [sq, sp] = embedding_centroids(model, local, source);
  const auto [tq, tp] = embedding_centroids(model, local, target);
  const std::vector<double>* clouds[4] = {&sq, &sp, &tq, &tp};
  CentroidReport r;
  for (int i = 0; i < 4; ++i) {
    for (int j = 0; j < 4; ++j) {
      r.distance[i][j] = i == j ? 0.0 : centroid_distance(*clouds[i], *clouds[j]);
    }
  }
  r.proxy_closer = r.at("target_p", "source_q") < r.at("target_q", "source_q");
  return r;
}

// ---------------------------------------------------------------------------

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::string fmt(const char* pattern, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), pattern, v);
  return buf;
}

}  // namespace

void write_metrics_csv(const std::filesystem::path& path,
                       const std::vector<MetricsRow>& rows) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw FormatError(path.string() + ": cannot open for writing");
  f << kMetricsHeader << "\n";
  for (const MetricsRow& r : rows) {
    f << r.dataset << ',' << r.method << ',' << r.seed << ',' << r.mode << ','
      << fmt("%.4f", r.density) << ',' << fmt("%.6f", r.mae_mm) << ','
      << fmt("%.6f", r.rmse_mm) << ',' << r.n_pixels << "\n";
  }
}

std::vector<MetricsRow> read_metrics_csv(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw FormatError(path.string() + ": cannot open");
  std::string line;
  std::getline(f, line);
  if (line != kMetricsHeader) {
    throw FormatError(path.string() + ": unexpected header '" + line + "'");
  }
  std::vector<MetricsRow> rows;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    const auto cells = split_csv(line);
    if (cells.size() != 8) {
      throw FormatError(path.string() + ": malformed row '" + line + "'");
    }
    try {
      rows.push_back(MetricsRow{cells[0], cells[1], std::stoull(cells[2]),
                                cells[3], std::stod(cells[4]), std::stod(cells[5]),
                                std::stod(cells[6]), std::stoull(cells[7])});
    } catch (const std::exception&) {
      throw FormatError(path.string() + ": malformed row '" + line + "'");
    }
  }
  return rows;
}

double mean(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (double x : v) s += x;
  return s / v.size();
}

double sample_std(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / (v.size() - 1));
}

std::vector<SummaryCell> summarize(const std::vector<MetricsRow>& rows) {
  std::map<std::pair<std::string, std::string>,
           std::pair<std::vector<double>, std::vector<double>>> groups;
  for (const MetricsRow& r : rows) {
    if (r.mode != "both") continue;
    auto& g = groups[{r.dataset, r.method}];
    g.first.push_back(r.mae_mm);
    g.second.push_back(r.rmse_mm);
  }
  std::vector<SummaryCell> cells;
  for (const auto& [key, vals] : groups) {
    SummaryCell c;
    c.dataset = key.first;
    c.method = key.second;
    c.seeds = vals.first.size();
    c.mae_mean = mean(vals.first);
    c.mae_std = sample_std(vals.first);
    c.rmse_mean = mean(vals.second);
    c.rmse_std = sample_std(vals.second);
    cells.push_back(c);
  }
  std::map<std::string, std::pair<double, double>> best;
  for (const SummaryCell& c : cells) {
    auto [it, fresh] = best.try_emplace(c.dataset, c.mae_mean, c.rmse_mean);
    if (!fresh) {
      it->second.first = std::min(it->second.first, c.mae_mean);
      it->second.second = std::min(it->second.second, c.rmse_mean);
    }
  }
  for (SummaryCell& c : cells) {
    c.best_mae = c.mae_mean == best[c.dataset].first;
    c.best_rmse = c.rmse_mean == best[c.dataset].second;
  }
  return cells;
}

namespace {

struct Canvas {
  int w, h;
  std::vector<std::uint8_t> px;
  Canvas(int w_, int h_) : w(w_), h(h_), px(static_cast<std::size_t>(w_) * h_ * 3, 255) {}
  void set(int x, int y, std::array<std::uint8_t, 3> c) {
    if (x < 0 || y < 0 || x >= w || y >= h) return;
    std::copy(c.begin(), c.end(), px.begin() + (static_cast<std::size_t>(y) * w + x) * 3);
  }
  void line(double x0, double y0, double x1, double y1, std::array<std::uint8_t, 3> c) {
    const int steps = static_cast<int>(std::max(std::abs(x1 - x0), std::abs(y1 - y0))) + 1;
    for (int i = 0; i <= steps; ++i) {
      const double t = static_cast<double>(i) / steps;
      set(static_cast<int>(std::lround(x0 + t * (x1 - x0))),
          static_cast<int>(std::lround(y0 + t * (y1 - y0))), c);
    }
  }
};

// Loss curves: total (black), l_z (red), l_sm (green), l_proxy (blue).
void plot_losses(const std::vector<LossRow>& rows, const std::filesystem::path& path) {
  Canvas cv(480, 240);
  const int left = 30, right = 470, top = 10, bottom = 220;
  cv.line(left, bottom, right, bottom, {0, 0, 0});
  cv.line(left, top, left, bottom, {0, 0, 0});
  if (!rows.empty()) {
    double hi = 0.0;
    for (const LossRow& r : rows) {
      for (double v : {r.total, r.l_z, r.l_sm, r.l_proxy}) {
        if (std::isfinite(v)) hi = std::max(hi, v);
      }
    }
    if (hi <= 0.0) hi = 1.0;
    const double n = std::max<std::size_t>(rows.size() - 1, 1);
    auto px = [&](std::size_t i) { return left + (right - left) * (i / n); };
    auto py = [&](double v) { return bottom - (bottom - top) * (v / hi); };
    const std::array<std::array<std::uint8_t, 3>, 4> colors{
        {{0, 0, 0}, {200, 30, 30}, {30, 150, 30}, {30, 60, 200}}};
    auto series = [](const LossRow& r, int k) {
      return k == 0 ? r.total : k == 1 ? r.l_z : k == 2 ? r.l_sm : r.l_proxy;
    };
    for (int k = 3; k >= 0; --k) {
      for (std::size_t i = 0; i < rows.size(); ++i) {
        const double v = series(rows[i], k);
        if (rows.size() == 1) {
          cv.set(static_cast<int>(px(0)), static_cast<int>(py(v)), colors[k]);
        } else if (i > 0) {
          cv.line(px(i - 1), py(series(rows[i - 1], k)), px(i), py(v), colors[k]);
        }
      }
    }
  }
  png::write8(path, png::Raster8{cv.w, cv.h, 3, std::move(cv.px)});
}

std::string cell_text(double m, double s, std::size_t n, bool best) {
  std::string t = fmt("%.2f", m);
  if (n > 1) t += " ± " + fmt("%.2f", s);
  return best ? "**" + t + "**" : t;
}

}  // namespace

void emit_report(const std::vector<std::filesystem::path>& runs,
                 const std::filesystem::path& out_dir, int jobs) {
  std::vector<std::string> missing;
  for (const auto& run : runs) {
    if (!std::filesystem::exists(run / "metrics.csv")) missing.push_back(run.string());
  }
  if (!missing.empty()) {
    std::string msg = "missing runs (no metrics.csv):";
    for (const auto& m : missing) msg += " " + m;
    throw ReportError(msg);
  }
  if (runs.empty()) throw ReportError("no runs to report");

  std::vector<MetricsRow> rows;
  for (const auto& run : runs) {
    auto r = read_metrics_csv(run / "metrics.csv");
    rows.insert(rows.end(), r.begin(), r.end());
  }
  const std::vector<SummaryCell> cells = summarize(rows);
  std::filesystem::create_directories(out_dir / "plots");

  {
    std::ofstream f(out_dir / "summary.csv", std::ios::trunc);
    f << "dataset,method,seeds,mae_mean_mm,mae_std_mm,rmse_mean_mm,rmse_std_mm,"
         "best_mae,best_rmse\n";
    for (const SummaryCell& c : cells) {
      f << c.dataset << ',' << c.method << ',' << c.seeds << ','
        << fmt("%.6f", c.mae_mean) << ',' << fmt("%.6f", c.mae_std) << ','
        << fmt("%.6f", c.rmse_mean) << ',' << fmt("%.6f", c.rmse_std) << ','
        << (c.best_mae ? 1 : 0) << ',' << (c.best_rmse ? 1 : 0) << "\n";
    }
  }

  std::set<std::string> datasets, methods;
  std::map<std::pair<std::string, std::string>, SummaryCell> by_key;
  for (const SummaryCell& c : cells) {
    datasets.insert(c.dataset);
    methods.insert(c.method);
    by_key[{c.method, c.dataset}] = c;
  }
  std::ofstream md(out_dir / "summary.md", std::ios::trunc);
  md << "# Summary\n\nMAE / RMSE in millimeters, mean ± sample std over seeds. "
        "Bold marks the best value per column.\n\n| method |";
  for (const auto& d : datasets) md << ' ' << d << " MAE | " << d << " RMSE |";
  md << "\n|---|";
  for (std::size_t i = 0; i < datasets.size(); ++i) md << "---|---|";
  md << "\n";
  for (const auto& m : methods) {
    md << "| " << m << " |";
    for (const auto& d : datasets) {
      const auto it = by_key.find({m, d});
      if (it == by_key.end()) {
        md << " - | - |";
        continue;
      }
      const SummaryCell& c = it->second;
      md << ' ' << cell_text(c.mae_mean, c.mae_std, c.seeds, c.best_mae) << " | "
         << cell_text(c.rmse_mean, c.rmse_std, c.seeds, c.best_rmse) << " |";
    }
    md << "\n";
  }
  if (methods.count("no_adapt")) {
    md << "\n## MAE improvement over no_adapt\n\nPer (method, dataset) pair: "
          "100 * (no_adapt - method) / no_adapt. The last line is the plain mean "
          "of the listed pairs.\n\n";
    std::vector<double> gains;
    for (const auto& m : methods) {
      if (m == "no_adapt") continue;
      for (const auto& d : datasets) {
        const auto base = by_key.find({"no_adapt", d});
        const auto it = by_key.find({m, d});
        if (base == by_key.end() || it == by_key.end() || base->second.mae_mean <= 0) continue;
        const double g = 100.0 * (base->second.mae_mean - it->second.mae_mean) /
                         base->second.mae_mean;
        gains.push_back(g);
        md << "- " << m << " / " << d << ": " << fmt("%.2f", g) << "%\n";
      }
    }
    if (!gains.empty()) md << "- mean: " << fmt("%.2f", mean(gains)) << "%\n";
  }

  std::vector<std::filesystem::path> plotted;
  for (const auto& run : runs) {
    if (std::filesystem::exists(run / "losses.csv")) plotted.push_back(run);
  }
  auto plot_one = [&](std::size_t i) {
    const auto& run = plotted[i];
    std::string name = run.filename().string();
    if (name.empty()) name = run.parent_path().filename().string();
    plot_losses(read_loss_csv(run / "losses.csv"), out_dir / "plots" / (name + ".png"));
  };
  parallel_for(plotted.size(), jobs, plot_one);
}

}  // namespace proxytta
