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

#include "proxytta/losses.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include "proxytta/errors.hpp"

namespace proxytta {

void LossWeights::validate() const {
  if (!(w_z >= 0.0) || !(w_sm >= 0.0) || !(w_proxy >= 0.0)) {
    throw ConfigError("loss weights must be non-negative");
  }
  if (w_z + w_sm + w_proxy <= 0.0) {
    throw ConfigError("at least one loss weight must be positive");
  }
}

std::map<std::string, double> LossReport::components() const {
  return {{"l_z", l_z}, {"l_sm", l_sm}, {"l_proxy", l_proxy}};
}

namespace {

double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

void check_pred(const Var& pred, const Tensor& other, const char* what) {
  const Shape& s = pred->value.shape();
  if (s.c != 1 || s.n != other.n() || s.h != other.h() || s.w != other.w()) {
    throw ContractError(std::string(what) + ": prediction " + s.str() +
                        " does not match " + other.shape().str());
  }
}

Var scalar_node(double value, const Var& pred,
                std::function<void(Node&)> backward) {
  auto node = std::make_shared<Node>();
  node->value = Tensor(Shape{1, 1, 1, 1}, value);
  node->requires_grad = pred->requires_grad;
  node->parents = {pred};
  if (node->requires_grad) node->backward_fn = std::move(backward);
  return node;
}

// Mean |pred - ref| over pixels whose mask (channel 1 of `ref`) is set.
Var masked_l1(const Var& pred, const Tensor& ref, const char* what) {
  if (ref.c() != 2) {
    throw ContractError(std::string(what) + ": expected depth+mask channels");
  }
  check_pred(pred, ref, what);
  const int n = ref.n();
  const std::size_t hw = static_cast<std::size_t>(ref.h()) * ref.w();
  std::size_t count = 0;
  double sum = 0.0;
  for (int i = 0; i < n; ++i) {
    const auto depth = ref.plane(i, 0);
    const auto mask = ref.plane(i, 1);
    const auto p = pred->value.plane(i, 0);
    for (std::size_t k = 0; k < hw; ++k) {
      if (mask[k] > 0.5) {
        sum += std::abs(p[k] - depth[k]);
        ++count;
      }
    }
  }
  if (count == 0) {
    throw EmptySupportError(std::string(what) + ": no valid depth points");
  }
  return scalar_node(sum / count, pred, [ref, count, n, hw](Node& self) {
    Node& pn = *self.parents[0];
    const double g = self.grad[0] / static_cast<double>(count);
    Tensor& grad = pn.grad_buffer();
    for (int i = 0; i < n; ++i) {
      const auto depth = ref.plane(i, 0);
      const auto mask = ref.plane(i, 1);
      const auto p = pn.value.plane(i, 0);
      auto gp = grad.plane(i, 0);
      for (std::size_t k = 0; k < hw; ++k) {
        if (mask[k] > 0.5) gp[k] += g * sign(p[k] - depth[k]);
      }
    }
  });
}

}  // namespace

Var sparse_consistency(const Var& pred, const Tensor& sparse) {
  return masked_l1(pred, sparse, "sparse_consistency");
}

Var supervised_loss(const Var& pred, const Tensor& gt) {
  return masked_l1(pred, gt, "supervised_loss");
}

Var local_smoothness(const Var& pred, const Tensor& image) {
  if (image.c() != 3) throw ContractError("local_smoothness: image must be RGB");
  check_pred(pred, image, "local_smoothness");
  const int n = image.n(), h = image.h(), w = image.w();
  // Edge weights from channel-mean intensity.
  Tensor lx(Shape{n, 1, h, w}), ly(Shape{n, 1, h, w});
  for (int i = 0; i < n; ++i) {
    auto mean = [&](int y, int x) {
      return (image.at(i, 0, y, x) + image.at(i, 1, y, x) +
              image.at(i, 2, y, x)) / 3.0;
    };
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        if (x + 1 < w) lx.at(i, 0, y, x) = std::exp(-std::abs(mean(y, x + 1) - mean(y, x)));
        if (y + 1 < h) ly.at(i, 0, y, x) = std::exp(-std::abs(mean(y + 1, x) - mean(y, x)));
      }
    }
  }
  const Tensor& p = pred->value;
  double sum = 0.0;
  for (int i = 0; i < n; ++i) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        if (x + 1 < w) sum += lx.at(i, 0, y, x) * std::abs(p.at(i, 0, y, x + 1) - p.at(i, 0, y, x));
        if (y + 1 < h) sum += ly.at(i, 0, y, x) * std::abs(p.at(i, 0, y + 1, x) - p.at(i, 0, y, x));
      }
    }
  }
  const double norm = static_cast<double>(n) * h * w;
  return scalar_node(sum / norm, pred, [lx, ly, n, h, w, norm](Node& self) {
    Node& pn = *self.parents[0];
    const Tensor& v = pn.value;
    Tensor& grad = pn.grad_buffer();
    const double g = self.grad[0] / norm;
    for (int i = 0; i < n; ++i) {
      for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
          if (x + 1 < w) {
            const double s = g * lx.at(i, 0, y, x) *
                             sign(v.at(i, 0, y, x + 1) - v.at(i, 0, y, x));
            grad.at(i, 0, y, x + 1) += s;
            grad.at(i, 0, y, x) -= s;
          }
          if (y + 1 < h) {
            const double s = g * ly.at(i, 0, y, x) *
                             sign(v.at(i, 0, y + 1, x) - v.at(i, 0, y, x));
            grad.at(i, 0, y + 1, x) += s;
            grad.at(i, 0, y, x) -= s;
          }
        }
      }
    }
  });
}

Var proxy_consistency(const EmbeddingPair& pair) {
  if (!pair.p || !pair.q) throw ContractError("proxy_consistency: empty pair");
  return cosine_loss(pair.p, pair.q);
}

LossReport adapt_loss(const Var& pred, const Tensor& sparse, const Tensor& image,
                      const std::optional<EmbeddingPair>& pair,
                      const LossWeights& weights) {
  weights.validate();
  if (weights.w_proxy > 0.0 && !pair) {
    throw ContractError("adapt_loss: w_proxy > 0 requires an embedding pair");
  }
  const Var lz = sparse_consistency(pred, sparse);
  const Var lsm = local_smoothness(pred, image);
  const Var lp = pair ? proxy_consistency(*pair) : nullptr;

  LossReport report;
  report.l_z = lz->value[0];
  report.l_sm = lsm->value[0];
  report.l_proxy = lp ? lp->value[0] : 0.0;
  for (int i = 0; i < sparse.n(); ++i) {
    for (double m : sparse.plane(i, 1)) report.valid_points += m > 0.5 ? 1 : 0;
  }

  std::vector<std::pair<double, Var>> terms;
  if (weights.w_z > 0.0) terms.emplace_back(weights.w_z, lz);
  if (weights.w_sm > 0.0) terms.emplace_back(weights.w_sm, lsm);
  if (weights.w_proxy > 0.0) terms.emplace_back(weights.w_proxy, lp);
  report.graph = ag::weighted_sum(terms);
  report.total = report.graph->value[0];
  return report;
}

Tensor depth_tensor(const DepthMap& d) {
  return Tensor(Shape{1, 1, d.height, d.width}, d.data);
}

namespace {

void check_same(const DepthMap& a, int h, int w, const char* what) {
  if (a.height != h || a.width != w) {
    throw ContractError(std::string(what) + ": raster size mismatch");
  }
}

}  // namespace

double sparse_consistency(const DepthMap& pred, const DepthMap& z) {
  check_same(pred, z.height, z.width, "sparse_consistency");
  return sparse_consistency(ag::constant(depth_tensor(pred)), sparse_tensor({&z}))
      ->value[0];
}

double local_smoothness(const DepthMap& pred, const Image& image) {
  check_same(pred, image.height, image.width, "local_smoothness");
  return local_smoothness(ag::constant(depth_tensor(pred)), image_tensor({&image}))
      ->value[0];
}

double proxy_consistency_value(const EmbeddingPair& pair) {
  return proxy_consistency(pair)->value[0];
}

double supervised_loss(const DepthMap& pred, const DepthMap& gt) {
  check_same(pred, gt.height, gt.width, "supervised_loss");
  return supervised_loss(ag::constant(depth_tensor(pred)), sparse_tensor({&gt}))
      ->value[0];
}

LossReport adapt_loss(const DepthMap& pred, const DepthMap& z,
                      const Image& image,
                      const std::optional<EmbeddingPair>& pair,
                      const LossWeights& weights) {
  check_same(pred, z.height, z.width, "adapt_loss");
  check_same(pred, image.height, image.width, "adapt_loss");
  return adapt_loss(ag::constant(depth_tensor(pred)), sparse_tensor({&z}),
                    image_tensor({&image}), pair, weights);
}

LossRow to_row(long long step, const LossReport& report) {
  return LossRow{step,          report.l_z,   report.l_sm,
                 report.l_proxy, report.total, report.valid_points};
}

void append_loss_csv(const std::filesystem::path& path,
                     const std::vector<LossRow>& rows) {
  const bool fresh =
      !std::filesystem::exists(path) || std::filesystem::file_size(path) == 0;
  std::ofstream f(path, std::ios::app);
  if (!f) throw FormatError(path.string() + ": cannot open for appending");
  if (fresh) f << kLossHeader << "\n";
  char line[256];
  for (const LossRow& r : rows) {
    std::snprintf(line, sizeof(line), "%lld,%.9g,%.9g,%.9g,%.9g,%zu\n", r.step,
                  r.l_z, r.l_sm, r.l_proxy, r.total, r.valid_points);
    f << line;
  }
}

std::vector<LossRow> read_loss_csv(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw FormatError(path.string() + ": cannot open");
  std::string line;
  std::getline(f, line);
  if (line != kLossHeader) {
    throw FormatError(path.string() + ": unexpected header '" + line + "'");
  }
  std::vector<LossRow> rows;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    LossRow r;
    if (std::sscanf(line.c_str(), "%lld,%lf,%lf,%lf,%lf,%zu", &r.step, &r.l_z,
                    &r.l_sm, &r.l_proxy, &r.total, &r.valid_points) != 6) {
      throw FormatError(path.string() + ": malformed row '" + line + "'");
    }
    rows.push_back(r);
  }
  return rows;
}

}  // namespace proxytta
