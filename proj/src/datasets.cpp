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

#include "proxytta/datasets.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <nlohmann/json.hpp>
#include <numeric>
#include <random>
#include <sstream>

#include "png_io.hpp"
#include "proxytta/errors.hpp"

namespace proxytta {

namespace fs = std::filesystem;
using json = nlohmann::json;

std::size_t DepthMap::valid_count() const {
  return static_cast<std::size_t>(
      std::count(valid.begin(), valid.end(), std::uint8_t{1}));
}

const char* to_string(Domain d) {
  return d == Domain::Source ? "source" : "target";
}

SamplingStrategy parse_sampling_strategy(const std::string& name) {
  if (name == "uniform") return SamplingStrategy::Uniform;
  if (name == "gradient_corners") return SamplingStrategy::GradientCorners;
  throw ConfigError("unknown sampling strategy '" + name + "'");
}

const char* to_string(SamplingStrategy s) {
  return s == SamplingStrategy::Uniform ? "uniform" : "gradient_corners";
}

void SceneConfig::validate() const {
  if (height < 16 || width < 16) {
    throw ConfigError("scene: height and width must be >= 16, got " +
                      std::to_string(height) + "x" + std::to_string(width));
  }
  if (!(depth_min > 0.0) || !(depth_min < depth_max)) {
    throw ConfigError("scene: need 0 < depth_min < depth_max");
  }
  if (min_objects < 0 || max_objects < min_objects) {
    throw ConfigError("scene: invalid object count range");
  }
  if (!(density > 0.0) || density > 1.0) {
    throw ConfigError("scene: density must lie in (0, 1]");
  }
}

void ShiftConfig::validate() const {
  if (!(gamma > 0.0)) throw ConfigError("shift: gamma must be positive");
  if (noise_std < 0.0 || depth_noise_std < 0.0) {
    throw ConfigError("shift: noise levels must be non-negative");
  }
  if (!(density > 0.0) || density > 1.0) {
    throw ConfigError("shift: density must lie in (0, 1]");
  }
}

std::array<double, 9> hue_rotation_matrix(double radians) {
  const double c = std::cos(radians);
  const double s = std::sin(radians) / std::sqrt(3.0);
  const double t = (1.0 - c) / 3.0;
  return {c + t, t - s, t + s,  //
          t + s, c + t, t - s,  //
          t - s, t + s, c + t};
}

std::vector<std::string> shift_preset_names() {
  return {"none", "strong", "color", "dark", "noisy", "washed"};
}

ShiftConfig shift_preset(const std::string& name, std::uint64_t seed) {
  std::mt19937_64 rng(seed ^ 0x5eedc0105ULL);
  std::uniform_real_distribution<double> angle(M_PI / 3.0, 2.0 * M_PI / 3.0);
  const double sign = (rng() & 1U) ? 1.0 : -1.0;
  ShiftConfig s;
  if (name == "none") return s;
  if (name == "strong") {
    // Low contrast, lifted blacks and a hue rotation: intensity stops
    // tracking depth.
    s.gamma = 0.6;
    s.color_matrix = hue_rotation_matrix(sign * angle(rng));
    for (double& v : s.color_matrix) v *= 0.5;
    s.brightness_offset = 0.3;
    s.noise_std = 0.05;
    return s;
  }
  if (name == "color") {
    s.color_matrix = hue_rotation_matrix(sign * (angle(rng) + M_PI / 6.0));
    s.noise_std = 0.01;
    return s;
  }
  if (name == "dark") {
    s.gamma = 2.2;
    s.color_matrix = {0.8, 0, 0, 0, 0.8, 0, 0, 0, 0.8};
    s.brightness_offset = -0.02;
    s.noise_std = 0.02;
    return s;
  }
  if (name == "noisy") {
    s.gamma = 1.3;
    s.noise_std = 0.12;
    return s;
  }
  if (name == "washed") {
    s.gamma = 0.8;
    for (double& v : s.color_matrix) v *= 0.7;
    s.brightness_offset = 0.2;
    s.noise_std = 0.02;
    return s;
  }
  throw ConfigError("unknown shift preset '" + name + "'");
}

void quantize_image_8bit(Image& image) {
  for (double& v : image.data) {
    v = std::round(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0;
  }
}

namespace {

struct Primitive {
  bool ellipse;
  double cx, cy, rx, ry;
  double depth;
  std::array<double, 3> albedo;
};

double shade(double depth, const SceneConfig& c) {
  const double nearness = 1.0 - (depth - c.depth_min) / (c.depth_max - c.depth_min);
  return 0.35 + 0.65 * std::clamp(nearness, 0.0, 1.0);
}

std::string make_id(std::uint64_t index) {
  std::ostringstream os;
  os << std::setw(6) << std::setfill('0') << index;
  return os.str();
}

}  // namespace

Sample generate_scene(std::uint64_t seed, const SceneConfig& config) {
  config.validate();
  const int h = config.height;
  const int w = config.width;
  const double dmin = config.depth_min;
  const double dmax = config.depth_max;
  const double range = dmax - dmin;
  std::mt19937_64 rng(seed * 0x9E3779B97F4A7C15ULL + 0x1234567ULL);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * u01(rng); };

  // Background: a far wall above the horizon and a ground ramp below it.
  const double horizon = uniform(0.25, 0.45) * h;
  const double wall = dmin + range * uniform(0.8, 1.0);
  const double near = dmin + range * uniform(0.0, 0.12);
  const double tilt = uniform(-0.1, 0.1) * range;
  std::array<double, 3> wall_albedo{uniform(0.3, 0.8), uniform(0.3, 0.8),
                                    uniform(0.3, 0.8)};
  std::array<double, 3> ground_albedo{uniform(0.2, 0.7), uniform(0.2, 0.7),
                                      uniform(0.2, 0.7)};

  std::vector<double> depth(static_cast<std::size_t>(h) * w);
  std::vector<std::array<double, 3>> albedo(depth.size());
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * w + x;
      if (y < horizon) {
        depth[i] = wall;
        albedo[i] = wall_albedo;
      } else {
        const double t = (y - horizon) / std::max(1.0, h - 1 - horizon);
        const double lateral = tilt * (x / static_cast<double>(w - 1) - 0.5);
        depth[i] = wall + (near - wall) * t + lateral * t;
        albedo[i] = ground_albedo;
      }
    }
  }

  const int objects = config.min_objects +
                      static_cast<int>(rng() % static_cast<std::uint64_t>(
                                                   config.max_objects -
                                                   config.min_objects + 1));
  std::vector<Primitive> prims;
  for (int k = 0; k < objects; ++k) {
    Primitive p;
    p.ellipse = u01(rng) < 0.5;
    p.rx = uniform(0.08, 0.25) * w;
    p.ry = uniform(0.08, 0.25) * h;
    p.cx = uniform(0.0, 1.0) * w;
    p.cy = uniform(0.3, 1.0) * h;
    p.depth = dmin + range * uniform(0.05, 0.75);
    p.albedo = {uniform(0.1, 0.95), uniform(0.1, 0.95), uniform(0.1, 0.95)};
    prims.push_back(p);
  }
  for (const Primitive& p : prims) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const double dx = (x + 0.5 - p.cx) / p.rx;
        const double dy = (y + 0.5 - p.cy) / p.ry;
        const bool inside = p.ellipse ? dx * dx + dy * dy <= 1.0
                                      : std::abs(dx) <= 1.0 && std::abs(dy) <= 1.0;
        const std::size_t i = static_cast<std::size_t>(y) * w + x;
        if (inside && p.depth < depth[i]) {
          depth[i] = p.depth;
          albedo[i] = p.albedo;
        }
      }
    }
  }

  Sample s;
  s.seed = seed;
  s.id = make_id(seed);
  s.domain = Domain::Source;
  s.gt = DepthMap(h, w);
  s.image = Image(h, w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * w + x;
      const double d = std::clamp(depth[i], dmin, dmax);
      s.gt.set(i, d);
      const double light = shade(d, config);
      for (int c = 0; c < 3; ++c) {
        s.image.at(c, y, x) = std::clamp(albedo[i][c] * light, 0.0, 1.0);
      }
    }
  }
  quantize_image_8bit(s.image);
  s.sparse = sample_sparse_depth(s.gt, config.density, config.strategy,
                                 seed ^ 0xA5A5A5A5ULL);
  return s;
}

Sample apply_domain_shift(const Sample& sample, const ShiftConfig& shift,
                          std::uint64_t seed) {
  shift.validate();
  Sample out = sample;
  out.domain = Domain::Target;
  std::mt19937_64 rng(seed * 0xD1B54A32D192ED03ULL + 0x77ULL);
  std::normal_distribution<double> normal(0.0, 1.0);

  const Image& in = sample.image;
  const auto& m = shift.color_matrix;
  for (int y = 0; y < in.height; ++y) {
    for (int x = 0; x < in.width; ++x) {
      const double r = in.at(0, y, x);
      const double g = in.at(1, y, x);
      const double b = in.at(2, y, x);
      for (int c = 0; c < 3; ++c) {
        const double mixed =
            std::max(0.0, m[3 * c] * r + m[3 * c + 1] * g + m[3 * c + 2] * b);
        double v = std::pow(mixed, shift.gamma) + shift.brightness_offset;
        if (shift.noise_std > 0.0) v += shift.noise_std * normal(rng);
        out.image.at(c, y, x) = std::clamp(v, 0.0, 1.0);
      }
    }
  }

  // Sparse depth: optional thinning, then noise on surviving points.
  DepthMap& sp = out.sparse;
  if (shift.density < 1.0) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < sp.size(); ++i) {
      if (sp.valid[i]) idx.push_back(i);
    }
    std::shuffle(idx.begin(), idx.end(), rng);
    const auto keep = static_cast<std::size_t>(
        std::llround(shift.density * static_cast<double>(idx.size())));
    for (std::size_t k = keep; k < idx.size(); ++k) sp.set(idx[k], 0.0);
  }
  if (shift.depth_noise_std > 0.0) {
    for (std::size_t i = 0; i < sp.size(); ++i) {
      if (!sp.valid[i]) continue;
      sp.set(i, std::max(1e-3, sp.data[i] + shift.depth_noise_std * normal(rng)));
    }
  }
  return out;
}

DepthMap sample_sparse_depth(const DepthMap& gt, double density,
                             SamplingStrategy strategy, std::uint64_t seed) {
  if (!(density > 0.0) || density > 1.0) {
    throw ConfigError("sample_sparse_depth: density must lie in (0, 1], got " +
                      std::to_string(density));
  }
  std::vector<std::size_t> valid;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (gt.valid[i]) valid.push_back(i);
  }
  if (valid.empty()) {
    throw EmptySupportError("sample_sparse_depth: ground truth has no valid pixels");
  }
  const std::size_t want = std::min(
      valid.size(), static_cast<std::size_t>(std::max<long long>(
                        1, std::llround(density * static_cast<double>(valid.size())))));

  std::mt19937_64 rng(seed * 0xBF58476D1CE4E5B9ULL + 0x3ULL);
  std::vector<std::size_t> chosen;
  if (strategy == SamplingStrategy::Uniform) {
    std::shuffle(valid.begin(), valid.end(), rng);
    chosen.assign(valid.begin(), valid.begin() + want);
  } else {
    // Rank by central-difference gradient magnitude of gt; draw from the top
    // quartile first, spilling into lower ranks only if it is exhausted.
    const int h = gt.height;
    const int w = gt.width;
    auto value = [&](int y, int x) {
      y = std::clamp(y, 0, h - 1);
      x = std::clamp(x, 0, w - 1);
      return gt.data[static_cast<std::size_t>(y) * w + x];
    };
    std::vector<std::pair<double, std::size_t>> ranked;
    for (std::size_t i : valid) {
      const int y = static_cast<int>(i / w);
      const int x = static_cast<int>(i % w);
      const double gx = value(y, x + 1) - value(y, x - 1);
      const double gy = value(y + 1, x) - value(y - 1, x);
      ranked.emplace_back(std::hypot(gx, gy), i);
    }
    std::stable_sort(ranked.begin(), ranked.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    const std::size_t quartile = (ranked.size() + 3) / 4;
    std::vector<std::size_t> top, rest;
    for (std::size_t k = 0; k < ranked.size(); ++k) {
      (k < quartile ? top : rest).push_back(ranked[k].second);
    }
    std::shuffle(top.begin(), top.end(), rng);
    for (std::size_t k = 0; k < top.size() && chosen.size() < want; ++k) {
      chosen.push_back(top[k]);
    }
    for (std::size_t k = 0; k < rest.size() && chosen.size() < want; ++k) {
      chosen.push_back(rest[k]);
    }
  }
  DepthMap out(gt.height, gt.width);
  for (std::size_t i : chosen) out.set(i, gt.data[i]);
  return out;
}

std::pair<Image, DepthMap> make_null_inputs(int height, int width) {
  if (height <= 0 || width <= 0) {
    throw ConfigError("make_null_inputs: dimensions must be positive");
  }
  return {Image(height, width), DepthMap(height, width)};
}

Tensor image_tensor(const std::vector<const Image*>& images) {
  if (images.empty()) throw ContractError("image_tensor: empty batch");
  const int h = images.front()->height;
  const int w = images.front()->width;
  Tensor t(Shape{static_cast<int>(images.size()), 3, h, w});
  for (std::size_t n = 0; n < images.size(); ++n) {
    if (images[n]->height != h || images[n]->width != w) {
      throw ContractError("image_tensor: mixed image sizes in batch");
    }
    std::copy(images[n]->data.begin(), images[n]->data.end(),
              t.data() + t.index(static_cast<int>(n), 0, 0, 0));
  }
  return t;
}

Tensor sparse_tensor(const std::vector<const DepthMap*>& maps) {
  if (maps.empty()) throw ContractError("sparse_tensor: empty batch");
  const int h = maps.front()->height;
  const int w = maps.front()->width;
  Tensor t(Shape{static_cast<int>(maps.size()), 2, h, w});
  for (std::size_t n = 0; n < maps.size(); ++n) {
    const DepthMap& m = *maps[n];
    if (m.height != h || m.width != w) {
      throw ContractError("sparse_tensor: mixed depth sizes in batch");
    }
    auto depth = t.plane(static_cast<int>(n), 0);
    auto mask = t.plane(static_cast<int>(n), 1);
    for (std::size_t i = 0; i < m.size(); ++i) {
      depth[i] = m.data[i];
      mask[i] = m.valid[i] ? 1.0 : 0.0;
    }
  }
  return t;
}

// ---------------------------------------------------------------------------

RetainToken::RetainToken(std::shared_ptr<int> live, int count)
    : live_(std::move(live)), count_(count) {
  *live_ += count_;
}

RetainToken::RetainToken(RetainToken&& other) noexcept
    : live_(std::move(other.live_)), count_(other.count_) {
  other.count_ = 0;
}

RetainToken& RetainToken::operator=(RetainToken&& other) noexcept {
  if (this != &other) {
    if (live_) *live_ -= count_;
    live_ = std::move(other.live_);
    count_ = other.count_;
    other.count_ = 0;
  }
  return *this;
}

RetainToken::~RetainToken() {
  if (live_) *live_ -= count_;
}

SampleStream::SampleStream(std::size_t count, Loader loader, int batch_size)
    : count_(count), loader_(std::move(loader)), batch_size_(batch_size) {
  if (batch_size < 1) throw ConfigError("stream: batch_size must be >= 1");
}

SampleStream SampleStream::from_samples(std::vector<Sample> samples,
                                        int batch_size) {
  auto store = std::make_shared<std::vector<Sample>>(std::move(samples));
  const std::size_t n = store->size();
  // Samples are moved out on first access so nothing can be served twice.
  return SampleStream(
      n, [store](std::size_t i) { return std::move((*store)[i]); }, batch_size);
}

int SampleStream::num_batches() const {
  return static_cast<int>((count_ + batch_size_ - 1) / batch_size_);
}

Batch SampleStream::load(int batch_index) {
  const std::size_t begin = static_cast<std::size_t>(batch_index) * batch_size_;
  const std::size_t end = std::min(count_, begin + batch_size_);
  Batch b;
  b.index = batch_index;
  for (std::size_t i = begin; i < end; ++i) {
    b.samples.push_back(loader_(i));
    access_log_.push_back(b.samples.back().id);
  }
  b.token = RetainToken(live_, b.size());
  *peak_ = std::max(*peak_, *live_);
  ++cursor_;
  return b;
}

std::optional<Batch> SampleStream::next() {
  if (cursor_ >= num_batches()) {
    if (end_signalled_) {
      throw ProtocolError("stream: already consumed; a stream is single-pass");
    }
    end_signalled_ = true;
    return std::nullopt;
  }
  return load(cursor_);
}

Batch SampleStream::request(int batch_index) {
  if (batch_index < cursor_) {
    throw ProtocolError("stream: batch " + std::to_string(batch_index) +
                        " was already consumed");
  }
  if (batch_index != cursor_ || batch_index >= num_batches()) {
    throw ProtocolError("stream: batch " + std::to_string(batch_index) +
                        " requested out of order (next is " +
                        std::to_string(cursor_) + ")");
  }
  return load(batch_index);
}

// ---------------------------------------------------------------------------

std::uint16_t encode_depth(double meters) {
  if (!(meters >= 0.0) || !std::isfinite(meters)) {
    throw FormatError("cannot encode negative or non-finite depth " +
                      std::to_string(meters));
  }
  const double raw = std::round(meters * 256.0);
  if (raw > 65535.0) {
    throw FormatError("depth " + std::to_string(meters) +
                      " m exceeds the 16-bit range");
  }
  return static_cast<std::uint16_t>(raw);
}

double decode_depth(std::uint16_t raw) { return raw / 256.0; }

namespace {

void write_depth(const fs::path& path, const DepthMap& d) {
  png::Raster16 r;
  r.width = d.width;
  r.height = d.height;
  r.pixels.resize(d.size());
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (d.data[i] < 0.0) {
      throw FormatError(path.string() + ": negative depth value");
    }
    r.pixels[i] = d.valid[i] ? encode_depth(d.data[i]) : 0;
  }
  png::write16(path, r);
}

DepthMap read_depth(const fs::path& path) {
  png::Raster16 r = png::read_gray16(path);
  DepthMap d(r.height, r.width);
  for (std::size_t i = 0; i < d.size(); ++i) d.set(i, decode_depth(r.pixels[i]));
  return d;
}

}  // namespace

void write_sample_dir(const std::vector<Sample>& samples, const fs::path& root,
                      const std::string& generator_json, std::uint64_t seed) {
  for (const char* sub : {"image", "sparse", "gt"}) {
    fs::create_directories(root / sub);
  }
  json manifest;
  manifest["ids"] = json::array();
  for (const Sample& s : samples) {
    const Image& im = s.image;
    png::Raster8 r;
    r.width = im.width;
    r.height = im.height;
    r.channels = 3;
    r.pixels.resize(static_cast<std::size_t>(3) * im.width * im.height);
    for (int y = 0; y < im.height; ++y) {
      for (int x = 0; x < im.width; ++x) {
        for (int c = 0; c < 3; ++c) {
          const double v = std::clamp(im.at(c, y, x), 0.0, 1.0);
          r.pixels[(static_cast<std::size_t>(y) * im.width + x) * 3 + c] =
              static_cast<std::uint8_t>(std::lround(v * 255.0));
        }
      }
    }
    png::write8(root / "image" / (s.id + ".png"), r);
    write_depth(root / "sparse" / (s.id + ".png"), s.sparse);
    write_depth(root / "gt" / (s.id + ".png"), s.gt);
    manifest["ids"].push_back(s.id);
  }
  manifest["generator"] = json::parse(generator_json);
  manifest["seed"] = seed;
  manifest["domain"] =
      samples.empty() ? "source" : to_string(samples.front().domain);
  std::ofstream out(root / "manifest.json");
  out << manifest.dump(2) << "\n";
}

DatasetManifest read_manifest(const fs::path& root) {
  const fs::path path = root / "manifest.json";
  std::ifstream in(path);
  if (!in) throw FormatError("missing manifest: " + path.string());
  DatasetManifest m;
  try {
    json j = json::parse(in);
    for (const auto& id : j.at("ids")) m.ids.push_back(id.get<std::string>());
    m.generator = j.value("generator", json::object()).dump();
    m.seed = j.value("seed", std::uint64_t{0});
    m.domain = j.value("domain", std::string("source")) == "target"
                   ? Domain::Target
                   : Domain::Source;
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": malformed manifest (" + e.what() + ")");
  }
  return m;
}

Sample read_sample(const fs::path& root, const std::string& id, Domain domain) {
  Sample s;
  s.id = id;
  s.domain = domain;
  const fs::path ip = root / "image" / (id + ".png");
  png::Raster8 r = png::read_rgb8(ip);
  s.image = Image(r.height, r.width);
  for (int y = 0; y < r.height; ++y) {
    for (int x = 0; x < r.width; ++x) {
      for (int c = 0; c < 3; ++c) {
        s.image.at(c, y, x) =
            r.pixels[(static_cast<std::size_t>(y) * r.width + x) * 3 + c] / 255.0;
      }
    }
  }
  s.sparse = read_depth(root / "sparse" / (id + ".png"));
  s.gt = read_depth(root / "gt" / (id + ".png"));
  if (s.sparse.height != r.height || s.sparse.width != r.width ||
      s.gt.height != r.height || s.gt.width != r.width) {
    throw FormatError((root / "gt" / (id + ".png")).string() +
                      ": raster size differs from image");
  }
  return s;
}

std::vector<Sample> read_sample_dir(const fs::path& root) {
  DatasetManifest m = read_manifest(root);
  std::vector<Sample> out;
  out.reserve(m.ids.size());
  for (const std::string& id : m.ids) out.push_back(read_sample(root, id, m.domain));
  return out;
}

std::vector<Sample> make_split(const SplitConfig& config) {
  config.scene.validate();
  std::vector<Sample> out;
  out.reserve(config.count);
  const ShiftConfig shift = shift_preset(config.shift, config.shift_seed);
  const bool shifted = config.shift != "none";
  for (int i = 0; i < config.count; ++i) {
    const std::uint64_t scene_seed =
        config.seed * 1000003ULL + static_cast<std::uint64_t>(i);
    Sample s = generate_scene(scene_seed, config.scene);
    if (shifted) {
      s = apply_domain_shift(s, shift, scene_seed ^ config.shift_seed);
      quantize_image_8bit(s.image);
    }
    s.id = make_id(static_cast<std::uint64_t>(i));
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace proxytta
