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

#ifndef PROXYTTA_DATASETS_HPP_
#define PROXYTTA_DATASETS_HPP_

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "proxytta/tensor.hpp"

namespace proxytta {

/// RGB image stored planar (channel, row, column), values in [0, 1].
struct Image {
  int height = 0;
  int width = 0;
  std::vector<double> data;

  Image() = default;
  Image(int h, int w, double fill = 0.0)
      : height(h), width(w), data(static_cast<std::size_t>(3) * h * w, fill) {}

  double& at(int c, int y, int x) {
    return data[(static_cast<std::size_t>(c) * height + y) * width + x];
  }
  double at(int c, int y, int x) const {
    return data[(static_cast<std::size_t>(c) * height + y) * width + x];
  }
  /// Mean over the three channels at one pixel.
  double intensity(int y, int x) const {
    return (at(0, y, x) + at(1, y, x) + at(2, y, x)) / 3.0;
  }
  bool operator==(const Image&) const = default;
};

/// Depth in meters. Invalid pixels hold exactly 0 and a false mask entry.
struct DepthMap {
  int height = 0;
  int width = 0;
  std::vector<double> data;
  std::vector<std::uint8_t> valid;

  DepthMap() = default;
  DepthMap(int h, int w)
      : height(h),
        width(w),
        data(static_cast<std::size_t>(h) * w, 0.0),
        valid(static_cast<std::size_t>(h) * w, 0) {}

  std::size_t size() const { return data.size(); }
  std::size_t valid_count() const;
  void set(std::size_t i, double depth) {
    data[i] = depth;
    valid[i] = depth > 0.0 ? 1 : 0;
  }
  bool operator==(const DepthMap&) const = default;
};

enum class Domain { Source, Target };
const char* to_string(Domain d);

struct Sample {
  std::string id;
  Image image;
  DepthMap sparse;
  DepthMap gt;
  Domain domain = Domain::Source;
  std::uint64_t seed = 0;
};

enum class SamplingStrategy { Uniform, GradientCorners };
SamplingStrategy parse_sampling_strategy(const std::string& name);
const char* to_string(SamplingStrategy s);

struct SceneConfig {
  int height = 64;
  int width = 64;
  int min_objects = 3;
  int max_objects = 7;
  double depth_min = 1.0;
  double depth_max = 10.0;
  double density = 0.05;
  SamplingStrategy strategy = SamplingStrategy::Uniform;

  void validate() const;
};

struct ShiftConfig {
  double gamma = 1.0;
  std::array<double, 9> color_matrix{1, 0, 0, 0, 1, 0, 0, 0, 1};
  double brightness_offset = 0.0;
  double noise_std = 0.0;
  double depth_noise_std = 0.0;
  double density = 1.0;

  void validate() const;
};

/// Named covariate-shift presets: none, strong, color, dark, noisy, washed.
/// The color mixing matrix of presets that use one is drawn from `seed`, so a
/// (name, seed) pair defines one target domain.
ShiftConfig shift_preset(const std::string& name, std::uint64_t seed);
std::vector<std::string> shift_preset_names();

/// Rotation of RGB about the gray axis by `radians`.
std::array<double, 9> hue_rotation_matrix(double radians);

Sample generate_scene(std::uint64_t seed, const SceneConfig& config);

Sample apply_domain_shift(const Sample& sample, const ShiftConfig& shift,
                          std::uint64_t seed);

DepthMap sample_sparse_depth(const DepthMap& gt, double density,
                             SamplingStrategy strategy, std::uint64_t seed);

std::pair<Image, DepthMap> make_null_inputs(int height, int width);

/// Snaps every channel value to the nearest k/255.
void quantize_image_8bit(Image& image);

/// Network inputs for a batch of samples: image (n,3,h,w) and the sparse map
/// with its validity mask (n,2,h,w).
Tensor image_tensor(const std::vector<const Image*>& images);
Tensor sparse_tensor(const std::vector<const DepthMap*>& maps);

// ---------------------------------------------------------------------------
// Single-pass streaming.

/// Decrements the stream's live-sample counter when the batch is dropped.
class RetainToken {
 public:
  RetainToken() = default;
  RetainToken(std::shared_ptr<int> live, int count);
  RetainToken(RetainToken&& other) noexcept;
  RetainToken& operator=(RetainToken&& other) noexcept;
  RetainToken(const RetainToken&) = delete;
  RetainToken& operator=(const RetainToken&) = delete;
  ~RetainToken();

 private:
  std::shared_ptr<int> live_;
  int count_ = 0;
};

struct Batch {
  int index = 0;
  std::vector<Sample> samples;
  RetainToken token;

  int size() const { return static_cast<int>(samples.size()); }
};

/// Serves samples in order, each exactly once. A handle is single-consumer:
/// asking for a batch that was already handed out is a protocol violation,
/// as is calling next() after the end-of-stream marker was returned.
class SampleStream {
 public:
  using Loader = std::function<Sample(std::size_t)>;

  SampleStream(std::size_t count, Loader loader, int batch_size);
  static SampleStream from_samples(std::vector<Sample> samples, int batch_size);

  std::optional<Batch> next();
  /// Random-access form of next(); only the next unserved index is legal.
  Batch request(int batch_index);

  int batch_size() const { return batch_size_; }
  int num_batches() const;
  std::size_t num_samples() const { return count_; }
  const std::vector<std::string>& access_log() const { return access_log_; }
  int peak_retained() const { return *peak_; }
  int live_samples() const { return *live_; }

 private:
  Batch load(int batch_index);

  std::size_t count_;
  Loader loader_;
  int batch_size_;
  int cursor_ = 0;
  bool end_signalled_ = false;
  std::vector<std::string> access_log_;
  std::shared_ptr<int> live_ = std::make_shared<int>(0);
  std::shared_ptr<int> peak_ = std::make_shared<int>(0);
};

// ---------------------------------------------------------------------------
// On-disk dataset: <root>/{image,sparse,gt}/<id>.png plus manifest.json.

struct DatasetManifest {
  std::vector<std::string> ids;
  std::string generator;  // JSON text of the generator settings
  std::uint64_t seed = 0;
  Domain domain = Domain::Source;
};

void write_sample_dir(const std::vector<Sample>& samples,
                      const std::filesystem::path& root,
                      const std::string& generator_json = "{}",
                      std::uint64_t seed = 0);
std::vector<Sample> read_sample_dir(const std::filesystem::path& root);
DatasetManifest read_manifest(const std::filesystem::path& root);
Sample read_sample(const std::filesystem::path& root, const std::string& id,
                   Domain domain);

/// Depth encoding: round(depth * 256) as uint16, 0 = missing.
std::uint16_t encode_depth(double meters);
double decode_depth(std::uint16_t raw);

// ---------------------------------------------------------------------------
// Convenience splits used by the pipeline and tests.

struct SplitConfig {
  SceneConfig scene;
  int count = 200;
  std::uint64_t seed = 0;
  std::string shift = "none";
  std::uint64_t shift_seed = 0;
};

/// Generates `count` scenes (ids "000000".."), optionally shifted. Images are
/// snapped to 8-bit levels so in-memory and on-disk splits are identical.
std::vector<Sample> make_split(const SplitConfig& config);

}  // namespace proxytta

#endif  // PROXYTTA_DATASETS_HPP_
