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

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include <gtest/gtest.h>

#include "proxytta/datasets.hpp"
#include "proxytta/errors.hpp"
#include "test_util.hpp"

namespace proxytta {
namespace {

TEST(GenerateScene, GroundTruthDenseAndInRange) {
  const SceneConfig cfg;  // 64x64, depth in [1, 10]
  const Sample s = generate_scene(0, cfg);
  ASSERT_EQ(s.gt.height, 64);
  ASSERT_EQ(s.gt.width, 64);
  EXPECT_EQ(s.gt.valid_count(), s.gt.size());
  for (double d : s.gt.data) {
    EXPECT_GE(d, 1.0);
    EXPECT_LE(d, 10.0);
  }
  for (double v : s.image.data) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
}

TEST(GenerateScene, Deterministic) {
  const SceneConfig cfg;
  const Sample a = generate_scene(5, cfg);
  const Sample b = generate_scene(5, cfg);
  EXPECT_EQ(a.image, b.image);
  EXPECT_EQ(a.gt, b.gt);
  EXPECT_EQ(a.sparse, b.sparse);
}

TEST(GenerateScene, SeedsGiveDifferentScenes) {
  const SceneConfig cfg;
  const Sample a = generate_scene(0, cfg);
  const Sample b = generate_scene(1, cfg);
  std::size_t differing = 0;
  for (std::size_t i = 0; i < a.gt.size(); ++i) differing += a.gt.data[i] != b.gt.data[i];
  EXPECT_GE(static_cast<double>(differing), 0.01 * a.gt.size());
}

TEST(GenerateScene, InvalidConfigRejected) {
  SceneConfig small;
  small.height = 8;
  EXPECT_THROW(generate_scene(0, small), ConfigError);
  SceneConfig inverted;
  inverted.depth_min = 5.0;
  inverted.depth_max = 5.0;
  EXPECT_THROW(generate_scene(0, inverted), ConfigError);
}

Sample constant_sample(double v) {
  Sample s = generate_scene(3, SceneConfig{});
  for (double& x : s.image.data) x = v;
  return s;
}

TEST(DomainShift, IdentityIsExact) {
  const Sample s = generate_scene(4, SceneConfig{});
  const Sample out = apply_domain_shift(s, ShiftConfig{}, 9);
  EXPECT_EQ(out.image, s.image);
  EXPECT_EQ(out.sparse, s.sparse);
  EXPECT_EQ(out.gt, s.gt);
  EXPECT_EQ(out.domain, Domain::Target);
}

TEST(DomainShift, GammaOnConstantImage) {
  ShiftConfig g;
  g.gamma = 2.0;
  const Sample out = apply_domain_shift(constant_sample(0.5), g, 0);
  for (double v : out.image.data) EXPECT_NEAR(v, 0.25, 1e-12);
}

TEST(DomainShift, StrongPresetMovesImagesEnough) {
  const SceneConfig cfg;
  double total = 0.0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Sample s = generate_scene(seed, cfg);
    const Sample t = apply_domain_shift(s, shift_preset("strong", seed), seed);
    double diff = 0.0;
    for (std::size_t i = 0; i < s.image.data.size(); ++i) {
      diff += std::abs(t.image.data[i] - s.image.data[i]);
    }
    total += diff / s.image.data.size();
  }
  EXPECT_GE(total / 10.0, 0.05);
}

TEST(DomainShift, PresetsAreKnownAndValid) {
  for (const auto& name : shift_preset_names()) {
    EXPECT_NO_THROW(shift_preset(name, 1).validate()) << name;
  }
  EXPECT_THROW(shift_preset("sepia", 0), ConfigError);
}

TEST(SparseSampling, FullDensityReproducesGroundTruth) {
  const Sample s = generate_scene(2, SceneConfig{});
  const DepthMap z = sample_sparse_depth(s.gt, 1.0, SamplingStrategy::Uniform, 0);
  EXPECT_EQ(z, s.gt);
}

TEST(SparseSampling, PointCountArithmetic) {
  const Sample s = generate_scene(2, SceneConfig{});
  for (auto strategy : {SamplingStrategy::Uniform, SamplingStrategy::GradientCorners}) {
    const DepthMap z = sample_sparse_depth(s.gt, 0.01, strategy, 4);
    EXPECT_EQ(z.valid_count(), 41u);  // round(0.01 * 4096)
    for (std::size_t i = 0; i < z.size(); ++i) {
      if (z.valid[i]) EXPECT_EQ(z.data[i], s.gt.data[i]);
    }
  }
  EXPECT_EQ(sample_sparse_depth(s.gt, 1e-6, SamplingStrategy::Uniform, 0).valid_count(), 1u);
}

TEST(SparseSampling, NonPositiveDensityRejected) {
  const Sample s = generate_scene(2, SceneConfig{});
  EXPECT_THROW(sample_sparse_depth(s.gt, 0.0, SamplingStrategy::Uniform, 0), ConfigError);
  EXPECT_THROW(sample_sparse_depth(s.gt, -0.1, SamplingStrategy::Uniform, 0), ConfigError);
}

TEST(NullInputs, ZeroImageAndEmptyDepth) {
  const auto [image, depth] = make_null_inputs(4, 4);
  EXPECT_EQ(image.height, 4);
  EXPECT_EQ(image.data.size(), 48u);
  EXPECT_EQ(depth.valid_count(), 0u);
  double sum = 0.0;
  for (double v : image.data) sum += v;
  for (double v : depth.data) sum += v;
  EXPECT_EQ(sum, 0.0);
}

std::vector<Sample> numbered(int n) { return testing::tiny_split(n, 17); }

TEST(SampleStream, BatchSizes) {
  SampleStream stream = SampleStream::from_samples(numbered(10), 4);
  std::vector<int> sizes;
  int total = 0;
  while (auto b = stream.next()) {
    sizes.push_back(b->size());
    total += b->size();
  }
  EXPECT_EQ(sizes, (std::vector<int>{4, 4, 2}));
  EXPECT_EQ(total, 10);
  EXPECT_EQ(stream.num_batches(), 3);
}

TEST(SampleStream, SecondPassIsProtocolViolation) {
  SampleStream stream = SampleStream::from_samples(numbered(5), 2);
  while (stream.next()) {
  }
  EXPECT_THROW(stream.next(), ProtocolError);
}

TEST(SampleStream, ReRequestIsProtocolViolation) {
  SampleStream stream = SampleStream::from_samples(numbered(6), 2);
  Batch b0 = stream.request(0);
  EXPECT_THROW(stream.request(0), ProtocolError);
  EXPECT_THROW(stream.request(2), ProtocolError);  // skipping ahead
  EXPECT_NO_THROW(stream.request(1));
}

TEST(SampleStream, EachSampleOnceAndBoundedRetention) {
  const auto samples = numbered(11);
  SampleStream stream = SampleStream::from_samples(samples, 3);
  std::multiset<std::string> seen;
  while (auto b = stream.next()) {
    EXPECT_LE(stream.live_samples(), 3);
    for (const Sample& s : b->samples) seen.insert(s.id);
  }
  EXPECT_EQ(seen.size(), samples.size());
  for (const Sample& s : samples) EXPECT_EQ(seen.count(s.id), 1u);
  EXPECT_LE(stream.peak_retained(), 3);
  EXPECT_EQ(stream.live_samples(), 0);
  EXPECT_EQ(stream.access_log().size(), samples.size());
}

TEST(DepthCodec, ScaleAndMissing) {
  EXPECT_EQ(encode_depth(12.5), 3200);
  EXPECT_EQ(decode_depth(3200), 12.5);
  EXPECT_EQ(decode_depth(0), 0.0);
  EXPECT_EQ(encode_depth(0.0), 0);
}

TEST(SampleDir, RoundTrip) {
  const auto dir = testing::temp_dir("sampledir");
  const auto samples = testing::tiny_split(5, 3, "strong");
  write_sample_dir(samples, dir);
  const auto back = read_sample_dir(dir);
  ASSERT_EQ(back.size(), samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    EXPECT_EQ(back[i].id, samples[i].id);
    EXPECT_EQ(back[i].image, samples[i].image);
    for (std::size_t k = 0; k < samples[i].gt.size(); ++k) {
      EXPECT_LE(std::abs(back[i].gt.data[k] - samples[i].gt.data[k]), 1.0 / 256.0);
      EXPECT_EQ(back[i].sparse.valid[k], samples[i].sparse.valid[k]);
    }
  }
  std::filesystem::remove_all(dir);
}

TEST(SampleDir, MissingAndMalformedFilesNamed) {
  const auto dir = testing::temp_dir("sampledir_bad");
  write_sample_dir(testing::tiny_split(2, 3), dir);
  const auto victim = dir / "gt" / "000001.png";
  std::filesystem::remove(victim);
  try {
    read_sample_dir(dir);
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("000001"), std::string::npos) << e.what();
  }
  std::ofstream(victim) << "not a png";
  EXPECT_THROW(read_sample_dir(dir), FormatError);
  std::filesystem::remove_all(dir);
}

TEST(MakeSplit, ImagesAreEightBitAndShiftApplies) {
  const auto src = testing::tiny_split(3, 1);
  const auto tgt = testing::tiny_split(3, 1, "strong");
  for (const Sample& s : src) {
    for (double v : s.image.data) {
      EXPECT_NEAR(v * 255.0, std::round(v * 255.0), 1e-9);
    }
    EXPECT_EQ(s.domain, Domain::Source);
  }
  EXPECT_EQ(tgt[0].domain, Domain::Target);
  EXPECT_EQ(tgt[0].gt, src[0].gt);
  EXPECT_NE(tgt[0].image, src[0].image);
}

}  // namespace
}  // namespace proxytta
