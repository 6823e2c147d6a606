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

#include "proxytta/model.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "proxytta/errors.hpp"

namespace proxytta {

void ModelConfig::validate() const {
  if (height % 8 != 0 || width % 8 != 0 || height < 8 || width < 8) {
    throw ConfigError("model: height and width must be positive multiples of 8");
  }
  auto positive = [](const auto& arr) {
    return std::all_of(arr.begin(), arr.end(), [](int v) { return v >= 1; });
  };
  if (!positive(image_channels) || !positive(depth_channels) ||
      !positive(decoder_widths) || fusion_width < 1 || adaptation_channels < 1) {
    throw ConfigError("model: all widths must be >= 1");
  }
  if (adaptation_channels != image_channels[2]) {
    throw ConfigError(
        "model: adaptation_channels must equal the last image-encoder width "
        "(residual adaptation layer)");
  }
  if (adaptation_kernel != 1 && adaptation_kernel != 3) {
    throw ConfigError("model: adaptation_kernel must be 1 or 3");
  }
  if (!(max_depth > 0.0)) throw ConfigError("model: max_depth must be positive");
}

const char* to_string(ParamGroup g) {
  switch (g) {
    case ParamGroup::ImageEncoder: return "image_encoder";
    case ParamGroup::DepthEncoder: return "depth_encoder";
    case ParamGroup::Fusion: return "fusion";
    case ParamGroup::Decoder: return "decoder";
    case ParamGroup::AdaptationLayer: return "adaptation_layer";
    case ParamGroup::BnAffine: return "bn_affine";
    case ParamGroup::BnStats: return "bn_stats";
  }
  return "?";
}

ParamGroup parse_param_group(const std::string& name) {
  for (ParamGroup g :
       {ParamGroup::ImageEncoder, ParamGroup::DepthEncoder, ParamGroup::Fusion,
        ParamGroup::Decoder, ParamGroup::AdaptationLayer, ParamGroup::BnAffine,
        ParamGroup::BnStats}) {
    if (name == to_string(g)) return g;
  }
  throw ContractError("unknown parameter group '" + name + "'");
}

ParamGroup group_of(const std::string& key) {
  const auto slash = key.find('/');
  if (slash == std::string::npos) {
    throw ContractError("parameter key '" + key + "' lacks a group prefix");
  }
  return parse_param_group(key.substr(0, slash));
}

Parameter& ModelParams::get(const std::string& name) {
  for (Parameter& p : params) {
    if (p.name == name) return p;
  }
  throw ContractError("no parameter named '" + name + "'");
}

const Parameter& ModelParams::get(const std::string& name) const {
  return const_cast<ModelParams*>(this)->get(name);
}

bool ModelParams::contains(const std::string& name) const {
  return std::any_of(params.begin(), params.end(),
                     [&](const Parameter& p) { return p.name == name; });
}

std::vector<std::string> ModelParams::names() const {
  std::vector<std::string> out;
  for (const Parameter& p : params) out.push_back(p.name);
  return out;
}

std::size_t ModelParams::total_count() const {
  std::size_t n = 0;
  for (const Parameter& p : params) n += p.value.numel();
  return n;
}

std::map<ParamGroup, std::size_t> ModelParams::group_counts() const {
  std::map<ParamGroup, std::size_t> out;
  for (const Parameter& p : params) out[group_of(p.name)] += p.value.numel();
  return out;
}

void ModelParams::zero_grad() {
  for (Parameter& p : params) p.zero_grad();
}

void ModelParams::set_trainable(const std::set<std::string>& names) {
  for (Parameter& p : params) p.trainable = names.count(p.name) > 0;
}

void ModelParams::freeze_all() {
  for (Parameter& p : params) p.trainable = false;
}

bool ModelParams::values_equal(const ModelParams& other) const {
  if (params.size() != other.params.size()) return false;
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].name != other.params[i].name) return false;
    if (!(params[i].value == other.params[i].value)) return false;
  }
  return true;
}

bool ModelParams::group_equal(const ModelParams& other, ParamGroup group) const {
  for (const Parameter& p : params) {
    if (group_of(p.name) != group) continue;
    if (!other.contains(p.name)) return false;
    if (!(p.value == other.get(p.name).value)) return false;
  }
  return true;
}

namespace {

class Builder {
 public:
  Builder(ModelParams& params, std::uint64_t seed) : params_(params), rng_(seed) {}

  void conv(const std::string& group, const std::string& name, int in, int out,
            int k, bool bias) {
    const double fan_in = static_cast<double>(in) * k * k;
    const double bound = std::sqrt(6.0 / fan_in);  // He-uniform
    std::uniform_real_distribution<double> u(-bound, bound);
    Tensor w(Shape{out, in, k, k});
    for (double& v : w.vec()) v = u(rng_);
    add(group + "/" + name + ".weight", std::move(w));
    if (bias) add(group + "/" + name + ".bias", Tensor(Shape{1, out, 1, 1}));
  }

  void bn(const std::string& scope, int channels) {
    add("bn_affine/" + scope + ".gamma", Tensor(Shape{1, channels, 1, 1}, 1.0));
    add("bn_affine/" + scope + ".beta", Tensor(Shape{1, channels, 1, 1}));
    add("bn_stats/" + scope + ".running_mean", Tensor(Shape{1, channels, 1, 1}));
    add("bn_stats/" + scope + ".running_var",
        Tensor(Shape{1, channels, 1, 1}, 1.0));
  }

  void add(std::string name, Tensor value) {
    Parameter p;
    p.name = std::move(name);
    p.value = std::move(value);
    params_.params.push_back(std::move(p));
  }

 private:
  ModelParams& params_;
  std::mt19937_64 rng_;
};

// Graph-building helpers bound to one forward call.
class Net {
 public:
  Net(ModelParams& params, const ForwardOptions& opts)
      : params_(params), opts_(opts) {}

  Var param(const std::string& name) { return ag::parameter(params_.get(name)); }

  /// conv -> [BN] -> ELU
  Var block(const Var& x, const std::string& group, const std::string& name,
            int stride) {
    const bool bn = params_.config.use_batch_norm;
    const std::string wname = group + "/" + name + ".weight";
    const int k = params_.get(wname).value.h();
    Var y = ag::conv2d(x, param(wname), bn ? nullptr : param(group + "/" + name + ".bias"),
                       stride, k / 2);
    if (bn) {
      const std::string scope = group + "." + name;
      ag::BatchNormState st;
      st.running_mean = &params_.get("bn_stats/" + scope + ".running_mean");
      st.running_var = &params_.get("bn_stats/" + scope + ".running_var");
      st.use_batch_stats = opts_.mode == Mode::Train;
      st.update_running = opts_.mode == Mode::Train && opts_.update_bn_stats;
      y = ag::batch_norm(y, param("bn_affine/" + scope + ".gamma"),
                         param("bn_affine/" + scope + ".beta"), st);
    }
    return ag::elu(y);
  }

 private:
  ModelParams& params_;
  const ForwardOptions& opts_;
};

}  // namespace

ModelParams init_model(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  ModelParams mp;
  mp.config = config;
  Builder b(mp, seed * 0x2545F4914F6CDD1DULL + 11);
  const bool bn = config.use_batch_norm;

  auto encoder = [&](const std::string& group, int in,
                     const std::array<int, 3>& widths) {
    int prev = in;
    for (int s = 0; s < 3; ++s) {
      const std::string name = "conv" + std::to_string(s + 1);
      b.conv(group, name, prev, widths[s], 3, !bn);
      if (bn) b.bn(group + "." + name, widths[s]);
      prev = widths[s];
    }
  };
  encoder("image_encoder", 3, config.image_channels);
  encoder("depth_encoder", 2, config.depth_channels);

  const int img3 = config.image_channels[2];
  b.conv("fusion", "conv", img3 + config.depth_channels[2], config.fusion_width,
         1, !bn);
  if (bn) b.bn("fusion.conv", config.fusion_width);

  const auto& dw = config.decoder_widths;
  const int in3 = config.fusion_width + img3;
  const int in2 = dw[0] + config.image_channels[1] + config.depth_channels[1];
  const int in1 = dw[1] + config.image_channels[0] + config.depth_channels[0];
  b.conv("decoder", "conv3", in3, dw[0], 3, !bn);
  if (bn) b.bn("decoder.conv3", dw[0]);
  b.conv("decoder", "conv2", in2, dw[1], 3, !bn);
  if (bn) b.bn("decoder.conv2", dw[1]);
  b.conv("decoder", "conv1", in1, dw[2], 3, !bn);
  if (bn) b.bn("decoder.conv1", dw[2]);
  b.conv("decoder", "out", dw[2] + 2, 1, 3, true);
  // Small output weights keep the initial prediction near max_depth / 2.
  for (double& v : mp.get("decoder/out.weight").value.vec()) v *= 0.1;
  return mp;
}

ModelParams insert_adaptation_layer(const ModelParams& params) {
  if (params.has_adaptation_layer) {
    throw ContractError("adaptation layer already inserted");
  }
  ModelParams out = params;
  const int c = params.config.adaptation_channels;
  const int k = params.config.adaptation_kernel;
  Parameter w;
  w.name = "adaptation_layer/conv.weight";
  w.value = Tensor(Shape{c, c, k, k});
  Parameter bias;
  bias.name = "adaptation_layer/conv.bias";
  bias.value = Tensor(Shape{1, c, 1, 1});
  out.params.push_back(std::move(w));
  out.params.push_back(std::move(bias));
  out.has_adaptation_layer = true;
  return out;
}

Selector parse_selector(const std::string& name) {
  if (name == "adaptation_only") return Selector::AdaptationOnly;
  if (name == "adaptation_plus_bn") return Selector::AdaptationPlusBn;
  if (name == "bn_affine_only") return Selector::BnAffineOnly;
  if (name == "all") return Selector::All;
  throw ConfigError("unknown parameter selector '" + name + "'");
}

const char* to_string(Selector s) {
  switch (s) {
    case Selector::AdaptationOnly: return "adaptation_only";
    case Selector::AdaptationPlusBn: return "adaptation_plus_bn";
    case Selector::BnAffineOnly: return "bn_affine_only";
    case Selector::All: return "all";
  }
  return "?";
}

Partition partition_params(const ModelParams& params, Selector selector) {
  const bool needs_bn =
      selector == Selector::AdaptationPlusBn || selector == Selector::BnAffineOnly;
  if (needs_bn && !params.config.use_batch_norm) {
    throw ConfigError(std::string("selector ") + to_string(selector) +
                      " requires a model with batch normalization");
  }
  const bool needs_adapt = selector == Selector::AdaptationOnly ||
                           selector == Selector::AdaptationPlusBn;
  if (needs_adapt && !params.has_adaptation_layer) {
    throw ConfigError(std::string("selector ") + to_string(selector) +
                      " requires an inserted adaptation layer");
  }
  Partition part;
  for (const Parameter& p : params.params) {
    const ParamGroup g = group_of(p.name);
    bool train = false;
    switch (selector) {
      case Selector::AdaptationOnly:
        train = g == ParamGroup::AdaptationLayer;
        break;
      case Selector::AdaptationPlusBn:
        train = g == ParamGroup::AdaptationLayer || g == ParamGroup::BnAffine;
        break;
      case Selector::BnAffineOnly:
        train = g == ParamGroup::BnAffine;
        break;
      case Selector::All:
        train = g != ParamGroup::BnStats;
        break;
    }
    (train ? part.trainable : part.frozen).insert(p.name);
  }
  return part;
}

ForwardResult forward(ModelParams& params, const Tensor& image,
                      const Tensor& sparse, const ForwardOptions& options) {
  const ModelConfig& cfg = params.config;
  if (image.c() != 3 || sparse.c() != 2 || image.n() != sparse.n() ||
      image.h() != cfg.height || image.w() != cfg.width ||
      sparse.h() != cfg.height || sparse.w() != cfg.width) {
    throw ContractError("forward: inputs " + image.shape().str() + " / " +
                        sparse.shape().str() + " do not match model " +
                        std::to_string(cfg.height) + "x" +
                        std::to_string(cfg.width));
  }
  if (options.mode == Mode::Train && cfg.use_batch_norm && image.n() < 2) {
    throw ContractError("forward: train mode with batch norm needs batch >= 2");
  }
  Net net(params, options);
  const Var img = ag::constant(image);
  const Var dep = ag::constant(sparse);

  const Var i1 = net.block(img, "image_encoder", "conv1", 2);
  const Var i2 = net.block(i1, "image_encoder", "conv2", 2);
  Var i3 = net.block(i2, "image_encoder", "conv3", 2);
  const Var d1 = net.block(dep, "depth_encoder", "conv1", 2);
  const Var d2 = net.block(d1, "depth_encoder", "conv2", 2);
  const Var d3 = net.block(d2, "depth_encoder", "conv3", 2);

  if (params.has_adaptation_layer) {
    const int k = cfg.adaptation_kernel;
    const Var r = ag::conv2d(i3, net.param("adaptation_layer/conv.weight"),
                             net.param("adaptation_layer/conv.bias"), 1, k / 2);
    i3 = ag::add(i3, r);
  }

  const std::array<Var, 2> fuse_in{i3, d3};
  const Var fused = net.block(ag::concat_channels(fuse_in), "fusion", "conv", 1);

  const std::array<Var, 2> dec3_in{fused, i3};
  const Var u3 = net.block(ag::concat_channels(dec3_in), "decoder", "conv3", 1);
  const std::array<Var, 3> dec2_in{ag::upsample_nearest2x(u3), i2, d2};
  const Var u2 = net.block(ag::concat_channels(dec2_in), "decoder", "conv2", 1);
  const std::array<Var, 3> dec1_in{ag::upsample_nearest2x(u2), i1, d1};
  const Var u1 = net.block(ag::concat_channels(dec1_in), "decoder", "conv1", 1);
  const std::array<Var, 2> out_in{ag::upsample_nearest2x(u1), dep};
  const Var logits =
      ag::conv2d(ag::concat_channels(out_in), net.param("decoder/out.weight"),
                 net.param("decoder/out.bias"), 1, 1);

  ForwardResult res;
  res.depth = ag::scaled_sigmoid(logits, cfg.max_depth);
  res.taps.image_feat = i3;
  res.taps.depth_feat = d3;
  res.taps.fused_feat = fused;
  res.taps.decoder_skips = {i3, i2, d2, i1, d1};
  return res;
}

std::pair<DepthMap, FeatureTaps> forward(ModelParams& params, const Image& image,
                                         const DepthMap& sparse, Mode mode) {
  if (image.height != sparse.height || image.width != sparse.width) {
    throw ContractError("forward: image and sparse depth sizes differ");
  }
  ForwardOptions opts;
  opts.mode = mode;
  ForwardResult r = forward(params, image_tensor({&image}), sparse_tensor({&sparse}),
                            opts);
  return {to_depth_maps(r.depth->value).front(), r.taps};
}

std::vector<DepthMap> to_depth_maps(const Tensor& prediction) {
  std::vector<DepthMap> out;
  for (int n = 0; n < prediction.n(); ++n) {
    DepthMap d(prediction.h(), prediction.w());
    auto plane = prediction.plane(n, 0);
    for (std::size_t i = 0; i < d.size(); ++i) d.set(i, plane[i]);
    out.push_back(std::move(d));
  }
  return out;
}

}  // namespace proxytta
