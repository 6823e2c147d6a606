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

#include "proxytta/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>

#include "json_io.hpp"
#include "proxytta/errors.hpp"

namespace proxytta {

namespace {

using nlohmann::json;

constexpr char kMagic[8] = {'P', 'X', 'T', 'T', 'A', 'C', 'K', '\0'};

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) |
         (static_cast<std::uint32_t>(p[3]) << 24);
}

json shape_json(const Shape& s) { return json::array({s.n, s.c, s.h, s.w}); }

struct Writer {
  json entries = json::array();
  std::string blob;

  void add(const std::string& name, const Tensor& t) {
    entries.push_back({{"name", name},
                       {"shape", shape_json(t.shape())},
                       {"offset", blob.size()}});
    for (double v : t.vec()) {
      put_u32(blob, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
    }
  }
};

struct Entry {
  Shape shape;
  std::size_t offset = 0;
};

Tensor read_tensor(const std::string& blob, const Entry& e,
                   const std::string& name, const std::string& file) {
  const std::size_t bytes = e.shape.numel() * 4;
  if (e.offset + bytes > blob.size()) {
    throw FormatError(file + ": tensor '" + name + "' exceeds the data blob");
  }
  Tensor t(e.shape);
  const auto* p = reinterpret_cast<const unsigned char*>(blob.data() + e.offset);
  for (std::size_t i = 0; i < t.numel(); ++i) {
    t[i] = static_cast<double>(std::bit_cast<float>(get_u32(p + 4 * i)));
  }
  return t;
}

}  // namespace

void quantize_to_float32(std::vector<Parameter>& params) {
  for (Parameter& p : params) {
    for (double& v : p.value.vec()) v = static_cast<double>(static_cast<float>(v));
  }
}

OptimizerState capture(const Adam& adam) {
  OptimizerState s;
  s.lr = adam.lr();
  s.steps = adam.steps();
  s.moments = adam.state();
  return s;
}

void restore(Adam& adam, const OptimizerState& state) {
  adam.set_lr(state.lr);
  adam.set_steps(state.steps);
  adam.state() = state.moments;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  Writer w;
  for (const Parameter& p : ckpt.model.params) w.add(p.name, p.value);
  json header;
  header["format_version"] = kCheckpointVersion;
  header["model_config"] = to_json(ckpt.model.config);
  header["has_adaptation_layer"] = ckpt.model.has_adaptation_layer;
  if (ckpt.heads) {
    for (const Parameter& p : ckpt.heads->params) w.add(p.name, p.value);
    header["proxy"] = to_json(ckpt.heads->config);
    header["proxy"]["pool_dim"] = ckpt.heads->pool_dim;
    header["proxy"]["prepared"] = ckpt.heads->prepared;
  }
  if (ckpt.optimizer) {
    for (const auto& [name, mo] : ckpt.optimizer->moments) {
      w.add("optim/m/" + name, mo.m);
      w.add("optim/v/" + name, mo.v);
    }
    header["optimizer"] = {{"lr", ckpt.optimizer->lr},
                           {"steps", ckpt.optimizer->steps}};
  }
  header["meta"] = ckpt.meta;
  header["tensors"] = w.entries;

  const std::string text = header.dump();
  std::string out(kMagic, sizeof(kMagic));
  put_u32(out, static_cast<std::uint32_t>(text.size()));
  out += text;
  out += w.blob;

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw FormatError(tmp + ": cannot open for writing");
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw FormatError(tmp + ": write failed");
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const std::string file = path.string();
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError(file + ": cannot open checkpoint");
  const std::string raw((std::istreambuf_iterator<char>(f)),
                        std::istreambuf_iterator<char>());
  if (raw.size() < 12 || std::memcmp(raw.data(), kMagic, sizeof(kMagic)) != 0) {
    throw FormatError(file + ": not a checkpoint (bad magic)");
  }
  const std::uint32_t hlen =
      get_u32(reinterpret_cast<const unsigned char*>(raw.data() + 8));
  if (12 + static_cast<std::size_t>(hlen) > raw.size()) {
    throw FormatError(file + ": truncated header");
  }
  json header;
  try {
    header = json::parse(raw.substr(12, hlen));
  } catch (const json::exception& e) {
    throw FormatError(file + ": malformed header: " + e.what());
  }
  const std::string blob = raw.substr(12 + hlen);

  Checkpoint ckpt;
  try {
    const int version = header.at("format_version").get<int>();
    if (version != kCheckpointVersion) {
      throw FormatError(file + ": unsupported format version " +
                        std::to_string(version));
    }
    std::map<std::string, Entry> entries;
    std::vector<std::string> order;
    for (const json& e : header.at("tensors")) {
      const auto s = e.at("shape").get<std::array<int, 4>>();
      const std::string name = e.at("name").get<std::string>();
      entries[name] = Entry{Shape{s[0], s[1], s[2], s[3]},
                            e.at("offset").get<std::size_t>()};
      order.push_back(name);
    }
    auto take = [&](const std::string& name) {
      const auto it = entries.find(name);
      if (it == entries.end()) {
        throw FormatError(file + ": missing tensor '" + name + "'");
      }
      return read_tensor(blob, it->second, name, file);
    };

    // Rebuild the expected layout, then fill it from the archive.
    const ModelConfig mc = model_config_from_json(header.at("model_config"));
    mc.validate();
    ckpt.model = init_model(mc, 0);
    if (header.at("has_adaptation_layer").get<bool>()) {
      ckpt.model = insert_adaptation_layer(ckpt.model);
    }
    for (Parameter& p : ckpt.model.params) {
      Tensor t = take(p.name);
      if (!(t.shape() == p.value.shape())) {
        throw FormatError(file + ": tensor '" + p.name + "' has shape " +
                          t.shape().str() + ", expected " + p.value.shape().str());
      }
      p.value = std::move(t);
    }

    if (header.contains("proxy")) {
      const json& pj = header.at("proxy");
      ProxyHeads heads = init_proxy_heads(pj.at("pool_dim").get<int>(),
                                          proxy_config_from_json(pj), 0);
      for (Parameter& p : heads.params) {
        Tensor t = take(p.name);
        if (!(t.shape() == p.value.shape())) {
          throw FormatError(file + ": tensor '" + p.name + "' has wrong shape");
        }
        p.value = std::move(t);
      }
      heads.prepared = pj.at("prepared").get<bool>();
      ckpt.heads = std::move(heads);
    }

    if (header.contains("optimizer")) {
      OptimizerState st;
      st.lr = header["optimizer"].at("lr").get<double>();
      st.steps = header["optimizer"].at("steps").get<long long>();
      const std::string prefix = "optim/m/";
      for (const std::string& name : order) {
        if (name.rfind(prefix, 0) != 0) continue;
        const std::string pname = name.substr(prefix.size());
        st.moments[pname] = Adam::Moments{take(name), take("optim/v/" + pname)};
      }
      ckpt.optimizer = std::move(st);
    }
    ckpt.meta = header.value("meta", std::map<std::string, std::string>{});
  } catch (const json::exception& e) {
    throw FormatError(file + ": malformed header: " + e.what());
  } catch (const ConfigError& e) {
    throw FormatError(file + ": " + e.what());
  }
  return ckpt;
}

}  // namespace proxytta
