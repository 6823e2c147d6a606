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

#include "proxytta/config.hpp"

#include <cctype>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

#include "proxytta/errors.hpp"

namespace proxytta {

using nlohmann::json;

ExperimentConfig::ExperimentConfig() {
  pretrain.learning_rate = 2e-3;
  pretrain.epochs = 20;
  pretrain.batch_size = 16;
  pretrain.null_image_prob = 0.5;
  init.learning_rate = 1e-3;
  init.epochs = 6;
  init.batch_size = 16;
  prepare.learning_rate = 1e-3;
  prepare.epochs = 6;
  prepare.batch_size = 48;
  adapt.learning_rate = 2e-3;
  adapt.epochs = 1;
  adapt.batch_size = 16;
  adapt.inner_iter = 1;
  adapt.weights = {1.0, 1.0, 1.0};
}

namespace {

struct Field {
  std::string key;
  std::function<void(ExperimentConfig&, const json&)> set;
  std::function<json(const ExperimentConfig&)> get;
};

template <typename T>
T as(const json& v, const std::string& key) {
  try {
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw std::runtime_error("expected true or false");
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) throw std::runtime_error("expected a string");
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer()) throw std::runtime_error("expected an integer");
      if constexpr (std::is_unsigned_v<T>) {
        if (v.get<long long>() < 0) throw std::runtime_error("expected a non-negative integer");
      }
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) throw std::runtime_error("expected a number");
    }
    return v.get<T>();
  } catch (const std::exception& e) {
    throw ConfigError("config key '" + key + "': " + e.what() + " (got " +
                      v.dump() + ")");
  }
}

std::array<int, 3> as_int3(const json& v, const std::string& key) {
  if (!v.is_array() || v.size() != 3) {
    throw ConfigError("config key '" + key + "': expected an array of 3 integers");
  }
  return {as<int>(v[0], key), as<int>(v[1], key), as<int>(v[2], key)};
}

std::vector<double> as_doubles(const json& v, const std::string& key) {
  if (!v.is_array()) throw ConfigError("config key '" + key + "': expected an array");
  std::vector<double> out;
  for (const json& x : v) out.push_back(as<double>(x, key));
  return out;
}

#define FIELD(KEY, TYPE, EXPR)                                             \
  Field {                                                                  \
    KEY, [](ExperimentConfig& c, const json& v) { EXPR = as<TYPE>(v, KEY); }, \
        [](const ExperimentConfig& c) { return json(EXPR); }               \
  }

void add_stage(std::vector<Field>& f, const std::string& stage,
               StageConfig ExperimentConfig::*member, bool epochs) {
  const std::string p = "stage." + stage + ".";
  f.push_back({p + "learning_rate",
               [member, k = p + "learning_rate"](ExperimentConfig& c, const json& v) {
                 (c.*member).learning_rate = as<double>(v, k);
               },
               [member](const ExperimentConfig& c) { return json((c.*member).learning_rate); }});
  if (epochs) {
    f.push_back({p + "epochs",
                 [member, k = p + "epochs"](ExperimentConfig& c, const json& v) {
                   (c.*member).epochs = as<int>(v, k);
                 },
                 [member](const ExperimentConfig& c) { return json((c.*member).epochs); }});
  }
  f.push_back({p + "batch_size",
               [member, k = p + "batch_size"](ExperimentConfig& c, const json& v) {
                 (c.*member).batch_size = as<int>(v, k);
               },
               [member](const ExperimentConfig& c) { return json((c.*member).batch_size); }});
}

const std::vector<Field>& fields() {
  static const std::vector<Field> all = [] {
    std::vector<Field> f{
        FIELD("name", std::string, c.name),
        FIELD("method", std::string, c.method),
        FIELD("seed", std::uint64_t, c.seed),
        FIELD("data.dataset", std::string, c.dataset),
        FIELD("data.source_dir", std::string, c.source_dir),
        FIELD("data.target_dir", std::string, c.target_dir),
        Field{"data.height",
              [](ExperimentConfig& c, const json& v) {
                c.scene.height = c.model.height = as<int>(v, "data.height");
              },
              [](const ExperimentConfig& c) { return json(c.scene.height); }},
        Field{"data.width",
              [](ExperimentConfig& c, const json& v) {
                c.scene.width = c.model.width = as<int>(v, "data.width");
              },
              [](const ExperimentConfig& c) { return json(c.scene.width); }},
        FIELD("data.min_objects", int, c.scene.min_objects),
        FIELD("data.max_objects", int, c.scene.max_objects),
        FIELD("data.depth_min", double, c.scene.depth_min),
        FIELD("data.depth_max", double, c.scene.depth_max),
        FIELD("data.density", double, c.scene.density),
        Field{"data.sampling",
              [](ExperimentConfig& c, const json& v) {
                c.scene.strategy =
                    parse_sampling_strategy(as<std::string>(v, "data.sampling"));
              },
              [](const ExperimentConfig& c) { return json(to_string(c.scene.strategy)); }},
        FIELD("data.source_count", int, c.source_count),
        FIELD("data.target_count", int, c.target_count),
        FIELD("data.source_seed", std::uint64_t, c.source_seed),
        FIELD("data.target_seed", std::uint64_t, c.target_seed),
        FIELD("data.shift", std::string, c.shift),
        FIELD("data.shift_seed", std::uint64_t, c.shift_seed),
        Field{"model.image_channels",
              [](ExperimentConfig& c, const json& v) {
                c.model.image_channels = as_int3(v, "model.image_channels");
                c.model.adaptation_channels = c.model.image_channels[2];
              },
              [](const ExperimentConfig& c) { return json(c.model.image_channels); }},
        Field{"model.depth_channels",
              [](ExperimentConfig& c, const json& v) {
                c.model.depth_channels = as_int3(v, "model.depth_channels");
              },
              [](const ExperimentConfig& c) { return json(c.model.depth_channels); }},
        FIELD("model.fusion_width", int, c.model.fusion_width),
        Field{"model.decoder_widths",
              [](ExperimentConfig& c, const json& v) {
                c.model.decoder_widths = as_int3(v, "model.decoder_widths");
              },
              [](const ExperimentConfig& c) { return json(c.model.decoder_widths); }},
        FIELD("model.use_batch_norm", bool, c.model.use_batch_norm),
        FIELD("model.adaptation_kernel", int, c.model.adaptation_kernel),
        FIELD("model.max_depth", double, c.model.max_depth),
        FIELD("proxy.embed_dim", int, c.proxy.embed_dim),
        FIELD("proxy.hidden_dim", int, c.proxy.hidden_dim),
        FIELD("proxy.tau", double, c.proxy.tau),
    };
    add_stage(f, "pretrain", &ExperimentConfig::pretrain, true);
    f.push_back(FIELD("stage.pretrain.null_image_prob", double, c.pretrain.null_image_prob));
    add_stage(f, "init", &ExperimentConfig::init, true);
    f.push_back(Field{"stage.init.selector",
                      [](ExperimentConfig& c, const json& v) {
                        c.init.selector =
                            parse_selector(as<std::string>(v, "stage.init.selector"));
                      },
                      [](const ExperimentConfig& c) { return json(to_string(c.init.selector)); }});
    add_stage(f, "prepare", &ExperimentConfig::prepare, true);
    add_stage(f, "adapt", &ExperimentConfig::adapt, false);
    f.push_back(FIELD("stage.adapt.inner_iter", int, c.adapt.inner_iter));
    f.push_back(FIELD("stage.adapt.w_z", double, c.adapt.weights.w_z));
    f.push_back(FIELD("stage.adapt.w_sm", double, c.adapt.weights.w_sm));
    f.push_back(FIELD("stage.adapt.w_proxy", double, c.adapt.weights.w_proxy));
    f.push_back(FIELD("stage.adapt.update_bn_stats", bool, c.adapt.update_bn_stats));
    f.push_back(FIELD("stage.adapt.bn_variant", std::string, c.bn_variant));
    f.push_back(FIELD("stage.adapt.cotta_consistency_weight", double,
                      c.cotta.consistency_weight));
    f.push_back(FIELD("stage.adapt.cotta_teacher_tau", double, c.cotta.teacher_tau));
    f.push_back(FIELD("eval.range_min", double, c.range.min));
    f.push_back(FIELD("eval.range_max", double, c.range.max));
    f.push_back(FIELD("eval.crop_top", int, c.range.crop_top));
    f.push_back(Field{"eval.densities",
                      [](ExperimentConfig& c, const json& v) {
                        c.densities = as_doubles(v, "eval.densities");
                      },
                      [](const ExperimentConfig& c) { return json(c.densities); }});
    return f;
  }();
  return all;
}

#undef FIELD

const Field& find_field(const std::string& key) {
  for (const Field& f : fields()) {
    if (f.key == key) return f;
  }
  throw ConfigError("unknown config key '" + key + "'");
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

// Drops a trailing # comment that is not inside a quoted string.
std::string strip_comment(const std::string& line) {
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    if (line[i] == '"' && (i == 0 || line[i - 1] != '\\')) quoted = !quoted;
    if (line[i] == '#' && !quoted) return line.substr(0, i);
  }
  return line;
}

// TOML scalars and flat arrays map directly onto JSON literals, except for
// bare exponents like 2e-3 (valid in both) and TOML's optional '+' signs.
json parse_value(const std::string& raw, const std::string& where) {
  std::string text = trim(raw);
  if (text.empty()) throw ConfigError(where + ": missing value");
  if (text.front() == '\'' && text.back() == '\'' && text.size() >= 2) {
    return json(text.substr(1, text.size() - 2));
  }
  std::string cleaned;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const bool sign_pos = i == 0 || text[i - 1] == '[' || text[i - 1] == ',' ||
                          text[i - 1] == ' ' || text[i - 1] == 'e' || text[i - 1] == 'E';
    if (text[i] == '+' && sign_pos) continue;
    if (text[i] == '_' && i > 0 && std::isdigit(static_cast<unsigned char>(text[i - 1]))) continue;
    cleaned.push_back(text[i]);
  }
  try {
    json v = json::parse(cleaned);
    if (v.is_object()) throw ConfigError(where + ": inline tables are not supported");
    return v;
  } catch (const json::exception&) {
    throw ConfigError(where + ": cannot parse value '" + text + "'");
  }
}

void set_key(ExperimentConfig& c, const std::string& key, const json& value) {
  find_field(key).set(c, value);
}

void flatten(const json& j, const std::string& prefix,
             std::vector<std::pair<std::string, json>>& out) {
  for (const auto& [k, v] : j.items()) {
    const std::string key = prefix.empty() ? k : prefix + "." + k;
    if (v.is_object()) {
      flatten(v, key, out);
    } else {
      out.emplace_back(key, v);
    }
  }
}

}  // namespace

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> k;
    for (const Field& f : fields()) k.push_back(f.key);
    return k;
  }();
  return keys;
}

void apply_config_text(ExperimentConfig& config, const std::string& text,
                       const std::string& origin) {
  static const std::set<std::string> sections{
      "",           "data",         "model",         "proxy",      "stage.pretrain",
      "stage.init", "stage.prepare", "stage.adapt",  "eval"};
  std::istringstream in(text);
  std::string line, section;
  int lineno = 0;
  std::set<std::string> seen;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string where = origin + ":" + std::to_string(lineno);
    line = trim(strip_comment(line));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(where + ": malformed table header");
      section = trim(line.substr(1, line.size() - 2));
      if (!sections.count(section)) {
        throw ConfigError(where + ": unknown config section '[" + section + "]'");
      }
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + ": expected key = value");
    std::string name = trim(line.substr(0, eq));
    if (name.size() >= 2 && name.front() == '"' && name.back() == '"') {
      name = name.substr(1, name.size() - 2);
    }
    const std::string key = section.empty() ? name : section + "." + name;
    if (!seen.insert(key).second) throw ConfigError(where + ": duplicate key '" + key + "'");
    set_key(config, key, parse_value(line.substr(eq + 1), where));
  }
}

void apply_config_file(ExperimentConfig& config, const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  if (path.extension() == ".json") {
    json j;
    try {
      j = json::parse(ss.str());
    } catch (const json::exception& e) {
      throw ConfigError(path.string() + ": " + e.what());
    }
    std::vector<std::pair<std::string, json>> entries;
    flatten(j, "", entries);
    for (const auto& [k, v] : entries) set_key(config, k, v);
    return;
  }
  apply_config_text(config, ss.str(), path.string());
}

void apply_override(ExperimentConfig& config, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError("override '" + assignment + "' is not of the form key=value");
  }
  const std::string key = trim(assignment.substr(0, eq));
  const std::string raw = trim(assignment.substr(eq + 1));
  const Field& field = find_field(key);
  json value;
  try {
    value = parse_value(raw, "override " + key);
  } catch (const ConfigError&) {
    value = json(raw);  // bare string
  }
  if (field.get(config).is_string() && !value.is_string()) value = json(raw);
  field.set(config, value);
}

std::string to_json_text(const ExperimentConfig& config) {
  json root = json::object();
  for (const Field& f : fields()) {
    json* node = &root;
    std::string rest = f.key;
    for (auto dot = rest.find('.'); dot != std::string::npos; dot = rest.find('.')) {
      node = &(*node)[rest.substr(0, dot)];
      rest = rest.substr(dot + 1);
    }
    (*node)[rest] = f.get(config);
  }
  return root.dump(2) + "\n";
}

void ExperimentConfig::validate() const {
  scene.validate();
  model.validate();
  proxy.validate();
  if (model.height != scene.height || model.width != scene.width) {
    throw ConfigError("data.height/data.width must match the model input size");
  }
  if (source_count < 1 || target_count < 1) {
    throw ConfigError("data.source_count and data.target_count must be >= 1");
  }
  shift_preset(shift, shift_seed);
  pretrain.validate("pretrain");
  init.validate("init");
  prepare.validate("prepare");
  adapt.validate("adapt");
  parse_bn_variant(bn_variant);
  if (!(range.min >= 0.0 && range.max > range.min)) {
    throw ConfigError("eval.range_min/range_max must satisfy 0 <= min < max");
  }
  if (range.crop_top < 0 || range.crop_top >= scene.height) {
    throw ConfigError("eval.crop_top must lie in [0, data.height)");
  }
  for (double d : densities) {
    if (!(d > 0.0 && d <= 1.0)) throw ConfigError("eval.densities must lie in (0, 1]");
  }
  static const std::set<std::string> methods{
      "proxytta", "proxytta_fast", "none", "bn_adapt", "bn_adapt_losses", "cotta"};
  if (!methods.count(method)) throw ConfigError("unknown method '" + method + "'");
}

}  // namespace proxytta
