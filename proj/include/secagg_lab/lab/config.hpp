// Copyright 2026 The SecAgg Lab Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <nlohmann/json.hpp>

#include <cstdint>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "secagg_lab/attacks/canary.hpp"
#include "secagg_lab/attacks/inversion.hpp"
#include "secagg_lab/attacks/suppression.hpp"
#include "secagg_lab/data.hpp"
#include "secagg_lab/fl.hpp"
#include "secagg_lab/nn.hpp"

namespace secagg_lab::lab {

using json = nlohmann::ordered_json;

class ConfigError : public Error {
 public:
  using Error::Error;
};

struct DataConfig {
  std::string source = "synth";  // "synth" | "csv"
  std::string path;
  std::size_t per_user = 50;
  std::size_t test_size = 500;
  data::MixtureSpec mixture{16, 4, 2.0, 1.0, 1};
};

/// Attacker-held negatives for canary training, from a broader, different mixture.
struct ShadowConfig {
  std::size_t count = 10000;
  std::size_t classes = 10;
  double center_scale = 2.0;
  double noise = 1.5;
  std::uint64_t seed = 77;
};

struct AttackConfig {
  std::string kind = "suppress";  // suppress | canary | invert
  attacks::SuppressionStrategy strategy;
  fl::UserId target = 0;
  attacks::TargetPolicy target_policy = attacks::TargetPolicy::Fixed;
  attacks::CanaryAddress xi{3, 0};
  double alpha_pos = 1.0;
  double alpha_neg = 1.0;
  double stop_loss = 0.01;
  double learning_rate = 0.05;
  std::size_t max_steps = 20000;
  std::size_t trials = 1;
  std::vector<std::size_t> batch_sizes{4, 8, 16, 32};
  /// Private examples swept per canary trial (besides x_t).
  std::size_t pool = 512;
  /// Non-target users in the end-to-end canary round.
  std::size_t non_targets = 50;
};

struct InversionSettings {
  attacks::InversionConfig optimizer;
  std::size_t trials = 10;
  std::size_t dims = 8;
  std::size_t hidden = 16;
  std::size_t classes = 4;
  double success_mse = 1e-2;
};

struct ExperimentConfig {
  fl::RoundConfig round;
  std::size_t users = 100;
  std::size_t rounds = 1;
  std::uint64_t seed = 1;
  /// "default", "tiny", or a custom layer list.
  std::string arch_name = "default";
  std::optional<nn::Architecture> custom_arch;
  bool terminal_bias = false;
  DataConfig data;
  ShadowConfig shadow;
  AttackConfig attack;
  InversionSettings inversion;
};

// ---------------------------------------------------------------------------
// Architectures

/// Dense(d->64) ReLU Dense(64->32) LayerNorm ReLU Dense(32->classes) Softmax.
inline nn::Architecture default_architecture(std::size_t dims, std::size_t classes, bool terminal_bias = false) {
  nn::Architecture a;
  a.dense(dims, 64).activation(nn::ActivationFn::ReLU);
  a.dense(64, 32).layer_norm(32).activation(nn::ActivationFn::ReLU);
  a.dense(32, classes, terminal_bias).activation(nn::ActivationFn::Softmax);
  return a;
}

/// Eight scalars: Dense(2->2) ReLU Dense(2->1, no bias) Sigmoid, trained with MSE
/// on binary targets. Keeps pairwise masking affordable for very large pools.
inline nn::Architecture tiny_architecture() {
  nn::Architecture a;
  a.dense(2, 2).activation(nn::ActivationFn::ReLU).dense(2, 1, false).activation(nn::ActivationFn::Sigmoid);
  return a;
}

inline nn::Architecture experiment_architecture(const ExperimentConfig& c) {
  if (c.custom_arch) return *c.custom_arch;
  if (c.arch_name == "tiny") return tiny_architecture();
  return default_architecture(c.data.mixture.dims, c.data.mixture.classes, c.terminal_bias);
}

// ---------------------------------------------------------------------------
// Parsing

namespace detail {

inline std::string line_col(const std::string& text, std::size_t byte) {
  std::size_t line = 1, col = 1;
  for (std::size_t i = 0; i < byte && i < text.size(); ++i) {
    if (text[i] == '\n') {
      ++line;
      col = 1;
    } else {
      ++col;
    }
  }
  return std::to_string(line) + ":" + std::to_string(col);
}

/// Typed field access with path-qualified errors and unknown-key detection.
class Fields {
 public:
  Fields(const json& obj, std::string path) : obj_(obj), path_(std::move(path)) {
    if (!obj_.is_object()) fail(path_.empty() ? "<root>" : path_, "expected an object");
  }

  template <class T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!obj_.contains(key)) return;
    const json& v = obj_.at(key);
    try {
      if constexpr (std::is_same_v<T, bool>) {
        if (!v.is_boolean()) throw std::invalid_argument("expected a boolean");
      } else if constexpr (std::is_integral_v<T>) {
        if (!v.is_number_integer()) throw std::invalid_argument("expected an integer");
        if constexpr (std::is_unsigned_v<T>) {
          if (v.is_number_integer() && !v.is_number_unsigned() && v.get<long long>() < 0) {
            throw std::invalid_argument("expected a non-negative integer");
          }
        }
      } else if constexpr (std::is_floating_point_v<T>) {
        if (!v.is_number()) throw std::invalid_argument("expected a number");
      } else if constexpr (std::is_same_v<T, std::string>) {
        if (!v.is_string()) throw std::invalid_argument("expected a string");
      }
      out = v.get<T>();
    } catch (const std::exception& e) {
      fail(qualified(key), e.what());
    }
  }

  bool has(const char* key) const { return obj_.contains(key); }
  const json& raw(const char* key) {
    seen_.insert(key);
    return obj_.at(key);
  }
  std::string qualified(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  void finish() const {
    for (const auto& [k, v] : obj_.items()) {
      if (!seen_.count(k)) fail(qualified(k), "unknown field");
    }
  }

  [[noreturn]] static void fail(const std::string& field, const std::string& msg) {
    throw ConfigError("field '" + field + "': " + msg);
  }

 private:
  const json& obj_;
  std::string path_;
  std::set<std::string> seen_;
};

inline fl::Mode parse_mode(const std::string& s, const std::string& field) {
  if (s == "fedsgd" || s == "FedSGD") return fl::Mode::FedSGD;
  if (s == "fedavg" || s == "FedAVG") return fl::Mode::FedAVG;
  Fields::fail(field, "expected 'fedsgd' or 'fedavg', got '" + s + "'");
}

inline nn::ActivationFn parse_activation(const std::string& s, const std::string& field) {
  if (s == "relu") return nn::ActivationFn::ReLU;
  if (s == "sigmoid") return nn::ActivationFn::Sigmoid;
  if (s == "softmax") return nn::ActivationFn::Softmax;
  if (s == "identity") return nn::ActivationFn::Identity;
  Fields::fail(field, "unknown activation '" + s + "'");
}

inline nn::Architecture parse_layers(const json& arr, const std::string& field) {
  if (!arr.is_array() || arr.empty()) Fields::fail(field, "expected a non-empty layer list");
  nn::Architecture a;
  for (std::size_t i = 0; i < arr.size(); ++i) {
    const std::string here = field + "[" + std::to_string(i) + "]";
    Fields f(arr[i], here);
    std::string type;
    f.get("type", type);
    try {
      if (type == "dense") {
        std::size_t in = 0, out = 0;
        bool bias = true;
        f.get("in", in);
        f.get("out", out);
        f.get("bias", bias);
        a.dense(in, out, bias);
      } else if (type == "layer_norm") {
        std::size_t dim = 0;
        double eps = 1e-5;
        f.get("dim", dim);
        f.get("epsilon", eps);
        a.layer_norm(dim, eps);
      } else if (type == "activation") {
        std::string fn;
        f.get("fn", fn);
        a.activation(parse_activation(fn, here + ".fn"));
      } else {
        Fields::fail(here + ".type", "expected dense, layer_norm or activation");
      }
    } catch (const ConfigError&) {
      throw;
    } catch (const Error& e) {
      Fields::fail(here, e.what());
    }
    f.finish();
  }
  return a;
}

}  // namespace detail

inline ExperimentConfig parse_config(const json& root) {
  using detail::Fields;
  ExperimentConfig c;
  Fields f(root, "");
  std::string mode = "fedsgd";
  f.get("mode", mode);
  c.round.mode = detail::parse_mode(mode, "mode");
  f.get("eta", c.round.eta);
  f.get("k", c.round.k);
  f.get("batch_size", c.round.batch_size);
  f.get("users", c.users);
  f.get("active_fraction", c.round.active_fraction);
  f.get("rounds", c.rounds);
  f.get("seed", c.seed);
  std::string loss = "cross_entropy";
  f.get("loss", loss);
  if (loss == "mse") c.round.loss = nn::LossKind::MSE;
  else if (loss == "cross_entropy") c.round.loss = nn::LossKind::CrossEntropy;
  else Fields::fail("loss", "expected 'mse' or 'cross_entropy'");
  std::string weighting = "literal";
  f.get("weighting", weighting);
  if (weighting == "literal") c.round.weighting = fl::FedAvgWeighting::Literal;
  else if (weighting == "sample_weighted") c.round.weighting = fl::FedAvgWeighting::SampleWeighted;
  else Fields::fail("weighting", "expected 'literal' or 'sample_weighted'");

  if (f.has("sa")) {
    Fields s(f.raw("sa"), "sa");
    s.get("enabled", c.round.sa.enabled);
    s.get("frac_bits", c.round.sa.ring.frac_bits);
    s.get("modulus_bits", c.round.sa.ring.modulus_bits);
    s.get("setup_seed", c.round.sa.setup_seed);
    s.finish();
  }
  if (f.has("defenses")) {
    const json& d = f.raw("defenses");
    if (!d.is_array()) Fields::fail("defenses", "expected a list of defense names");
    for (std::size_t i = 0; i < d.size(); ++i) {
      const std::string field = "defenses[" + std::to_string(i) + "]";
      if (!d[i].is_string()) Fields::fail(field, "expected a string");
      const auto name = d[i].get<std::string>();
      if (name == "zero_update_guard") c.round.defenses.zero_update_guard.enabled = true;
      else if (name == "signed_echo") c.round.defenses.signed_echo = true;
      else if (name == "conditional_sa") c.round.defenses.conditional_sa = true;
      else Fields::fail(field, "unknown defense '" + name + "'");
    }
  }
  if (f.has("zero_guard")) {
    Fields z(f.raw("zero_guard"), "zero_guard");
    z.get("threshold", c.round.defenses.zero_update_guard.threshold);
    z.get("ignore_terminal_bias", c.round.defenses.zero_update_guard.ignore_terminal_bias);
    z.finish();
  }
  std::string echo = "digest";
  f.get("echo_payload", echo);
  if (echo == "digest") c.round.defenses.echo_payload = fl::EchoPayload::Digest;
  else if (echo == "full") c.round.defenses.echo_payload = fl::EchoPayload::FullParameters;
  else Fields::fail("echo_payload", "expected 'digest' or 'full'");

  if (f.has("arch")) {
    const json& a = f.raw("arch");
    if (a.is_string()) {
      c.arch_name = a.get<std::string>();
      if (c.arch_name != "default" && c.arch_name != "tiny") Fields::fail("arch", "expected 'default', 'tiny' or a layer list");
    } else {
      c.arch_name = "custom";
      c.custom_arch = detail::parse_layers(a, "arch");
    }
  }
  f.get("terminal_bias", c.terminal_bias);

  if (f.has("data")) {
    Fields d(f.raw("data"), "data");
    d.get("source", c.data.source);
    if (c.data.source != "synth" && c.data.source != "csv") Fields::fail("data.source", "expected 'synth' or 'csv'");
    d.get("path", c.data.path);
    d.get("per_user", c.data.per_user);
    d.get("test_size", c.data.test_size);
    d.get("dims", c.data.mixture.dims);
    d.get("classes", c.data.mixture.classes);
    d.get("center_scale", c.data.mixture.center_scale);
    d.get("noise", c.data.mixture.noise);
    d.get("seed", c.data.mixture.seed);
    d.finish();
    if (c.data.source == "csv" && c.data.path.empty()) Fields::fail("data.path", "required when source is 'csv'");
  }
  if (f.has("shadow")) {
    Fields s(f.raw("shadow"), "shadow");
    s.get("count", c.shadow.count);
    s.get("classes", c.shadow.classes);
    s.get("center_scale", c.shadow.center_scale);
    s.get("noise", c.shadow.noise);
    s.get("seed", c.shadow.seed);
    s.finish();
  }
  if (f.has("attack")) {
    Fields a(f.raw("attack"), "attack");
    a.get("kind", c.attack.kind);
    if (c.attack.kind != "suppress" && c.attack.kind != "canary" && c.attack.kind != "invert") {
      Fields::fail("attack.kind", "expected 'suppress', 'canary' or 'invert'");
    }
    if (a.has("strategy")) {
      std::string s;
      a.get("strategy", s);
      try {
        c.attack.strategy.variant = attacks::suppression_variant_from_string(s);
      } catch (const Error& e) {
        Fields::fail("attack.strategy", e.what());
      }
    }
    a.get("bias_magnitude", c.attack.strategy.bias_magnitude);
    a.get("input_bound", c.attack.strategy.input_bound);
    a.get("target", c.attack.target);
    std::string policy = "fixed";
    a.get("target_policy", policy);
    if (policy == "fixed") c.attack.target_policy = attacks::TargetPolicy::Fixed;
    else if (policy == "random") c.attack.target_policy = attacks::TargetPolicy::RandomPerRound;
    else Fields::fail("attack.target_policy", "expected 'fixed' or 'random'");
    if (a.has("xi")) {
      Fields x(a.raw("xi"), "attack.xi");
      x.get("layer", c.attack.xi.layer);
      x.get("channel", c.attack.xi.channel);
      x.finish();
    }
    a.get("alpha_pos", c.attack.alpha_pos);
    a.get("alpha_neg", c.attack.alpha_neg);
    a.get("stop_loss", c.attack.stop_loss);
    a.get("learning_rate", c.attack.learning_rate);
    a.get("max_steps", c.attack.max_steps);
    a.get("trials", c.attack.trials);
    a.get("batch_sizes", c.attack.batch_sizes);
    a.get("pool", c.attack.pool);
    a.get("non_targets", c.attack.non_targets);
    a.finish();
  }
  if (f.has("inversion")) {
    Fields v(f.raw("inversion"), "inversion");
    auto& o = c.inversion.optimizer;
    std::string distance = "euclidean", optimizer = "adam", init = "gaussian";
    v.get("distance", distance);
    v.get("optimizer", optimizer);
    v.get("init", init);
    if (distance == "euclidean") o.distance = attacks::GradientDistance::Euclidean;
    else if (distance == "cosine") o.distance = attacks::GradientDistance::Cosine;
    else Fields::fail("inversion.distance", "expected 'euclidean' or 'cosine'");
    if (optimizer == "adam") o.optimizer = attacks::InversionOptimizer::Adam;
    else if (optimizer == "gd") o.optimizer = attacks::InversionOptimizer::GradientDescent;
    else Fields::fail("inversion.optimizer", "expected 'adam' or 'gd'");
    if (init == "gaussian") o.init = attacks::InversionInit::Gaussian;
    else if (init == "zeros") o.init = attacks::InversionInit::Zeros;
    else Fields::fail("inversion.init", "expected 'gaussian' or 'zeros'");
    v.get("alpha", o.alpha);
    v.get("steps", o.steps);
    v.get("learning_rate", o.learning_rate);
    v.get("trials", c.inversion.trials);
    v.get("dims", c.inversion.dims);
    v.get("hidden", c.inversion.hidden);
    v.get("classes", c.inversion.classes);
    v.get("success_mse", c.inversion.success_mse);
    v.finish();
  }
  f.finish();

  try {
    c.round.validate();
  } catch (const Error& e) {
    throw ConfigError(std::string("invalid round settings: ") + e.what());
  }
  if (c.users < 1) Fields::fail("users", "must be >= 1");
  if (c.rounds < 1) Fields::fail("rounds", "must be >= 1");
  if (c.attack.trials < 1) Fields::fail("attack.trials", "must be >= 1");
  for (auto b : c.attack.batch_sizes)
    if (b < 1 || b > c.attack.pool) Fields::fail("attack.batch_sizes", "each size must be in [1, pool]");
  if (c.attack.target >= c.users) Fields::fail("attack.target", "must name one of the users");
  return c;
}

inline ExperimentConfig parse_config_text(const std::string& text, const std::string& source = "<config>") {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(source + ":" + detail::line_col(text, e.byte == 0 ? 0 : e.byte - 1) + ": " + e.what());
  }
  try {
    return parse_config(root);
  } catch (const ConfigError& e) {
    throw ConfigError(source + ": " + e.what());
  }
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str(), path);
}

}  // namespace secagg_lab::lab
