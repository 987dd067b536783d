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

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "secagg_lab/tensor.hpp"

namespace secagg_lab::nn {

enum class ActivationFn { ReLU, Sigmoid, Softmax, Identity };
enum class LossKind { MSE, CrossEntropy };

inline const char* to_string(ActivationFn fn) {
  switch (fn) {
    case ActivationFn::ReLU: return "relu";
    case ActivationFn::Sigmoid: return "sigmoid";
    case ActivationFn::Softmax: return "softmax";
    case ActivationFn::Identity: return "identity";
  }
  return "?";
}

struct DenseSpec {
  std::size_t in_dim = 0;
  std::size_t out_dim = 0;
  bool has_bias = true;
};

struct LayerNormSpec {
  std::size_t dim = 0;
  double epsilon = 1e-5;
};

struct ActivationSpec {
  ActivationFn fn = ActivationFn::Identity;
};

using LayerSpec = std::variant<DenseSpec, LayerNormSpec, ActivationSpec>;

inline bool is_dense(const LayerSpec& s) { return std::holds_alternative<DenseSpec>(s); }
inline bool is_layer_norm(const LayerSpec& s) { return std::holds_alternative<LayerNormSpec>(s); }
inline bool is_activation(const LayerSpec& s, ActivationFn fn) {
  const auto* a = std::get_if<ActivationSpec>(&s);
  return a && a->fn == fn;
}

/// Feed-forward stack of layers with chained dimensions.
class Architecture {
 public:
  Architecture() = default;
  explicit Architecture(std::vector<LayerSpec> layers) : layers_(std::move(layers)) { validate(); }

  Architecture& dense(std::size_t in, std::size_t out, bool bias = true) {
    layers_.push_back(DenseSpec{in, out, bias});
    validate();
    return *this;
  }
  Architecture& layer_norm(std::size_t dim, double eps = 1e-5) {
    layers_.push_back(LayerNormSpec{dim, eps});
    validate();
    return *this;
  }
  Architecture& activation(ActivationFn fn) {
    layers_.push_back(ActivationSpec{fn});
    validate();
    return *this;
  }

  const std::vector<LayerSpec>& layers() const noexcept { return layers_; }
  std::size_t size() const noexcept { return layers_.size(); }
  const LayerSpec& operator[](std::size_t i) const { return layers_.at(i); }

  std::size_t input_dim() const { return dims_.empty() ? 0 : dims_.front(); }
  std::size_t output_dim() const { return dims_.empty() ? 0 : dims_.back(); }
  /// Width of the activation entering layer i (i == size() gives the output width).
  std::size_t width_at(std::size_t i) const { return dims_.at(i); }

  /// Index of the last Dense layer, if any.
  std::optional<std::size_t> terminal_dense() const {
    for (std::size_t i = layers_.size(); i-- > 0;)
      if (is_dense(layers_[i])) return i;
    return std::nullopt;
  }

  /// First activation layer after `layer`, skipping LayerNorm layers; nullopt if a Dense comes first.
  std::optional<ActivationFn> activation_after(std::size_t layer) const {
    for (std::size_t i = layer + 1; i < layers_.size(); ++i) {
      if (const auto* a = std::get_if<ActivationSpec>(&layers_[i])) return a->fn;
      if (is_dense(layers_[i])) return std::nullopt;
    }
    return std::nullopt;
  }

 private:
  void validate() {
    dims_.clear();
    std::optional<std::size_t> width;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      const auto& layer = layers_[i];
      std::size_t in = 0, out = 0;
      if (const auto* d = std::get_if<DenseSpec>(&layer)) {
        if (d->in_dim == 0 || d->out_dim == 0) throw DimensionError("dense layer with zero dimension");
        in = d->in_dim;
        out = d->out_dim;
      } else if (const auto* n = std::get_if<LayerNormSpec>(&layer)) {
        if (n->dim == 0) throw DimensionError("layer norm with zero dimension");
        if (!(n->epsilon > 0.0)) throw ArgumentError("layer norm epsilon must be positive");
        in = out = n->dim;
      } else {
        if (!width) throw DimensionError("activation layer cannot be the first layer");
        in = out = *width;
      }
      if (width && *width != in) {
        throw DimensionError("layer " + std::to_string(i) + " expects width " + std::to_string(in) +
                             " but receives " + std::to_string(*width));
      }
      if (!width) dims_.push_back(in);
      width = out;
      dims_.push_back(out);
    }
  }

  std::vector<LayerSpec> layers_;
  std::vector<std::size_t> dims_;
};

/// Location of one scalar inside a ParamSet.
struct ParamAddress {
  std::size_t layer = 0;
  std::size_t tensor = 0;
  std::size_t index = 0;
  friend bool operator==(const ParamAddress&, const ParamAddress&) = default;
};

/// Per-layer parameter tensors. Dense: {kernel (in x out), [bias (out)]};
/// LayerNorm: {scale (dim), shift (dim)}; Activation: {}.
/// Gradients share the same structure.
class ParamSet {
 public:
  ParamSet() = default;
  explicit ParamSet(std::vector<std::vector<Tensor>> layers) : layers_(std::move(layers)) {}

  /// Zero-filled set congruent to `arch`.
  static ParamSet zeros(const Architecture& arch) {
    std::vector<std::vector<Tensor>> layers;
    for (const auto& spec : arch.layers()) {
      std::vector<Tensor> ts;
      if (const auto* d = std::get_if<DenseSpec>(&spec)) {
        ts.emplace_back(Shape{d->in_dim, d->out_dim});
        if (d->has_bias) ts.emplace_back(Shape{d->out_dim});
      } else if (const auto* n = std::get_if<LayerNormSpec>(&spec)) {
        ts.emplace_back(Shape{n->dim});
        ts.emplace_back(Shape{n->dim});
      }
      layers.push_back(std::move(ts));
    }
    return ParamSet(std::move(layers));
  }

  std::size_t num_layers() const noexcept { return layers_.size(); }
  std::vector<Tensor>& layer(std::size_t i) { return layers_.at(i); }
  const std::vector<Tensor>& layer(std::size_t i) const { return layers_.at(i); }
  Tensor& tensor(std::size_t l, std::size_t t) { return layers_.at(l).at(t); }
  const Tensor& tensor(std::size_t l, std::size_t t) const { return layers_.at(l).at(t); }

  double& at(const ParamAddress& a) { return layers_.at(a.layer).at(a.tensor).storage().at(a.index); }
  double at(const ParamAddress& a) const { return layers_.at(a.layer).at(a.tensor).storage().at(a.index); }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& l : layers_)
      for (const auto& t : l) n += t.size();
    return n;
  }

  /// Visits every tensor in canonical (layer, tensor) order.
  template <class F>
  void for_each_tensor(F&& f) const {
    for (std::size_t l = 0; l < layers_.size(); ++l)
      for (std::size_t t = 0; t < layers_[l].size(); ++t) f(l, t, layers_[l][t]);
  }
  template <class F>
  void for_each_tensor(F&& f) {
    for (std::size_t l = 0; l < layers_.size(); ++l)
      for (std::size_t t = 0; t < layers_[l].size(); ++t) f(l, t, layers_[l][t]);
  }

  /// Canonical flattened view: layers in order, tensors in order, row-major.
  std::vector<double> flatten() const {
    std::vector<double> out;
    out.reserve(scalar_count());
    for_each_tensor([&](std::size_t, std::size_t, const Tensor& t) {
      out.insert(out.end(), t.storage().begin(), t.storage().end());
    });
    return out;
  }

  /// Inverse of flatten(), using this set as the structural template.
  ParamSet unflatten(std::span<const double> flat) const {
    if (flat.size() != scalar_count()) {
      throw DimensionError("unflatten: expected " + std::to_string(scalar_count()) + " scalars, got " +
                           std::to_string(flat.size()));
    }
    ParamSet out = *this;
    std::size_t off = 0;
    out.for_each_tensor([&](std::size_t, std::size_t, Tensor& t) {
      std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(off), t.size(), t.storage().begin());
      off += t.size();
    });
    return out;
  }

  /// Maps a flat index back to its address.
  ParamAddress address_of(std::size_t flat_index) const {
    std::size_t off = 0;
    for (std::size_t l = 0; l < layers_.size(); ++l)
      for (std::size_t t = 0; t < layers_[l].size(); ++t) {
        const std::size_t n = layers_[l][t].size();
        if (flat_index < off + n) return {l, t, flat_index - off};
        off += n;
      }
    throw ArgumentError("flat index out of range");
  }

  std::size_t flat_index_of(const ParamAddress& a) const {
    std::size_t off = 0;
    for (std::size_t l = 0; l < layers_.size(); ++l)
      for (std::size_t t = 0; t < layers_[l].size(); ++t) {
        if (l == a.layer && t == a.tensor) {
          if (a.index >= layers_[l][t].size()) break;
          return off + a.index;
        }
        off += layers_[l][t].size();
      }
    throw ArgumentError("parameter address out of range");
  }

  bool congruent(const ParamSet& other) const {
    if (layers_.size() != other.layers_.size()) return false;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      if (layers_[l].size() != other.layers_[l].size()) return false;
      for (std::size_t t = 0; t < layers_[l].size(); ++t)
        if (layers_[l][t].shape() != other.layers_[l][t].shape()) return false;
    }
    return true;
  }

  void require_congruent(const ParamSet& other, const char* what) const {
    if (!congruent(other)) throw DimensionError(std::string(what) + ": parameter sets are not congruent");
  }

  ParamSet& operator+=(const ParamSet& o) {
    zip(o, [](double& a, double b) { a += b; }, "operator+=");
    return *this;
  }
  ParamSet& operator-=(const ParamSet& o) {
    zip(o, [](double& a, double b) { a -= b; }, "operator-=");
    return *this;
  }
  ParamSet& operator*=(double s) {
    for_each_tensor([&](std::size_t, std::size_t, Tensor& t) {
      for (double& v : t.storage()) v *= s;
    });
    return *this;
  }
  friend ParamSet operator+(ParamSet a, const ParamSet& b) { return a += b; }
  friend ParamSet operator-(ParamSet a, const ParamSet& b) { return a -= b; }
  friend ParamSet operator*(ParamSet a, double s) { return a *= s; }
  friend ParamSet operator*(double s, ParamSet a) { return a *= s; }

  /// this += s * o
  void axpy(double s, const ParamSet& o) { zip(o, [s](double& a, double b) { a += s * b; }, "axpy"); }

  friend bool operator==(const ParamSet& a, const ParamSet& b) { return a.layers_ == b.layers_; }

  bool all_finite() const {
    bool ok = true;
    for_each_tensor([&](std::size_t, std::size_t, const Tensor& t) { ok = ok && t.all_finite(); });
    return ok;
  }

 private:
  template <class F>
  void zip(const ParamSet& o, F&& f, const char* what) {
    require_congruent(o, what);
    for (std::size_t l = 0; l < layers_.size(); ++l)
      for (std::size_t t = 0; t < layers_[l].size(); ++t) {
        auto& a = layers_[l][t].storage();
        const auto& b = o.layers_[l][t].storage();
        for (std::size_t i = 0; i < a.size(); ++i) f(a[i], b[i]);
      }
  }

  std::vector<std::vector<Tensor>> layers_;
};

using NetworkParameters = ParamSet;
using Gradient = ParamSet;

inline void require_params_match(const Architecture& arch, const ParamSet& params) {
  if (!ParamSet::zeros(arch).congruent(params)) {
    throw DimensionError("parameters are not congruent to the architecture");
  }
}

/// Inputs (n x in_dim) with targets (n x out_dim). Class labels are one-hot rows.
struct Batch {
  Tensor inputs;
  Tensor labels;

  std::size_t size() const { return inputs.rows(); }

  void validate() const {
    if (inputs.rank() != 2 || labels.rank() != 2) throw DimensionError("batch tensors must be matrices");
    if (inputs.rows() != labels.rows()) throw DimensionError("batch inputs and labels disagree on n");
  }
};

inline Tensor one_hot(std::span<const std::size_t> classes, std::size_t num_classes) {
  if (classes.empty()) throw DimensionError("one_hot: empty label list");
  Tensor out({classes.size(), num_classes});
  for (std::size_t i = 0; i < classes.size(); ++i) {
    if (classes[i] >= num_classes) throw ArgumentError("one_hot: class index out of range");
    out.at(i, classes[i]) = 1.0;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Forward pass

/// Values recorded by forward(). activations[0] is the input; activations[i + 1]
/// is the output of layer i. LayerNorm layers also keep x_hat and 1/sigma per row.
struct ForwardCache {
  std::vector<Tensor> activations;
  std::vector<Tensor> normalized;
  std::vector<std::vector<double>> inv_std;

  const Tensor& output() const { return activations.back(); }
  const Tensor& input_of(std::size_t layer) const { return activations.at(layer); }
  const Tensor& output_of(std::size_t layer) const { return activations.at(layer + 1); }
};

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline ForwardCache forward(const Architecture& arch, const ParamSet& params, const Tensor& inputs) {
  require_params_match(arch, params);
  if (inputs.rank() != 2 || inputs.cols() != arch.input_dim()) {
    throw DimensionError("forward: input " + shape_string(inputs.shape()) + " does not match input width " +
                         std::to_string(arch.input_dim()));
  }
  ForwardCache cache;
  cache.activations.reserve(arch.size() + 1);
  cache.normalized.resize(arch.size());
  cache.inv_std.resize(arch.size());
  cache.activations.push_back(inputs);

  for (std::size_t l = 0; l < arch.size(); ++l) {
    const Tensor& x = cache.activations.back();
    const std::size_t n = x.rows();
    const auto& spec = arch[l];
    Tensor y;
    if (const auto* d = std::get_if<DenseSpec>(&spec)) {
      y = matmul(x, params.tensor(l, 0));
      if (d->has_bias) {
        const auto& b = params.tensor(l, 1);
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < d->out_dim; ++j) y.at(i, j) += b[j];
      }
    } else if (const auto* ln = std::get_if<LayerNormSpec>(&spec)) {
      const auto& gamma = params.tensor(l, 0);
      const auto& beta = params.tensor(l, 1);
      const std::size_t k = ln->dim;
      Tensor xhat({n, k});
      y = Tensor({n, k});
      auto& rstd = cache.inv_std[l];
      rstd.resize(n);
      for (std::size_t i = 0; i < n; ++i) {
        double mean = 0.0;
        for (std::size_t j = 0; j < k; ++j) mean += x.at(i, j);
        mean /= static_cast<double>(k);
        double var = 0.0;
        for (std::size_t j = 0; j < k; ++j) var += (x.at(i, j) - mean) * (x.at(i, j) - mean);
        var /= static_cast<double>(k);
        rstd[i] = 1.0 / std::sqrt(var + ln->epsilon);
        for (std::size_t j = 0; j < k; ++j) {
          xhat.at(i, j) = (x.at(i, j) - mean) * rstd[i];
          y.at(i, j) = gamma[j] * xhat.at(i, j) + beta[j];
        }
      }
      cache.normalized[l] = std::move(xhat);
    } else {
      const auto fn = std::get<ActivationSpec>(spec).fn;
      y = x;
      auto& v = y.storage();
      switch (fn) {
        case ActivationFn::ReLU:
          for (double& e : v) e = e > 0.0 ? e : 0.0;
          break;
        case ActivationFn::Sigmoid:
          for (double& e : v) e = sigmoid(e);
          break;
        case ActivationFn::Softmax:
          for (std::size_t i = 0; i < n; ++i) {
            auto r = y.row(i);
            const double mx = *std::max_element(r.begin(), r.end());
            double sum = 0.0;
            for (double& e : r) sum += (e = std::exp(e - mx));
            for (double& e : r) e /= sum;
          }
          break;
        case ActivationFn::Identity:
          break;
      }
    }
    cache.activations.push_back(std::move(y));
  }
  return cache;
}

inline Tensor predict(const Architecture& arch, const ParamSet& params, const Tensor& inputs) {
  return forward(arch, params, inputs).output();
}

// ---------------------------------------------------------------------------
// Loss

inline constexpr double kProbabilityFloor = 1e-12;

/// MSE is the mean over all entries; cross-entropy is the per-row mean of
/// -sum(y log p) with p clamped to [1e-12, 1].
inline double loss(const Tensor& output, const Tensor& labels, LossKind kind) {
  require_same_shape(output, labels, "loss");
  const double n = static_cast<double>(output.rows());
  double total = 0.0;
  if (kind == LossKind::MSE) {
    for (std::size_t i = 0; i < output.size(); ++i) {
      const double d = output[i] - labels[i];
      total += d * d;
    }
    return total / static_cast<double>(output.size());
  }
  for (std::size_t i = 0; i < output.size(); ++i) {
    if (labels[i] != 0.0) total -= labels[i] * std::log(std::clamp(output[i], kProbabilityFloor, 1.0));
  }
  return total / n;
}

/// dL/d(output) for the loss above.
inline Tensor loss_gradient(const Tensor& output, const Tensor& labels, LossKind kind) {
  require_same_shape(output, labels, "loss_gradient");
  Tensor g(output.shape());
  if (kind == LossKind::MSE) {
    const double scale = 2.0 / static_cast<double>(output.size());
    for (std::size_t i = 0; i < output.size(); ++i) g[i] = scale * (output[i] - labels[i]);
    return g;
  }
  const double n = static_cast<double>(output.rows());
  for (std::size_t i = 0; i < output.size(); ++i) {
    const double p = output[i];
    g[i] = (labels[i] == 0.0 || p < kProbabilityFloor || p > 1.0) ? 0.0 : -labels[i] / (p * n);
  }
  return g;
}

// ---------------------------------------------------------------------------
// Backward pass

/// Backpropagates `seed` = dL/d(output of layer `seed_layer`) down to the input.
/// Layers after `seed_layer` receive zero gradient. The ReLU derivative is
/// taken as 0 whenever the pre-activation is <= 0.
inline Gradient backpropagate(const Architecture& arch, const ParamSet& params, const ForwardCache& cache,
                              std::size_t seed_layer, Tensor seed) {
  if (seed_layer >= arch.size()) throw ArgumentError("backpropagate: seed layer out of range");
  require_same_shape(seed, cache.output_of(seed_layer), "backpropagate seed");
  Gradient grad = ParamSet::zeros(arch);
  Tensor delta = std::move(seed);

  for (std::size_t l = seed_layer + 1; l-- > 0;) {
    const auto& spec = arch[l];
    const Tensor& x = cache.input_of(l);
    const std::size_t n = x.rows();
    if (const auto* d = std::get_if<DenseSpec>(&spec)) {
      grad.tensor(l, 0) = matmul_transpose_a(x, delta);
      if (d->has_bias) {
        auto& gb = grad.tensor(l, 1);
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < d->out_dim; ++j) gb[j] += delta.at(i, j);
      }
      if (l > 0) delta = matmul_transpose_b(delta, params.tensor(l, 0));
    } else if (const auto* ln = std::get_if<LayerNormSpec>(&spec)) {
      const std::size_t k = ln->dim;
      const auto& gamma = params.tensor(l, 0);
      const auto& xhat = cache.normalized[l];
      const auto& rstd = cache.inv_std[l];
      auto& ggamma = grad.tensor(l, 0);
      auto& gbeta = grad.tensor(l, 1);
      Tensor dx({n, k});
      for (std::size_t i = 0; i < n; ++i) {
        double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
        for (std::size_t j = 0; j < k; ++j) {
          const double dy = delta.at(i, j);
          ggamma[j] += dy * xhat.at(i, j);
          gbeta[j] += dy;
          const double dxh = dy * gamma[j];
          mean_dxhat += dxh;
          mean_dxhat_xhat += dxh * xhat.at(i, j);
        }
        mean_dxhat /= static_cast<double>(k);
        mean_dxhat_xhat /= static_cast<double>(k);
        for (std::size_t j = 0; j < k; ++j) {
          const double dxh = delta.at(i, j) * gamma[j];
          dx.at(i, j) = rstd[i] * (dxh - mean_dxhat - xhat.at(i, j) * mean_dxhat_xhat);
        }
      }
      delta = std::move(dx);
    } else {
      const auto fn = std::get<ActivationSpec>(spec).fn;
      const Tensor& y = cache.output_of(l);
      auto& dv = delta.storage();
      switch (fn) {
        case ActivationFn::ReLU:
          for (std::size_t i = 0; i < dv.size(); ++i) dv[i] = x[i] > 0.0 ? dv[i] : 0.0;
          break;
        case ActivationFn::Sigmoid:
          for (std::size_t i = 0; i < dv.size(); ++i) dv[i] *= y[i] * (1.0 - y[i]);
          break;
        case ActivationFn::Softmax:
          for (std::size_t i = 0; i < n; ++i) {
            auto d = delta.row(i);
            auto s = y.row(i);
            double dot = 0.0;
            for (std::size_t j = 0; j < d.size(); ++j) dot += d[j] * s[j];
            for (std::size_t j = 0; j < d.size(); ++j) d[j] = s[j] * (d[j] - dot);
          }
          break;
        case ActivationFn::Identity:
          break;
      }
    }
  }
  return grad;
}

struct LossAndGradient {
  double loss = 0.0;
  Gradient grad;
};

/// Exact analytic gradient of the batch-mean loss.
inline LossAndGradient backward(const Architecture& arch, const ParamSet& params, const Batch& batch,
                                LossKind kind) {
  batch.validate();
  const ForwardCache cache = forward(arch, params, batch.inputs);
  const Tensor& out = cache.output();
  const double value = loss(out, batch.labels, kind);

  // Softmax followed by cross-entropy: seed the pre-softmax delta (p - y) / n directly.
  const std::size_t last = arch.size() - 1;
  if (kind == LossKind::CrossEntropy && is_activation(arch[last], ActivationFn::Softmax) && last > 0) {
    Tensor seed(out.shape());
    const double n = static_cast<double>(out.rows());
    for (std::size_t i = 0; i < out.size(); ++i) seed[i] = (out[i] - batch.labels[i]) / n;
    return {value, backpropagate(arch, params, cache, last - 1, std::move(seed))};
  }
  return {value, backpropagate(arch, params, cache, last, loss_gradient(out, batch.labels, kind))};
}

inline double batch_loss(const Architecture& arch, const ParamSet& params, const Batch& batch, LossKind kind) {
  return loss(predict(arch, params, batch.inputs), batch.labels, kind);
}

/// Central-difference gradient, one scalar at a time. Test oracle only.
inline Gradient finite_diff_gradient(const Architecture& arch, const ParamSet& params, const Batch& batch,
                                     LossKind kind, double h = 1e-5) {
  if (!(h > 0.0)) throw ArgumentError("finite_diff_gradient: step must be positive");
  batch.validate();
  Gradient grad = ParamSet::zeros(arch);
  ParamSet probe = params;
  probe.for_each_tensor([&](std::size_t l, std::size_t t, Tensor& tensor) {
    for (std::size_t i = 0; i < tensor.size(); ++i) {
      const double orig = tensor[i];
      tensor[i] = orig + h;
      const double up = batch_loss(arch, probe, batch, kind);
      tensor[i] = orig - h;
      const double down = batch_loss(arch, probe, batch, kind);
      tensor[i] = orig;
      grad.tensor(l, t)[i] = (up - down) / (2.0 * h);
    }
  });
  return grad;
}

}  // namespace secagg_lab::nn
