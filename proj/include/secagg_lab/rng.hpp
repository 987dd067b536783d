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
#include <cstdint>
#include <numeric>
#include <random>
#include <vector>

#include "secagg_lab/nn.hpp"

namespace secagg_lab {

/// splitmix64 finalizer; derives independent child seeds from (seed, stream).
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream = 0) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

using Rng = std::mt19937_64;

inline Rng make_rng(std::uint64_t seed, std::uint64_t stream = 0) { return Rng(mix_seed(seed, stream)); }

inline double uniform(Rng& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }
inline double gaussian(Rng& rng, double mean = 0.0, double stddev = 1.0) {
  return std::normal_distribution<double>(mean, stddev)(rng);
}

inline Tensor uniform_tensor(Rng& rng, Shape shape, double lo, double hi) {
  Tensor t(std::move(shape));
  for (double& v : t.storage()) v = uniform(rng, lo, hi);
  return t;
}

inline Tensor gaussian_tensor(Rng& rng, Shape shape, double stddev = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.storage()) v = gaussian(rng, 0.0, stddev);
  return t;
}

/// `count` distinct indices from [0, n), uniformly without replacement.
inline std::vector<std::size_t> sample_without_replacement(Rng& rng, std::size_t n, std::size_t count) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  count = std::min(count, n);
  for (std::size_t i = 0; i < count; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, n - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  idx.resize(count);
  return idx;
}

namespace nn {

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) kernels and biases; LayerNorm scale 1, shift 0.
inline ParamSet init_params(const Architecture& arch, Rng& rng) {
  ParamSet p = ParamSet::zeros(arch);
  for (std::size_t l = 0; l < arch.size(); ++l) {
    if (const auto* d = std::get_if<DenseSpec>(&arch[l])) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(d->in_dim));
      for (double& v : p.tensor(l, 0).storage()) v = uniform(rng, -bound, bound);
      if (d->has_bias)
        for (double& v : p.tensor(l, 1).storage()) v = uniform(rng, -bound, bound);
    } else if (is_layer_norm(arch[l])) {
      for (double& v : p.tensor(l, 0).storage()) v = 1.0;
    }
  }
  return p;
}

inline ParamSet init_params(const Architecture& arch, std::uint64_t seed) {
  Rng rng = make_rng(seed, 0x1417);
  return init_params(arch, rng);
}

}  // namespace nn
}  // namespace secagg_lab
