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

#include <gsl/gsl_statistics_double.h>

#include <span>
#include <vector>

#include "secagg_lab/tensor.hpp"

namespace secagg_lab::stats {

/// Spearman rank correlation (ties get average ranks).
inline double spearman(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.size() < 2) throw ArgumentError("spearman: need two equal-length series of >= 2 points");
  std::vector<double> work(2 * a.size());
  return gsl_stats_spearman(a.data(), 1, b.data(), 1, a.size(), work.data());
}

inline double mean(std::span<const double> xs) {
  if (xs.empty()) return 0.0;
  return gsl_stats_mean(xs.data(), 1, xs.size());
}

}  // namespace secagg_lab::stats
