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

#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "secagg_lab/nn.hpp"
#include "secagg_lab/rng.hpp"

namespace secagg_lab::data {

class ParseError : public Error {
 public:
  using Error::Error;
};

/// Examples as rows: inputs (m x dims), label rows (one-hot, or any target rows), class ids.
struct Dataset {
  Tensor inputs;
  Tensor labels;
  std::vector<std::size_t> classes;

  std::size_t size() const { return classes.size(); }
  std::size_t dims() const { return inputs.cols(); }
  std::size_t num_classes() const { return labels.cols(); }

  Tensor example(std::size_t i) const {
    auto r = inputs.row(i);
    return Tensor({1, r.size()}, std::vector<double>(r.begin(), r.end()));
  }

  nn::Batch batch(std::span<const std::size_t> rows) const {
    if (rows.empty()) throw ArgumentError("batch: empty row selection");
    const std::size_t d = dims(), c = num_classes();
    Tensor x({rows.size(), d}), y({rows.size(), c});
    for (std::size_t i = 0; i < rows.size(); ++i) {
      auto src = inputs.row(rows[i]);
      std::copy(src.begin(), src.end(), x.row(i).begin());
      auto lab = labels.row(rows[i]);
      std::copy(lab.begin(), lab.end(), y.row(i).begin());
    }
    return {std::move(x), std::move(y)};
  }

  nn::Batch all() const {
    std::vector<std::size_t> rows(size());
    std::iota(rows.begin(), rows.end(), std::size_t{0});
    return batch(rows);
  }

  Dataset subset(std::span<const std::size_t> rows) const {
    Dataset out;
    const nn::Batch b = batch(rows);
    out.inputs = b.inputs;
    out.labels = b.labels;
    for (auto r : rows) out.classes.push_back(classes[r]);
    return out;
  }

  Dataset slice(std::size_t begin, std::size_t count) const {
    std::vector<std::size_t> rows(count);
    std::iota(rows.begin(), rows.end(), begin);
    return subset(rows);
  }
};

/// Binary regression targets: one label column holding the class (0 or 1).
inline Dataset make_binary_dataset(Tensor inputs, std::vector<std::size_t> classes) {
  if (inputs.rows() != classes.size()) throw DimensionError("dataset: inputs and labels disagree on length");
  Dataset d;
  d.labels = Tensor({classes.size(), 1});
  for (std::size_t i = 0; i < classes.size(); ++i) {
    if (classes[i] > 1) throw ArgumentError("binary dataset: class must be 0 or 1");
    d.labels[i] = static_cast<double>(classes[i]);
  }
  d.inputs = std::move(inputs);
  d.classes = std::move(classes);
  return d;
}

inline Dataset make_dataset(Tensor inputs, std::vector<std::size_t> classes, std::size_t num_classes) {
  if (inputs.rows() != classes.size()) throw DimensionError("dataset: inputs and labels disagree on length");
  Dataset d;
  d.labels = nn::one_hot(classes, num_classes);
  d.inputs = std::move(inputs);
  d.classes = std::move(classes);
  return d;
}

/// Per-dimension zero mean / unit variance (population variance; constant columns are only centred).
inline void standardize(Tensor& x) {
  const std::size_t m = x.rows(), d = x.cols();
  for (std::size_t j = 0; j < d; ++j) {
    double mean = 0.0;
    for (std::size_t i = 0; i < m; ++i) mean += x.at(i, j);
    mean /= static_cast<double>(m);
    double var = 0.0;
    for (std::size_t i = 0; i < m; ++i) var += (x.at(i, j) - mean) * (x.at(i, j) - mean);
    var /= static_cast<double>(m);
    const double sd = var > 0.0 ? std::sqrt(var) : 1.0;
    for (std::size_t i = 0; i < m; ++i) x.at(i, j) = (x.at(i, j) - mean) / sd;
  }
}

/// Gaussian mixture: class centres ~ N(0, center_scale^2 I), points = centre + N(0, noise^2 I).
struct MixtureSpec {
  std::size_t dims = 16;
  std::size_t classes = 4;
  double center_scale = 2.0;
  double noise = 1.0;
  std::uint64_t seed = 1;
};

/// Raw (unstandardized) samples, labels drawn uniformly.
inline Dataset sample_mixture(const MixtureSpec& spec, std::size_t count, std::uint64_t sample_seed) {
  if (count == 0 || spec.dims == 0 || spec.classes == 0) throw ArgumentError("mixture: empty specification");
  Rng center_rng = make_rng(spec.seed, 0xC3);
  Tensor centers = gaussian_tensor(center_rng, {spec.classes, spec.dims}, spec.center_scale);
  Rng rng = make_rng(sample_seed, 0x5A);
  Tensor x({count, spec.dims});
  std::vector<std::size_t> cls(count);
  std::uniform_int_distribution<std::size_t> pick(0, spec.classes - 1);
  for (std::size_t i = 0; i < count; ++i) {
    cls[i] = pick(rng);
    for (std::size_t j = 0; j < spec.dims; ++j) x.at(i, j) = centers.at(cls[i], j) + gaussian(rng, 0.0, spec.noise);
  }
  return make_dataset(std::move(x), std::move(cls), spec.classes);
}

struct SynthSpec {
  std::size_t users = 10;
  std::size_t per_user = 50;
  MixtureSpec mixture;
};

struct Partition {
  std::vector<Dataset> users;
  Dataset pooled;
};

/// Contiguous split of `pooled` into `users` parts of `per_user` rows.
inline Partition partition(Dataset pooled, std::size_t users, std::size_t per_user) {
  if (users == 0 || per_user == 0) throw ArgumentError("partition: empty users");
  if (pooled.size() < users * per_user) throw ArgumentError("partition: not enough rows for every user");
  Partition p;
  for (std::size_t u = 0; u < users; ++u) p.users.push_back(pooled.slice(u * per_user, per_user));
  p.pooled = std::move(pooled);
  return p;
}

inline Partition synthesize(const SynthSpec& spec, bool standardized = true) {
  Dataset all = sample_mixture(spec.mixture, spec.users * spec.per_user, spec.mixture.seed);
  if (standardized) standardize(all.inputs);
  return partition(std::move(all), spec.users, spec.per_user);
}

// ---------------------------------------------------------------------------
// CSV: label,feat1,...,featK

inline Dataset parse_csv(std::istream& in, const std::string& source = "<csv>") {
  std::vector<double> values;
  std::vector<std::size_t> labels;
  std::size_t width = 0, line_no = 0, max_label = 0;
  std::string line;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    for (std::string f; std::getline(ss, f, ',');) fields.push_back(f);
    if (fields.size() < 2) throw ParseError(source + ":" + std::to_string(line_no) + ": expected label and features");
    if (width == 0) {
      width = fields.size() - 1;
    } else if (fields.size() - 1 != width) {
      throw ParseError(source + ":" + std::to_string(line_no) + ": expected " + std::to_string(width) +
                       " features, found " + std::to_string(fields.size() - 1));
    }
    std::size_t label = 0;
    const auto& lf = fields[0];
    if (auto [p, ec] = std::from_chars(lf.data(), lf.data() + lf.size(), label); ec != std::errc() || p != lf.data() + lf.size()) {
      throw ParseError(source + ":" + std::to_string(line_no) + ": bad label '" + lf + "'");
    }
    labels.push_back(label);
    max_label = std::max(max_label, label);
    for (std::size_t k = 1; k < fields.size(); ++k) {
      double v = 0.0;
      const auto& f = fields[k];
      if (auto [p, ec] = std::from_chars(f.data(), f.data() + f.size(), v); ec != std::errc() || p != f.data() + f.size()) {
        throw ParseError(source + ":" + std::to_string(line_no) + ": bad feature '" + f + "'");
      }
      values.push_back(v);
    }
  }
  if (labels.empty()) throw ParseError(source + ": no rows");
  const std::size_t m = labels.size();
  return make_dataset(Tensor({m, width}, std::move(values)), std::move(labels), max_label + 1);
}

inline Dataset read_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ParseError("cannot open " + path);
  return parse_csv(f, path);
}

/// Writes with round-trip precision so that re-reading yields identical doubles.
inline void write_csv(std::ostream& out, const Dataset& d) {
  out << std::setprecision(17);
  for (std::size_t i = 0; i < d.size(); ++i) {
    out << d.classes[i];
    for (double v : d.inputs.row(i)) out << ',' << v;
    out << '\n';
  }
}

inline void write_csv(const std::string& path, const Dataset& d) {
  std::ofstream f(path);
  if (!f) throw Error("cannot open " + path + " for writing");
  write_csv(f, d);
}

/// CSV rows split contiguously across users after standardization.
inline Partition load_csv_partition(const std::string& path, std::size_t users, bool standardized = true) {
  Dataset all = read_csv(path);
  if (users == 0 || all.size() < users) throw ArgumentError("load_dataset: fewer rows than users");
  if (standardized) standardize(all.inputs);
  const std::size_t per_user = all.size() / users;
  return partition(std::move(all), users, per_user);
}

}  // namespace secagg_lab::data
