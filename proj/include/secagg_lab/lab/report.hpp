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

#include <charconv>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "secagg_lab/checkpoint.hpp"
#include "secagg_lab/round.hpp"
#include "secagg_lab/secure_agg.hpp"

namespace secagg_lab::lab {

using ojson = nlohmann::ordered_json;

/// Shortest round-trip decimal form of a double.
inline std::string fmt_double(double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

inline std::string digest_hex(const nn::ParamSet& p) { return sa::to_hex(sa::param_digest(p)); }

inline ojson events_json(const std::vector<fl::DefenseEvent>& events) {
  ojson arr = ojson::array();
  for (const auto& e : events) {
    arr.push_back({{"defense", e.defense}, {"verdict", e.verdict}, {"offending_users", e.offending_users}});
  }
  return arr;
}

/// One transcript line: everything observable except raw share values.
inline ojson transcript_json(const fl::RoundTranscript& tr) {
  ojson users = ojson::array();
  for (const auto& u : tr.users) {
    users.push_back({{"id", u.id},
                     {"params_digest", sa::to_hex(u.sent_digest)},
                     {"batch_count", u.batch_count},
                     {"withheld", u.withheld},
                     {"share_sent", u.share.has_value() || (!tr.sa_enabled && u.clear_update.has_value())}});
  }
  ojson messages = ojson::object();
  for (const auto& phase : tr.bus.phases()) messages[phase] = tr.bus.count(phase);
  ojson j;
  j["round"] = tr.round;
  j["mode"] = fl::to_string(tr.mode);
  j["sa_enabled"] = tr.sa_enabled;
  j["conditional_sa"] = tr.conditional_sa;
  j["users"] = users;
  j["aggregate_digest"] = tr.aggregate ? ojson(digest_hex(*tr.aggregate)) : ojson(nullptr);
  j["new_params_digest"] = tr.new_params ? ojson(digest_hex(*tr.new_params)) : ojson(nullptr);
  j["events"] = events_json(tr.events);
  j["aborted_by"] = tr.aborted_by ? ojson(*tr.aborted_by) : ojson(nullptr);
  j["messages"] = messages;
  return j;
}

/// Row-oriented CSV with a fixed header; cells are written as given.
class CsvTable {
 public:
  explicit CsvTable(std::vector<std::string> header) : header_(std::move(header)) {}

  void add(std::vector<std::string> row) {
    if (row.size() != header_.size()) throw Error("csv row has " + std::to_string(row.size()) + " cells, expected " +
                                                  std::to_string(header_.size()));
    rows_.push_back(std::move(row));
  }
  std::size_t size() const { return rows_.size(); }
  const std::vector<std::vector<std::string>>& rows() const { return rows_; }

  std::string str() const {
    std::string out;
    auto line = [&](const std::vector<std::string>& cells) {
      for (std::size_t i = 0; i < cells.size(); ++i) {
        if (i) out += ',';
        out += cells[i];
      }
      out += '\n';
    };
    line(header_);
    for (const auto& r : rows_) line(r);
    return out;
  }

 private:
  std::vector<std::string> header_;
  std::vector<std::vector<std::string>> rows_;
};

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot write " + path.string());
  f << text;
  if (!f) throw Error("write failed for " + path.string());
}

}  // namespace secagg_lab::lab
