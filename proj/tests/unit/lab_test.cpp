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

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "secagg_lab/data.hpp"
#include "secagg_lab/lab/config.hpp"
#include "secagg_lab/lab/scenarios.hpp"
#include "secagg_lab/rng.hpp"
#include "secagg_lab/stats.hpp"

namespace {

using namespace secagg_lab;
using lab::ConfigError;
using lab::parse_config_text;

std::string error_of(const std::string& text) {
  try {
    parse_config_text(text, "cfg.json");
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

TEST(Config, Defaults) {
  const auto c = parse_config_text("{}");
  EXPECT_EQ(c.round.mode, fl::Mode::FedSGD);
  EXPECT_EQ(c.users, 100u);
  EXPECT_EQ(c.round.sa.ring.frac_bits, 24u);
  EXPECT_EQ(c.round.sa.ring.modulus_bits, 64u);
  EXPECT_FALSE(c.round.defenses.any());
  EXPECT_EQ(c.attack.xi.layer, 3u);
  EXPECT_EQ(c.attack.xi.channel, 0u);
}

TEST(Config, FullExample) {
  const auto c = parse_config_text(R"({
    "mode": "fedavg", "k": 3, "eta": 0.2, "users": 12, "weighting": "sample_weighted",
    "defenses": ["signed_echo", "conditional_sa"], "echo_payload": "full",
    "sa": {"frac_bits": 20},
    "attack": {"kind": "canary", "xi": {"layer": 3, "channel": 5}, "batch_sizes": [2, 4]},
    "inversion": {"distance": "cosine", "steps": 50}
  })");
  EXPECT_EQ(c.round.mode, fl::Mode::FedAVG);
  EXPECT_EQ(c.round.k, 3u);
  EXPECT_EQ(c.round.weighting, fl::FedAvgWeighting::SampleWeighted);
  EXPECT_TRUE(c.round.defenses.signed_echo);
  EXPECT_TRUE(c.round.defenses.conditional_sa);
  EXPECT_FALSE(c.round.defenses.zero_update_guard.enabled);
  EXPECT_EQ(c.round.defenses.echo_payload, fl::EchoPayload::FullParameters);
  EXPECT_EQ(c.round.sa.ring.frac_bits, 20u);
  EXPECT_EQ(c.attack.xi.channel, 5u);
  EXPECT_EQ(c.attack.batch_sizes, (std::vector<std::size_t>{2, 4}));
  EXPECT_EQ(c.inversion.optimizer.steps, 50u);
}

TEST(Config, SyntaxErrorsCarryLineAndColumn) {
  const auto msg = error_of("{\n  \"users\": 4,\n  \"mode\" \"fedsgd\"\n}");
  EXPECT_NE(msg.find("cfg.json:3:"), std::string::npos) << msg;
}

TEST(Config, FieldErrorsNameThePath) {
  EXPECT_NE(error_of(R"({"users": "many"})").find("field 'users'"), std::string::npos);
  EXPECT_NE(error_of(R"({"sa": {"frac_bits": -3}})").find("field 'sa.frac_bits'"), std::string::npos);
  EXPECT_NE(error_of(R"({"attack": {"xi": {"channel": 1.5}}})").find("field 'attack.xi.channel'"), std::string::npos);
  EXPECT_NE(error_of(R"({"defenses": ["firewall"]})").find("defenses[0]"), std::string::npos);
  EXPECT_NE(error_of(R"({"mode": "fedprox"})").find("mode"), std::string::npos);
}

TEST(Config, UnknownKeysRejected) {
  EXPECT_NE(error_of(R"({"userz": 3})").find("field 'userz': unknown field"), std::string::npos);
  EXPECT_NE(error_of(R"({"data": {"dim": 3}})").find("field 'data.dim'"), std::string::npos);
}

TEST(Config, SemanticChecks) {
  EXPECT_FALSE(error_of(R"({"eta": 0})").empty());
  EXPECT_FALSE(error_of(R"({"users": 4, "attack": {"target": 4}})").empty());
  EXPECT_FALSE(error_of(R"({"data": {"source": "csv"}})").empty());
  EXPECT_FALSE(error_of(R"({"attack": {"pool": 8, "batch_sizes": [16]}})").empty());
  EXPECT_THROW(lab::load_config("/nonexistent/config.json"), ConfigError);
}

TEST(Config, CustomArchitecture) {
  const auto c = parse_config_text(R"({"arch": [
    {"type": "dense", "in": 16, "out": 8}, {"type": "activation", "fn": "relu"},
    {"type": "dense", "in": 8, "out": 4, "bias": false}, {"type": "activation", "fn": "softmax"}]})");
  ASSERT_TRUE(c.custom_arch);
  EXPECT_EQ(c.custom_arch->size(), 4u);
  EXPECT_EQ(lab::experiment_architecture(c).size(), 4u);
  EXPECT_FALSE(error_of(R"({"arch": [{"type": "conv"}]})").empty());
}

TEST(Config, ShippedExamplesParse) {
  std::size_t n = 0;
  for (const auto& e : std::filesystem::directory_iterator(SECAGG_LAB_CONFIG_DIR)) {
    if (e.path().extension() != ".json") continue;
    EXPECT_NO_THROW(lab::make_experiment(lab::load_config(e.path().string()))) << e.path();
    ++n;
  }
  EXPECT_GE(n, 5u);
}

// ---------------------------------------------------------------------------
// Data

TEST(Data, CsvRoundTripIsBitExact) {
  auto d = data::sample_mixture({5, 3, 2.0, 1.0, 9}, 40, 10);
  data::standardize(d.inputs);
  std::stringstream ss;
  data::write_csv(ss, d);
  const auto back = data::parse_csv(ss);
  EXPECT_EQ(back.inputs, d.inputs);
  EXPECT_EQ(back.classes, d.classes);
}

TEST(Data, RaggedCsvNamesTheLine) {
  std::stringstream ss("0,1.0,2.0\n1,3.0,4.0\n\n2,5.0\n");
  try {
    data::parse_csv(ss, "rows.csv");
    FAIL() << "expected a parse error";
  } catch (const data::ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("rows.csv:4"), std::string::npos) << e.what();
  }
  std::stringstream bad("x,1.0\n");
  EXPECT_THROW(data::parse_csv(bad), data::ParseError);
  std::stringstream empty("");
  EXPECT_THROW(data::parse_csv(empty), data::ParseError);
}

TEST(Data, StandardizeMomentsAndConstantColumns) {
  Tensor x = Tensor::matrix({{1, 5}, {3, 5}, {5, 5}});
  data::standardize(x);
  EXPECT_NEAR(x.at(0, 0) + x.at(1, 0) + x.at(2, 0), 0.0, 1e-15);
  EXPECT_NEAR(x.at(0, 0) * x.at(0, 0) + x.at(1, 0) * x.at(1, 0) + x.at(2, 0) * x.at(2, 0), 3.0, 1e-12);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_TRUE(std::isfinite(x.at(i, 1)));
}

TEST(Data, SynthPartitionIsDisjointAndSized) {
  const auto p = data::synthesize({10, 50, {}});
  ASSERT_EQ(p.users.size(), 10u);
  EXPECT_EQ(p.pooled.size(), 500u);
  for (std::size_t u = 0; u < 10; ++u) {
    ASSERT_EQ(p.users[u].size(), 50u);
    EXPECT_EQ(p.users[u].inputs, p.pooled.slice(u * 50, 50).inputs);
  }
}

TEST(Data, CsvPartitionForExperiments) {
  const auto dir = std::filesystem::temp_directory_path() / "secagg_lab_csv_test";
  std::filesystem::create_directories(dir);
  auto d = data::sample_mixture({16, 4, 2.0, 1.0, 3}, 120, 4);
  data::write_csv((dir / "d.csv").string(), d);
  const auto p = data::load_csv_partition((dir / "d.csv").string(), 6);
  EXPECT_EQ(p.users.size(), 6u);
  EXPECT_EQ(p.users[0].size(), 20u);
  auto c = parse_config_text(R"({"users": 4, "data": {"source": "csv", "path": ")" + (dir / "d.csv").string() + R"("}})");
  EXPECT_EQ(lab::make_experiment(c).partition.users.size(), 4u);
  c.custom_arch = lab::default_architecture(8, 4);
  c.arch_name = "custom";
  EXPECT_THROW(lab::make_experiment(c), ConfigError);
  std::filesystem::remove_all(dir);
}

// ---------------------------------------------------------------------------
// Rank correlation

std::vector<double> average_ranks(const std::vector<double>& x) {
  std::vector<double> r(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    double below = 0, equal = 0;
    for (double y : x) {
      below += y < x[i];
      equal += y == x[i];
    }
    r[i] = below + (equal + 1) / 2;
  }
  return r;
}

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  const double n = static_cast<double>(a.size());
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) ma += a[i] / n, mb += b[i] / n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

TEST(Spearman, KnownValues) {
  const std::vector<double> a{1, 2, 3, 4, 5};
  EXPECT_NEAR(stats::spearman(a, std::vector<double>{2, 1, 4, 3, 5}), 0.8, 1e-12);
  EXPECT_NEAR(stats::spearman(a, std::vector<double>{10, 20, 30, 40, 50}), 1.0, 1e-12);
  EXPECT_NEAR(stats::spearman(a, std::vector<double>{5, 4, 3, 2, 1}), -1.0, 1e-12);
}

TEST(Spearman, MatchesRankPearsonWithTies) {
  Rng rng = make_rng(8);
  std::uniform_int_distribution<int> level(0, 6);
  for (int t = 0; t < 50; ++t) {
    std::vector<double> a(40), b(40);
    for (std::size_t i = 0; i < a.size(); ++i) {
      a[i] = level(rng);
      b[i] = level(rng) + 0.25 * a[i];
    }
    EXPECT_NEAR(stats::spearman(a, b), pearson(average_ranks(a), average_ranks(b)), 1e-12);
  }
}

// ---------------------------------------------------------------------------
// Scenario outputs

lab::ExperimentConfig small(const std::string& extra = "") {
  return parse_config_text(R"({"users": 6, "rounds": 4, "seed": 3, "data": {"per_user": 20, "test_size": 100})" + extra + "}");
}

TEST(Scenarios, SparsityCsvShape) {
  auto r = lab::run_sparsity(small());
  const auto text = r.table("sparsity.csv").str();
  EXPECT_EQ(text.substr(0, text.find('\n')), "round,accuracy,sparsity");
  const auto& rows = r.table("sparsity.csv").rows();
  ASSERT_EQ(rows.size(), 4u);
  EXPECT_EQ(rows[0][0], "0");
  EXPECT_LT(std::stod(rows[0][2]), 0.1);
  EXPECT_TRUE(r.summary.contains("spearman_round_sparsity"));
}

TEST(Scenarios, OutputsAreReproducible) {
  const auto dir = std::filesystem::temp_directory_path() / "secagg_lab_repro";
  std::filesystem::remove_all(dir);
  auto read = [](const std::filesystem::path& p) {
    std::ifstream f(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(f), {});
  };
  for (int run = 0; run < 2; ++run) {
    lab::write_report(lab::run_sparsity(small()), dir / std::to_string(run), "sparsity");
    lab::write_report(lab::run_suppress(small()), dir / std::to_string(run), "suppress");
  }
  for (const char* f : {"sparsity.csv", "suppress.csv", "suppress_transcript.jsonl"}) {
    const auto a = read(dir / "0" / f);
    EXPECT_FALSE(a.empty()) << f;
    EXPECT_EQ(a, read(dir / "1" / f)) << f;
  }
  EXPECT_TRUE(std::filesystem::exists(dir / "0" / "suppress_summary.json"));
  std::filesystem::remove_all(dir);
}

TEST(Scenarios, SuppressRecoversUndefended) {
  auto r = lab::run_suppress(small());
  EXPECT_TRUE(r.ok);
  EXPECT_EQ(r.summary["status"], "recovered");
  for (const auto& row : r.table("suppress.csv").rows()) EXPECT_EQ(row[7], "recovered");
}

TEST(Scenarios, SuppressBlockedByConditionalSa) {
  auto r = lab::run_suppress(small(R"(, "defenses": ["conditional_sa"])"));
  EXPECT_EQ(r.summary["status"], "attack_blocked");
  for (const auto& row : r.table("suppress.csv").rows()) {
    EXPECT_EQ(row[7], "attack_blocked");
    EXPECT_EQ(row[8], "conditional_sa");
  }
}

TEST(Scenarios, SuppressFedAvgOnTinyModel) {
  auto r = lab::run_suppress(small(R"(, "mode": "fedavg", "k": 2, "arch": "tiny", "loss": "mse")"));
  EXPECT_EQ(r.summary["status"], "recovered");
}

TEST(Scenarios, InvertTable) {
  auto c = small(R"(, "inversion": {"trials": 2})");
  auto r = lab::run_invert(c);
  EXPECT_EQ(r.table("invert.csv").size(), 2u);
}

}  // namespace
