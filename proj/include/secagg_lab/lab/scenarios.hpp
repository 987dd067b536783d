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
#include <chrono>
#include <cmath>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "secagg_lab/attacks/canary.hpp"
#include "secagg_lab/attacks/inversion.hpp"
#include "secagg_lab/attacks/suppression.hpp"
#include "secagg_lab/data.hpp"
#include "secagg_lab/defended_round.hpp"
#include "secagg_lab/lab/config.hpp"
#include "secagg_lab/lab/report.hpp"
#include "secagg_lab/parallel.hpp"
#include "secagg_lab/rng.hpp"
#include "secagg_lab/round.hpp"
#include "secagg_lab/stats.hpp"

namespace secagg_lab::lab {

/// Output of one command: CSV tables by file name, JSON-lines transcripts and a
/// JSON summary. Only the summary carries wall time, so CSVs are reproducible.
struct ScenarioReport {
  std::vector<std::pair<std::string, CsvTable>> tables;
  std::vector<ojson> transcripts;
  ojson summary = ojson::object();
  bool ok = true;

  CsvTable& table(const std::string& name) {
    for (auto& [n, t] : tables)
      if (n == name) return t;
    throw Error("no table " + name);
  }
};

inline void write_report(const ScenarioReport& r, const std::filesystem::path& dir, const std::string& scenario) {
  for (const auto& [name, table] : r.tables) write_text(dir / name, table.str());
  if (!r.transcripts.empty()) {
    std::string lines;
    for (const auto& t : r.transcripts) lines += t.dump() + "\n";
    write_text(dir / (scenario + "_transcript.jsonl"), lines);
  }
  write_text(dir / (scenario + "_summary.json"), r.summary.dump(2) + "\n");
}

namespace detail {

using Clock = std::chrono::steady_clock;

inline double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

inline data::Dataset to_binary(const data::Dataset& d) {
  for (auto c : d.classes)
    if (c > 1) throw ArgumentError("single-output architectures need a two-class dataset");
  return data::make_binary_dataset(d.inputs, d.classes);
}

}  // namespace detail

struct Experiment {
  nn::Architecture arch;
  data::Partition partition;
  data::Dataset test;
};

/// Users' data plus a held-out test split, standardized together. Architectures
/// with a single output get binary regression targets.
inline Experiment make_experiment(const ExperimentConfig& c) {
  Experiment e;
  e.arch = experiment_architecture(c);
  const bool binary = e.arch.output_dim() == 1;
  data::MixtureSpec mix = c.data.mixture;
  if (c.arch_name == "tiny" && !c.custom_arch) {
    mix.dims = 2;
    mix.classes = 2;
  }
  if (c.data.source == "csv") {
    e.partition = data::load_csv_partition(c.data.path, c.users);
    e.test = e.partition.pooled;
  } else {
    data::Dataset all = data::sample_mixture(mix, c.users * c.data.per_user + c.data.test_size, mix.seed);
    data::standardize(all.inputs);
    const std::size_t train = c.users * c.data.per_user;
    e.test = all.slice(train, c.data.test_size);
    e.partition = data::partition(all.slice(0, train), c.users, c.data.per_user);
  }
  if (binary) {
    for (auto& u : e.partition.users) u = detail::to_binary(u);
    e.test = detail::to_binary(e.test);
  }
  if (e.test.dims() != e.arch.input_dim()) {
    throw ConfigError("data has " + std::to_string(e.test.dims()) + " features but the architecture expects " +
                      std::to_string(e.arch.input_dim()));
  }
  return e;
}

inline fl::World make_world(const Experiment& e, std::uint64_t seed) {
  return fl::make_world(e.arch, nn::init_params(e.arch, mix_seed(seed, 0x1A17)), e.partition.users, seed);
}

inline double accuracy(const nn::Architecture& arch, const nn::ParamSet& p, const data::Dataset& d) {
  const Tensor out = nn::predict(arch, p, d.inputs);
  std::size_t ok = 0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    std::size_t pred = 0;
    if (out.cols() == 1) {
      pred = out.at(i, 0) > 0.5 ? 1 : 0;
    } else {
      auto r = out.row(i);
      pred = static_cast<std::size_t>(std::max_element(r.begin(), r.end()) - r.begin());
    }
    ok += pred == d.classes[i] ? 1 : 0;
  }
  return static_cast<double>(ok) / static_cast<double>(d.size());
}

// ---------------------------------------------------------------------------
// suppress

inline ScenarioReport run_suppress(const ExperimentConfig& c, std::size_t threads = 1) {
  const auto t0 = detail::Clock::now();
  const Experiment e = make_experiment(c);
  fl::World world = make_world(e, c.seed);
  const std::size_t trials = std::max(c.attack.trials, c.rounds);

  std::vector<defense::DefendedOutcome> outcomes(trials);
  defense::AttackPlan plan;
  plan.kind = defense::AttackKind::Suppression;
  plan.target = c.attack.target;
  plan.policy = c.attack.target_policy;
  plan.strategy = c.attack.strategy;
  fl::RoundOptions opts;
  opts.keep_shares = false;
  // Trials are independent rounds; the pool parallelises within a round instead when there is one trial.
  const std::size_t outer = trials > 1 ? threads : 1;
  opts.threads = trials > 1 ? 1 : threads;
  parallel_for(trials, outer, [&](std::size_t t) {
    fl::World w = world;
    w.round = t;
    outcomes[t] = defense::run_defended_round(w, c.round, c.round.defenses, plan, opts);
  });

  ScenarioReport r;
  r.tables.emplace_back("suppress.csv", CsvTable({"scenario", "trial", "round", "users", "mode", "strategy", "target",
                                                  "status", "stopped_by", "recovery_error", "bound",
                                                  "recovered_digest"}));
  auto& tab = r.table("suppress.csv");
  std::size_t recovered = 0;
  double worst = 0.0;
  for (std::size_t t = 0; t < trials; ++t) {
    const auto& o = outcomes[t];
    const std::size_t n = o.transcript.users.size();
    const double bound = defense::quantization_bound(n, c.round.sa.ring);
    if (o.attack_succeeded) {
      ++recovered;
      worst = std::max(worst, o.recovery_error);
    }
    tab.add({"suppress", std::to_string(t), std::to_string(o.transcript.round), std::to_string(n),
             fl::to_string(c.round.mode), attacks::to_string(c.attack.strategy.variant), std::to_string(o.target),
             o.attack_succeeded ? "recovered" : "attack_blocked", o.stopped_by.value_or(""),
             o.recovered_update ? fmt_double(o.recovery_error) : "", fmt_double(bound),
             o.recovered_update ? digest_hex(*o.recovered_update) : ""});
    r.transcripts.push_back(transcript_json(o.transcript));
  }
  r.summary["scenario"] = "suppress";
  r.summary["trials"] = trials;
  r.summary["recovered"] = recovered;
  r.summary["status"] = recovered == trials ? "recovered" : (recovered == 0 ? "attack_blocked" : "mixed");
  r.summary["max_recovery_error"] = worst;
  r.summary["recovered_digest"] = outcomes.front().recovered_update ? ojson(digest_hex(*outcomes.front().recovered_update))
                                                                    : ojson(nullptr);
  r.summary["wall_time_s"] = detail::seconds_since(t0);
  return r;
}

// ---------------------------------------------------------------------------
// canary

struct CanaryTrialResult {
  bool injected = false;
  std::size_t steps = 0;
  double loss = 0.0;
  std::vector<attacks::CanaryCounts> per_batch;
  /// End-to-end SA rounds: detection with x_t in the target's batch and without.
  bool e2e_with = false;
  bool e2e_without = false;
  bool e2e_exact = false;
};

inline data::Dataset shadow_set(const ExperimentConfig& c) {
  data::MixtureSpec s{c.data.mixture.dims, c.shadow.classes, c.shadow.center_scale, c.shadow.noise, c.shadow.seed};
  data::Dataset d = data::sample_mixture(s, c.shadow.count, mix_seed(c.shadow.seed, 1));
  data::standardize(d.inputs);
  return d;
}

inline CanaryTrialResult run_canary_trial(const ExperimentConfig& c, const nn::Architecture& arch,
                                          const data::Dataset& shadow, std::size_t trial) {
  CanaryTrialResult res;
  const std::uint64_t ts = mix_seed(c.seed, 0xC0 + trial);
  // Private distribution: the target's pool, x_t first, then the non-targets' data.
  const std::size_t nt = c.attack.non_targets;
  const std::size_t pool_n = c.attack.pool, per = c.data.per_user;
  data::Dataset all = data::sample_mixture(c.data.mixture, 1 + pool_n + nt * per, ts);
  data::standardize(all.inputs);
  const Tensor x_t = all.example(0);
  const std::size_t x_class = all.classes[0];
  const data::Dataset pool = all.slice(1, pool_n);

  const nn::ParamSet base = nn::init_params(arch, mix_seed(ts, 1));
  attacks::CanarySpec spec;
  spec.xi = c.attack.xi;
  spec.target = x_t;
  spec.alpha_pos = c.attack.alpha_pos;
  spec.alpha_neg = c.attack.alpha_neg;
  spec.stop_loss = c.attack.stop_loss;
  spec.trainer.learning_rate = c.attack.learning_rate;
  spec.trainer.max_steps = c.attack.max_steps;
  spec.trainer.seed = mix_seed(ts, 2);
  const auto inj = attacks::inject_canary(base, arch, spec, shadow);
  res.injected = inj.converged;
  res.steps = inj.steps;
  res.loss = inj.final_loss;
  if (!res.injected) return res;

  for (auto b : c.attack.batch_sizes) {
    res.per_batch.push_back(
        attacks::evaluate_canary(arch, inj.params, c.attack.xi, x_t, x_class, pool, b, c.round.loss, c.round.sa.ring));
  }

  // End-to-end: the target holds exactly one batch (so it is the batch), non-targets get the suppressed model.
  const std::size_t b = c.attack.batch_sizes.back();
  auto e2e = [&](bool with_target) {
    std::vector<data::Dataset> users;
    data::Dataset mine = pool.slice(0, b);
    if (with_target) {
      std::copy(x_t.storage().begin(), x_t.storage().end(), mine.inputs.row(0).begin());
      for (double& v : mine.labels.row(0)) v = 0.0;
      mine.labels.at(0, x_class) = 1.0;
      mine.classes[0] = x_class;
    }
    users.push_back(std::move(mine));
    for (std::size_t u = 0; u < nt; ++u) users.push_back(all.slice(1 + pool_n + u * per, per));
    fl::World w = fl::make_world(arch, base, std::move(users), ts);
    fl::RoundConfig rc = c.round;
    rc.mode = fl::Mode::FedSGD;
    rc.batch_size = b;
    rc.active_fraction = 1.0;
    defense::AttackPlan plan;
    plan.kind = defense::AttackKind::Canary;
    plan.target = 0;
    plan.xi = c.attack.xi;
    plan.canary_params = std::make_shared<const nn::ParamSet>(inj.params);
    fl::RoundOptions opts;
    opts.keep_shares = false;
    const auto o = defense::run_defended_round(w, rc, rc.defenses, plan, opts);
    const bool fired = o.transcript.aggregate && attacks::detect_canary(*o.transcript.aggregate, c.attack.xi, rc.sa.ring);
    return std::pair{fired, o.attack_succeeded};
  };
  const auto [with, exact_with] = e2e(true);
  const auto [without, exact_without] = e2e(false);
  res.e2e_with = with;
  res.e2e_without = without;
  res.e2e_exact = exact_with && exact_without;
  return res;
}

inline ScenarioReport run_canary(const ExperimentConfig& c, std::size_t threads = 1) {
  const auto t0 = detail::Clock::now();
  const nn::Architecture arch = experiment_architecture(c);
  attacks::require_canary_site(arch, c.attack.xi);
  const data::Dataset shadow = shadow_set(c);
  const std::size_t trials = c.attack.trials;
  std::vector<CanaryTrialResult> results(trials);
  parallel_for(trials, threads, [&](std::size_t t) { results[t] = run_canary_trial(c, arch, shadow, t); });

  ScenarioReport r;
  r.tables.emplace_back("canary_trials.csv",
                        CsvTable({"scenario", "trial", "batch_size", "tp", "fp", "tn", "fn", "precision", "recall",
                                  "accuracy"}));
  r.tables.emplace_back("canary.csv", CsvTable({"batch_size", "trials", "precision", "recall", "accuracy"}));
  std::vector<attacks::CanaryCounts> per(c.attack.batch_sizes.size());
  attacks::CanaryCounts overall;
  std::size_t failures = 0, e2e_with = 0, e2e_without = 0, e2e_exact = 0;
  for (std::size_t t = 0; t < trials; ++t) {
    const auto& tr = results[t];
    if (!tr.injected) {
      ++failures;
      continue;
    }
    e2e_with += tr.e2e_with;
    e2e_without += tr.e2e_without;
    e2e_exact += tr.e2e_exact;
    for (std::size_t b = 0; b < per.size(); ++b) {
      const auto& k = tr.per_batch[b];
      per[b] += k;
      overall += k;
      r.table("canary_trials.csv")
          .add({"canary", std::to_string(t), std::to_string(c.attack.batch_sizes[b]), std::to_string(k.tp),
                std::to_string(k.fp), std::to_string(k.tn), std::to_string(k.fn), fmt_double(k.precision()),
                fmt_double(k.recall()), fmt_double(k.accuracy())});
    }
  }
  ojson by_batch = ojson::array();
  for (std::size_t b = 0; b < per.size(); ++b) {
    r.table("canary.csv")
        .add({std::to_string(c.attack.batch_sizes[b]), std::to_string(trials - failures), fmt_double(per[b].precision()),
              fmt_double(per[b].recall()), fmt_double(per[b].accuracy())});
    by_batch.push_back({{"batch_size", c.attack.batch_sizes[b]},
                        {"precision", per[b].precision()},
                        {"recall", per[b].recall()},
                        {"accuracy", per[b].accuracy()}});
  }
  r.summary["scenario"] = "canary";
  r.summary["trials"] = trials;
  r.summary["injection_failures"] = failures;
  r.summary["by_batch_size"] = by_batch;
  r.summary["overall"] = {{"precision", overall.precision()},
                          {"recall", overall.recall()},
                          {"accuracy", overall.accuracy()}};
  r.summary["end_to_end"] = {{"detected_with_target", e2e_with},
                             {"detected_without_target", e2e_without},
                             {"exact_rounds", e2e_exact},
                             {"trials", trials - failures}};
  r.summary["wall_time_s"] = detail::seconds_since(t0);
  return r;
}

// ---------------------------------------------------------------------------
// sparsity

inline ScenarioReport run_sparsity(const ExperimentConfig& c, std::size_t threads = 1) {
  const auto t0 = detail::Clock::now();
  const Experiment e = make_experiment(c);
  fl::World world = make_world(e, c.seed);
  fl::RoundConfig probe = c.round;
  probe.mode = fl::Mode::FedSGD;
  fl::RoundOptions opts;
  opts.threads = threads;
  opts.keep_shares = false;

  ScenarioReport r;
  r.tables.emplace_back("sparsity.csv", CsvTable({"round", "accuracy", "sparsity"}));
  std::vector<double> rounds, sparsity;
  for (std::size_t t = 0; t < c.rounds; ++t) {
    const auto active = fl::select_users(world, c.round);
    std::vector<double> s(active.size());
    parallel_for(active.size(), threads, [&](std::size_t i) {
      const auto g = fl::local_update(world.arch, world.params, world.user(active[i]), probe, world.round);
      s[i] = attacks::gradient_sparsity(g.payload);
    });
    const double sp = stats::mean(s);
    const double acc = accuracy(world.arch, world.params, e.test);
    r.table("sparsity.csv").add({std::to_string(t), fmt_double(acc), fmt_double(sp)});
    rounds.push_back(static_cast<double>(t));
    sparsity.push_back(sp);
    const auto tr = fl::train_round(world, c.round, opts);
    if (tr.aborted()) throw Error("honest training round " + std::to_string(t) + " aborted by " + *tr.aborted_by);
  }
  r.summary["scenario"] = "sparsity";
  r.summary["rounds"] = c.rounds;
  r.summary["spearman_round_sparsity"] = c.rounds >= 2 ? ojson(stats::spearman(rounds, sparsity)) : ojson(nullptr);
  r.summary["final_accuracy"] = accuracy(world.arch, world.params, e.test);
  r.summary["wall_time_s"] = detail::seconds_since(t0);
  return r;
}

// ---------------------------------------------------------------------------
// invert

/// Dense(dims->hidden) Sigmoid Dense(hidden->classes) Softmax.
inline nn::Architecture inversion_architecture(const InversionSettings& s) {
  nn::Architecture a;
  a.dense(s.dims, s.hidden).activation(nn::ActivationFn::Sigmoid).dense(s.hidden, s.classes);
  a.activation(nn::ActivationFn::Softmax);
  return a;
}

struct InversionTrial {
  attacks::InversionResult result;
  double mse = 0.0;
  bool success = false;
};

inline InversionTrial run_inversion_trial(const ExperimentConfig& c, std::size_t trial) {
  const auto& s = c.inversion;
  const nn::Architecture arch = inversion_architecture(s);
  const std::uint64_t ts = mix_seed(c.seed, 0x1E0 + trial);
  const nn::ParamSet p = nn::init_params(arch, mix_seed(ts, 1));
  Rng rng = make_rng(ts, 2);
  const Tensor x = gaussian_tensor(rng, {1, s.dims});
  Tensor y({1, s.classes});
  y.at(0, trial % s.classes) = 1.0;
  const auto g = nn::backward(arch, p, nn::Batch{x, y}, nn::LossKind::CrossEntropy).grad;
  attacks::InversionConfig ic = s.optimizer;
  ic.seed = mix_seed(ts, 3);
  InversionTrial out;
  out.result = attacks::invert_gradient(g, p, arch, y, ic);
  for (std::size_t j = 0; j < s.dims; ++j) out.mse += (out.result.input[j] - x[j]) * (out.result.input[j] - x[j]);
  out.mse /= static_cast<double>(s.dims);
  out.success = !out.result.failure && out.mse < s.success_mse;
  return out;
}

inline ScenarioReport run_invert(const ExperimentConfig& c, std::size_t threads = 1) {
  const auto t0 = detail::Clock::now();
  const std::size_t trials = c.inversion.trials;
  std::vector<InversionTrial> res(trials);
  parallel_for(trials, threads, [&](std::size_t t) { res[t] = run_inversion_trial(c, t); });
  ScenarioReport r;
  r.tables.emplace_back("invert.csv",
                        CsvTable({"scenario", "trial", "steps", "initial_distance", "final_distance", "mse", "success"}));
  std::size_t ok = 0;
  for (std::size_t t = 0; t < trials; ++t) {
    ok += res[t].success;
    r.table("invert.csv")
        .add({"invert", std::to_string(t), std::to_string(res[t].result.steps),
              fmt_double(res[t].result.initial_distance), fmt_double(res[t].result.distance), fmt_double(res[t].mse),
              res[t].success ? "1" : "0"});
  }
  r.summary["scenario"] = "invert";
  r.summary["trials"] = trials;
  r.summary["successes"] = ok;
  r.summary["wall_time_s"] = detail::seconds_since(t0);
  return r;
}

// ---------------------------------------------------------------------------
// defend-matrix

struct MatrixCell {
  std::string attack;
  std::string defense;
  bool attack_succeeded = false;
  bool expected_success = false;
  std::string stopped_by;
  bool ok() const { return attack_succeeded == expected_success; }
};

struct MatrixResult {
  std::vector<MatrixCell> cells;
  std::size_t honest_runs = 0;
  std::size_t honest_aborts = 0;
  double honest_max_deviation = 0.0;
  bool conditional_same_messages = false;
  bool echo_one_exchange = false;
  bool tamper_caught = false;

  bool ok() const {
    return std::all_of(cells.begin(), cells.end(), [](const MatrixCell& c) { return c.ok(); }) && honest_aborts == 0 &&
           conditional_same_messages && echo_one_exchange && tamper_caught;
  }
};

inline fl::DefenseConfig single_defense(const std::string& name) {
  fl::DefenseConfig d;
  if (name == "zero_update_guard") d.zero_update_guard.enabled = true;
  else if (name == "signed_echo") d.signed_echo = true;
  else if (name == "conditional_sa") d.conditional_sa = true;
  else if (name != "none") throw ArgumentError("unknown defense " + name);
  return d;
}

inline fl::DefenseConfig all_defenses() {
  fl::DefenseConfig d;
  d.zero_update_guard.enabled = true;
  d.signed_echo = true;
  d.conditional_sa = true;
  return d;
}

inline MatrixResult defense_matrix(const ExperimentConfig& c, std::size_t honest_seeds = 100, std::size_t threads = 1) {
  MatrixResult m;
  const nn::Architecture arch = default_architecture(c.data.mixture.dims, c.data.mixture.classes, c.terminal_bias);
  fl::RoundConfig rc = c.round;
  rc.mode = fl::Mode::FedSGD;
  rc.sa.enabled = true;
  rc.active_fraction = 1.0;
  const std::size_t n = std::max<std::size_t>(c.users, 3);

  // Shared world: target 0 holds exactly one batch that contains x_t.
  const std::uint64_t seed = mix_seed(c.seed, 0xDEF);
  data::Dataset all = data::sample_mixture(c.data.mixture, rc.batch_size + (n - 1) * c.data.per_user + 1, seed);
  data::standardize(all.inputs);
  const Tensor x_t = all.example(0);
  std::vector<data::Dataset> users{all.slice(0, rc.batch_size)};
  for (std::size_t u = 1; u < n; ++u) users.push_back(all.slice(rc.batch_size + (u - 1) * c.data.per_user, c.data.per_user));
  fl::World world = fl::make_world(arch, nn::init_params(arch, mix_seed(seed, 1)), users, seed);
  defense::provision_keys(world, mix_seed(seed, 2));

  attacks::CanarySpec spec;
  spec.xi = c.attack.xi;
  spec.target = x_t;
  spec.alpha_pos = c.attack.alpha_pos;
  spec.alpha_neg = c.attack.alpha_neg;
  spec.stop_loss = c.attack.stop_loss;
  spec.trainer.learning_rate = c.attack.learning_rate;
  spec.trainer.max_steps = c.attack.max_steps;
  spec.trainer.seed = mix_seed(seed, 3);
  const auto inj = attacks::inject_canary(world.params, arch, spec, shadow_set(c));
  if (!inj.converged) throw Error("defense matrix: canary injection failed: " + inj.failure.value_or("?"));

  defense::AttackPlan sup;
  sup.kind = defense::AttackKind::Suppression;
  sup.target = 0;
  sup.strategy = c.attack.strategy;
  defense::AttackPlan can;
  can.kind = defense::AttackKind::Canary;
  can.target = 0;
  can.xi = c.attack.xi;
  can.canary_params = std::make_shared<const nn::ParamSet>(inj.params);

  fl::RoundOptions opts;
  opts.threads = threads;
  for (const std::string d : {"none", "zero_update_guard", "signed_echo", "conditional_sa"}) {
    for (const auto* plan : {&sup, &can}) {
      const auto o = defense::run_defended_round(world, rc, single_defense(d), *plan, opts);
      const bool expected = d == "none" || (d == "zero_update_guard" && plan->kind == defense::AttackKind::Canary);
      m.cells.push_back({defense::to_string(plan->kind), d, o.attack_succeeded, expected, o.stopped_by.value_or("")});
    }
  }

  // Honest server, every defense on.
  const Experiment e = [&] {
    ExperimentConfig small = c;
    small.users = std::min<std::size_t>(c.users, 10);
    small.arch_name = "default";
    small.custom_arch.reset();
    return make_experiment(small);
  }();
  std::vector<std::pair<bool, double>> honest(honest_seeds);
  parallel_for(honest_seeds, threads, [&](std::size_t s) {
    fl::World w = fl::make_world(e.arch, nn::init_params(e.arch, mix_seed(c.seed, 0x40 + s)), e.partition.users,
                                 mix_seed(c.seed, 0x400 + s));
    defense::provision_keys(w, mix_seed(c.seed, 0x4000 + s));
    const auto defended = defense::run_defended_round(w, rc, all_defenses(), {});
    const auto plain = defense::run_defended_round(w, rc, {}, {});
    double dev = 0.0;
    if (defended.new_params && plain.new_params) dev = attacks::max_abs_error(*defended.new_params, *plain.new_params);
    honest[s] = {defended.aborted_by.has_value() || !defended.new_params, dev};
  });
  m.honest_runs = honest_seeds;
  for (const auto& [aborted, dev] : honest) {
    m.honest_aborts += aborted;
    m.honest_max_deviation = std::max(m.honest_max_deviation, dev);
  }

  // Structural message counts on one honest round.
  const auto plain = defense::run_defended_round(world, rc, {}, {});
  const auto cond = defense::run_defended_round(world, rc, single_defense("conditional_sa"), {});
  const auto echo = defense::run_defended_round(world, rc, single_defense("signed_echo"), {});
  const std::size_t users_n = plain.transcript.users.size();
  m.conditional_same_messages = plain.transcript.bus.size() == cond.transcript.bus.size();
  m.echo_one_exchange = echo.transcript.bus.size() == plain.transcript.bus.size() + 2 * users_n &&
                        echo.transcript.bus.count("echo-up") == users_n &&
                        echo.transcript.bus.count("echo-relay") == users_n;

  // A server rewriting one relayed echo is caught by signature verification.
  fl::RoundOptions tamper;
  tamper.hooks.tamper_echo_relay = [](fl::UserId, std::vector<defense::SignedMessage>& bundle) {
    if (bundle.size() > 1) bundle[1].payload.back() ^= 0x01;
  };
  fl::RoundConfig ec = rc;
  ec.defenses = single_defense("signed_echo");
  const auto t = fl::run_round(world, ec, fl::honest_assignment(world, fl::select_users(world, ec)), tamper);
  m.tamper_caught = t.aborted_by == std::optional<std::string>("signed_echo") && !t.events.empty() &&
                    t.events.back().verdict == "signature_failure";
  return m;
}

inline ScenarioReport run_defend_matrix(const ExperimentConfig& c, std::size_t threads = 1) {
  const auto t0 = detail::Clock::now();
  const MatrixResult m = defense_matrix(c, 100, threads);
  ScenarioReport r;
  r.tables.emplace_back("defend_matrix.csv",
                        CsvTable({"attack", "defense", "attack_succeeded", "expected_success", "stopped_by", "ok"}));
  for (const auto& cell : m.cells) {
    r.table("defend_matrix.csv")
        .add({cell.attack, cell.defense, cell.attack_succeeded ? "1" : "0", cell.expected_success ? "1" : "0",
              cell.stopped_by, cell.ok() ? "1" : "0"});
  }
  r.summary["scenario"] = "defend-matrix";
  r.summary["cells_ok"] = std::all_of(m.cells.begin(), m.cells.end(), [](const MatrixCell& x) { return x.ok(); });
  r.summary["honest_runs"] = m.honest_runs;
  r.summary["honest_aborts"] = m.honest_aborts;
  r.summary["honest_max_deviation"] = m.honest_max_deviation;
  r.summary["conditional_sa_same_message_count"] = m.conditional_same_messages;
  r.summary["echo_adds_one_exchange"] = m.echo_one_exchange;
  r.summary["echo_tamper_caught"] = m.tamper_caught;
  r.summary["ok"] = m.ok();
  r.summary["wall_time_s"] = detail::seconds_since(t0);
  r.ok = m.ok();
  return r;
}

}  // namespace secagg_lab::lab
