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

// Acceptance gate: one PASS/FAIL line per criterion; exit status is the number of failures.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include "../support/zoo.hpp"
#include "secagg_lab/lab/scenarios.hpp"

namespace {

using namespace secagg_lab;
using Clock = std::chrono::steady_clock;

struct Verdict {
  bool pass = false;
  std::string detail;
};

double elapsed(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// 1 ------------------------------------------------------------------------

Verdict exact_suppression() {
  const auto t0 = Clock::now();
  std::size_t pairs = 0, inapplicable = 0, bad_batches = 0;
  std::vector<std::size_t> per_variant(5, 0);
  const auto variants = zoo::all_variants();
  for (const auto& z : zoo::architecture_zoo()) {
    for (std::size_t v = 0; v < variants.size(); ++v) {
      attacks::SuppressionStrategy s;
      s.variant = variants[v];
      const auto base = nn::init_params(z.arch, mix_seed(pairs + inapplicable, 0xA1));
      attacks::Forgery f;
      try {
        f = attacks::forge_dead_params(z.arch, s, base);
      } catch (const attacks::InapplicableStrategy&) {
        ++inapplicable;
        continue;
      }
      ++pairs;
      ++per_variant[v];
      Rng rng = make_rng(0xA11 + pairs);
      for (int b = 0; b < 1000; ++b) {
        const std::size_t n = 1 + rng() % 16;
        const auto batch = zoo::random_batch(z.arch, z.loss, n, rng, s.input_bound);
        const auto g = nn::backward(z.arch, f.params, batch, z.loss).grad;
        bad_batches += zoo::covered_nonzeros(g, f.covered) > 0;
      }
    }
  }
  const bool every_variant = std::all_of(per_variant.begin(), per_variant.end(), [](auto c) { return c > 0; });
  const double secs = elapsed(t0);
  return {bad_batches == 0 && every_variant && secs < 60.0,
          fmt("%zu applicable pairs (%zu inapplicable) x 1000 batches, %zu batches with a nonzero covered gradient, %.1fs",
              pairs, inapplicable, bad_batches, secs)};
}

// 2 + 3 ----------------------------------------------------------------------

struct RecoveryRun {
  std::size_t n = 0;
  fl::Mode mode = fl::Mode::FedSGD;
  std::string arch;
  double error = 0.0;
  double bound = 0.0;
  bool recovered = false;
  std::optional<nn::ParamSet> update;
  double seconds = 0.0;
};

/// Pool of `max_users` users x 50 rows; a world of size n uses the first n users,
/// so the target (user 0) holds the same data and batch stream at every size.
struct RecoveryBench {
  nn::Architecture arch;
  std::vector<data::Dataset> users;
  nn::ParamSet params;

  RecoveryBench(nn::Architecture a, std::size_t max_users, bool binary) : arch(std::move(a)) {
    data::MixtureSpec mix{arch.input_dim(), binary ? 2 : arch.output_dim(), 2.0, 1.0, 5};
    data::Dataset all = data::sample_mixture(mix, max_users * 50, 6);
    data::standardize(all.inputs);
    for (std::size_t u = 0; u < max_users; ++u) {
      data::Dataset d = all.slice(u * 50, 50);
      users.push_back(binary ? data::make_binary_dataset(d.inputs, d.classes) : std::move(d));
    }
    params = nn::init_params(arch, 0xBE7C);
  }

  RecoveryRun run(std::size_t n, fl::Mode mode, nn::LossKind loss, const std::string& name) const {
    const auto t0 = Clock::now();
    fl::World w = fl::make_world(arch, params, {users.begin(), users.begin() + static_cast<std::ptrdiff_t>(n)}, 0x5AB);
    fl::RoundConfig rc;
    rc.mode = mode;
    rc.loss = loss;
    rc.k = 2;
    defense::AttackPlan plan;
    plan.kind = defense::AttackKind::Suppression;
    plan.target = 0;
    fl::RoundOptions opts;
    opts.keep_shares = false;
    const auto o = defense::run_defended_round(w, rc, {}, plan, opts);
    RecoveryRun r;
    r.n = n;
    r.mode = mode;
    r.arch = name;
    r.error = o.recovery_error;
    r.bound = defense::quantization_bound(n, rc.sa.ring);
    r.recovered = o.attack_succeeded;
    r.update = o.recovered_update;
    r.seconds = elapsed(t0);
    return r;
  }
};

std::vector<RecoveryRun> recovery_runs;

Verdict sa_bypass() {
  const RecoveryBench tiny(lab::tiny_architecture(), 10000, true);
  const RecoveryBench mlp(lab::default_architecture(16, 4), 100, false);
  double big = 0.0;
  for (auto mode : {fl::Mode::FedSGD, fl::Mode::FedAVG}) {
    for (std::size_t n : {2, 100, 10000}) {
      recovery_runs.push_back(tiny.run(n, mode, nn::LossKind::MSE, "tiny"));
      if (n == 10000) big += recovery_runs.back().seconds;
    }
    for (std::size_t n : {2, 100}) recovery_runs.push_back(mlp.run(n, mode, nn::LossKind::CrossEntropy, "default"));
  }
  bool ok = big < 300.0;
  std::string detail;
  for (const auto& r : recovery_runs) {
    ok = ok && r.recovered && r.error <= r.bound;
    detail += fmt("%s/%s/n=%zu err=%.3g<=%.3g; ", r.arch.c_str(), fl::to_string(r.mode), r.n, r.error, r.bound);
  }
  return {ok, detail + fmt("n=10^4 time %.0fs", big)};
}

Verdict pool_independence() {
  bool ok = !recovery_runs.empty();
  double worst = 0.0;
  for (const auto& a : recovery_runs) {
    ok = ok && a.recovered && a.error <= a.bound;
    for (const auto& b : recovery_runs) {
      if (a.arch != b.arch || a.mode != b.mode || a.n >= b.n || !a.update || !b.update) continue;
      const double d = attacks::max_abs_error(*a.update, *b.update);
      worst = std::max(worst, d / (a.bound + b.bound));
      ok = ok && d <= a.bound + b.bound;
    }
  }
  return {ok, fmt("largest cross-pool difference = %.3g of the combined quantization bound", worst)};
}

// 4 ------------------------------------------------------------------------

Verdict mask_cancellation() {
  Rng rng = make_rng(0xC4);
  const sa::RingConfig ring;
  std::size_t mismatches = 0, max_n = 0, trials = 1000;
  for (std::size_t t = 0; t < trials; ++t) {
    const std::size_t n = t < 10 ? 1000 : static_cast<std::size_t>(std::exp(uniform(rng, std::log(2.0), std::log(1000.0))));
    const std::size_t len = 1 + rng() % 8;
    max_n = std::max(max_n, n);
    std::vector<sa::UserId> ids(n);
    for (std::size_t i = 0; i < n; ++i) ids[i] = static_cast<sa::UserId>(3 * i + rng() % 3);
    const auto secrets = sa::PairSecrets::from_seed(rng(), t);
    std::vector<std::uint64_t> truth(len, 0);
    std::vector<sa::MaskedShare> shares;
    for (std::size_t i = 0; i < n; ++i) {
      sa::FixedVector v{std::vector<std::uint64_t>(len), ring};
      for (auto& x : v.values) x = rng();
      sa::ring_add(truth, v.values, ring.mask());
      shares.push_back(sa::mask_share(v, secrets, ids[i], ids));
    }
    mismatches += sa::aggregate_shares(shares, ids).values != truth;
  }
  return {mismatches == 0, fmt("%zu trials (n up to %zu), %zu ring-sum mismatches", trials, max_n, mismatches)};
}

// 5 ------------------------------------------------------------------------

Verdict conditional_sa() {
  Rng rng = make_rng(0xC5);
  const sa::RingConfig ring;
  std::size_t deviant_correct = 0, honest_correct = 0;
  constexpr std::size_t trials = 10000;
  for (int honest = 0; honest < 2; ++honest) {
    for (std::size_t t = 0; t < trials; ++t) {
      const std::size_t n = 3 + rng() % 6, len = 1 + rng() % 16;
      std::vector<sa::UserId> ids(n);
      for (std::size_t i = 0; i < n; ++i) ids[i] = static_cast<sa::UserId>(i);
      const auto secrets = sa::PairSecrets::from_seed(rng(), t);
      sa::ParamDigest good{}, bad{};
      for (auto& b : good) b = static_cast<std::uint8_t>(rng());
      bad = good;
      bad[rng() % bad.size()] ^= static_cast<std::uint8_t>(1 + rng() % 255);
      const std::size_t deviant = rng() % n;
      std::vector<std::uint64_t> truth(len, 0);
      std::vector<sa::MaskedShare> shares;
      for (std::size_t i = 0; i < n; ++i) {
        sa::FixedVector v{std::vector<std::uint64_t>(len), ring};
        for (auto& x : v.values) x = sa::encode_scalar(uniform(rng, -100.0, 100.0), ring);
        sa::ring_add(truth, v.values, ring.mask());
        shares.push_back(sa::mask_share(v, secrets, ids[i], ids, !honest && i == deviant ? bad : good));
      }
      const auto agg = sa::fixed_decode(sa::aggregate_shares(shares, ids));
      const auto want = sa::fixed_decode(sa::FixedVector{truth, ring});
      (honest ? honest_correct : deviant_correct) += agg == want;
    }
  }
  return {deviant_correct == 0 && honest_correct == trials,
          fmt("deviant binding: %zu/%zu releases equal the true sum; honest: %zu/%zu correct", deviant_correct, trials,
              honest_correct, trials)};
}

// 6 ------------------------------------------------------------------------

Verdict canary_desk_scale() {
  const auto t0 = Clock::now();
  lab::ExperimentConfig c = lab::parse_config_text("{}");
  c.attack.trials = 50;
  const auto r = lab::run_canary(c, default_threads());
  const auto& s = r.summary;
  const auto& rows = s["by_batch_size"];
  bool recall = true, monotone = true;
  std::string accs;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    recall = recall && rows[i]["recall"].get<double>() == 1.0;
    accs += fmt("%s%.3f", i ? "/" : "", rows[i]["accuracy"].get<double>());
    if (i && rows[i]["accuracy"].get<double>() > rows[i - 1]["accuracy"].get<double>() + 0.02) monotone = false;
  }
  const double overall = s["overall"]["accuracy"].get<double>();
  const std::size_t failures = s["injection_failures"].get<std::size_t>();
  const double secs = elapsed(t0);
  return {recall && monotone && overall >= 0.90 && failures == 0 && secs < 900.0,
          fmt("50 trials, %zu injection failures, recall %s, accuracy by batch {4,8,16,32} = %s, overall %.3f, "
              "end-to-end fired with/without x_t %zu/%zu, %.0fs",
              failures, recall ? "1.00" : "<1", accs.c_str(), overall,
              s["end_to_end"]["detected_with_target"].get<std::size_t>(),
              s["end_to_end"]["detected_without_target"].get<std::size_t>(), secs)};
}

// 7 ------------------------------------------------------------------------

Verdict canary_footprint() {
  // A trained base: both scalars at xi are generic (a fresh LayerNorm shift is exactly 0).
  lab::ExperimentConfig c = lab::parse_config_text(R"({"users": 10})");
  const auto e = lab::make_experiment(c);
  fl::World w = lab::make_world(e, 3);
  for (int r = 0; r < 20; ++r) fl::train_round(w, c.round);
  const attacks::CanaryAddress xi{3, 0};
  const bool generic = w.params.at(xi.gamma()) != 0.0 && w.params.at(xi.beta()) != 0.0;
  const auto sup = attacks::suppress_at(w.params, xi);
  const auto a = w.params.flatten(), b = sup.flatten();
  std::size_t diff = 0;
  for (std::size_t i = 0; i < a.size(); ++i) diff += a[i] != b[i];
  return {generic && diff == 2, fmt("%zu of %zu scalars differ", diff, a.size())};
}

// 8 ------------------------------------------------------------------------

Verdict defense_matrix() {
  lab::ExperimentConfig c = lab::parse_config_text("{}");
  const auto m = lab::defense_matrix(c, 100, default_threads());
  std::string cells;
  bool cells_ok = true;
  for (const auto& x : m.cells) {
    cells_ok = cells_ok && x.ok();
    cells += fmt("%s/%s=%s ", x.attack.c_str(), x.defense.c_str(), x.attack_succeeded ? "succeeds" : "blocked");
  }
  return {m.ok(), cells + fmt("| honest aborts %zu/%zu, structure %s, tamper %s", m.honest_aborts, m.honest_runs,
                              m.conditional_same_messages && m.echo_one_exchange ? "ok" : "BAD",
                              m.tamper_caught ? "caught" : "MISSED")};
}

// 9 ------------------------------------------------------------------------

Verdict gradient_correctness() {
  double worst = 0.0;
  std::size_t checks = 0;
  for (const auto& z : zoo::architecture_zoo()) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      Rng rng = make_rng(seed, 0x9C);
      const auto p = nn::init_params(z.arch, mix_seed(seed, 0x9D));
      const auto batch = zoo::random_batch(z.arch, z.loss, 4, rng, 1.0);
      const auto analytic = nn::backward(z.arch, p, batch, z.loss).grad;
      const auto numeric = nn::finite_diff_gradient(z.arch, p, batch, z.loss, 1e-6);
      worst = std::max(worst, zoo::relative_error(analytic, numeric));
      ++checks;
    }
  }
  return {worst < 1e-4, fmt("%zu architecture-seed pairs, worst relative error %.3g", checks, worst)};
}

// 10 -----------------------------------------------------------------------

Verdict sparsity_trend() {
  lab::ExperimentConfig c = lab::parse_config_text(
      R"({"users": 10, "rounds": 200, "eta": 0.5, "batch_size": 8, "seed": 1})");
  const auto r = lab::run_sparsity(c, default_threads());
  const double rho = r.summary["spearman_round_sparsity"].get<double>();
  const auto& tab = r.tables.front().second.rows();
  return {rho > 0.0, fmt("rho = %.3f over %zu rounds; sparsity %s -> %s", rho, tab.size(), tab.front()[2].c_str(),
                         tab.back()[2].c_str())};
}

// 11 -----------------------------------------------------------------------

Verdict toy_inversion() {
  lab::ExperimentConfig c = lab::parse_config_text("{}");
  c.inversion.optimizer.steps = 5000;
  std::size_t ok = 0, max_steps = 0;
  double worst = 0.0;
  for (std::size_t t = 0; t < 10; ++t) {
    const auto r = lab::run_inversion_trial(c, t);
    ok += r.mse < 1e-2 && r.result.steps <= 5000 && !r.result.failure;
    max_steps = std::max(max_steps, r.result.steps);
    worst = std::max(worst, r.mse);
  }
  return {ok >= 8, fmt("%zu/10 seeds below MSE 1e-2 (largest MSE %.3g, at most %zu steps)", ok, worst, max_steps)};
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria{
      {"exact suppression", exact_suppression},
      {"secure-aggregation bypass exactness", sa_bypass},
      {"pool-size independence", pool_independence},
      {"mask cancellation", mask_cancellation},
      {"conditional secure aggregation", conditional_sa},
      {"canary at desk scale", canary_desk_scale},
      {"canary footprint", canary_footprint},
      {"defense matrix", defense_matrix},
      {"gradient correctness", gradient_correctness},
      {"sparsity trend", sparsity_trend},
      {"toy inversion", toy_inversion},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Verdict v;
    try {
      v = criteria[i].second();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    failures += !v.pass;
    std::printf("%s [%zu] %s: %s\n", v.pass ? "PASS" : "FAIL", i + 1, criteria[i].first.c_str(), v.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failures, criteria.size());
  return failures;
}
