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

#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "secagg_lab/fl.hpp"
#include "secagg_lab/mitigations.hpp"
#include "secagg_lab/parallel.hpp"
#include "secagg_lab/secure_agg.hpp"

namespace secagg_lab::fl {

inline constexpr UserId kServer = 0xFFFFFFFFu;

struct Message {
  std::string phase;
  UserId from = kServer;
  UserId to = kServer;
  std::size_t bytes = 0;
};

/// Server-mediated channel log: every message has the server at one end.
class MessageBus {
 public:
  void send(std::string phase, UserId from, UserId to, std::size_t bytes) {
    if (from != kServer && to != kServer) throw Error("message bus: users cannot talk directly");
    log_.push_back({std::move(phase), from, to, bytes});
  }
  const std::vector<Message>& log() const { return log_; }
  std::size_t size() const { return log_.size(); }
  std::size_t count(const std::string& phase) const {
    return static_cast<std::size_t>(std::count_if(log_.begin(), log_.end(), [&](const Message& m) { return m.phase == phase; }));
  }
  /// Distinct phases in first-seen order.
  std::vector<std::string> phases() const {
    std::vector<std::string> out;
    for (const auto& m : log_)
      if (std::find(out.begin(), out.end(), m.phase) == out.end()) out.push_back(m.phase);
    return out;
  }

 private:
  std::vector<Message> log_;
};

struct DefenseEvent {
  std::string defense;
  std::string verdict;
  std::vector<UserId> offending_users;
};

using ParamsPtr = std::shared_ptr<const nn::ParamSet>;

/// Parameters the server answers each active user with (sorted by id).
struct ParamAssignment {
  std::vector<UserId> active;
  std::vector<ParamsPtr> params;

  const ParamsPtr& for_user(UserId id) const {
    const auto it = std::lower_bound(active.begin(), active.end(), id);
    if (it == active.end() || *it != id) throw ArgumentError("assignment: user " + std::to_string(id) + " not active");
    return params[static_cast<std::size_t>(it - active.begin())];
  }
};

inline ParamAssignment honest_assignment(const World& world, std::vector<UserId> active) {
  auto shared = std::make_shared<const nn::ParamSet>(world.params);
  std::vector<ParamsPtr> ps(active.size(), shared);
  return {std::move(active), std::move(ps)};
}

/// Theta to the target, Theta-tilde to everyone else.
inline ParamAssignment inconsistent_assignment(std::vector<UserId> active, UserId target, ParamsPtr honest,
                                               ParamsPtr malicious) {
  std::vector<ParamsPtr> ps;
  for (UserId id : active) ps.push_back(id == target ? honest : malicious);
  return {std::move(active), std::move(ps)};
}

struct UserRecord {
  UserId id = 0;
  ParamsPtr params_sent;
  sa::ParamDigest sent_digest{};
  std::uint64_t batch_count = 0;
  bool withheld = false;
  std::optional<ModelUpdate> clear_update;
  std::optional<sa::MaskedShare> share;
};

struct RoundTranscript {
  std::uint64_t round = 0;
  Mode mode = Mode::FedSGD;
  bool sa_enabled = false;
  bool conditional_sa = false;
  std::vector<UserRecord> users;
  std::optional<sa::FixedVector> aggregate_ring;
  std::optional<nn::ParamSet> aggregate;
  std::optional<nn::ParamSet> new_params;
  std::vector<DefenseEvent> events;
  std::optional<std::string> aborted_by;
  MessageBus bus;

  bool aborted() const { return aborted_by.has_value(); }
  const UserRecord& user(UserId id) const {
    for (const auto& u : users)
      if (u.id == id) return u;
    throw ArgumentError("transcript: no record for user " + std::to_string(id));
  }
};

struct ServerHooks {
  /// Lets a (malicious) server rewrite the echo bundle relayed to `recipient`.
  std::function<void(UserId recipient, std::vector<defense::SignedMessage>& bundle)> tamper_echo_relay;
};

struct RoundOptions {
  std::size_t threads = 1;
  ServerHooks hooks;
  /// Keep per-user shares in the transcript (memory heavy for large pools).
  bool keep_shares = true;
};

/// One FL round over `assignment.active`: distribution, optional signed echo,
/// local training, zero-update guard, aggregation (in the clear or through
/// pairwise-masked SA, conditional when enabled), and the server update. The
/// world is not modified.
inline RoundTranscript run_round(const World& world, const RoundConfig& cfg, const ParamAssignment& assignment,
                                 const RoundOptions& opts = {}) {
  cfg.validate();
  if (assignment.active.size() != assignment.params.size()) throw ArgumentError("assignment size mismatch");
  if (assignment.active.empty()) throw ArgumentError("run_round: no active users");
  if (!std::is_sorted(assignment.active.begin(), assignment.active.end()) ||
      std::adjacent_find(assignment.active.begin(), assignment.active.end()) != assignment.active.end()) {
    throw ArgumentError("run_round: active ids must be sorted and unique");
  }
  const auto& defenses = cfg.defenses;
  if (defenses.signed_echo && world.keys.size() != world.users.size()) {
    throw ArgumentError("signed echo requires a pre-distributed public-key directory");
  }

  RoundTranscript tr;
  tr.round = world.round;
  tr.mode = cfg.mode;
  tr.sa_enabled = cfg.sa.enabled;
  tr.conditional_sa = cfg.sa.enabled && defenses.conditional_sa;
  const std::size_t n = assignment.active.size();

  // 1. Parameter distribution.
  std::map<const nn::ParamSet*, sa::ParamDigest> digests;
  const std::size_t param_bytes = nn::ParamSet::zeros(world.arch).scalar_count() * 8;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& p = assignment.params[i];
    if (!p) throw ArgumentError("assignment: null parameters");
    nn::require_params_match(world.arch, *p);
    auto it = digests.find(p.get());
    if (it == digests.end()) it = digests.emplace(p.get(), sa::param_digest(*p)).first;
    UserRecord rec;
    rec.id = assignment.active[i];
    rec.params_sent = p;
    rec.sent_digest = it->second;
    tr.users.push_back(std::move(rec));
    tr.bus.send("params", kServer, assignment.active[i], param_bytes);
  }

  // 2. Signed echo: every user signs what it received; the server relays the bundle to everyone.
  if (defenses.signed_echo) {
    std::vector<defense::SignedMessage> bundle;
    for (const auto& rec : tr.users) {
      bundle.push_back(defense::make_echo(world, rec.id, *rec.params_sent, defenses.echo_payload));
      tr.bus.send("echo-up", rec.id, kServer, bundle.back().payload.size() + bundle.back().signature.size());
    }
    std::size_t bundle_bytes = 0;
    for (const auto& m : bundle) bundle_bytes += m.payload.size() + m.signature.size();
    std::set<UserId> offenders;
    std::optional<defense::EchoStatus> worst;
    for (const auto& rec : tr.users) {
      std::vector<defense::SignedMessage> relayed = bundle;
      if (opts.hooks.tamper_echo_relay) opts.hooks.tamper_echo_relay(rec.id, relayed);
      tr.bus.send("echo-relay", kServer, rec.id, bundle_bytes);
      const auto own = defense::echo_payload(world.round, rec.id, *rec.params_sent, defenses.echo_payload);
      const auto own_body = std::span<const std::uint8_t>(own).subspan(16);
      const auto verdict = defense::echo_consistency_check(relayed, world, assignment.active, own_body);
      if (!verdict.consistent()) {
        if (!worst || verdict.status == defense::EchoStatus::SignatureFailure) worst = verdict.status;
        offenders.insert(verdict.offending_users.begin(), verdict.offending_users.end());
      }
    }
    if (worst) {
      tr.events.push_back({"signed_echo", defense::to_string(*worst), {offenders.begin(), offenders.end()}});
      tr.aborted_by = "signed_echo";
      return tr;
    }
    tr.events.push_back({"signed_echo", "consistent", {}});
  }

  // 3. Local training.
  std::vector<ModelUpdate> updates(n);
  parallel_for(n, opts.threads, [&](std::size_t i) {
    updates[i] = local_update(world.arch, *tr.users[i].params_sent, world.user(tr.users[i].id), cfg, world.round);
  });

  // 4. Zero-update guard.
  if (defenses.zero_update_guard.enabled) {
    std::vector<UserId> withheld;
    for (std::size_t i = 0; i < n; ++i) {
      if (defense::zero_update_guard(updates[i], *tr.users[i].params_sent, world.arch, cfg) == defense::GuardVerdict::Abort) {
        tr.users[i].withheld = true;
        withheld.push_back(tr.users[i].id);
      }
    }
    tr.events.push_back({"zero_update_guard", withheld.empty() ? "proceed" : "withheld", withheld});
  }

  for (std::size_t i = 0; i < n; ++i) tr.users[i].batch_count = updates[i].batch_count;
  const nn::ParamSet shape = nn::ParamSet::zeros(world.arch);
  double divisor = 0.0;

  // 5. Aggregation.
  if (cfg.sa.enabled) {
    if (n < 2) {
      tr.events.push_back({"secure_aggregation", "insufficient_users", {tr.users.front().id}});
      tr.aborted_by = "secure_aggregation";
      return tr;
    }
    const auto secrets = sa::PairSecrets::from_seed(cfg.sa.setup_seed, world.round);
    std::vector<std::optional<sa::MaskedShare>> shares(n);
    parallel_for(n, opts.threads, [&](std::size_t i) {
      if (tr.users[i].withheld) return;
      std::optional<sa::ParamDigest> binding;
      if (tr.conditional_sa) binding = tr.users[i].sent_digest;
      shares[i] = sa::mask_share(sa::fixed_encode(updates[i].payload, cfg.sa.ring), secrets, tr.users[i].id,
                                 assignment.active, binding);
    });
    std::vector<sa::MaskedShare> received;
    for (std::size_t i = 0; i < n; ++i) {
      if (!shares[i]) continue;
      tr.bus.send("share", tr.users[i].id, kServer, 4 + 1 + (tr.conditional_sa ? 32 : 0) + 8 + 8 * shares[i]->masked.size());
      if (cfg.mode == Mode::FedAVG) tr.bus.send("batch-count", tr.users[i].id, kServer, 8);
      received.push_back(*shares[i]);
      if (opts.keep_shares) tr.users[i].share = std::move(shares[i]);
    }
    try {
      tr.aggregate_ring = sa::aggregate_shares(received, assignment.active);
    } catch (const sa::AggregationError&) {
      std::vector<UserId> missing;
      for (const auto& u : tr.users)
        if (u.withheld) missing.push_back(u.id);
      tr.events.push_back({"secure_aggregation", "aggregate_unavailable", missing});
      tr.aborted_by = defenses.zero_update_guard.enabled && !missing.empty() ? "zero_update_guard" : "secure_aggregation";
      return tr;
    }
    tr.aggregate = sa::fixed_decode(*tr.aggregate_ring, shape);
  } else {
    std::vector<nn::ParamSet> clear;
    for (std::size_t i = 0; i < n; ++i) {
      if (tr.users[i].withheld) continue;
      tr.bus.send("update", tr.users[i].id, kServer, 8 * updates[i].payload.scalar_count());
      if (cfg.mode == Mode::FedAVG) tr.bus.send("batch-count", tr.users[i].id, kServer, 8);
      clear.push_back(updates[i].payload);
      tr.users[i].clear_update = updates[i];
    }
    if (clear.empty()) {
      tr.events.push_back({"aggregation", "no_updates", {}});
      tr.aborted_by = defenses.zero_update_guard.enabled ? "zero_update_guard" : "aggregation";
      return tr;
    }
    tr.aggregate = sa::ideal_aggregate(clear);
  }

  // 6. Server update.
  if (cfg.mode == Mode::FedSGD) {
    std::size_t contributors = 0;
    for (const auto& u : tr.users) contributors += u.withheld ? 0 : 1;
    divisor = static_cast<double>(contributors);
  } else {
    for (const auto& u : tr.users)
      if (!u.withheld) divisor += static_cast<double>(u.batch_count);
  }
  tr.new_params = server_update(world.params, *tr.aggregate, cfg, divisor);
  return tr;
}

/// Honest round on the server's current parameters; commits the result.
inline RoundTranscript train_round(World& world, const RoundConfig& cfg, const RoundOptions& opts = {}) {
  auto tr = run_round(world, cfg, honest_assignment(world, select_users(world, cfg)), opts);
  if (tr.new_params) world.params = *tr.new_params;
  ++world.round;
  return tr;
}

}  // namespace secagg_lab::fl
