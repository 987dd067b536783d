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

#include <sodium.h>

#include <algorithm>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "secagg_lab/checkpoint.hpp"
#include "secagg_lab/fl.hpp"
#include "secagg_lab/secure_agg.hpp"

namespace secagg_lab::defense {

using sa::UserId;

// ---------------------------------------------------------------------------
// Signatures

class SignatureScheme {
 public:
  virtual ~SignatureScheme() = default;
  virtual Bytes sign(const fl::KeyPair& key, std::span<const std::uint8_t> message) const = 0;
  virtual bool verify(std::span<const std::uint8_t> public_key, std::span<const std::uint8_t> message,
                      std::span<const std::uint8_t> signature) const = 0;
};

/// Deterministic Ed25519 (libsodium detached signatures).
class Ed25519 final : public SignatureScheme {
 public:
  Ed25519() { sa::ensure_sodium(); }

  static fl::KeyPair keypair_from_seed(std::uint64_t seed, UserId id) {
    sa::ensure_sodium();
    std::array<std::uint8_t, crypto_sign_SEEDBYTES> s{};
    std::array<std::uint8_t, 12> msg{'k', 'e', 'y', 's'};
    for (int b = 0; b < 8; ++b) msg[4 + b] = static_cast<std::uint8_t>(seed >> (8 * b));
    std::array<std::uint8_t, 4> idb{};
    for (int b = 0; b < 4; ++b) idb[b] = static_cast<std::uint8_t>(id >> (8 * b));
    crypto_generichash(s.data(), s.size(), msg.data(), msg.size(), idb.data(), idb.size());
    fl::KeyPair kp;
    crypto_sign_seed_keypair(kp.public_key.data(), kp.secret_key.data(), s.data());
    return kp;
  }

  Bytes sign(const fl::KeyPair& key, std::span<const std::uint8_t> message) const override {
    Bytes sig(crypto_sign_BYTES);
    crypto_sign_detached(sig.data(), nullptr, message.data(), message.size(), key.secret_key.data());
    return sig;
  }

  bool verify(std::span<const std::uint8_t> public_key, std::span<const std::uint8_t> message,
              std::span<const std::uint8_t> signature) const override {
    if (public_key.size() != crypto_sign_PUBLICKEYBYTES || signature.size() != crypto_sign_BYTES) return false;
    return crypto_sign_verify_detached(signature.data(), message.data(), message.size(), public_key.data()) == 0;
  }
};

inline const SignatureScheme& default_signer() {
  static const Ed25519 scheme;
  return scheme;
}

/// Trusted setup: one key pair per user, public keys known to every user.
inline void provision_keys(fl::World& world, std::uint64_t seed) {
  world.keys.clear();
  for (const auto& u : world.users) world.keys.push_back(Ed25519::keypair_from_seed(seed, u.id));
}

// ---------------------------------------------------------------------------
// Signed parameter echo

struct SignedMessage {
  UserId sender = 0;
  Bytes payload;
  Bytes signature;
};

/// "echo" || round (u64 LE) || sender (u32 LE) || mode byte || digest or full serialization.
inline Bytes echo_payload(std::uint64_t round, UserId sender, const nn::ParamSet& received, fl::EchoPayload mode) {
  Bytes out{'e', 'c', 'h', 'o'};
  detail::put_u64(out, round);
  detail::put_u32(out, sender);
  out.push_back(mode == fl::EchoPayload::Digest ? 0 : 1);
  if (mode == fl::EchoPayload::Digest) {
    const auto d = sa::param_digest(received);
    out.insert(out.end(), d.begin(), d.end());
  } else {
    const Bytes full = serialize_params(received);
    out.insert(out.end(), full.begin(), full.end());
  }
  return out;
}

inline SignedMessage make_echo(const fl::World& world, UserId sender, const nn::ParamSet& received,
                               fl::EchoPayload mode, const SignatureScheme& scheme = default_signer()) {
  if (world.keys.size() != world.users.size()) throw ArgumentError("signed echo requires provisioned keys");
  SignedMessage m{sender, echo_payload(world.round, sender, received, mode), {}};
  m.signature = scheme.sign(world.keys[world.index_of(sender)], m.payload);
  return m;
}

enum class EchoStatus { Consistent, SignatureFailure, Inconsistent };

struct EchoVerdict {
  EchoStatus status = EchoStatus::Consistent;
  std::vector<UserId> offending_users;

  bool consistent() const { return status == EchoStatus::Consistent; }
};

inline const char* to_string(EchoStatus s) {
  switch (s) {
    case EchoStatus::Consistent: return "consistent";
    case EchoStatus::SignatureFailure: return "signature_failure";
    case EchoStatus::Inconsistent: return "inconsistent";
  }
  return "?";
}

/// Parameter body of an echo (everything after the round/sender header).
inline std::span<const std::uint8_t> echo_body(const SignedMessage& m) {
  constexpr std::size_t header = 4 + 8 + 4;
  if (m.payload.size() < header) return {};
  return std::span<const std::uint8_t>(m.payload).subspan(header);
}

/// Check run by one user over the relayed bundle: every signature must verify
/// against the directory and carry this round and its claimed sender; every
/// parameter body must equal `own_body`. Signature failures take precedence.
inline EchoVerdict echo_consistency_check(std::span<const SignedMessage> bundle, const fl::World& world,
                                          std::span<const UserId> active, std::span<const std::uint8_t> own_body,
                                          const SignatureScheme& scheme = default_signer()) {
  EchoVerdict v;
  std::set<UserId> expected(active.begin(), active.end()), seen;
  std::vector<UserId> bad_sig, mismatch;
  for (const auto& m : bundle) {
    bool ok = expected.count(m.sender) && !seen.count(m.sender);
    if (ok) {
      const auto& key = world.keys.at(world.index_of(m.sender)).public_key;
      ok = scheme.verify(key, m.payload, m.signature);
    }
    if (ok) {
      Bytes header{'e', 'c', 'h', 'o'};
      detail::put_u64(header, world.round);
      detail::put_u32(header, m.sender);
      ok = m.payload.size() >= header.size() && std::equal(header.begin(), header.end(), m.payload.begin());
    }
    if (!ok) {
      bad_sig.push_back(m.sender);
      continue;
    }
    seen.insert(m.sender);
    const auto body = echo_body(m);
    if (!std::equal(body.begin(), body.end(), own_body.begin(), own_body.end())) mismatch.push_back(m.sender);
  }
  for (UserId id : expected)
    if (!seen.count(id) && std::find(bad_sig.begin(), bad_sig.end(), id) == bad_sig.end()) bad_sig.push_back(id);
  if (!bad_sig.empty()) {
    v.status = EchoStatus::SignatureFailure;
    v.offending_users = std::move(bad_sig);
  } else if (!mismatch.empty()) {
    v.status = EchoStatus::Inconsistent;
    v.offending_users = std::move(mismatch);
  }
  std::sort(v.offending_users.begin(), v.offending_users.end());
  return v;
}

// ---------------------------------------------------------------------------
// Zero-update guard

enum class GuardVerdict { Proceed, Abort };

/// Abort (withhold the share) iff the update carries no signal: a FedSGD
/// gradient that is zero everywhere, or FedAVG parameters identical to the ones
/// received.
inline GuardVerdict zero_update_guard(const fl::ModelUpdate& update, const nn::ParamSet& received,
                                      const nn::Architecture& arch, const fl::RoundConfig& cfg) {
  const auto& g = cfg.defenses.zero_update_guard;
  const auto terminal = arch.terminal_dense();
  const bool fedavg = cfg.mode == fl::Mode::FedAVG;
  const double scale = fedavg && cfg.weighting == fl::FedAvgWeighting::SampleWeighted
                           ? static_cast<double>(update.batch_count)
                           : 1.0;
  bool all_zero = true;
  update.payload.for_each_tensor([&](std::size_t l, std::size_t t, const Tensor& tensor) {
    if (!all_zero) return;
    if (g.ignore_terminal_bias && terminal && l == *terminal && t == 1) return;
    const auto& base = received.tensor(l, t);
    for (std::size_t i = 0; i < tensor.size(); ++i) {
      const double signal = fedavg ? tensor[i] - scale * base[i] : tensor[i];
      if (std::fabs(signal) > g.threshold) {
        all_zero = false;
        return;
      }
    }
  });
  return all_zero ? GuardVerdict::Abort : GuardVerdict::Proceed;
}

}  // namespace secagg_lab::defense
