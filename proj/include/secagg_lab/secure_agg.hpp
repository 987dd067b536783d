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
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "secagg_lab/checkpoint.hpp"
#include "secagg_lab/nn.hpp"

namespace secagg_lab::sa {

/// Raised when shares cannot be combined (missing, duplicated, incongruent).
class AggregationError : public Error {
 public:
  using Error::Error;
};

inline void ensure_sodium() {
  static const int rc = sodium_init();
  if (rc < 0) throw Error("libsodium initialisation failed");
}

using Seed = std::array<std::uint8_t, 32>;
using ParamDigest = std::array<std::uint8_t, 32>;
using UserId = std::uint32_t;

// ---------------------------------------------------------------------------
// Fixed-point ring Z_{2^modulus_bits}

struct RingConfig {
  unsigned frac_bits = 24;
  unsigned modulus_bits = 64;

  void validate() const {
    if (modulus_bits < 2 || modulus_bits > 64) throw ArgumentError("modulus_bits must be in [2, 64]");
    if (frac_bits + 1 >= modulus_bits) throw ArgumentError("frac_bits leaves no integer headroom");
  }
  std::uint64_t mask() const { return modulus_bits == 64 ? ~std::uint64_t{0} : (std::uint64_t{1} << modulus_bits) - 1; }
  /// Largest magnitude accepted by fixed_encode: 2^(modulus_bits - frac_bits - 1).
  double headroom() const { return std::ldexp(1.0, static_cast<int>(modulus_bits - frac_bits - 1)); }
  /// One quantization step, 2^-frac_bits.
  double step() const { return std::ldexp(1.0, -static_cast<int>(frac_bits)); }

  friend bool operator==(const RingConfig&, const RingConfig&) = default;
};

struct FixedVector {
  std::vector<std::uint64_t> values;
  RingConfig ring;

  std::size_t size() const { return values.size(); }
  friend bool operator==(const FixedVector&, const FixedVector&) = default;
};

inline std::uint64_t encode_scalar(double x, const RingConfig& ring) {
  if (!std::isfinite(x) || !(std::fabs(x) < ring.headroom())) {
    throw ArgumentError("fixed_encode: value " + std::to_string(x) + " exceeds ring headroom " +
                        std::to_string(ring.headroom()));
  }
  const auto q = static_cast<std::int64_t>(std::llround(std::ldexp(x, static_cast<int>(ring.frac_bits))));
  return static_cast<std::uint64_t>(q) & ring.mask();
}

inline double decode_scalar(std::uint64_t v, const RingConfig& ring) {
  v &= ring.mask();
  std::int64_t s;
  if (ring.modulus_bits == 64) {
    s = static_cast<std::int64_t>(v);
  } else {
    const std::uint64_t half = std::uint64_t{1} << (ring.modulus_bits - 1);
    s = v >= half ? static_cast<std::int64_t>(v) - static_cast<std::int64_t>(std::uint64_t{1} << ring.modulus_bits)
                  : static_cast<std::int64_t>(v);
  }
  return std::ldexp(static_cast<double>(s), -static_cast<int>(ring.frac_bits));
}

inline FixedVector fixed_encode(std::span<const double> xs, const RingConfig& ring) {
  ring.validate();
  FixedVector out{std::vector<std::uint64_t>(xs.size()), ring};
  for (std::size_t i = 0; i < xs.size(); ++i) out.values[i] = encode_scalar(xs[i], ring);
  return out;
}

inline FixedVector fixed_encode(const Tensor& t, const RingConfig& ring) { return fixed_encode(t.data(), ring); }

inline FixedVector fixed_encode(const nn::ParamSet& p, const RingConfig& ring) {
  const auto flat = p.flatten();
  return fixed_encode(std::span<const double>(flat), ring);
}

inline std::vector<double> fixed_decode(const FixedVector& fv) {
  std::vector<double> out(fv.size());
  for (std::size_t i = 0; i < fv.size(); ++i) out[i] = decode_scalar(fv.values[i], fv.ring);
  return out;
}

/// Decodes into the structure of `shape_template`.
inline nn::ParamSet fixed_decode(const FixedVector& fv, const nn::ParamSet& shape_template) {
  const auto flat = fixed_decode(fv);
  return shape_template.unflatten(flat);
}

inline void ring_add(std::span<std::uint64_t> acc, std::span<const std::uint64_t> v, std::uint64_t mask) {
  for (std::size_t i = 0; i < acc.size(); ++i) acc[i] = (acc[i] + v[i]) & mask;
}
inline void ring_sub(std::span<std::uint64_t> acc, std::span<const std::uint64_t> v, std::uint64_t mask) {
  for (std::size_t i = 0; i < acc.size(); ++i) acc[i] = (acc[i] - v[i]) & mask;
}

// ---------------------------------------------------------------------------
// Keyed streams

/// Deterministic expansion of (seed, binding) to a word stream. An empty
/// binding is the plain PRG; a non-empty one makes it a PRF of the binding.
class StreamGenerator {
 public:
  virtual ~StreamGenerator() = default;
  virtual void expand(const Seed& seed, std::span<const std::uint8_t> binding,
                      std::span<std::uint64_t> out) const = 0;
  virtual std::string name() const = 0;
};

/// BLAKE2b in counter mode: block c = BLAKE2b-512(seed || tag || flag || binding || c).
/// The secret seed is a prefix inside one 128-byte input block, so each 8 output
/// words cost a single compression.
class Blake2bCounterStream final : public StreamGenerator {
 public:
  Blake2bCounterStream() { ensure_sodium(); }

  void expand(const Seed& seed, std::span<const std::uint8_t> binding,
              std::span<std::uint64_t> out) const override {
    static constexpr std::uint8_t kTag[] = {'s', 'a', 'g', 'l', '-', 'm', 'a', 's', 'k'};
    if (binding.size() > kMaxBinding) throw ArgumentError("stream binding longer than 32 bytes");
    std::array<std::uint8_t, 32 + sizeof kTag + 1 + kMaxBinding + 8> msg{};
    std::size_t len = 0;
    std::copy(seed.begin(), seed.end(), msg.begin());
    len += seed.size();
    std::copy(std::begin(kTag), std::end(kTag), msg.begin() + len);
    len += sizeof kTag;
    msg[len++] = binding.empty() ? 0 : 1;
    std::copy(binding.begin(), binding.end(), msg.begin() + len);
    len += binding.size();
    const std::size_t ctr_at = len;
    len += 8;

    std::array<std::uint8_t, kBlockBytes> block{};
    for (std::uint64_t c = 0, pos = 0; pos < out.size(); ++c) {
      for (int b = 0; b < 8; ++b) msg[ctr_at + b] = static_cast<std::uint8_t>(c >> (8 * b));
      crypto_generichash(block.data(), block.size(), msg.data(), len, nullptr, 0);
      for (std::size_t w = 0; w < kBlockBytes / 8 && pos < out.size(); ++w, ++pos) {
        std::uint64_t v = 0;
        for (int b = 0; b < 8; ++b) v |= static_cast<std::uint64_t>(block[w * 8 + b]) << (8 * b);
        out[pos] = v;
      }
    }
  }

  std::string name() const override { return "blake2b-ctr"; }

 private:
  static constexpr std::size_t kBlockBytes = 64;
  static constexpr std::size_t kMaxBinding = 32;
};

inline const StreamGenerator& default_stream() {
  static const Blake2bCounterStream stream;
  return stream;
}

// ---------------------------------------------------------------------------
// Pairwise secrets

/// Trusted-setup pair seeds: s_{i,j} = BLAKE2b-256(master || "pair" || round || min || max).
/// Both endpoints of a pair obtain the same seed; seeds differ across pairs and rounds.
class PairSecrets {
 public:
  PairSecrets(Seed master, std::uint64_t round) : master_(master), round_(round) { ensure_sodium(); }

  static PairSecrets from_seed(std::uint64_t setup_seed, std::uint64_t round) {
    ensure_sodium();
    Seed master{};
    std::array<std::uint8_t, 8> s{};
    for (int b = 0; b < 8; ++b) s[b] = static_cast<std::uint8_t>(setup_seed >> (8 * b));
    crypto_generichash(master.data(), master.size(), s.data(), s.size(), nullptr, 0);
    return PairSecrets(master, round);
  }

  Seed seed(UserId a, UserId b) const {
    if (a == b) throw ArgumentError("pair secret requested for a user with itself");
    const UserId lo = std::min(a, b), hi = std::max(a, b);
    // BLAKE2b-256(master || "pair" || round || lo || hi), one compression.
    std::array<std::uint8_t, 32 + 4 + 8 + 4 + 4> msg{};
    std::copy(master_.begin(), master_.end(), msg.begin());
    msg[32] = 'p', msg[33] = 'a', msg[34] = 'i', msg[35] = 'r';
    for (int k = 0; k < 8; ++k) msg[36 + k] = static_cast<std::uint8_t>(round_ >> (8 * k));
    for (int k = 0; k < 4; ++k) msg[44 + k] = static_cast<std::uint8_t>(lo >> (8 * k));
    for (int k = 0; k < 4; ++k) msg[48 + k] = static_cast<std::uint8_t>(hi >> (8 * k));
    Seed out{};
    crypto_generichash(out.data(), out.size(), msg.data(), msg.size(), nullptr, 0);
    return out;
  }

  std::uint64_t round() const { return round_; }

 private:
  Seed master_;
  std::uint64_t round_;
};

// ---------------------------------------------------------------------------
// Masking

struct MaskedShare {
  UserId user = 0;
  FixedVector masked;
  std::optional<ParamDigest> binding;

  friend bool operator==(const MaskedShare&, const MaskedShare&) = default;
};

/// y_i = v_i + sum_{j > i} Stream(s_ij, binding) - sum_{j < i} Stream(s_ji, binding)  (mod 2^m).
inline MaskedShare mask_share(const FixedVector& v, const PairSecrets& secrets, UserId self,
                              std::span<const UserId> all_ids, const std::optional<ParamDigest>& binding = std::nullopt,
                              const StreamGenerator& stream = default_stream()) {
  if (all_ids.size() < 2) throw ArgumentError("mask_share: secure aggregation needs at least two users");
  if (std::adjacent_find(all_ids.begin(), all_ids.end(), std::greater_equal<>()) != all_ids.end()) {
    throw ArgumentError("mask_share: user ids must be strictly increasing");
  }
  if (!std::binary_search(all_ids.begin(), all_ids.end(), self)) {
    throw ArgumentError("mask_share: user " + std::to_string(self) + " is not in the aggregation set");
  }
  MaskedShare share{self, v, binding};
  const std::uint64_t mask = v.ring.mask();
  std::span<const std::uint8_t> bind;
  if (binding) bind = std::span<const std::uint8_t>(binding->data(), binding->size());
  std::vector<std::uint64_t> pad(v.size());
  for (UserId peer : all_ids) {
    if (peer == self) continue;
    stream.expand(secrets.seed(self, peer), bind, pad);
    if (self < peer) {
      ring_add(share.masked.values, pad, mask);
    } else {
      ring_sub(share.masked.values, pad, mask);
    }
  }
  return share;
}

/// Ring sum of the shares of exactly `expected_ids`. Any missing share blocks
/// unmasking: there is no dropout recovery, so the tolerated dropout count is 0 < n - 1.
inline FixedVector aggregate_shares(std::span<const MaskedShare> shares, std::span<const UserId> expected_ids) {
  if (expected_ids.empty()) throw AggregationError("aggregate_shares: empty aggregation set");
  std::map<UserId, const MaskedShare*> by_user;
  for (const auto& s : shares) {
    if (!by_user.emplace(s.user, &s).second) {
      throw AggregationError("aggregate_shares: duplicate share from user " + std::to_string(s.user));
    }
  }
  for (UserId id : expected_ids) {
    if (!by_user.count(id)) {
      throw AggregationError("aggregate_shares: share of user " + std::to_string(id) +
                             " is missing; aggregate cannot be unmasked");
    }
  }
  if (by_user.size() != expected_ids.size()) throw AggregationError("aggregate_shares: share from unexpected user");
  const auto& first = shares.front().masked;
  FixedVector acc{std::vector<std::uint64_t>(first.size(), 0), first.ring};
  for (const auto& s : shares) {
    if (s.masked.size() != acc.size() || !(s.masked.ring == acc.ring)) {
      throw AggregationError("aggregate_shares: incongruent share from user " + std::to_string(s.user));
    }
    ring_add(acc.values, s.masked.values, acc.ring.mask());
  }
  return acc;
}

inline FixedVector aggregate_shares(std::span<const MaskedShare> shares) {
  std::vector<UserId> ids;
  for (const auto& s : shares) ids.push_back(s.user);
  return aggregate_shares(shares, ids);
}

/// Ideal functionality: the exact real-valued element-wise sum.
inline nn::ParamSet ideal_aggregate(std::span<const nn::ParamSet> updates) {
  if (updates.empty()) throw AggregationError("ideal_aggregate: no updates");
  nn::ParamSet sum = updates.front();
  for (std::size_t i = 1; i < updates.size(); ++i) sum += updates[i];
  return sum;
}

inline Tensor ideal_aggregate(std::span<const Tensor> updates) {
  if (updates.empty()) throw AggregationError("ideal_aggregate: no updates");
  Tensor sum = updates.front();
  for (std::size_t i = 1; i < updates.size(); ++i) {
    require_same_shape(sum, updates[i], "ideal_aggregate");
    for (std::size_t k = 0; k < sum.size(); ++k) sum[k] += updates[i][k];
  }
  return sum;
}

// ---------------------------------------------------------------------------
// Parameter digest

/// SHA-256 of the canonical checkpoint serialization.
inline ParamDigest param_digest(const nn::ParamSet& params) {
  ensure_sodium();
  const Bytes bytes = serialize_params(params);
  ParamDigest d{};
  crypto_hash_sha256(d.data(), bytes.data(), bytes.size());
  return d;
}

inline std::string to_hex(std::span<const std::uint8_t> bytes) {
  static constexpr char kHex[] = "0123456789abcdef";
  std::string s;
  s.reserve(bytes.size() * 2);
  for (auto b : bytes) {
    s.push_back(kHex[b >> 4]);
    s.push_back(kHex[b & 15]);
  }
  return s;
}

// ---------------------------------------------------------------------------
// Share wire format: u32 user, u8 binding flag, [32-byte digest], u64 count, count x u64 (all little-endian).

inline Bytes encode_share(const MaskedShare& s) {
  Bytes out;
  out.reserve(4 + 1 + 32 + 8 + 8 * s.masked.size());
  detail::put_u32(out, s.user);
  out.push_back(s.binding ? 1 : 0);
  if (s.binding) out.insert(out.end(), s.binding->begin(), s.binding->end());
  detail::put_u64(out, s.masked.size());
  for (auto v : s.masked.values) detail::put_u64(out, v);
  return out;
}

inline MaskedShare decode_share(std::span<const std::uint8_t> bytes, const RingConfig& ring) {
  detail::Reader in(bytes);
  MaskedShare s;
  s.user = in.u32();
  const std::uint8_t flag = in.u8();
  if (flag > 1) throw FormatError("share: invalid binding flag");
  if (flag) {
    ParamDigest d{};
    in.raw(d.data(), d.size());
    s.binding = d;
  }
  const std::uint64_t count = in.u64();
  if (count > in.remaining() / 8) throw FormatError("share: count exceeds payload");
  s.masked.ring = ring;
  s.masked.values.resize(count);
  for (auto& v : s.masked.values) {
    v = in.u64();
    if (v & ~ring.mask()) throw FormatError("share: value outside the ring");
  }
  if (!in.done()) throw FormatError("share: trailing bytes");
  return s;
}

}  // namespace secagg_lab::sa
