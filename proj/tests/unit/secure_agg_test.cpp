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

#include <cmath>
#include <set>

#include "secagg_lab/checkpoint.hpp"
#include "secagg_lab/lab/config.hpp"
#include "secagg_lab/rng.hpp"
#include "secagg_lab/secure_agg.hpp"

namespace {

using namespace secagg_lab;
using namespace secagg_lab::sa;

std::vector<UserId> iota_ids(std::size_t n) {
  std::vector<UserId> ids(n);
  for (std::size_t i = 0; i < n; ++i) ids[i] = static_cast<UserId>(i);
  return ids;
}

FixedVector random_ring_vector(Rng& rng, std::size_t len, const RingConfig& ring = {}) {
  FixedVector v{std::vector<std::uint64_t>(len), ring};
  for (auto& x : v.values) x = rng() & ring.mask();
  return v;
}

TEST(FixedPoint, KnownEncodings) {
  const RingConfig r16{16, 64};
  EXPECT_EQ(encode_scalar(1.5, r16), 98304u);
  EXPECT_EQ(encode_scalar(-1.0, r16), ~std::uint64_t{0} - 65536 + 1);
  EXPECT_EQ(decode_scalar(encode_scalar(-1.0, r16), r16), -1.0);
  const RingConfig r32{8, 32};
  EXPECT_EQ(encode_scalar(-1.0, r32), (std::uint64_t{1} << 32) - 256);
  EXPECT_EQ(decode_scalar(encode_scalar(-2.5, r32), r32), -2.5);
}

TEST(FixedPoint, HeadroomIsEnforced) {
  const RingConfig r;
  EXPECT_THROW(encode_scalar(r.headroom(), r), ArgumentError);
  EXPECT_THROW(encode_scalar(std::nan(""), r), ArgumentError);
  EXPECT_NO_THROW(encode_scalar(r.headroom() / 2, r));
  EXPECT_THROW((RingConfig{63, 64}.validate()), ArgumentError);
}

TEST(FixedPoint, RoundTripWithinHalfStep) {
  const RingConfig r16{16, 64};
  Rng rng = make_rng(21);
  double worst = 0.0;
  for (int i = 0; i < 100000; ++i) {
    const double x = uniform(rng, -100.0, 100.0);
    worst = std::max(worst, std::fabs(decode_scalar(encode_scalar(x, r16), r16) - x));
  }
  EXPECT_LE(worst, std::ldexp(1.0, -17));
}

TEST(IdealAggregate, Sums) {
  const std::vector<Tensor> ts{Tensor::vector({1, 2}), Tensor::vector({3, 4})};
  EXPECT_EQ(ideal_aggregate(std::span<const Tensor>(ts)), Tensor::vector({4, 6}));
  const std::vector<Tensor> zd{Tensor::vector({0, 0}), Tensor::vector({0, 0}), Tensor::vector({0.25, -7})};
  EXPECT_EQ(ideal_aggregate(std::span<const Tensor>(zd)), Tensor::vector({0.25, -7}));
  const std::vector<Tensor> copies(5, Tensor::vector({1.5, -2}));
  EXPECT_EQ(ideal_aggregate(std::span<const Tensor>(copies)), Tensor::vector({7.5, -10}));
  EXPECT_THROW(ideal_aggregate(std::span<const Tensor>()), AggregationError);
}

TEST(PairSecrets, SymmetricAndDistinct) {
  const auto s = PairSecrets::from_seed(7, 3);
  EXPECT_EQ(s.seed(2, 9), s.seed(9, 2));
  std::set<Seed> seen;
  for (UserId a = 0; a < 6; ++a)
    for (UserId b = a + 1; b < 6; ++b) EXPECT_TRUE(seen.insert(s.seed(a, b)).second);
  EXPECT_NE(s.seed(0, 1), PairSecrets::from_seed(7, 4).seed(0, 1));
  EXPECT_NE(s.seed(0, 1), PairSecrets::from_seed(8, 3).seed(0, 1));
  EXPECT_THROW(s.seed(4, 4), ArgumentError);
}

TEST(Stream, DeterministicAndBindingSensitive) {
  const Seed seed = PairSecrets::from_seed(1, 0).seed(0, 1);
  const auto& g = default_stream();
  std::vector<std::uint64_t> a(37), b(37), c(37), d(5);
  g.expand(seed, {}, a);
  g.expand(seed, {}, b);
  EXPECT_EQ(a, b);
  const std::uint8_t bind[] = {1, 2, 3};
  g.expand(seed, bind, c);
  EXPECT_NE(a, c);
  g.expand(seed, {}, d);
  EXPECT_TRUE(std::equal(d.begin(), d.end(), a.begin()));
  const std::vector<std::uint8_t> too_long(33, 0);
  EXPECT_THROW(g.expand(seed, too_long, d), ArgumentError);
}

TEST(Masking, TwoUsersDecodeToSum) {
  const RingConfig r;
  const auto s = PairSecrets::from_seed(99, 0);
  const auto ids = iota_ids(2);
  const auto y1 = mask_share(FixedVector{{encode_scalar(3, r)}, r}, s, 0, ids);
  const auto y2 = mask_share(FixedVector{{encode_scalar(5, r)}, r}, s, 1, ids);
  EXPECT_NE(y1.masked.values[0], encode_scalar(3, r));
  const std::vector<MaskedShare> shares{y1, y2};
  EXPECT_EQ(fixed_decode(aggregate_shares(shares))[0], 8.0);
}

TEST(Masking, OppositeInputsCancelToZero) {
  const RingConfig r;
  const auto s = PairSecrets::from_seed(5, 1);
  const auto ids = iota_ids(2);
  Rng rng = make_rng(5);
  std::vector<double> v(9);
  for (double& x : v) x = uniform(rng, -10, 10);
  std::vector<double> neg(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) neg[i] = -v[i];
  const std::vector<MaskedShare> shares{mask_share(fixed_encode(std::span<const double>(v), r), s, 0, ids),
                                        mask_share(fixed_encode(std::span<const double>(neg), r), s, 1, ids)};
  for (double x : fixed_decode(aggregate_shares(shares))) EXPECT_EQ(x, 0.0);
}

TEST(Masking, ExactCancellationProperty) {
  Rng rng = make_rng(31);
  for (std::size_t n : {2u, 3u, 5u, 10u, 47u, 200u}) {
    for (int trial = 0; trial < 5; ++trial) {
      const auto ids = iota_ids(n);
      const auto s = PairSecrets::from_seed(rng(), trial);
      const std::size_t len = 1 + rng() % 40;
      std::vector<std::uint64_t> truth(len, 0);
      std::vector<MaskedShare> shares;
      for (UserId id : ids) {
        const auto v = random_ring_vector(rng, len);
        ring_add(truth, v.values, v.ring.mask());
        shares.push_back(mask_share(v, s, id, ids));
      }
      EXPECT_EQ(aggregate_shares(shares, ids).values, truth) << "n=" << n;
    }
  }
}

// Smaller rings mask within the modulus too.
TEST(Masking, CancelsInNarrowRing) {
  const RingConfig r{8, 20};
  Rng rng = make_rng(32);
  const auto ids = iota_ids(7);
  const auto s = PairSecrets::from_seed(3, 3);
  std::vector<std::uint64_t> truth(11, 0);
  std::vector<MaskedShare> shares;
  for (UserId id : ids) {
    const auto v = random_ring_vector(rng, 11, r);
    ring_add(truth, v.values, r.mask());
    shares.push_back(mask_share(v, s, id, ids));
    for (auto x : shares.back().masked.values) EXPECT_LE(x, r.mask());
  }
  EXPECT_EQ(aggregate_shares(shares).values, truth);
}

TEST(Masking, MatchesIdealAggregateWithinQuantization) {
  const RingConfig r;
  Rng rng = make_rng(33);
  const auto arch = lab::default_architecture(16, 4);
  const auto ids = iota_ids(5);
  const auto s = PairSecrets::from_seed(4, 0);
  std::vector<nn::ParamSet> updates;
  std::vector<MaskedShare> shares;
  for (UserId id : ids) {
    updates.push_back(nn::init_params(arch, rng()));
    shares.push_back(mask_share(fixed_encode(updates.back(), r), s, id, ids));
  }
  const auto agg = fixed_decode(aggregate_shares(shares), updates.front());
  const auto ideal = ideal_aggregate(updates);
  const auto a = agg.flatten(), b = ideal.flatten();
  for (std::size_t i = 0; i < a.size(); ++i) ASSERT_LE(std::fabs(a[i] - b[i]), 5 * r.step());
}

TEST(Masking, DeviantBindingGarblesAggregate) {
  const RingConfig r;
  const auto ids = iota_ids(4);
  const auto s = PairSecrets::from_seed(6, 0);
  ParamDigest good{}, bad{};
  bad[0] = 1;
  std::vector<std::uint64_t> truth(6, 0);
  std::vector<MaskedShare> shares;
  for (UserId id : ids) {
    const auto v = fixed_encode(std::vector<double>{1, 2, 3, 4, 5, 6}, r);
    ring_add(truth, v.values, r.mask());
    shares.push_back(mask_share(v, s, id, ids, id == 2 ? bad : good));
  }
  const auto agg = aggregate_shares(shares).values;
  for (std::size_t i = 0; i < agg.size(); ++i) EXPECT_NE(agg[i], truth[i]);
}

TEST(Masking, ValidatesMembership) {
  const RingConfig r;
  const auto s = PairSecrets::from_seed(1, 0);
  const FixedVector v{{1, 2}, r};
  const std::vector<UserId> ids{0, 2, 5};
  EXPECT_THROW(mask_share(v, s, 3, ids), ArgumentError);
  EXPECT_THROW(mask_share(v, s, 0, std::vector<UserId>{0}), ArgumentError);
  EXPECT_THROW(mask_share(v, s, 0, std::vector<UserId>{2, 0}), ArgumentError);
}

TEST(Aggregation, WithheldShareBlocksRelease) {
  const RingConfig r;
  const auto ids = iota_ids(10);
  const auto s = PairSecrets::from_seed(2, 0);
  Rng rng = make_rng(35);
  std::vector<MaskedShare> shares;
  std::vector<std::uint64_t> truth(4, 0);
  for (UserId id : ids) {
    const auto v = random_ring_vector(rng, 4, r);
    ring_add(truth, v.values, r.mask());
    shares.push_back(mask_share(v, s, id, ids));
  }
  EXPECT_EQ(aggregate_shares(shares, ids).values, truth);
  auto partial = shares;
  partial.erase(partial.begin() + 3);
  EXPECT_THROW(aggregate_shares(partial, ids), AggregationError);
  auto dup = shares;
  dup.push_back(shares[0]);
  EXPECT_THROW(aggregate_shares(dup, ids), AggregationError);
}

TEST(Aggregation, SharesLookUniform) {
  const RingConfig r;
  const auto ids = iota_ids(3);
  const auto s = PairSecrets::from_seed(77, 0);
  const auto y = mask_share(FixedVector{std::vector<std::uint64_t>(20000, 0), r}, s, 1, ids);
  // Top byte of each word: a uniform byte has mean 127.5 and variance (256^2 - 1) / 12.
  double mean = 0.0, var = 0.0;
  for (auto v : y.masked.values) mean += static_cast<double>(v >> 56);
  mean /= 20000.0;
  for (auto v : y.masked.values) var += std::pow(static_cast<double>(v >> 56) - mean, 2);
  var /= 20000.0;
  EXPECT_NEAR(mean, 127.5, 3.0);
  EXPECT_NEAR(var, (256.0 * 256.0 - 1.0) / 12.0, 300.0);
}

TEST(WireFormat, ShareRoundTrip) {
  const RingConfig r;
  Rng rng = make_rng(36);
  MaskedShare s{7, random_ring_vector(rng, 13, r), std::nullopt};
  EXPECT_EQ(decode_share(encode_share(s), r), s);
  ParamDigest d{};
  d[5] = 42;
  s.binding = d;
  const Bytes bytes = encode_share(s);
  EXPECT_EQ(bytes.size(), 4u + 1 + 32 + 8 + 8 * 13);
  EXPECT_EQ(bytes[0], 7);
  EXPECT_EQ(bytes[4], 1);
  EXPECT_EQ(decode_share(bytes, r), s);
  Bytes bad = bytes;
  bad[4] = 2;
  EXPECT_THROW(decode_share(bad, r), FormatError);
  bad = bytes;
  bad.push_back(0);
  EXPECT_THROW(decode_share(bad, r), FormatError);
  EXPECT_THROW(decode_share(bytes, RingConfig{8, 20}), FormatError);
}

TEST(Digest, EqualityAndSensitivity) {
  const auto arch = lab::default_architecture(16, 4);
  const auto p = nn::init_params(arch, 40);
  const nn::ParamSet copy = p;
  EXPECT_EQ(param_digest(p), param_digest(copy));
  nn::ParamSet flipped = p;
  double& x = flipped.tensor(2, 0)[3];
  x = std::nextafter(x, 10.0);
  EXPECT_NE(param_digest(p), param_digest(flipped));
  EXPECT_EQ(param_digest(deserialize_params(serialize_params(p), arch)), param_digest(p));
  EXPECT_EQ(to_hex(param_digest(p)).size(), 64u);
}

}  // namespace
