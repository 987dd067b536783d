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

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "secagg_lab/nn.hpp"

namespace secagg_lab {

class FormatError : public Error {
 public:
  using Error::Error;
};

using Bytes = std::vector<std::uint8_t>;

namespace detail {

inline void put_u32(Bytes& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
inline void put_u64(Bytes& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
inline void put_f64(Bytes& out, double v) { put_u64(out, std::bit_cast<std::uint64_t>(v)); }

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}
  bool done() const { return pos_ == bytes_.size(); }
  std::size_t remaining() const { return bytes_.size() - pos_; }
  std::uint8_t u8() {
    need(1);
    return bytes_[pos_++];
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_++]) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_++]) << (8 * i);
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  void raw(std::uint8_t* dst, std::size_t n) {
    need(n);
    std::memcpy(dst, bytes_.data() + pos_, n);
    pos_ += n;
  }

 private:
  void need(std::size_t n) const {
    if (remaining() < n) throw FormatError("unexpected end of input");
  }
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline constexpr std::array<std::uint8_t, 4> kCheckpointMagic{'S', 'A', 'G', 'L'};
inline constexpr std::uint8_t kCheckpointVersion = 1;

/// Canonical parameter bytes: "SAGL", version, then for every tensor in
/// canonical order: u32 rank, rank x u32 dims, little-endian f64 payload.
inline Bytes serialize_params(const nn::ParamSet& params) {
  Bytes out(kCheckpointMagic.begin(), kCheckpointMagic.end());
  out.push_back(kCheckpointVersion);
  out.reserve(out.size() + params.scalar_count() * 8 + params.num_layers() * 16);
  params.for_each_tensor([&](std::size_t, std::size_t, const Tensor& t) {
    detail::put_u32(out, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) detail::put_u32(out, static_cast<std::uint32_t>(d));
    for (double v : t.storage()) detail::put_f64(out, v);
  });
  return out;
}

/// Reads the tensor sequence and assigns it to the layers of `arch` in order.
inline nn::ParamSet deserialize_params(std::span<const std::uint8_t> bytes, const nn::Architecture& arch) {
  detail::Reader in(bytes);
  std::array<std::uint8_t, 4> magic{};
  in.raw(magic.data(), magic.size());
  if (magic != kCheckpointMagic) throw FormatError("bad checkpoint magic");
  if (const auto v = in.u8(); v != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(v));
  }
  nn::ParamSet params = nn::ParamSet::zeros(arch);
  params.for_each_tensor([&](std::size_t l, std::size_t t, Tensor& tensor) {
    if (in.done()) throw FormatError("checkpoint has too few tensors");
    const std::uint32_t rank = in.u32();
    Shape shape(rank);
    for (auto& d : shape) d = in.u32();
    if (shape != tensor.shape()) {
      throw FormatError("tensor (" + std::to_string(l) + "," + std::to_string(t) + ") has shape " +
                        shape_string(shape) + ", architecture expects " + shape_string(tensor.shape()));
    }
    for (double& v : tensor.storage()) v = in.f64();
  });
  if (!in.done()) throw FormatError("trailing bytes after last tensor");
  return params;
}

inline void write_bytes(const std::string& path, const Bytes& bytes) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open " + path + " for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

inline Bytes read_bytes(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open " + path);
  return Bytes(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
}

inline void save_checkpoint(const std::string& path, const nn::ParamSet& params) {
  write_bytes(path, serialize_params(params));
}

inline nn::ParamSet load_checkpoint(const std::string& path, const nn::Architecture& arch) {
  return deserialize_params(read_bytes(path), arch);
}

}  // namespace secagg_lab
