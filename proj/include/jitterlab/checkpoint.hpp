#pragma once

// Binary checkpoint format (all integers little-endian):
//   "GJCK" | u16 version=1 | u32 tensor count
//   per tensor: u16 name length | UTF-8 name | u8 dtype (0 = f32) | u8 rank |
//               u32 dims[rank] | f32 payload, row-major
//   u32 CRC-32 of every preceding byte
// Metadata travels as zero-element tensors named "@key=value".

#include <zlib.h>

#include <bit>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>

#include "jitterlab/dataset_io.hpp"
#include "jitterlab/errors.hpp"
#include "jitterlab/models.hpp"
#include "jitterlab/optim.hpp"

namespace jitterlab {

inline constexpr char kCheckpointMagic[4] = {'G', 'J', 'C', 'K'};
inline constexpr std::uint16_t kCheckpointVersion = 1;

struct Checkpoint {
  std::map<std::string, std::string> metadata;
  ParamStore<float> tensors;

  std::string meta(const std::string& key) const {
    auto it = metadata.find(key);
    return it == metadata.end() ? std::string() : it->second;
  }
};

namespace detail {

class ByteWriter {
 public:
  void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
  void u16(std::uint16_t v) {
    for (int i = 0; i < 2; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void bytes(const std::string& s) { buf_ += s; }
  std::string& str() { return buf_; }

 private:
  std::string buf_;
};

class ByteReader {
 public:
  ByteReader(const std::string& s, std::size_t end) : s_(s), end_(end) {}
  std::uint8_t u8() {
    need(1);
    return static_cast<std::uint8_t>(s_[pos_++]);
  }
  std::uint16_t u16() {
    std::uint16_t v = 0;
    for (int i = 0; i < 2; ++i) v |= static_cast<std::uint16_t>(u8()) << (8 * i);
    return v;
  }
  std::uint32_t u32() {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(u8()) << (8 * i);
    return v;
  }
  std::string bytes(std::size_t n) {
    need(n);
    auto r = s_.substr(pos_, n);
    pos_ += n;
    return r;
  }
  std::size_t pos() const { return pos_; }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > end_) throw ParseError("checkpoint truncated at byte " + std::to_string(pos_));
  }
  const std::string& s_;
  std::size_t end_;
  std::size_t pos_ = 0;
};

inline std::uint32_t crc32_of(const char* data, std::size_t n) {
  return static_cast<std::uint32_t>(::crc32(0L, reinterpret_cast<const Bytef*>(data), static_cast<uInt>(n)));
}

}  // namespace detail

inline std::string encode_checkpoint(const Checkpoint& ck) {
  detail::ByteWriter w;
  w.bytes(std::string(kCheckpointMagic, 4));
  w.u16(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(ck.metadata.size() + ck.tensors.size()));
  auto header = [&w](const std::string& name, const Shape& shape) {
    if (name.size() > 0xffff) throw Error("checkpoint tensor name too long");
    w.u16(static_cast<std::uint16_t>(name.size()));
    w.bytes(name);
    w.u8(0);
    w.u8(static_cast<std::uint8_t>(shape.size()));
    for (auto d : shape) w.u32(static_cast<std::uint32_t>(d));
  };
  for (const auto& [k, v] : ck.metadata) {
    if (k.find('=') != std::string::npos) throw Error("metadata key may not contain '='");
    header("@" + k + "=" + v, Shape{0});
  }
  for (const auto& [name, t] : ck.tensors) {
    if (name.starts_with("@")) throw Error("tensor names may not start with '@'");
    header(name, t.shape());
    for (float v : t.values()) w.u32(std::bit_cast<std::uint32_t>(v));
  }
  const auto crc = detail::crc32_of(w.str().data(), w.str().size());
  w.u32(crc);
  return std::move(w.str());
}

inline Checkpoint decode_checkpoint(const std::string& bytes) {
  if (bytes.size() < 14) throw ParseError("checkpoint truncated: " + std::to_string(bytes.size()) + " bytes");
  if (bytes.compare(0, 4, kCheckpointMagic, 4) != 0) throw ParseError("not a checkpoint: bad magic bytes");
  const std::size_t body = bytes.size() - 4;
  detail::ByteReader tail(bytes, bytes.size());
  (void)tail.bytes(body);
  const auto stored_crc = tail.u32();
  detail::ByteReader r(bytes, body);
  (void)r.bytes(4);
  const auto version = r.u16();
  if (version != kCheckpointVersion) throw ParseError("unsupported checkpoint version " + std::to_string(version));
  const auto count = r.u32();
  Checkpoint ck;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name = r.bytes(r.u16());
    const auto dtype = r.u8();
    if (dtype != 0) throw ParseError("tensor '" + name + "' has unsupported dtype code " + std::to_string(dtype));
    const auto rank = r.u8();
    Shape shape(rank);
    for (auto& d : shape) d = r.u32();
    const auto n = shape_size(shape);
    if (name.starts_with("@")) {
      const auto eq = name.find('=');
      if (eq == std::string::npos || n != 0) throw ParseError("malformed metadata entry '" + name + "'");
      ck.metadata[name.substr(1, eq - 1)] = name.substr(eq + 1);
      continue;
    }
    std::vector<float> vals(n);
    for (auto& v : vals) v = std::bit_cast<float>(r.u32());
    if (!ck.tensors.emplace(name, Tensor<float>(shape, std::move(vals))).second)
      throw ParseError("duplicate tensor '" + name + "' in checkpoint");
  }
  if (r.pos() != body) throw ParseError("checkpoint has trailing bytes before the CRC");
  if (detail::crc32_of(bytes.data(), body) != stored_crc) throw ParseError("checkpoint CRC mismatch");
  return ck;
}

inline void save_checkpoint(const fs::path& path, const Checkpoint& ck) {
  write_file_atomic(path, encode_checkpoint(ck));
}

inline Checkpoint load_checkpoint(const fs::path& path) {
  if (!fs::exists(path)) throw IoError("checkpoint not found: " + path.string());
  return decode_checkpoint(read_file(path));
}

// Packs a gaze model (and optionally a discriminator) with metadata.
inline Checkpoint make_checkpoint(const GazeModel<float>& g, const Discriminator<float>* d, std::uint64_t seed,
                                  std::uint64_t step) {
  Checkpoint ck;
  ck.metadata["arch"] = g.arch().id();
  ck.metadata["seed"] = std::to_string(seed);
  ck.metadata["step"] = std::to_string(step);
  for (const auto& [k, v] : g.params()) ck.tensors.emplace(k, v);
  if (d)
    for (const auto& [k, v] : d->params()) ck.tensors.emplace(k, v);
  return ck;
}

inline void require_architecture(const Checkpoint& ck, const Architecture& arch) {
  if (ck.meta("arch") != arch.id())
    throw ParseError("checkpoint architecture '" + ck.meta("arch") + "' does not match expected '" + arch.id() + "'");
}

inline GazeModel<float> gaze_model_from(const Checkpoint& ck, const Architecture& arch = {}) {
  require_architecture(ck, arch);
  ParamStore<float> p;
  for (const auto& [name, t] : ck.tensors)
    if (name.starts_with("F.") || name.starts_with("G.")) p.emplace(name, t);
  if (p.size() != arch.gaze_shapes().size()) throw ParseError("checkpoint gaze parameter table does not match architecture");
  return GazeModel<float>(arch, std::move(p));
}

inline std::optional<Discriminator<float>> discriminator_from(const Checkpoint& ck, const Architecture& arch = {}) {
  require_architecture(ck, arch);
  ParamStore<float> p;
  for (const auto& [name, t] : ck.tensors)
    if (name.starts_with("D.")) p.emplace(name, t);
  if (p.empty()) return std::nullopt;
  if (p.size() != arch.discriminator_shapes().size())
    throw ParseError("checkpoint discriminator parameter table does not match architecture");
  return Discriminator<float>(arch, std::move(p));
}

}  // namespace jitterlab
