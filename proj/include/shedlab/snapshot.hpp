#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "shedlab/errors.hpp"
#include "shedlab/mask.hpp"
#include "shedlab/params.hpp"

namespace shedlab {

// Binary container formats.
//
// Mask snapshot ("SHDLB1"):
//   magic            6 bytes
//   granularity      1 byte   (0 = weight, 1 = block)
//   tensor count     u32 LE
//   per tensor:      name length u32 LE, name bytes,
//                    unit count u64 LE,
//                    mask bits packed LSB-first, ceil(count / 8) bytes
//   checksum         u32 LE, CRC-32 of everything after the magic
//
// Weight file ("SHDLW1"):
//   magic            6 bytes
//   tensor count     u32 LE
//   per tensor:      name length u32 LE, name bytes,
//                    rank u32 LE, dims u64 LE each,
//                    values float32 LE

enum class MaskGranularity : std::uint8_t { weight = 0, block = 1 };

namespace detail {

inline std::uint32_t crc32(const std::uint8_t* data, std::size_t len) {
  static const auto table = [] {
    std::array<std::uint32_t, 256> t{};
    for (std::uint32_t i = 0; i < 256; ++i) {
      std::uint32_t c = i;
      for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
      t[i] = c;
    }
    return t;
  }();
  std::uint32_t crc = 0xFFFFFFFFu;
  for (std::size_t i = 0; i < len; ++i) crc = table[(crc ^ data[i]) & 0xFF] ^ (crc >> 8);
  return crc ^ 0xFFFFFFFFu;
}

inline void put_u32(std::vector<std::uint8_t>& buf, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

inline void put_u64(std::vector<std::uint8_t>& buf, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) buf.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

inline void put_f32(std::vector<std::uint8_t>& buf, float v) {
  put_u32(buf, std::bit_cast<std::uint32_t>(v));
}

struct ByteReader {
  const std::vector<std::uint8_t>& buf;
  std::size_t pos = 0;
  std::string path;

  void need(std::size_t n) const {
    if (pos + n > buf.size()) throw FormatError(path + ": truncated file");
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(buf[pos + i]) << (8 * i);
    pos += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t(buf[pos + i]) << (8 * i);
    pos += 8;
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  std::string str(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(buf.data() + pos), n);
    pos += n;
    return s;
  }
};

inline std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw FormatError(path + ": cannot open");
  const auto size = in.tellg();
  in.seekg(0);
  std::vector<std::uint8_t> buf(static_cast<std::size_t>(size));
  if (!in.read(reinterpret_cast<char*>(buf.data()), size))
    throw FormatError(path + ": read failed");
  return buf;
}

inline void write_file(const std::string& path, const std::vector<std::uint8_t>& buf) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError(path + ": cannot open for writing");
  out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!out) throw FormatError(path + ": write failed");
}

}  // namespace detail

constexpr char kMaskMagic[7] = "SHDLB1";
constexpr char kWeightMagic[7] = "SHDLW1";

struct MaskSnapshot {
  MaskGranularity granularity = MaskGranularity::weight;
  MaskState mask;  // names, kept bits and counts; run counters are not stored
};

inline void write_mask_snapshot(const std::string& path, const MaskState& mask,
                                MaskGranularity granularity) {
  std::vector<std::uint8_t> payload;
  payload.push_back(static_cast<std::uint8_t>(granularity));
  detail::put_u32(payload, static_cast<std::uint32_t>(mask.tensors.size()));
  for (const auto& tm : mask.tensors) {
    detail::put_u32(payload, static_cast<std::uint32_t>(tm.name.size()));
    payload.insert(payload.end(), tm.name.begin(), tm.name.end());
    detail::put_u64(payload, tm.kept.size());
    std::vector<std::uint8_t> packed((tm.kept.size() + 7) / 8, 0);
    for (std::size_t i = 0; i < tm.kept.size(); ++i)
      if (tm.kept[i]) packed[i / 8] |= static_cast<std::uint8_t>(1u << (i % 8));
    payload.insert(payload.end(), packed.begin(), packed.end());
  }

  std::vector<std::uint8_t> buf(kMaskMagic, kMaskMagic + 6);
  buf.insert(buf.end(), payload.begin(), payload.end());
  detail::put_u32(buf, detail::crc32(payload.data(), payload.size()));
  detail::write_file(path, buf);
}

inline MaskSnapshot read_mask_snapshot(const std::string& path) {
  const auto buf = detail::read_file(path);
  if (buf.size() < 11 || std::memcmp(buf.data(), kMaskMagic, 6) != 0)
    throw FormatError(path + ": bad mask snapshot magic");

  const std::size_t payload_len = buf.size() - 10;
  const std::uint32_t stored_crc = std::uint32_t(buf[buf.size() - 4]) |
                                   (std::uint32_t(buf[buf.size() - 3]) << 8) |
                                   (std::uint32_t(buf[buf.size() - 2]) << 16) |
                                   (std::uint32_t(buf[buf.size() - 1]) << 24);
  if (detail::crc32(buf.data() + 6, payload_len) != stored_crc)
    throw FormatError(path + ": checksum mismatch");

  detail::ByteReader r{buf, 6, path};
  MaskSnapshot snap;
  r.need(1);
  const std::uint8_t g = buf[r.pos++];
  if (g > 1) throw FormatError(path + ": unknown granularity flag");
  snap.granularity = static_cast<MaskGranularity>(g);
  const std::uint32_t count = r.u32();
  std::size_t offset = 0;
  for (std::uint32_t i = 0; i < count; ++i) {
    MaskState::TensorMask tm;
    tm.name = r.str(r.u32());
    const std::uint64_t units = r.u64();
    tm.global_offset = offset;
    tm.kept.resize(units);
    const std::size_t bytes = (units + 7) / 8;
    r.need(bytes);
    for (std::uint64_t k = 0; k < units; ++k)
      tm.kept[k] = (buf[r.pos + k / 8] >> (k % 8)) & 1u;
    r.pos += bytes;
    offset += units;
    snap.mask.tensors.push_back(std::move(tm));
  }
  if (r.pos != buf.size() - 4) throw FormatError(path + ": trailing bytes before checksum");
  snap.mask.total = offset;
  snap.mask.kept_count = 0;
  for (const auto& tm : snap.mask.tensors)
    for (auto k : tm.kept) snap.mask.kept_count += k;
  return snap;
}

inline void write_weights(const std::string& path, const ParamStore& params) {
  std::vector<std::uint8_t> buf(kWeightMagic, kWeightMagic + 6);
  detail::put_u32(buf, static_cast<std::uint32_t>(params.count()));
  for (const auto& t : params.tensors) {
    detail::put_u32(buf, static_cast<std::uint32_t>(t.name.size()));
    buf.insert(buf.end(), t.name.begin(), t.name.end());
    detail::put_u32(buf, static_cast<std::uint32_t>(t.value.shape.size()));
    for (std::size_t d : t.value.shape) detail::put_u64(buf, d);
    for (double v : t.value.data) detail::put_f32(buf, static_cast<float>(v));
  }
  detail::write_file(path, buf);
}

/// Reads a weight file back as a ParamStore. Tensors come back in file
/// order with the prunable flag cleared; callers decide prunability.
inline ParamStore read_weights(const std::string& path) {
  const auto buf = detail::read_file(path);
  if (buf.size() < 10 || std::memcmp(buf.data(), kWeightMagic, 6) != 0)
    throw FormatError(path + ": bad weight file magic");
  detail::ByteReader r{buf, 6, path};
  ParamStore params;
  const std::uint32_t count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    ParamTensor t;
    t.name = r.str(r.u32());
    const std::uint32_t rank = r.u32();
    std::vector<std::size_t> shape(rank);
    for (auto& d : shape) d = static_cast<std::size_t>(r.u64());
    Tensor value = Tensor::zeros(shape);
    for (double& v : value.data) v = static_cast<double>(r.f32());
    t.value = std::move(value);
    params.tensors.push_back(std::move(t));
  }
  if (r.pos != buf.size()) throw FormatError(path + ": trailing bytes");
  return params;
}

}  // namespace shedlab
