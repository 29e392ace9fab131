#pragma once

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "draco/core/error.hpp"
#include "draco/core/image.hpp"

// MRC2014 subset: 1024-byte little-endian header, mode 2 (float32) payload,
// no extended header.

namespace draco::io {

enum class MrcErrorCode { short_file, bad_magic, unsupported_mode, length_mismatch, extended_header, bad_dimensions, empty_stack, ragged_stack };

inline const char* to_string(MrcErrorCode c) {
  switch (c) {
    case MrcErrorCode::short_file: return "short_file";
    case MrcErrorCode::bad_magic: return "bad_magic";
    case MrcErrorCode::unsupported_mode: return "unsupported_mode";
    case MrcErrorCode::length_mismatch: return "length_mismatch";
    case MrcErrorCode::extended_header: return "extended_header";
    case MrcErrorCode::bad_dimensions: return "bad_dimensions";
    case MrcErrorCode::empty_stack: return "empty_stack";
    case MrcErrorCode::ragged_stack: return "ragged_stack";
  }
  return "unknown";
}

class MrcError : public Error {
 public:
  MrcError(MrcErrorCode code, const std::string& what)
      : Error(ErrorKind::format, std::string("mrc ") + io::to_string(code) + ": " + what), code_(code) {}
  MrcErrorCode code() const noexcept { return code_; }

 private:
  MrcErrorCode code_;
};

inline constexpr std::size_t kMrcHeaderBytes = 1024;
inline constexpr std::int32_t kMrcModeFloat32 = 2;

namespace mrc_offset {
inline constexpr std::size_t nx = 0, ny = 4, nz = 8, mode = 12;
inline constexpr std::size_t mx = 28, my = 32, mz = 36, cella = 40, cellb = 52;
inline constexpr std::size_t mapc = 64, mapr = 68, maps = 72;
inline constexpr std::size_t dmin = 76, dmax = 80, dmean = 84, ispg = 88, nsymbt = 92;
inline constexpr std::size_t exttyp = 104, nversion = 108, origin = 196, map = 208, machst = 212, rms = 216, nlabl = 220;
}  // namespace mrc_offset

struct MrcHeader {
  std::int32_t nx = 0, ny = 0, nz = 0;
  std::int32_t mode = kMrcModeFloat32;
  float pixel_size = 1.0f;
  /// The header exactly as read or written; rewriting a parsed file reuses it.
  std::array<std::uint8_t, kMrcHeaderBytes> raw{};
};

struct MrcFile {
  MrcHeader header;
  std::vector<Image> sections;
};

namespace detail {

inline std::uint32_t load_u32(std::span<const std::uint8_t> b, std::size_t off) {
  return static_cast<std::uint32_t>(b[off]) | static_cast<std::uint32_t>(b[off + 1]) << 8 |
         static_cast<std::uint32_t>(b[off + 2]) << 16 | static_cast<std::uint32_t>(b[off + 3]) << 24;
}
inline std::int32_t load_i32(std::span<const std::uint8_t> b, std::size_t off) {
  return static_cast<std::int32_t>(load_u32(b, off));
}
inline float load_f32(std::span<const std::uint8_t> b, std::size_t off) { return std::bit_cast<float>(load_u32(b, off)); }

inline void store_u32(std::span<std::uint8_t> b, std::size_t off, std::uint32_t v) {
  b[off] = static_cast<std::uint8_t>(v);
  b[off + 1] = static_cast<std::uint8_t>(v >> 8);
  b[off + 2] = static_cast<std::uint8_t>(v >> 16);
  b[off + 3] = static_cast<std::uint8_t>(v >> 24);
}
inline void store_i32(std::span<std::uint8_t> b, std::size_t off, std::int32_t v) {
  store_u32(b, off, static_cast<std::uint32_t>(v));
}
inline void store_f32(std::span<std::uint8_t> b, std::size_t off, float v) { store_u32(b, off, std::bit_cast<std::uint32_t>(v)); }

}  // namespace detail

inline MrcFile read_mrc(std::span<const std::uint8_t> bytes) {
  using namespace detail;
  if (bytes.size() < kMrcHeaderBytes) {
    throw MrcError(MrcErrorCode::short_file, "need 1024 header bytes, got " + std::to_string(bytes.size()));
  }
  if (std::memcmp(bytes.data() + mrc_offset::map, "MAP ", 4) != 0) {
    throw MrcError(MrcErrorCode::bad_magic, "bytes 208..211 are not \"MAP \"");
  }
  MrcFile f;
  auto& h = f.header;
  std::copy_n(bytes.begin(), kMrcHeaderBytes, h.raw.begin());
  h.nx = load_i32(bytes, mrc_offset::nx);
  h.ny = load_i32(bytes, mrc_offset::ny);
  h.nz = load_i32(bytes, mrc_offset::nz);
  h.mode = load_i32(bytes, mrc_offset::mode);
  if (h.mode != kMrcModeFloat32) {
    throw MrcError(MrcErrorCode::unsupported_mode, "mode " + std::to_string(h.mode) + " (only mode 2 is supported)");
  }
  if (h.nx < 1 || h.ny < 1 || h.nz < 1) {
    throw MrcError(MrcErrorCode::bad_dimensions, "dimensions " + std::to_string(h.nx) + "x" + std::to_string(h.ny) +
                                                     "x" + std::to_string(h.nz) + " must all be >= 1");
  }
  const std::int32_t nsymbt = load_i32(bytes, mrc_offset::nsymbt);
  if (nsymbt != 0) throw MrcError(MrcErrorCode::extended_header, "nsymbt = " + std::to_string(nsymbt));

  const auto nx = static_cast<std::uint64_t>(h.nx), ny = static_cast<std::uint64_t>(h.ny),
             nz = static_cast<std::uint64_t>(h.nz);
  // Each factor is below 2^31, so nx*ny fits; guard the remaining products.
  const std::uint64_t plane = nx * ny;
  const std::uint64_t payload_limit = bytes.size() - kMrcHeaderBytes;
  if (plane > payload_limit / 4 / nz + 1 || plane * nz * 4 != payload_limit) {
    throw MrcError(MrcErrorCode::length_mismatch,
                   "header declares " + std::to_string(h.nx) + "x" + std::to_string(h.ny) + "x" + std::to_string(h.nz) +
                       " floats but payload holds " + std::to_string(payload_limit) + " bytes");
  }
  const float cella_x = load_f32(bytes, mrc_offset::cella);
  const std::int32_t mx = load_i32(bytes, mrc_offset::mx);
  h.pixel_size = mx > 0 ? cella_x / static_cast<float>(mx) : 1.0f;

  f.sections.reserve(static_cast<std::size_t>(nz));
  std::size_t off = kMrcHeaderBytes;
  for (std::uint64_t z = 0; z < nz; ++z) {
    Image im(static_cast<std::size_t>(ny), static_cast<std::size_t>(nx));
    for (auto& v : im.pixels) {
      v = load_f32(bytes, off);
      off += 4;
    }
    f.sections.push_back(std::move(im));
  }
  return f;
}

/// Serializes using `file.header.raw` for every field except the dimensions
/// and mode, which are taken from the sections. A parsed file therefore
/// re-serializes to its original bytes.
inline std::vector<std::uint8_t> write_mrc(const MrcFile& file) {
  using namespace detail;
  const auto& st = file.sections;
  if (st.empty()) throw MrcError(MrcErrorCode::empty_stack, "no sections to write");
  for (const auto& im : st) {
    if (!im.same_shape(st[0])) throw MrcError(MrcErrorCode::ragged_stack, "sections have differing shapes");
  }
  if (st[0].empty()) throw MrcError(MrcErrorCode::bad_dimensions, "zero-sized sections");
  std::vector<std::uint8_t> out(kMrcHeaderBytes + st.size() * st[0].size() * 4);
  std::span<std::uint8_t> b(out);
  std::copy(file.header.raw.begin(), file.header.raw.end(), out.begin());
  store_i32(b, mrc_offset::nx, static_cast<std::int32_t>(st[0].width));
  store_i32(b, mrc_offset::ny, static_cast<std::int32_t>(st[0].height));
  store_i32(b, mrc_offset::nz, static_cast<std::int32_t>(st.size()));
  store_i32(b, mrc_offset::mode, kMrcModeFloat32);
  std::size_t off = kMrcHeaderBytes;
  for (const auto& im : st) {
    for (float v : im.pixels) {
      store_f32(b, off, v);
      off += 4;
    }
  }
  return out;
}

/// Fresh header for a float stack: cell from pixel size, statistics over the
/// finite values, little-endian machine stamp.
inline MrcHeader make_mrc_header(const std::vector<Image>& stack, float pixel_size) {
  using namespace detail;
  MrcHeader h;
  if (stack.empty()) throw MrcError(MrcErrorCode::empty_stack, "no sections to write");
  h.nx = static_cast<std::int32_t>(stack[0].width);
  h.ny = static_cast<std::int32_t>(stack[0].height);
  h.nz = static_cast<std::int32_t>(stack.size());
  h.pixel_size = pixel_size;
  std::span<std::uint8_t> b(h.raw);
  store_i32(b, mrc_offset::nx, h.nx);
  store_i32(b, mrc_offset::ny, h.ny);
  store_i32(b, mrc_offset::nz, h.nz);
  store_i32(b, mrc_offset::mode, kMrcModeFloat32);
  store_i32(b, mrc_offset::mx, h.nx);
  store_i32(b, mrc_offset::my, h.ny);
  store_i32(b, mrc_offset::mz, h.nz);
  store_f32(b, mrc_offset::cella + 0, pixel_size * static_cast<float>(h.nx));
  store_f32(b, mrc_offset::cella + 4, pixel_size * static_cast<float>(h.ny));
  store_f32(b, mrc_offset::cella + 8, pixel_size * static_cast<float>(h.nz));
  for (int i = 0; i < 3; ++i) store_f32(b, mrc_offset::cellb + 4 * static_cast<std::size_t>(i), 90.0f);
  store_i32(b, mrc_offset::mapc, 1);
  store_i32(b, mrc_offset::mapr, 2);
  store_i32(b, mrc_offset::maps, 3);

  double lo = INFINITY, hi = -INFINITY, s = 0.0, ss = 0.0;
  std::size_t n = 0;
  for (const auto& im : stack) {
    for (float v : im.pixels) {
      if (!std::isfinite(v)) continue;
      lo = std::min(lo, static_cast<double>(v));
      hi = std::max(hi, static_cast<double>(v));
      s += v;
      ss += static_cast<double>(v) * v;
      ++n;
    }
  }
  const double mean = n ? s / static_cast<double>(n) : 0.0;
  const double rms = n ? std::sqrt(std::max(0.0, ss / static_cast<double>(n) - mean * mean)) : 0.0;
  store_f32(b, mrc_offset::dmin, n ? static_cast<float>(lo) : 0.0f);
  store_f32(b, mrc_offset::dmax, n ? static_cast<float>(hi) : 0.0f);
  store_f32(b, mrc_offset::dmean, static_cast<float>(mean));
  store_f32(b, mrc_offset::rms, static_cast<float>(rms));
  store_i32(b, mrc_offset::ispg, h.nz > 1 ? 0 : 1);
  store_i32(b, mrc_offset::nversion, 20140);
  std::memcpy(h.raw.data() + mrc_offset::map, "MAP ", 4);
  h.raw[mrc_offset::machst] = 0x44;
  h.raw[mrc_offset::machst + 1] = 0x44;
  return h;
}

inline std::vector<std::uint8_t> write_mrc(const std::vector<Image>& stack, float pixel_size) {
  if (stack.empty()) throw MrcError(MrcErrorCode::empty_stack, "no sections to write");
  for (const auto& im : stack) {
    if (!im.same_shape(stack[0])) throw MrcError(MrcErrorCode::ragged_stack, "sections have differing shapes");
  }
  return write_mrc(MrcFile{make_mrc_header(stack, pixel_size), stack});
}

// ------------------------------------------------------------------ files

inline std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// Write-temp-then-rename, so readers never observe a partial file.
inline void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("short write to " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

inline void write_file_atomic(const std::filesystem::path& path, const std::string& text) {
  write_file_atomic(path, std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

inline MrcFile load_mrc(const std::filesystem::path& path) { return read_mrc(read_file_bytes(path)); }

inline void save_mrc(const std::filesystem::path& path, const std::vector<Image>& stack, float pixel_size = 1.0f) {
  write_file_atomic(path, write_mrc(stack, pixel_size));
}

}  // namespace draco::io
