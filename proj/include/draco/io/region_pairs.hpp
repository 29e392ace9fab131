#pragma once

#include <charconv>
#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "draco/core/error.hpp"
#include "draco/core/image.hpp"

// Region-pair annotations: one pair per line, eight comma-separated
// non-negative integers "sx,sy,sw,sh,bx,by,bw,bh" (signal rectangle, then
// background rectangle; x is the column). Blank lines and '#' comments are
// ignored.

namespace draco::io {

struct Rect {
  std::size_t x = 0, y = 0, w = 0, h = 0;
  friend bool operator==(const Rect&, const Rect&) = default;
};

struct RegionPair {
  Rect signal;
  Rect background;
  friend bool operator==(const RegionPair&, const RegionPair&) = default;
};

class ParseError : public Error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : Error(ErrorKind::format, "line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

inline bool overlaps(const Rect& a, const Rect& b) {
  return a.x < b.x + b.w && b.x < a.x + a.w && a.y < b.y + b.h && b.y < a.y + a.h;
}

inline bool inside(const Rect& r, std::size_t height, std::size_t width) {
  return r.x + r.w <= width && r.y + r.h <= height;
}

namespace detail {

inline std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline void check_pair_shape(const RegionPair& p, std::size_t line) {
  for (const Rect* r : {&p.signal, &p.background}) {
    if (r->w < 2 || r->h < 2) throw ParseError(line, "rectangles need width and height >= 2");
  }
  if (overlaps(p.signal, p.background)) throw ParseError(line, "signal and background rectangles overlap");
}

}  // namespace detail

inline std::vector<RegionPair> read_region_pairs(std::string_view text) {
  std::vector<RegionPair> pairs;
  std::size_t line_no = 0;
  while (!text.empty()) {
    ++line_no;
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;

    std::size_t v[8];
    std::size_t count = 0;
    while (true) {
      const auto comma = line.find(',');
      const std::string_view field = detail::trim(line.substr(0, comma));
      if (count == 8) throw ParseError(line_no, "expected 8 comma-separated integers, got more");
      const auto* end = field.data() + field.size();
      auto [ptr, ec] = std::from_chars(field.data(), end, v[count]);
      if (field.empty() || ec != std::errc{} || ptr != end) {
        throw ParseError(line_no, "field " + std::to_string(count + 1) + " is not a non-negative integer");
      }
      ++count;
      if (comma == std::string_view::npos) break;
      line = line.substr(comma + 1);
    }
    if (count != 8) throw ParseError(line_no, "expected 8 comma-separated integers, got " + std::to_string(count));
    RegionPair p{{v[0], v[1], v[2], v[3]}, {v[4], v[5], v[6], v[7]}};
    detail::check_pair_shape(p, line_no);
    pairs.push_back(p);
  }
  return pairs;
}

inline std::string write_region_pairs(const std::vector<RegionPair>& pairs) {
  std::string out = "# sx,sy,sw,sh,bx,by,bw,bh\n";
  for (const auto& p : pairs) {
    const Rect& s = p.signal;
    const Rect& b = p.background;
    for (std::size_t v : {s.x, s.y, s.w, s.h, b.x, b.y, b.w}) out += std::to_string(v) + ",";
    out += std::to_string(b.h) + "\n";
  }
  return out;
}

/// Bounds check against a concrete image; the parser cannot know its size.
inline void validate_region_pairs(const std::vector<RegionPair>& pairs, const Image& image) {
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    for (const Rect* r : {&pairs[i].signal, &pairs[i].background}) {
      if (!inside(*r, image.height, image.width)) {
        throw InvalidArgument("region pair " + std::to_string(i + 1) + " lies outside the " + shape_string(image) +
                              " image");
      }
    }
  }
}

}  // namespace draco::io
