#pragma once

// Event-camera data: raw streams, voxel sets, accumulated event frames, and
// the text event-file format.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "advbench/error.hpp"
#include "advbench/image.hpp"

namespace advbench {

struct EventPoint {
  std::int32_t x = 0;
  std::int32_t y = 0;
  std::int64_t t = 0;  // microseconds
  std::int8_t p = 1;   // -1 or +1

  bool operator==(const EventPoint&) const = default;
};

struct EventStream {
  int width = 0;
  int height = 0;
  std::int64_t t_start = 0;
  std::int64_t t_end = 0;
  std::vector<EventPoint> events;

  bool operator==(const EventStream&) const = default;
};

/// Half-open on the left: an event belongs to the window when lo < t <= hi.
struct TimeWindow {
  std::int64_t lo = 0;
  std::int64_t hi = 0;

  bool contains(std::int64_t t) const { return t > lo && t <= hi; }
  std::int64_t length() const { return hi - lo; }
};

/// Throws UsageError when the stream breaks ordering, geometry or polarity invariants.
inline void validate(const EventStream& s) {
  if (s.width <= 0 || s.height <= 0) throw UsageError("event stream geometry must be positive");
  if (s.t_end < s.t_start) throw UsageError("event stream ends before it starts");
  std::int64_t prev = s.t_start;
  for (std::size_t i = 0; i < s.events.size(); ++i) {
    const auto& e = s.events[i];
    if (e.x < 0 || e.x >= s.width || e.y < 0 || e.y >= s.height)
      throw UsageError("event " + std::to_string(i) + " outside sensor geometry");
    if (e.p != 1 && e.p != -1) throw UsageError("event " + std::to_string(i) + " has polarity other than +/-1");
    if (e.t < prev || e.t > s.t_end) throw UsageError("event " + std::to_string(i) + " out of time order");
    prev = e.t;
  }
}

/// Events inside the window, as a contiguous range of the (time-sorted) stream.
inline std::span<const EventPoint> events_in(const EventStream& s, const TimeWindow& w) {
  auto first = std::upper_bound(s.events.begin(), s.events.end(), w.lo,
                                [](std::int64_t t, const EventPoint& e) { return t < e.t; });
  auto last = std::upper_bound(first, s.events.end(), w.hi,
                               [](std::int64_t t, const EventPoint& e) { return t < e.t; });
  return {s.events.data() + (first - s.events.begin()), static_cast<std::size_t>(last - first)};
}

// ---------------------------------------------------------------------------
// Voxels

struct Voxel {
  double vx = 0.0;
  double vy = 0.0;
  double vz = 0.0;
  double vf = 0.0;

  bool operator==(const Voxel&) const = default;
};

/// Voxel quantization parameters.
struct VoxelGridSpec {
  double cell_px = 4.0;       // pixels per spatial cell
  int bins = 8;               // temporal bins over the window
  std::size_t capacity = 1024;  // N_cap
  int max_events = 8;         // K_max per cell
};

/// Fixed-capacity voxel list. Slots [0, occupied) are valid; the rest are zero padding.
struct VoxelSet {
  std::vector<Voxel> slots;
  std::size_t occupied = 0;
  int gx = 0;
  int gy = 0;
  int gz = 0;
  double cell_px = 4.0;
  double bin_us = 0.0;
  int max_events = 8;

  std::size_t capacity() const { return slots.size(); }
  std::span<Voxel> valid() { return {slots.data(), occupied}; }
  std::span<const Voxel> valid() const { return {slots.data(), occupied}; }

  bool operator==(const VoxelSet&) const = default;
};

inline VoxelSet empty_voxel_set(int gx, int gy, const VoxelGridSpec& spec, double bin_us = 0.0) {
  VoxelSet v;
  v.slots.assign(spec.capacity, Voxel{});
  v.gx = gx;
  v.gy = gy;
  v.gz = spec.bins;
  v.cell_px = spec.cell_px;
  v.bin_us = bin_us;
  v.max_events = spec.max_events;
  return v;
}

/// Number of zero-padded slots.
inline std::size_t count_invalid_voxels(const VoxelSet& v) { return v.capacity() - v.occupied; }

namespace detail {

inline int temporal_bin(std::int64_t t, const TimeWindow& w, int bins) {
  // t in (lo, hi] → ceil((t - lo) * bins / len) - 1, clamped.
  auto len = w.length();
  auto b = ((t - w.lo) * bins - 1) / len;
  return static_cast<int>(std::clamp<std::int64_t>(b, 0, bins - 1));
}

/// Accumulates time-ordered (cell, polarity) samples into voxel slots.
class VoxelBinner {
 public:
  VoxelBinner(VoxelSet& out) : out_(out) {}

  void add(int cx, int cy, int cz, int p) {
    std::int64_t key = (static_cast<std::int64_t>(cz) * out_.gy + cy) * out_.gx + cx;
    auto it = slot_of_.find(key);
    std::size_t slot;
    if (it == slot_of_.end()) {
      if (out_.occupied == out_.capacity()) return;
      slot = out_.occupied++;
      slot_of_.emplace(key, slot);
      counts_.push_back(0);
      out_.slots[slot] = Voxel{static_cast<double>(cx), static_cast<double>(cy), static_cast<double>(cz), 0.0};
    } else {
      slot = it->second;
    }
    if (counts_[slot] >= out_.max_events) return;
    ++counts_[slot];
    out_.slots[slot].vf += p;
  }

  std::span<const int> counts() const { return counts_; }

 private:
  VoxelSet& out_;
  std::unordered_map<std::int64_t, std::size_t> slot_of_;
  std::vector<int> counts_;
};

inline void check_window(const EventStream& s, const TimeWindow& w) {
  if (w.lo < s.t_start || w.hi > s.t_end || w.hi < w.lo)
    throw UsageError("time window outside the stream range");
}

}  // namespace detail

/// Quantizes the window's events onto a sensor-aligned voxel grid.
/// Per-cell event count is capped at K_max (earliest kept), cells are ordered
/// by first-event time, and only the earliest N_cap cells survive.
inline VoxelSet voxelize(const EventStream& s, const TimeWindow& w, const VoxelGridSpec& spec) {
  if (!(spec.cell_px > 0.0) || spec.bins <= 0) throw ConfigError("voxel cell sizes must be positive");
  detail::check_window(s, w);
  int gx = static_cast<int>(std::ceil(s.width / spec.cell_px));
  int gy = static_cast<int>(std::ceil(s.height / spec.cell_px));
  VoxelSet out = empty_voxel_set(gx, gy, spec, w.length() > 0 ? static_cast<double>(w.length()) / spec.bins : 0.0);
  if (w.length() == 0) return out;
  detail::VoxelBinner binner(out);
  for (const auto& e : events_in(s, w)) {
    int cx = static_cast<int>(std::floor(e.x / spec.cell_px));
    int cy = static_cast<int>(std::floor(e.y / spec.cell_px));
    binner.add(cx, cy, detail::temporal_bin(e.t, w, spec.bins), e.p);
  }
  return out;
}

/// Square crop region in sensor pixels.
struct CropRegion {
  double x0 = 0.0;
  double y0 = 0.0;
  double side = 0.0;
};

/// Voxelizes the window's events after re-expressing them in the coordinates of a
/// `patch_px`-sized patch cut from `region`. Events falling outside the patch are dropped.
inline VoxelSet voxelize_patch(const EventStream& s, const TimeWindow& w, const CropRegion& region, int patch_px,
                               const VoxelGridSpec& spec) {
  if (!(spec.cell_px > 0.0) || spec.bins <= 0 || !(region.side > 0.0) || patch_px <= 0)
    throw ConfigError("voxel cell sizes must be positive");
  detail::check_window(s, w);
  int g = static_cast<int>(std::ceil(patch_px / spec.cell_px));
  VoxelSet out = empty_voxel_set(g, g, spec, w.length() > 0 ? static_cast<double>(w.length()) / spec.bins : 0.0);
  if (w.length() == 0) return out;
  double scale = patch_px / region.side;
  detail::VoxelBinner binner(out);
  for (const auto& e : events_in(s, w)) {
    double u = (e.x + 0.5 - region.x0) * scale;
    double v = (e.y + 0.5 - region.y0) * scale;
    if (u < 0.0 || v < 0.0 || u >= patch_px || v >= patch_px) continue;
    binner.add(static_cast<int>(u / spec.cell_px), static_cast<int>(v / spec.cell_px),
               detail::temporal_bin(e.t, w, spec.bins), e.p);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Event frames

/// Signed polarity sum per pixel over the window.
inline Image<double> accumulate_event_frame(const EventStream& s, const TimeWindow& w) {
  detail::check_window(s, w);
  Image<double> f(s.width, s.height, 1, 0.0);
  for (const auto& e : events_in(s, w)) f.at(e.x, e.y) += e.p;
  return f;
}

/// Default gain maps a full-window polarity sum of ±8 onto the display range.
inline constexpr double kEventFrameGain = 127.5 / 8.0;

/// Maps signed sums into [0, 255] around the 127.5 midpoint.
inline Image<double> display_normalize(const Image<double>& f, double gain = kEventFrameGain) {
  Image<double> out(f.width, f.height, f.channels);
  for (std::size_t i = 0; i < f.data.size(); ++i) out.data[i] = std::clamp(127.5 + gain * f.data[i], 0.0, 255.0);
  return out;
}

// ---------------------------------------------------------------------------
// Event file: "# evt v1 W H t_start t_end" header, then "t x y p" per line.

inline void write_events(const EventStream& s, std::ostream& out) {
  out << "# evt v1 " << s.width << ' ' << s.height << ' ' << s.t_start << ' ' << s.t_end << '\n';
  std::string line;
  for (const auto& e : s.events) {
    line.clear();
    line += std::to_string(e.t);
    line += ' ';
    line += std::to_string(e.x);
    line += ' ';
    line += std::to_string(e.y);
    line += ' ';
    line += e.p > 0 ? "1" : "-1";
    line += '\n';
    out << line;
  }
}

inline void save_events(const EventStream& s, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  write_events(s, out);
  if (!out) throw Error("write failed: " + path.string());
}

namespace detail {

template <class T>
bool parse_field(std::string_view& rest, T& value) {
  if (!rest.empty() && rest.front() == ' ') return false;  // single separators only
  auto [ptr, ec] = std::from_chars(rest.data(), rest.data() + rest.size(), value);
  if (ec != std::errc{} || ptr == rest.data()) return false;
  rest.remove_prefix(static_cast<std::size_t>(ptr - rest.data()));
  return true;
}

inline bool eat_space(std::string_view& rest) {
  if (rest.empty() || rest.front() != ' ') return false;
  rest.remove_prefix(1);
  return true;
}

}  // namespace detail

inline EventStream read_events(std::istream& in) {
  EventStream s;
  std::string line;
  std::size_t lineno = 0;
  if (!std::getline(in, line)) throw ParseError(1, "missing event file header");
  ++lineno;
  {
    std::istringstream hs(line);
    std::string hash, tag, version;
    hs >> hash >> tag >> version >> s.width >> s.height >> s.t_start >> s.t_end;
    if (!hs || hash != "#" || tag != "evt") throw ParseError(lineno, "malformed event file header");
    if (version != "v1") throw ParseError(lineno, "unsupported event file version " + version);
    if (s.width <= 0 || s.height <= 0 || s.t_end < s.t_start) throw ParseError(lineno, "invalid sensor geometry");
  }
  std::int64_t prev = s.t_start;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::string_view rest(line);
    EventPoint e;
    int p = 0;
    if (!detail::parse_field(rest, e.t) || !detail::eat_space(rest) || !detail::parse_field(rest, e.x) ||
        !detail::eat_space(rest) || !detail::parse_field(rest, e.y) || !detail::eat_space(rest) ||
        !detail::parse_field(rest, p) || !rest.empty())
      throw ParseError(lineno, "expected 't x y p'");
    if (p != 1 && p != -1) throw ParseError(lineno, "polarity must be 1 or -1");
    if (e.x < 0 || e.x >= s.width || e.y < 0 || e.y >= s.height) throw ParseError(lineno, "coordinate out of range");
    if (e.t < prev || e.t > s.t_end) throw ParseError(lineno, "timestamp out of order or outside stream range");
    e.p = static_cast<std::int8_t>(p);
    prev = e.t;
    s.events.push_back(e);
  }
  return s;
}

inline EventStream load_events(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  return read_events(in);
}

}  // namespace advbench
