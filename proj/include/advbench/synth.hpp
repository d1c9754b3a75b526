#pragma once

// Synthetic RGB + event sequences: anti-aliased rectangles moving over a
// static background, rendered at sub-frame instants; events fire where the
// log-luminance of consecutive renders differs by more than the contrast
// threshold.

#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "advbench/error.hpp"
#include "advbench/eventcam.hpp"
#include "advbench/geometry.hpp"
#include "advbench/image.hpp"

namespace advbench {

using Color = std::array<double, 3>;

struct ObjectSpec {
  double x = 0.0;  // top-left at frame 0
  double y = 0.0;
  double w = 16.0;
  double h = 16.0;
  double vx = 0.0;  // pixels per frame; objects bounce off the canvas border
  double vy = 0.0;
  Color color{255.0, 255.0, 255.0};
  bool patterned = false;  // inner square of `inner_color`, half the size
  Color inner_color{0.0, 0.0, 0.0};
};

struct SceneConfig {
  int width = 160;
  int height = 128;
  int frames = 32;
  double fps = 30.0;
  int substeps = 8;  // renders per frame interval
  double contrast = 0.15;
  Color background{60.0, 60.0, 60.0};
  double illumination_drift = 0.0;  // relative brightness change per frame
  int object_count = 3;             // used when `objects` is empty
  std::vector<ObjectSpec> objects;  // element 0 is the tracked target
};

/// One synthetic or loaded sequence: frame k is captured at t_start + (k+1)·dt and
/// its event window is (t_start + k·dt, t_start + (k+1)·dt].
struct Sequence {
  std::string name;
  std::vector<PixelFrame> frames;
  EventStream events;
  std::vector<BBox> groundtruth;

  std::int64_t frame_interval() const {
    return frames.empty() ? 0 : (events.t_end - events.t_start) / static_cast<std::int64_t>(frames.size());
  }
  TimeWindow window(std::size_t k) const {
    auto dt = frame_interval();
    return {events.t_start + static_cast<std::int64_t>(k) * dt, events.t_start + static_cast<std::int64_t>(k + 1) * dt};
  }
};

inline std::int64_t frame_interval_us(const SceneConfig& s) {
  auto dt = static_cast<std::int64_t>(std::llround(1e6 / s.fps));
  return dt - dt % s.substeps;
}

inline void validate(const SceneConfig& s) {
  if (s.width <= 0 || s.height <= 0) throw ConfigError("canvas must be non-empty");
  if (s.frames <= 0) throw ConfigError("scene duration must be positive");
  if (!(s.fps > 0.0)) throw ConfigError("frame rate must be positive");
  if (s.substeps < 1) throw ConfigError("substeps must be at least 1");
  if (!(s.contrast > 0.0)) throw ConfigError("contrast threshold must be positive");
  if (frame_interval_us(s) <= 0) throw ConfigError("frame interval too short for the substep count");
  for (const auto& o : s.objects) {
    if (!(o.w > 0.0) || !(o.h > 0.0)) throw ConfigError("object size must be positive");
    if (o.w > s.width || o.h > s.height) throw ConfigError("object larger than canvas");
  }
}

/// Fills in objects from the seed when the scene does not list them.
inline SceneConfig resolve_scene(SceneConfig s, std::uint64_t seed) {
  validate(s);
  if (!s.objects.empty()) return s;
  if (s.object_count < 1) throw ConfigError("scene needs at least one object");
  std::mt19937_64 rng(seed);
  auto uni = [&](double a, double b) { return std::uniform_real_distribution<double>(a, b)(rng); };
  auto speed = [&] {
    double v = uni(0.8, 2.2);
    return uni(0.0, 1.0) < 0.5 ? -v : v;
  };
  for (int i = 0; i < s.object_count; ++i) {
    ObjectSpec o;
    double side = i == 0 ? uni(18.0, 24.0) : uni(10.0, 28.0);
    o.w = std::min(side * (i == 0 ? 1.0 : uni(0.6, 1.6)), s.width * 0.5);
    o.h = std::min(side, s.height * 0.5);
    o.x = uni(0.0, s.width - o.w);
    o.y = uni(0.0, s.height - o.h);
    o.vx = speed();
    o.vy = speed();
    if (i == 0) {
      o.color = {uni(200.0, 255.0), uni(120.0, 180.0), uni(0.0, 40.0)};
      o.patterned = true;
      o.inner_color = {uni(0.0, 30.0), uni(30.0, 80.0), uni(150.0, 230.0)};
    } else {
      o.color = {uni(100.0, 230.0), uni(100.0, 230.0), uni(100.0, 230.0)};
    }
    s.objects.push_back(o);
  }
  return s;
}

namespace detail {

/// Triangle wave keeping a coordinate in [0, span].
inline double bounce(double p, double span) {
  if (span <= 0.0) return 0.0;
  double period = 2.0 * span;
  double m = std::fmod(p, period);
  if (m < 0.0) m += period;
  return m <= span ? m : period - m;
}

inline double overlap_1d(double a0, double a1, double b0, double b1) {
  return std::max(0.0, std::min(a1, b1) - std::max(a0, b0));
}

}  // namespace detail

/// Object box at scene time `tau`, measured in frames (frame k at tau = k).
inline BBox object_box(const SceneConfig& s, const ObjectSpec& o, double tau) {
  return {detail::bounce(o.x + o.vx * tau, s.width - o.w), detail::bounce(o.y + o.vy * tau, s.height - o.h), o.w, o.h};
}

/// Anti-aliased render at scene time `tau`, quantized to 8 bits.
inline PixelFrame render_frame(const SceneConfig& s, double tau) {
  Image<double> img(s.width, s.height, 3);
  double gain = std::max(0.0, 1.0 + s.illumination_drift * tau);
  for (int y = 0; y < s.height; ++y)
    for (int x = 0; x < s.width; ++x)
      for (int c = 0; c < 3; ++c) img.at(x, y, c) = s.background[static_cast<std::size_t>(c)];

  auto paint = [&](const BBox& b, const Color& col) {
    int x0 = std::max(0, static_cast<int>(std::floor(b.x)));
    int y0 = std::max(0, static_cast<int>(std::floor(b.y)));
    int x1 = std::min(s.width, static_cast<int>(std::ceil(b.x + b.w)));
    int y1 = std::min(s.height, static_cast<int>(std::ceil(b.y + b.h)));
    for (int y = y0; y < y1; ++y) {
      double cy = detail::overlap_1d(y, y + 1.0, b.y, b.y + b.h);
      for (int x = x0; x < x1; ++x) {
        double cov = cy * detail::overlap_1d(x, x + 1.0, b.x, b.x + b.w);
        for (int c = 0; c < 3; ++c) {
          double& v = img.at(x, y, c);
          v = (1.0 - cov) * v + cov * col[static_cast<std::size_t>(c)];
        }
      }
    }
  };

  // Distractors first so the target is never occluded.
  for (std::size_t i = s.objects.size(); i-- > 0;) {
    const auto& o = s.objects[i];
    BBox b = object_box(s, o, tau);
    paint(b, o.color);
    if (o.patterned) paint(BBox::from_center(b.cx(), b.cy(), 0.5 * b.w, 0.5 * b.h), o.inner_color);
  }
  for (auto& v : img.data) v *= gain;
  return quantize(img);
}

inline double log_luminance(const PixelFrame& f, int x, int y) {
  double l = (0.299 * f.at(x, y, 0) + 0.587 * f.at(x, y, 1) + 0.114 * f.at(x, y, 2)) / 255.0;
  return std::log(l + 1e-2);
}

/// Renders frames, ground truth, and the threshold-triggered event stream.
/// Deterministic in (scene, seed); the seed only matters when objects are generated.
inline Sequence synthesize_sequence(const SceneConfig& config, std::uint64_t seed) {
  SceneConfig s = resolve_scene(config, seed);
  const int sub = s.substeps;
  const std::int64_t dt = frame_interval_us(s);

  Sequence seq;
  seq.events.width = s.width;
  seq.events.height = s.height;
  seq.events.t_start = 0;
  seq.events.t_end = dt * s.frames;

  std::vector<double> prev(static_cast<std::size_t>(s.width) * s.height);
  std::vector<double> cur(prev.size());
  auto luminance = [&](const PixelFrame& f, std::vector<double>& out) {
    for (int y = 0; y < s.height; ++y)
      for (int x = 0; x < s.width; ++x) out[static_cast<std::size_t>(y) * s.width + x] = log_luminance(f, x, y);
  };

  // Render instant g covers tau = g/sub - 1, so g = 0 is the pre-roll and frame k sits at g = (k+1)·sub.
  luminance(render_frame(s, -1.0), prev);
  for (int g = 1; g <= s.frames * sub; ++g) {
    double tau = static_cast<double>(g) / sub - 1.0;
    PixelFrame f = render_frame(s, tau);
    luminance(f, cur);
    std::int64_t t = static_cast<std::int64_t>(g) * dt / sub;
    for (int y = 0; y < s.height; ++y)
      for (int x = 0; x < s.width; ++x) {
        auto i = static_cast<std::size_t>(y) * s.width + x;
        double d = cur[i] - prev[i];
        if (std::fabs(d) > s.contrast)
          seq.events.events.push_back({x, y, t, static_cast<std::int8_t>(d > 0.0 ? 1 : -1)});
      }
    prev.swap(cur);
    if (g % sub == 0) {
      seq.frames.push_back(std::move(f));
      seq.groundtruth.push_back(object_box(s, s.objects.front(), tau));
    }
  }
  return seq;
}

// ---------------------------------------------------------------------------
// Sequence directory: frames/%06d.ppm, events.evt, groundtruth.txt ("x,y,w,h").

inline std::string format_real(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

inline std::string frame_filename(std::size_t k) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%06zu.ppm", k);
  return buf;
}

inline void save_sequence(const Sequence& seq, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir / "frames");
  for (std::size_t k = 0; k < seq.frames.size(); ++k) write_pnm(seq.frames[k], dir / "frames" / frame_filename(k));
  save_events(seq.events, dir / "events.evt");
  std::ofstream gt(dir / "groundtruth.txt");
  if (!gt) throw Error("cannot write " + (dir / "groundtruth.txt").string());
  for (const auto& b : seq.groundtruth)
    gt << format_real(b.x) << ',' << format_real(b.y) << ',' << format_real(b.w) << ',' << format_real(b.h) << '\n';
}

inline std::vector<BBox> read_groundtruth(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  std::vector<BBox> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    double v[4];
    const char* p = line.data();
    const char* end = line.data() + line.size();
    for (int i = 0; i < 4; ++i) {
      auto [ptr, ec] = std::from_chars(p, end, v[i]);
      if (ec != std::errc{}) throw ParseError(lineno, "expected 'x,y,w,h'");
      p = ptr;
      if (i < 3) {
        if (p == end || *p != ',') throw ParseError(lineno, "expected 'x,y,w,h'");
        ++p;
      }
    }
    if (p != end) throw ParseError(lineno, "trailing characters after box");
    BBox b{v[0], v[1], v[2], v[3]};
    if (!b.valid()) throw ParseError(lineno, "box must have positive size");
    out.push_back(b);
  }
  return out;
}

inline Sequence load_sequence(const std::filesystem::path& dir) {
  Sequence seq;
  seq.name = dir.filename().string();
  seq.events = load_events(dir / "events.evt");
  seq.groundtruth = read_groundtruth(dir / "groundtruth.txt");
  for (std::size_t k = 0; k < seq.groundtruth.size(); ++k) {
    auto img = read_pnm(dir / "frames" / frame_filename(k));
    if (img.channels != 3 || img.width != seq.events.width || img.height != seq.events.height)
      throw ParseError(1, "frame " + std::to_string(k) + " does not match sensor geometry");
    seq.frames.push_back(std::move(img));
  }
  if (seq.frames.empty()) throw ParseError(1, dir.string() + ": sequence has no frames");
  return seq;
}

}  // namespace advbench
