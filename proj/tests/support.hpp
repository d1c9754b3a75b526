#pragma once

#include <algorithm>
#include <filesystem>
#include <map>
#include <tuple>
#include <random>
#include <string>
#include <vector>

#include "advbench/attacks.hpp"
#include "advbench/eval.hpp"
#include "advbench/synth.hpp"
#include "advbench/train.hpp"

namespace advbench::testing {

inline std::vector<Sequence> make_sequences(int n, std::uint64_t base_seed, int frames = 32) {
  SceneConfig sc;
  sc.frames = frames;
  std::vector<Sequence> out;
  for (int i = 0; i < n; ++i) {
    out.push_back(synthesize_sequence(sc, base_seed + static_cast<std::uint64_t>(i)));
    out.back().name = "seq" + std::to_string(base_seed + static_cast<std::uint64_t>(i));
  }
  return out;
}

inline std::filesystem::path fixture_dir() {
#ifdef ADVBENCH_FIXTURE_DIR
  return ADVBENCH_FIXTURE_DIR;
#else
  return std::filesystem::temp_directory_path() / "advbench-fixtures";
#endif
}

/// Small trained surrogate shared by the unit tests, cached on disk.
inline TrackerParams trained_fixture(Modality m) {
  auto path = fixture_dir() / ("unit-" + to_string(m) + ".ckpt");
  if (std::filesystem::exists(path)) {
    try {
      return load_params(path);
    } catch (const Error&) {
    }
  }
  auto seqs = make_sequences(8, 900);
  TrainConfig cfg;
  cfg.steps = 150;
  cfg.batch = 4;
  auto r = train(init_params(m, 8, 7), std::span<const Sequence>(seqs), cfg);
  save_params(r.params, path);
  return r.params;
}

/// Search/template inputs centred on the ground truth of frame k.
struct Probe {
  PatchInputs z;
  PatchInputs x;
  BBox truth;  // search-patch pixels
  CropRegion region;
};

inline Probe probe_at(const Sequence& seq, std::size_t k, Modality m, double offset = 0.0) {
  Probe p;
  p.z = patch_inputs(seq, 0, crop_region(seq.groundtruth[0], kTemplateScale), kTemplatePx, m);
  BBox c = seq.groundtruth[k];
  c.x += offset;
  c.y += offset;
  p.region = crop_region(c, kSearchScale);
  p.x = patch_inputs(seq, k, p.region, kSearchPx, m);
  p.truth = to_patch(seq.groundtruth[k], p.region, kSearchPx);
  return p;
}

enum class Field { rgb, frame, voxels };

struct DirectionalCheck {
  double analytic = 0.0;
  double numeric = 0.0;
  double rel = 0.0;
};

/// Moves voxels off the integer lattice so the splat kernel is smooth around them.
inline void jitter_voxels(PatchInputs& x, std::mt19937_64& rng) {
  if (!x.voxels) return;
  std::uniform_real_distribution<double> u(0.2, 0.8);
  auto& v = *x.voxels;
  for (auto& s : v.valid()) {
    s.vx = std::min(std::floor(s.vx) + u(rng), v.gx - 1.2);
    s.vy = std::min(std::floor(s.vy) + u(rng), v.gy - 1.2);
    s.vz = std::min(s.vz + u(rng), v.gz - 1.0);
    s.vf += u(rng) - 0.5;
  }
}

/// Adds sub-grey-level noise so no first-layer activation sits exactly on a ReLU kink
/// (event-free frame pixels equal the normalization midpoint).
inline void jitter_pixels(PatchInputs& x, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  for (auto* img : {x.rgb ? &*x.rgb : nullptr, x.frame ? &*x.frame : nullptr})
    if (img)
      for (auto& v : img->data) v += u(rng);
}

/// Compares the reverse-mode directional derivative along a random
/// gradient-aligned direction with a Richardson-extrapolated central difference
/// of the double-only forward pass.
inline DirectionalCheck directional_check(const BoundTracker& model, const PatchInputs& x, Field field,
                                          const BoundTracker::LossFn& loss, std::uint64_t seed, double h) {
  InputSelection wrt{field == Field::rgb, field == Field::frame, field == Field::voxels};
  auto ev = model.evaluate(x, wrt, loss);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> mag(0.5, 1.5);
  auto pick = [&](double g) { return (g > 0 ? 1.0 : g < 0 ? -1.0 : (rng() & 1 ? 1.0 : -1.0)) * mag(rng); };

  std::vector<double> dir;
  double analytic = 0.0;
  if (field == Field::voxels) {
    for (const auto& g : ev.grad.voxels)
      for (double gi : {g.vx, g.vy, g.vz, g.vf}) {
        dir.push_back(pick(gi));
        analytic += gi * dir.back();
      }
  } else {
    const auto& g = field == Field::rgb ? ev.grad.rgb : ev.grad.frame;
    for (double gi : g.data) {
      dir.push_back(pick(gi));
      analytic += gi * dir.back();
    }
  }
  auto f = [&](double t) {
    PatchInputs y = x;
    if (field == Field::voxels) {
      auto& v = *y.voxels;
      for (std::size_t i = 0; i < v.occupied; ++i) {
        v.slots[i].vx += t * dir[4 * i];
        v.slots[i].vy += t * dir[4 * i + 1];
        v.slots[i].vz += t * dir[4 * i + 2];
        v.slots[i].vf += t * dir[4 * i + 3];
      }
    } else {
      auto& img = field == Field::rgb ? *y.rgb : *y.frame;
      for (std::size_t i = 0; i < img.data.size(); ++i) img.data[i] += t * dir[i];
    }
    return model.evaluate(y, {}, loss).loss;
  };
  auto central = [&](double step) { return (f(step) - f(-step)) / (2.0 * step); };
  double numeric = (4.0 * central(h / 2.0) - central(h)) / 3.0;
  double scale = std::max({std::fabs(analytic), std::fabs(numeric), 1e-12});
  return {analytic, numeric, std::fabs(analytic - numeric) / scale};
}

inline EventStream random_stream(std::mt19937_64& rng, std::size_t n, int w = 64, int h = 48, std::int64_t t_end = 10000) {
  EventStream s{w, h, 0, t_end, {}};
  std::uniform_int_distribution<int> ux(0, w - 1), uy(0, h - 1), up(0, 1);
  std::uniform_int_distribution<std::int64_t> ut(0, t_end);
  for (std::size_t i = 0; i < n; ++i)
    s.events.push_back({ux(rng), uy(rng), ut(rng), static_cast<std::int8_t>(up(rng) ? 1 : -1)});
  std::stable_sort(s.events.begin(), s.events.end(), [](auto& a, auto& b) { return a.t < b.t; });
  return s;
}

struct OracleCell {
  std::size_t first = 0;
  int x = 0, y = 0, z = 0;
  int count = 0;
  double vf = 0;
};

// Scans the whole stream, bins with floating point arithmetic, orders cells by first event.
inline std::vector<OracleCell> oracle_voxelize(const EventStream& s, std::int64_t lo, std::int64_t hi,
                                               const VoxelGridSpec& spec) {
  std::map<std::tuple<int, int, int>, OracleCell> cells;
  for (std::size_t i = 0; i < s.events.size(); ++i) {
    const auto& e = s.events[i];
    if (!(e.t > lo && e.t <= hi)) continue;
    int cx = static_cast<int>(e.x / spec.cell_px);
    int cy = static_cast<int>(e.y / spec.cell_px);
    double frac = static_cast<double>(e.t - lo) / static_cast<double>(hi - lo);
    int cz = std::clamp(static_cast<int>(std::ceil(frac * spec.bins - 1e-12)) - 1, 0, spec.bins - 1);
    auto key = std::make_tuple(cx, cy, cz);
    auto it = cells.find(key);
    if (it == cells.end()) it = cells.emplace(key, OracleCell{i, cx, cy, cz, 0, 0.0}).first;
    if (it->second.count < spec.max_events) {
      ++it->second.count;
      it->second.vf += e.p;
    }
  }
  std::vector<OracleCell> out;
  for (auto& [k, c] : cells) out.push_back(c);
  std::sort(out.begin(), out.end(), [](auto& a, auto& b) { return a.first < b.first; });
  if (out.size() > spec.capacity) out.resize(spec.capacity);
  return out;
}

/// Small attacked benchmark whose serialized report is checked in as a golden file.
inline BenchmarkReport golden_fixture() {
  auto seqs = make_sequences(2, 4242, 6);
  SurrogateTracker tracker(init_params(Modality::rgb, 8, 4242));
  AttackConfig cfg;
  cfg.name = "pgd-rgb";
  cfg.iters = 2;
  cfg.seed = 4242;
  auto report = run_benchmark(tracker, std::span<const Sequence>(seqs), make_attack(cfg, Modality::rgb), cfg.name,
                              cfg.seed);
  report.wall_seconds = 0.0;
  return report;
}

}  // namespace advbench::testing
