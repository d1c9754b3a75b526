#pragma once

// Differentiable surrogate tracker.
//
// Per modality, a 3-layer strided convolutional encoder (weights shared by
// template and search) maps a patch to a C×8×8 (template) or C×16×16 (search)
// feature grid. Modalities are fused by a learned scalar-weighted sum, the
// template is cross-correlated over the search grid to produce a 16×16 logit
// map, the score map is its sigmoid, the box centre is the soft-argmax of the
// logits and the box size comes from a linear head on attention-pooled search
// features. Every output is differentiable with respect to pixels, voxel
// coordinates and voxel features.

#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <zlib.h>

#include "advbench/diff.hpp"
#include "advbench/error.hpp"
#include "advbench/eventcam.hpp"
#include "advbench/geometry.hpp"
#include "advbench/image.hpp"
#include "advbench/tensor.hpp"

namespace advbench {

enum class Modality { rgb, voxel, frame, rgb_voxel, rgb_frame };

inline bool uses_rgb(Modality m) { return m == Modality::rgb || m == Modality::rgb_voxel || m == Modality::rgb_frame; }
inline bool uses_voxels(Modality m) { return m == Modality::voxel || m == Modality::rgb_voxel; }
inline bool uses_frames(Modality m) { return m == Modality::frame || m == Modality::rgb_frame; }

inline std::string to_string(Modality m) {
  switch (m) {
    case Modality::rgb: return "rgb";
    case Modality::voxel: return "voxel";
    case Modality::frame: return "frame";
    case Modality::rgb_voxel: return "rgb+voxel";
    case Modality::rgb_frame: return "rgb+frame";
  }
  return "?";
}

inline Modality parse_modality(const std::string& s) {
  for (auto m : {Modality::rgb, Modality::voxel, Modality::frame, Modality::rgb_voxel, Modality::rgb_frame})
    if (to_string(m) == s) return m;
  throw ConfigError("unknown modality '" + s + "'");
}

// Patch geometry.
inline constexpr int kTemplatePx = 64;
inline constexpr int kSearchPx = 128;
inline constexpr int kScoreSize = 16;
inline constexpr double kScoreStride = static_cast<double>(kSearchPx) / kScoreSize;
inline constexpr double kTemplateScale = 2.0;
inline constexpr double kSearchScale = 4.0;
inline constexpr double kMinBoxPx = 4.0;
inline constexpr double kMaxBoxPx = 128.0;
inline constexpr double kNominalBoxPx = kSearchPx / kSearchScale;

/// Voxel grid used inside patches: 4 patch pixels per cell, 8 bins, N_cap 1024, K_max 8.
inline VoxelGridSpec patch_voxel_spec() { return {}; }

// ---------------------------------------------------------------------------
// Cropping

/// Square region of side scale·sqrt(w·h) centred on the box.
inline CropRegion crop_region(const BBox& b, double scale) {
  double side = scale * std::sqrt(b.w * b.h);
  return {b.cx() - 0.5 * side, b.cy() - 0.5 * side, side};
}

/// Maps a box from frame pixels into patch pixels and back.
inline BBox to_patch(const BBox& b, const CropRegion& r, int patch_px) {
  double s = patch_px / r.side;
  return {(b.x - r.x0) * s, (b.y - r.y0) * s, b.w * s, b.h * s};
}
inline BBox from_patch(const BBox& b, const CropRegion& r, int patch_px) {
  double s = r.side / patch_px;
  return {r.x0 + b.x * s, r.y0 + b.y * s, b.w * s, b.h * s};
}

inline bool intersects(const CropRegion& r, double width, double height) {
  return r.x0 < width && r.y0 < height && r.x0 + r.side > 0.0 && r.y0 + r.side > 0.0;
}

/// Bilinear resample of a square region; samples outside the frame read the channel mean.
template <class T>
Image<double> crop_patch(const Image<T>& frame, const CropRegion& r, int patch_px) {
  if (!(r.side > 0.0) || !intersects(r, frame.width, frame.height))
    throw CropError("crop region does not intersect the frame");
  std::vector<double> mean(static_cast<std::size_t>(frame.channels));
  for (int c = 0; c < frame.channels; ++c) mean[static_cast<std::size_t>(c)] = channel_mean(frame, c);
  Image<double> out(patch_px, patch_px, frame.channels);
  double step = r.side / patch_px;
  auto sample = [&](int x, int y, int c) {
    if (x < 0 || y < 0 || x >= frame.width || y >= frame.height) return mean[static_cast<std::size_t>(c)];
    return static_cast<double>(frame.at(x, y, c));
  };
  for (int v = 0; v < patch_px; ++v) {
    double fy = r.y0 + (v + 0.5) * step - 0.5;
    int y0 = static_cast<int>(std::floor(fy));
    double ay = fy - y0;
    for (int u = 0; u < patch_px; ++u) {
      double fx = r.x0 + (u + 0.5) * step - 0.5;
      int x0 = static_cast<int>(std::floor(fx));
      double ax = fx - x0;
      for (int c = 0; c < frame.channels; ++c) {
        double top = (1.0 - ax) * sample(x0, y0, c) + ax * sample(x0 + 1, y0, c);
        double bot = (1.0 - ax) * sample(x0, y0 + 1, c) + ax * sample(x0 + 1, y0 + 1, c);
        out.at(u, v, c) = (1.0 - ay) * top + ay * bot;
      }
    }
  }
  return out;
}

template <class T>
Image<double> crop_patch(const Image<T>& frame, const BBox& centre, double scale, int patch_px) {
  return crop_patch(frame, crop_region(centre, scale), patch_px);
}

/// Re-expresses sensor-grid voxels in patch-grid coordinates. Voxels whose
/// centre leaves the patch grid are dropped; capacity is preserved.
inline VoxelSet crop_voxels(const VoxelSet& v, const CropRegion& r, int patch_px,
                            const VoxelGridSpec& spec = patch_voxel_spec()) {
  if (!(r.side > 0.0) || !intersects(r, v.gx * v.cell_px, v.gy * v.cell_px))
    throw CropError("crop region does not intersect the voxel grid");
  int g = static_cast<int>(std::ceil(patch_px / spec.cell_px));
  VoxelSet out;
  out.slots.assign(v.capacity(), Voxel{});
  out.gx = g;
  out.gy = g;
  out.gz = v.gz;
  out.cell_px = spec.cell_px;
  out.bin_us = v.bin_us;
  out.max_events = v.max_events;
  double s = patch_px / r.side;
  for (const auto& vox : v.valid()) {
    double px = ((vox.vx + 0.5) * v.cell_px - r.x0) * s / spec.cell_px - 0.5;
    double py = ((vox.vy + 0.5) * v.cell_px - r.y0) * s / spec.cell_px - 0.5;
    if (px < 0.0 || py < 0.0 || px > g - 1 || py > g - 1) continue;
    out.slots[out.occupied++] = Voxel{px, py, vox.vz, vox.vf};
  }
  return out;
}

// ---------------------------------------------------------------------------
// Parameters

struct TrackerParams {
  Modality modality = Modality::rgb;
  int channels = 8;
  std::uint64_t seed = 0;
  std::uint64_t steps = 0;
  std::vector<double> weights;

  bool operator==(const TrackerParams&) const = default;
};

struct EncoderLayout {
  bool present = false;
  bool image_input = true;
  std::array<ConvShape, 3> conv{};
  std::array<std::size_t, 3> weight_offset{};
  std::array<std::size_t, 3> bias_offset{};
};

/// Offsets of every parameter block inside TrackerParams::weights.
struct ParamLayout {
  int channels = 0;
  EncoderLayout rgb;
  EncoderLayout frame;
  EncoderLayout voxel;
  std::size_t fusion = 0;
  int fusion_count = 0;
  // head: corr scale, corr bias, C width weights, C height weights, width bias, height bias
  std::size_t head = 0;
  std::size_t total = 0;
};

inline ParamLayout make_layout(Modality m, int channels) {
  if (channels < 1) throw ConfigError("channel count must be positive");
  ParamLayout L;
  L.channels = channels;
  std::size_t off = 0;
  auto add_encoder = [&](EncoderLayout& e, ConvShape first, bool image) {
    e.present = true;
    e.image_input = image;
    e.conv = {first, ConvShape{channels, channels, 3, 2, 1}, ConvShape{channels, channels, 3, 1, 1}};
    for (std::size_t i = 0; i < 3; ++i) {
      e.weight_offset[i] = off;
      off += e.conv[i].weight_count();
      e.bias_offset[i] = off;
      off += static_cast<std::size_t>(e.conv[i].cout);
    }
    ++L.fusion_count;
  };
  if (uses_rgb(m)) add_encoder(L.rgb, ConvShape{3, channels, 4, 4, 0}, true);
  if (uses_frames(m)) add_encoder(L.frame, ConvShape{1, channels, 4, 4, 0}, true);
  if (uses_voxels(m)) add_encoder(L.voxel, ConvShape{2, channels, 3, 1, 1}, false);
  L.fusion = off;
  off += static_cast<std::size_t>(L.fusion_count);
  L.head = off;
  off += 2 + 2 * static_cast<std::size_t>(channels) + 2;
  L.total = off;
  return L;
}

inline TrackerParams init_params(Modality m, int channels, std::uint64_t seed) {
  ParamLayout L = make_layout(m, channels);
  TrackerParams p;
  p.modality = m;
  p.channels = channels;
  p.seed = seed;
  p.weights.assign(L.total, 0.0);
  std::mt19937_64 rng(seed);
  auto fill = [&](const EncoderLayout& e) {
    if (!e.present) return;
    for (std::size_t i = 0; i < 3; ++i) {
      const auto& s = e.conv[i];
      double bound = std::sqrt(6.0 / (s.cin * s.k * s.k));
      std::uniform_real_distribution<double> d(-bound, bound);
      for (std::size_t j = 0; j < s.weight_count(); ++j) p.weights[e.weight_offset[i] + j] = d(rng);
    }
  };
  fill(L.rgb);
  fill(L.frame);
  fill(L.voxel);
  for (int i = 0; i < L.fusion_count; ++i) p.weights[L.fusion + static_cast<std::size_t>(i)] = 1.0 / L.fusion_count;
  p.weights[L.head] = 0.05;
  p.weights[L.head + 1] = -2.0;
  return p;
}

// ---------------------------------------------------------------------------
// Inputs

struct PatchInputs {
  std::optional<Image<double>> rgb;    // P×P×3 in [0, 255]
  std::optional<Image<double>> frame;  // P×P×1 display-normalized event frame
  std::optional<VoxelSet> voxels;      // patch-grid voxels

  bool operator==(const PatchInputs&) const = default;
};

/// Template and search patches for one modality configuration.
struct PatchPair {
  Modality modality = Modality::rgb;
  PatchInputs z;
  PatchInputs x;
};

inline void check_inputs(Modality m, const PatchInputs& in, int patch_px) {
  if (uses_rgb(m) != in.rgb.has_value() || uses_frames(m) != in.frame.has_value() ||
      uses_voxels(m) != in.voxels.has_value())
    throw ConfigError("patch inputs do not match modality " + to_string(m));
  if (in.rgb && (in.rgb->width != patch_px || in.rgb->height != patch_px || in.rgb->channels != 3))
    throw ConfigError("rgb patch must be " + std::to_string(patch_px) + "x" + std::to_string(patch_px) + "x3");
  if (in.frame && (in.frame->width != patch_px || in.frame->height != patch_px || in.frame->channels != 1))
    throw ConfigError("event frame patch must be single channel " + std::to_string(patch_px) + " px");
  if (in.voxels && in.voxels->gx != static_cast<int>(std::ceil(patch_px / in.voxels->cell_px)))
    throw ConfigError("voxel patch grid does not match patch size");
}

/// Planar grid of an interleaved image; pixels become leaves when a tape is given.
inline Grid image_grid(const Image<double>& img, diff::Tape* tape) {
  Grid g(img.channels, img.height, img.width);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < img.channels; ++c) {
        double v = img.at(x, y, c);
        g.at(c, y, x) = tape ? tape->variable(v) : Var(v);
      }
  return g;
}

struct VoxelVars {
  Var vx;
  Var vy;
  Var vz;
  Var vf;
};

inline std::vector<VoxelVars> voxel_vars(const VoxelSet& v, diff::Tape* tape) {
  std::vector<VoxelVars> out;
  out.reserve(v.occupied);
  for (const auto& s : v.valid()) {
    if (tape)
      out.push_back({tape->variable(s.vx), tape->variable(s.vy), tape->variable(s.vz), tape->variable(s.vf)});
    else
      out.push_back({s.vx, s.vy, s.vz, s.vf});
  }
  return out;
}

/// One node of the splat kernel: spatial node (x, y), temporal node t ∈ {0, 1}.
struct SplatTap {
  int x = 0;
  int y = 0;
  int t = 0;
  double weight = 0.0;
};

/// Trilinear taps of a voxel on a g×g spatial grid with temporal nodes at 0 and gz-1.
/// Taps that fall outside the grid are omitted.
inline std::vector<SplatTap> splat_taps(const Voxel& v, int g, int gz) {
  std::vector<SplatTap> taps;
  int ix = static_cast<int>(std::floor(v.vx));
  int iy = static_cast<int>(std::floor(v.vy));
  double fx = v.vx - ix;
  double fy = v.vy - iy;
  double tz = gz > 1 ? v.vz / (gz - 1) : 0.0;
  for (int b = 0; b < 2; ++b)
    for (int a = 0; a < 2; ++a)
      for (int t = 0; t < 2; ++t) {
        int x = ix + a;
        int y = iy + b;
        if (x < 0 || y < 0 || x >= g || y >= g) continue;
        double w = (a ? fx : 1.0 - fx) * (b ? fy : 1.0 - fy) * (t ? tz : 1.0 - tz);
        if (w != 0.0) taps.push_back({x, y, t, w});
      }
  return taps;
}

/// Scale of splatted polarity mass before encoding.
inline constexpr double kSplatGain = 0.25;

/// Splats voxel features into a 2×g×g grid (temporal nodes as channels).
inline Grid splat_voxels(std::span<const VoxelVars> voxels, int g, int gz) {
  std::vector<std::vector<Var>> terms(static_cast<std::size_t>(2) * g * g);
  double zspan = gz > 1 ? 1.0 / (gz - 1) : 0.0;
  for (const auto& v : voxels) {
    double ixd = std::floor(v.vx.value);
    double iyd = std::floor(v.vy.value);
    int ix = static_cast<int>(ixd);
    int iy = static_cast<int>(iyd);
    if (ix < -1 || iy < -1 || ix >= g || iy >= g) continue;
    Var fx = v.vx - ixd;
    Var fy = v.vy - iyd;
    std::array<Var, 2> wx{1.0 - fx, fx};
    std::array<Var, 2> wy{1.0 - fy, fy};
    Var tz = v.vz * zspan;
    Var f = v.vf * kSplatGain;
    std::array<Var, 2> ft{f - f * tz, f * tz};
    for (int b = 0; b < 2; ++b) {
      int y = iy + b;
      if (y < 0 || y >= g) continue;
      for (int a = 0; a < 2; ++a) {
        int x = ix + a;
        if (x < 0 || x >= g) continue;
        Var wxy = wx[static_cast<std::size_t>(a)] * wy[static_cast<std::size_t>(b)];
        for (int t = 0; t < 2; ++t)
          terms[(static_cast<std::size_t>(t) * g + y) * g + x].push_back(wxy * ft[static_cast<std::size_t>(t)]);
      }
    }
  }
  Grid out(2, g, g);
  for (std::size_t i = 0; i < terms.size(); ++i) out.v[i] = terms[i].empty() ? Var(0.0) : diff::sum(terms[i]);
  return out;
}

// ---------------------------------------------------------------------------
// Forward pass

using WeightSpan = std::span<const Var>;

/// Runs one encoder. Image inputs arrive on the 0..255 scale; the first layer
/// folds in the (x - 127.5) / 127.5 normalization.
inline Grid encode(WeightSpan w, const EncoderLayout& e, const Grid& input) {
  if (!e.present) throw ConfigError("encoder not configured for this modality");
  Grid h = input;
  for (std::size_t i = 0; i < 3; ++i) {
    const auto& s = e.conv[i];
    auto wts = w.subspan(e.weight_offset[i], s.weight_count());
    auto bias = w.subspan(e.bias_offset[i], static_cast<std::size_t>(s.cout));
    if (i == 0 && e.image_input) {
      std::vector<Var> scaled(wts.size());
      std::vector<Var> shifted(bias.size());
      std::size_t per_out = s.weight_count() / static_cast<std::size_t>(s.cout);
      for (std::size_t j = 0; j < wts.size(); ++j) scaled[j] = wts[j] * (1.0 / 127.5);
      for (std::size_t co = 0; co < bias.size(); ++co)
        shifted[co] = bias[co] - diff::sum(wts.subspan(co * per_out, per_out));
      h = conv2d(h, s, scaled, shifted);
    } else {
      h = conv2d(h, s, wts, bias);
    }
    if (i < 2) h = relu(std::move(h));
  }
  return h;
}

struct InputGrids {
  const Grid* rgb = nullptr;
  const Grid* frame = nullptr;
  const Grid* voxels = nullptr;
};

/// Encodes every present modality and fuses them with the learned scalar weights.
inline Grid embed(WeightSpan w, const ParamLayout& L, const InputGrids& in) {
  std::vector<Grid> feats;
  if (L.rgb.present) {
    if (!in.rgb) throw ConfigError("missing rgb input");
    feats.push_back(encode(w, L.rgb, *in.rgb));
  }
  if (L.frame.present) {
    if (!in.frame) throw ConfigError("missing event frame input");
    feats.push_back(encode(w, L.frame, *in.frame));
  }
  if (L.voxel.present) {
    if (!in.voxels) throw ConfigError("missing voxel input");
    feats.push_back(encode(w, L.voxel, *in.voxels));
  }
  Grid out(feats.front().c, feats.front().h, feats.front().w);
  std::vector<Var> xs(feats.size());
  auto fw = w.subspan(L.fusion, feats.size());
  for (std::size_t i = 0; i < out.v.size(); ++i) {
    for (std::size_t m = 0; m < feats.size(); ++m) xs[m] = feats[m].v[i];
    out.v[i] = diff::dot(xs, fw);
  }
  return out;
}

/// Recorded tracker outputs: score map (row-major S×S), logits, and decoded box.
struct OutputVars {
  std::vector<Var> score;
  std::vector<Var> logits;
  Var x, y, w, h;
};

struct TrackerOutput {
  std::vector<double> score;  // row-major kScoreSize × kScoreSize
  BBox bbox;

  double at(int x, int y) const { return score[static_cast<std::size_t>(y) * kScoreSize + x]; }
};

inline TrackerOutput values(const OutputVars& o) {
  TrackerOutput out;
  out.score.reserve(o.score.size());
  for (const auto& s : o.score) out.score.push_back(s.value);
  out.bbox = {o.x.value, o.y.value, o.w.value, o.h.value};
  return out;
}

/// Correlation, score map, soft-argmax centre, size head, clamped box.
inline OutputVars track_head(WeightSpan w, const ParamLayout& L, const Grid& tmpl, const Grid& search) {
  const int n = kScoreSize * kScoreSize;
  if (search.h != kScoreSize || search.w != kScoreSize) throw UsageError("search features must be 16x16");
  Grid corr = cross_correlate(tmpl, search);
  Var a = w[L.head];
  Var b = w[L.head + 1];
  OutputVars out;
  out.logits.resize(n);
  out.score.resize(n);
  double peak = -INFINITY;
  for (int i = 0; i < n; ++i) {
    out.logits[static_cast<std::size_t>(i)] = corr.v[static_cast<std::size_t>(i)] * a + b;
    out.score[static_cast<std::size_t>(i)] = diff::sigmoid(out.logits[static_cast<std::size_t>(i)]);
    peak = std::max(peak, out.logits[static_cast<std::size_t>(i)].value);
  }
  // Soft-argmax at temperature 1 over the logits.
  std::vector<Var> e(n);
  for (int i = 0; i < n; ++i) e[static_cast<std::size_t>(i)] = diff::exp(out.logits[static_cast<std::size_t>(i)] - peak);
  Var inv_z = 1.0 / diff::sum(e);
  std::vector<Var> att(n);
  std::vector<double> px(n), py(n);
  for (int i = 0; i < n; ++i) {
    att[static_cast<std::size_t>(i)] = e[static_cast<std::size_t>(i)] * inv_z;
    px[static_cast<std::size_t>(i)] = (i % kScoreSize + 0.5) * kScoreStride;
    py[static_cast<std::size_t>(i)] = (i / kScoreSize + 0.5) * kScoreStride;
  }
  Var cx = diff::weighted_sum(att, px);
  Var cy = diff::weighted_sum(att, py);

  const auto C = static_cast<std::size_t>(L.channels);
  std::vector<Var> pooled(C);
  for (std::size_t c = 0; c < C; ++c) pooled[c] = diff::dot(att, search.plane(static_cast<int>(c)));
  Var ow = diff::dot(pooled, w.subspan(L.head + 2, C), w[L.head + 2 + 2 * C]);
  Var oh = diff::dot(pooled, w.subspan(L.head + 2 + C, C), w[L.head + 3 + 2 * C]);
  Var bw = diff::clamp(kNominalBoxPx * diff::exp(ow), kMinBoxPx, kMaxBoxPx);
  Var bh = diff::clamp(kNominalBoxPx * diff::exp(oh), kMinBoxPx, kMaxBoxPx);

  Var x1 = diff::clamp(cx - 0.5 * bw, 0.0, kSearchPx);
  Var x2 = diff::clamp(cx + 0.5 * bw, 0.0, kSearchPx);
  Var y1 = diff::clamp(cy - 0.5 * bh, 0.0, kSearchPx);
  Var y2 = diff::clamp(cy + 0.5 * bh, 0.0, kSearchPx);
  out.x = x1;
  out.y = y1;
  out.w = x2 - x1;
  out.h = y2 - y1;
  return out;
}

inline std::vector<Var> constant_weights(const TrackerParams& p) { return {p.weights.begin(), p.weights.end()}; }

inline void check_params(const TrackerParams& p, const ParamLayout& L) {
  if (p.weights.size() != L.total) throw ConfigError("parameter vector does not match the layout");
}

/// Feature grid of an RGB patch through the rgb encoder alone.
inline Grid embed_rgb(const TrackerParams& p, const Grid& patch) {
  ParamLayout L = make_layout(p.modality, p.channels);
  check_params(p, L);
  auto w = constant_weights(p);
  return encode(w, L.rgb, patch);
}

/// Feature grid of a voxel set through the splat kernel and the voxel encoder.
inline Grid embed_voxels(const TrackerParams& p, std::span<const VoxelVars> voxels, int g, int gz) {
  ParamLayout L = make_layout(p.modality, p.channels);
  check_params(p, L);
  auto w = constant_weights(p);
  return encode(w, L.voxel, splat_voxels(voxels, g, gz));
}

/// Which search inputs receive gradients.
struct InputSelection {
  bool rgb = false;
  bool frame = false;
  bool voxels = false;
};

struct InputGradients {
  Image<double> rgb;
  Image<double> frame;
  std::vector<Voxel> voxels;  // one per occupied slot
};

/// Tracker with a fixed template, as seen by attacks and the tracking loop.
class BoundTracker {
 public:
  BoundTracker(const TrackerParams& params, const PatchInputs& z)
      : params_(params), layout_(make_layout(params.modality, params.channels)), weights_(constant_weights(params)) {
    check_params(params_, layout_);
    check_inputs(params_.modality, z, kTemplatePx);
    Grids grids = make_grids(z, nullptr, {});
    template_ = embed(weights_, layout_, grids.view());
  }

  const TrackerParams& params() const { return params_; }
  Modality modality() const { return params_.modality; }

  TrackerOutput predict(const PatchInputs& x) const {
    check_inputs(params_.modality, x, kSearchPx);
    Grids grids = make_grids(x, nullptr, {});
    return values(track_head(weights_, layout_, template_, embed(weights_, layout_, grids.view())));
  }

  struct Evaluation {
    double loss = 0.0;
    TrackerOutput output;
    InputGradients grad;
  };

  using LossFn = std::function<Var(const OutputVars&)>;

  /// Forward pass plus gradients of `loss` with respect to the selected search inputs.
  Evaluation evaluate(const PatchInputs& x, const InputSelection& wrt, const LossFn& loss) const {
    check_inputs(params_.modality, x, kSearchPx);
    diff::Tape tape;
    tape.reserve(1u << 18, 1u << 21);
    Grids grids = make_grids(x, &tape, wrt);
    OutputVars out = track_head(weights_, layout_, template_, embed(weights_, layout_, grids.view()));
    Var l = loss(out);
    if (!std::isfinite(l.value)) throw NumericError("non-finite loss");
    Evaluation ev;
    ev.loss = l.value;
    ev.output = values(out);
    if (l.is_constant()) l = tape.finish(l.value);
    diff::Gradients g = tape.backward(l);
    if (wrt.rgb && x.rgb) ev.grad.rgb = gather(*x.rgb, grids.rgb, g);
    if (wrt.frame && x.frame) ev.grad.frame = gather(*x.frame, grids.frame, g);
    if (wrt.voxels && x.voxels) {
      ev.grad.voxels.reserve(grids.voxel_vars.size());
      for (const auto& v : grids.voxel_vars) ev.grad.voxels.push_back({g[v.vx], g[v.vy], g[v.vz], g[v.vf]});
    }
    return ev;
  }

 private:
  struct Grids {
    Grid rgb, frame, voxels;
    std::vector<VoxelVars> voxel_vars;
    bool has_rgb = false, has_frame = false, has_voxels = false;

    InputGrids view() const {
      return {has_rgb ? &rgb : nullptr, has_frame ? &frame : nullptr, has_voxels ? &voxels : nullptr};
    }
  };

  static Grids make_grids(const PatchInputs& in, diff::Tape* tape, const InputSelection& wrt) {
    Grids g;
    if (in.rgb) {
      g.rgb = image_grid(*in.rgb, wrt.rgb ? tape : nullptr);
      g.has_rgb = true;
    }
    if (in.frame) {
      g.frame = image_grid(*in.frame, wrt.frame ? tape : nullptr);
      g.has_frame = true;
    }
    if (in.voxels) {
      g.voxel_vars = voxel_vars(*in.voxels, wrt.voxels ? tape : nullptr);
      g.voxels = splat_voxels(g.voxel_vars, in.voxels->gx, in.voxels->gz);
      g.has_voxels = true;
    }
    return g;
  }

  static Image<double> gather(const Image<double>& like, const Grid& grid, const diff::Gradients& g) {
    Image<double> out(like.width, like.height, like.channels);
    for (int y = 0; y < like.height; ++y)
      for (int x = 0; x < like.width; ++x)
        for (int c = 0; c < like.channels; ++c) out.at(x, y, c) = g[grid.at(c, y, x)];
    return out;
  }

  TrackerParams params_;
  ParamLayout layout_;
  std::vector<Var> weights_;
  Grid template_;
};

/// Score map and box for a patch pair. Throws ConfigError when the pair's
/// modality differs from the one the parameters were built for.
inline TrackerOutput predict(const TrackerParams& params, const PatchPair& pair) {
  if (pair.modality != params.modality)
    throw ConfigError("tracker built for " + to_string(params.modality) + " cannot consume " + to_string(pair.modality));
  return BoundTracker(params, pair.z).predict(pair.x);
}

// ---------------------------------------------------------------------------
// Checkpoint: "SGTK1", u32 version, u8 modality, u32 channels, u64 seed,
// u64 steps, u64 count, count × f64 weights (all little-endian), u32 CRC-32 of
// everything before it.

inline constexpr char kCheckpointMagic[] = "SGTK1";
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

template <class T>
void put_le(std::vector<unsigned char>& buf, T v) {
  std::uint64_t bits = 0;
  if constexpr (std::is_floating_point_v<T>) {
    static_assert(sizeof(T) == 8);
    std::memcpy(&bits, &v, 8);
  } else {
    bits = static_cast<std::uint64_t>(v);
  }
  for (std::size_t i = 0; i < sizeof(T); ++i) buf.push_back(static_cast<unsigned char>(bits >> (8 * i)));
}

template <class T>
T get_le(const std::vector<unsigned char>& buf, std::size_t& pos) {
  if (pos + sizeof(T) > buf.size()) throw ChecksumError("checkpoint truncated");
  std::uint64_t bits = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) bits |= static_cast<std::uint64_t>(buf[pos + i]) << (8 * i);
  pos += sizeof(T);
  if constexpr (std::is_floating_point_v<T>) {
    T v;
    std::memcpy(&v, &bits, 8);
    return v;
  } else {
    return static_cast<T>(bits);
  }
}

inline std::uint32_t crc32_of(const unsigned char* data, std::size_t n) {
  return static_cast<std::uint32_t>(::crc32(::crc32(0L, Z_NULL, 0), data, static_cast<uInt>(n)));
}

}  // namespace detail

inline std::vector<unsigned char> serialize_params(const TrackerParams& p) {
  std::vector<unsigned char> buf(kCheckpointMagic, kCheckpointMagic + 5);
  detail::put_le<std::uint32_t>(buf, kCheckpointVersion);
  detail::put_le<std::uint8_t>(buf, static_cast<std::uint8_t>(p.modality));
  detail::put_le<std::uint32_t>(buf, static_cast<std::uint32_t>(p.channels));
  detail::put_le<std::uint64_t>(buf, p.seed);
  detail::put_le<std::uint64_t>(buf, p.steps);
  detail::put_le<std::uint64_t>(buf, p.weights.size());
  for (double w : p.weights) detail::put_le<double>(buf, w);
  detail::put_le<std::uint32_t>(buf, detail::crc32_of(buf.data(), buf.size()));
  return buf;
}

inline TrackerParams deserialize_params(const std::vector<unsigned char>& buf) {
  if (buf.size() < 5 || std::memcmp(buf.data(), kCheckpointMagic, 4) != 0)
    throw ChecksumError("not a tracker checkpoint");
  if (buf[4] != static_cast<unsigned char>(kCheckpointMagic[4]))
    throw VersionError(std::string("unsupported checkpoint format ") + static_cast<char>(buf[4]));
  if (buf.size() < 9) throw ChecksumError("checkpoint truncated");
  std::size_t body = buf.size() - 4;
  std::size_t crc_pos = body;
  auto stored = detail::get_le<std::uint32_t>(buf, crc_pos);
  if (stored != detail::crc32_of(buf.data(), body)) throw ChecksumError("checkpoint checksum mismatch");
  std::size_t pos = 5;
  auto version = detail::get_le<std::uint32_t>(buf, pos);
  if (version != kCheckpointVersion) throw VersionError("unsupported checkpoint version " + std::to_string(version));
  TrackerParams p;
  auto m = detail::get_le<std::uint8_t>(buf, pos);
  if (m > static_cast<std::uint8_t>(Modality::rgb_frame)) throw ChecksumError("invalid modality tag");
  p.modality = static_cast<Modality>(m);
  p.channels = static_cast<int>(detail::get_le<std::uint32_t>(buf, pos));
  p.seed = detail::get_le<std::uint64_t>(buf, pos);
  p.steps = detail::get_le<std::uint64_t>(buf, pos);
  auto n = detail::get_le<std::uint64_t>(buf, pos);
  if (n != (body - pos) / 8 || (body - pos) % 8 != 0) throw ChecksumError("checkpoint weight count mismatch");
  p.weights.resize(n);
  for (auto& w : p.weights) w = detail::get_le<double>(buf, pos);
  if (make_layout(p.modality, p.channels).total != p.weights.size())
    throw ChecksumError("checkpoint weights do not match the declared architecture");
  return p;
}

inline void save_params(const TrackerParams& p, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto buf = serialize_params(p);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!out) throw Error("write failed: " + path.string());
}

inline TrackerParams load_params(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::vector<unsigned char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_params(buf);
}

}  // namespace advbench
