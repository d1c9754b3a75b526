#pragma once

// Patch extraction from sequences and supervised training of the surrogate.

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <vector>

#include "advbench/diff.hpp"
#include "advbench/error.hpp"
#include "advbench/eventcam.hpp"
#include "advbench/losses.hpp"
#include "advbench/synth.hpp"
#include "advbench/tracker.hpp"

namespace advbench {

/// Cached per-frame event frames of a sequence (display normalized, full sensor).
inline Image<double> event_frame(const Sequence& seq, std::size_t k) {
  return display_normalize(accumulate_event_frame(seq.events, seq.window(k)));
}

/// Inputs of one patch for the requested modality.
inline PatchInputs patch_inputs(const Sequence& seq, std::size_t k, const CropRegion& r, int patch_px, Modality m) {
  if (k >= seq.frames.size()) throw UsageError("frame index out of range");
  PatchInputs in;
  if (uses_rgb(m)) in.rgb = crop_patch(seq.frames[k], r, patch_px);
  if (uses_frames(m)) in.frame = crop_patch(event_frame(seq, k), r, patch_px);
  if (uses_voxels(m)) in.voxels = voxelize_patch(seq.events, seq.window(k), r, patch_px, patch_voxel_spec());
  return in;
}

struct TrainingExample {
  PatchPair pair;
  BBox target;  // ground truth in search-patch pixels
};

struct TrainConfig {
  std::size_t steps = 300;
  std::size_t batch = 4;
  double lr = 3e-3;
  double sigma = 1.0;
  LossWeights weights;
  std::uint64_t seed = 1;
  double jitter_px = 32.0;     // search centre offset, search-patch pixels
  double scale_jitter = 0.1;   // relative crop size change
  std::size_t max_gap = 4;     // frames between template and search
  double clip_norm = 5.0;
};

/// Draws template/search pairs from sequences with centre and scale jitter.
class ExampleSampler {
 public:
  ExampleSampler(std::span<const Sequence> sequences, Modality m, const TrainConfig& cfg)
      : sequences_(sequences), modality_(m), cfg_(cfg) {
    if (sequences_.empty()) throw ConfigError("no training sequences");
    for (const auto& s : sequences_)
      if (s.frames.size() < 2) throw ConfigError("training sequences need at least two frames");
  }

  TrainingExample operator()(std::mt19937_64& rng) const {
    std::uniform_int_distribution<std::size_t> pick(0, sequences_.size() - 1);
    const Sequence& seq = sequences_[pick(rng)];
    std::size_t n = seq.frames.size();
    std::uniform_int_distribution<std::size_t> frame(0, n - 1);
    std::size_t zi = frame(rng);
    std::size_t lo = zi > cfg_.max_gap ? zi - cfg_.max_gap : 0;
    std::size_t hi = std::min(n - 1, zi + cfg_.max_gap);
    std::size_t xi = std::uniform_int_distribution<std::size_t>(lo, hi)(rng);

    const BBox& zb = seq.groundtruth[zi];
    const BBox& xb = seq.groundtruth[xi];
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    CropRegion zr = crop_region(zb, kTemplateScale);
    CropRegion xr = crop_region(xb, kSearchScale * (1.0 + cfg_.scale_jitter * unit(rng)));
    double px = xr.side / kSearchPx;
    xr.x0 += cfg_.jitter_px * px * unit(rng);
    xr.y0 += cfg_.jitter_px * px * unit(rng);

    TrainingExample ex;
    ex.pair.modality = modality_;
    ex.pair.z = patch_inputs(seq, zi, zr, kTemplatePx, modality_);
    ex.pair.x = patch_inputs(seq, xi, xr, kSearchPx, modality_);
    ex.target = to_patch(xb, xr, kSearchPx);
    return ex;
  }

 private:
  std::span<const Sequence> sequences_;
  Modality modality_;
  TrainConfig cfg_;
};

/// Track loss of one example with the weights recorded on `tape`.
inline Var example_loss(std::span<const Var> w, const ParamLayout& L, const TrainingExample& ex,
                        const TrainConfig& cfg) {
  auto grids = [](const PatchInputs& in, std::vector<Grid>& store) {
    store.clear();
    store.reserve(3);
    InputGrids g;
    if (in.rgb) g.rgb = &store.emplace_back(image_grid(*in.rgb, nullptr));
    if (in.frame) g.frame = &store.emplace_back(image_grid(*in.frame, nullptr));
    if (in.voxels) {
      auto vars = voxel_vars(*in.voxels, nullptr);
      g.voxels = &store.emplace_back(splat_voxels(vars, in.voxels->gx, in.voxels->gz));
    }
    return g;
  };
  std::vector<Grid> zs, xs;
  Grid zf = embed(w, L, grids(ex.pair.z, zs));
  Grid xf = embed(w, L, grids(ex.pair.x, xs));
  OutputVars out = track_head(w, L, zf, xf);
  return track_loss(out, make_target(ex.target, TargetRole::truth, cfg.sigma), cfg.weights);
}

struct TrainResult {
  TrackerParams params;
  std::vector<double> loss_curve;  // mean batch loss per step
};

using ExampleSource = std::function<TrainingExample(std::mt19937_64&)>;

/// Adam on the track loss. Throws TrainingError on a non-finite loss or gradient.
inline TrainResult train(TrackerParams params, const ExampleSource& source, const TrainConfig& cfg,
                         const std::function<void(std::size_t, double)>& progress = {}) {
  cfg.weights.validate();
  if (cfg.batch == 0) throw ConfigError("batch size must be positive");
  if (!(cfg.lr > 0.0)) throw ConfigError("learning rate must be positive");
  ParamLayout L = make_layout(params.modality, params.channels);
  check_params(params, L);
  std::mt19937_64 rng(cfg.seed);
  std::vector<double> m(L.total, 0.0), v(L.total, 0.0), grad(L.total);
  const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  TrainResult result;
  diff::Tape tape;
  std::vector<TrainingExample> batch(cfg.batch);
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    for (auto& ex : batch) ex = source(rng);
    std::fill(grad.begin(), grad.end(), 0.0);
    double total = 0.0;
    for (const auto& ex : batch) {
      tape.clear();
      std::vector<Var> w(L.total);
      for (std::size_t i = 0; i < L.total; ++i) w[i] = tape.variable(params.weights[i]);
      Var loss;
      try {
        loss = example_loss(w, L, ex, cfg);
      } catch (const NumericError& e) {
        throw TrainingError(params.steps + step, e.what());
      }
      if (!std::isfinite(loss.value)) throw TrainingError(params.steps + step, "loss is not finite");
      total += loss.value;
      auto g = tape.backward(loss);
      for (std::size_t i = 0; i < L.total; ++i) grad[i] += g[w[i]] / static_cast<double>(cfg.batch);
    }
    double norm = 0.0;
    for (double gi : grad) norm += gi * gi;
    norm = std::sqrt(norm);
    if (!std::isfinite(norm)) throw TrainingError(params.steps + step, "gradient is not finite");
    double scale = cfg.clip_norm > 0.0 && norm > cfg.clip_norm ? cfg.clip_norm / norm : 1.0;
    double t = static_cast<double>(step + 1);
    for (std::size_t i = 0; i < L.total; ++i) {
      double gi = grad[i] * scale;
      m[i] = b1 * m[i] + (1.0 - b1) * gi;
      v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
      double mh = m[i] / (1.0 - std::pow(b1, t));
      double vh = v[i] / (1.0 - std::pow(b2, t));
      params.weights[i] -= cfg.lr * mh / (std::sqrt(vh) + eps);
    }
    double mean = total / static_cast<double>(cfg.batch);
    result.loss_curve.push_back(mean);
    if (progress) progress(step, mean);
  }
  params.steps += cfg.steps;
  result.params = std::move(params);
  return result;
}

/// Trains on a fixed list of examples, cycling through them in order.
inline TrainResult train(TrackerParams params, std::span<const TrainingExample> examples, const TrainConfig& cfg) {
  if (examples.empty()) throw ConfigError("empty training set");
  auto next = std::make_shared<std::size_t>(0);
  ExampleSource src = [examples, next](std::mt19937_64&) { return examples[(*next)++ % examples.size()]; };
  return train(std::move(params), src, cfg);
}

inline TrainResult train(TrackerParams params, std::span<const Sequence> sequences, const TrainConfig& cfg,
                         const std::function<void(std::size_t, double)>& progress = {}) {
  ExampleSampler sampler(sequences, params.modality, cfg);
  return train(std::move(params), ExampleSource(sampler), cfg, progress);
}

}  // namespace advbench
