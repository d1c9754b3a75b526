#pragma once

// White-box attacks on the surrogate tracker: noise and FGSM baselines, PGD on
// images, voxel injection plus coordinate optimization, temporal carry of
// perturbations, the joint RGB+voxel attack, the universal RGB+event-frame
// perturbation, and the timestamp-only / polarity-only voxel baselines.
//
// All attacks descend on the adversarial loss: x ← Proj(x − α·sign(∂L/∂x)).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "advbench/error.hpp"
#include "advbench/eval.hpp"
#include "advbench/losses.hpp"
#include "advbench/tracker.hpp"

namespace advbench {

struct AttackBudget {
  double eps = 10.0;
  double alpha = 1.0;
  int iters = 10;

  void validate() const {
    if (!(eps >= 0.0) || !std::isfinite(eps)) throw ConfigError("attack budget: eps must be >= 0");
    if (!(alpha > 0.0) || !std::isfinite(alpha)) throw ConfigError("attack budget: alpha must be > 0");
    if (iters < 1) throw ConfigError("attack budget: iteration count must be >= 1");
  }
};

inline AttackBudget unimodal_budget() { return {10.0, 1.0, 10}; }
inline AttackBudget multimodal_budget() { return {8.0, 1.0, 10}; }

/// Desired target location inside the search patch.
struct TargetSpec {
  BBox box;

  void validate() const {
    if (!box.valid() || box.x < 0.0 || box.y < 0.0 || box.x + box.w > kSearchPx || box.y + box.h > kSearchPx)
      throw ConfigError("target box must lie inside the search patch");
  }
};

/// Truth-sized box centred on the patch quadrant farthest from the truth centre.
inline TargetSpec far_quadrant_target(const BBox& truth) {
  const double q[4][2] = {{32, 32}, {96, 32}, {32, 96}, {96, 96}};
  std::size_t best = 0;
  double best_d = -1.0;
  for (std::size_t i = 0; i < 4; ++i) {
    double d = std::hypot(q[i][0] - truth.cx(), q[i][1] - truth.cy());
    if (d > best_d) best_d = d, best = i;
  }
  double w = std::clamp(truth.w, 1.0, 64.0);
  double h = std::clamp(truth.h, 1.0, 64.0);
  return {BBox::from_center(q[best][0], q[best][1], w, h)};
}

/// The scalar every attack descends on, with its three reference targets.
struct AttackObjective {
  TrackTarget target;
  TrackTarget truth;
  std::optional<TrackTarget> ori;
  LossWeights weights;
  LossKind kind = LossKind::adversarial;

  Var operator()(const OutputVars& y) const { return adversarial_loss(y, target, truth, ori, weights, kind); }
  double value(const TrackerOutput& y) const { return adversarial_loss(y, target, truth, ori, weights, kind); }
};

/// y_ori comes from the unattacked model on the clean input.
inline AttackObjective make_objective(const BoundTracker& model, const PatchInputs& clean, const BBox& truth,
                                      const TargetSpec& target, LossKind kind = LossKind::adversarial,
                                      const LossWeights& w = {}, double sigma = 1.0) {
  target.validate();
  AttackObjective o;
  o.target = make_target(target.box, TargetRole::target, sigma);
  o.truth = make_target(truth, TargetRole::truth, sigma);
  o.ori = make_target(model.predict(clean).bbox, TargetRole::ori, sigma);
  o.weights = w;
  o.kind = kind;
  return o;
}

struct AttackResult {
  PatchInputs adv;
  std::vector<double> loss_trace;  // iters + 1 entries
  BBox before;
  BBox after;
};

/// Called after every projection with the iteration number (1-based) and the current inputs.
using IterationHook = std::function<void(int, const PatchInputs&)>;

enum class ImageChannel { rgb, frame };

inline std::optional<Image<double>>& image_of(PatchInputs& in, ImageChannel ch) {
  return ch == ImageChannel::rgb ? in.rgb : in.frame;
}
inline const std::optional<Image<double>>& image_of(const PatchInputs& in, ImageChannel ch) {
  return ch == ImageChannel::rgb ? in.rgb : in.frame;
}

inline double sign(double g) { return g > 0.0 ? 1.0 : (g < 0.0 ? -1.0 : 0.0); }

inline double linf_distance(const Image<double>& a, const Image<double>& b) {
  if (!a.same_shape(b)) throw UsageError("image shapes differ");
  double d = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) d = std::max(d, std::fabs(a.data[i] - b.data[i]));
  return d;
}

/// ref + clamp(v − ref, ±ε), stepped toward ref when rounding lands outside the ball,
/// so |result − ref| ≤ ε holds exactly in floating point.
inline double within(double v, double ref, double eps) {
  double out = ref + std::clamp(v - ref, -eps, eps);
  while (out - ref > eps) out = std::nextafter(out, ref);
  while (ref - out > eps) out = std::nextafter(out, ref);
  return out;
}

/// Clamp into the ε-ball around `ref`, then into [0, 255].
inline void project_image(Image<double>& x, const Image<double>& ref, double eps) {
  for (std::size_t i = 0; i < x.data.size(); ++i) x.data[i] = std::clamp(within(x.data[i], ref.data[i], eps), 0.0, 255.0);
}

namespace detail {

inline void check_budget(double deviation, double eps, const char* what, int iter) {
  if (deviation > eps)
    throw NumericError(std::string(what) + " left its budget at iteration " + std::to_string(iter));
}

inline void check_finite(const Image<double>& g, int iter) {
  for (double v : g.data)
    if (!std::isfinite(v)) throw NumericError("non-finite gradient at iteration " + std::to_string(iter));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Image attacks

/// Uniform noise in [−ε, ε] per element, clamped to [0, 255].
inline Image<double> noise_baseline(const Image<double>& in, double eps, std::uint64_t seed) {
  if (!(eps >= 0.0)) throw ConfigError("noise amplitude must be >= 0");
  Image<double> out = in;
  if (eps == 0.0) return out;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-eps, eps);
  for (auto& v : out.data) v = std::clamp(within(v + u(rng), v, eps), 0.0, 255.0);
  return out;
}

/// Uniform coordinate noise in [−ε, ε] on every occupied voxel, clamped to the grid.
inline VoxelSet noise_voxels(const VoxelSet& v, double eps, std::uint64_t seed) {
  if (!(eps >= 0.0)) throw ConfigError("noise amplitude must be >= 0");
  VoxelSet out = v;
  if (eps == 0.0) return out;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-eps, eps);
  for (auto& s : out.valid()) {
    s.vx = std::clamp(within(s.vx + u(rng), s.vx, eps), 0.0, static_cast<double>(v.gx - 1));
    s.vy = std::clamp(within(s.vy + u(rng), s.vy, eps), 0.0, static_cast<double>(v.gy - 1));
    s.vz = std::clamp(within(s.vz + u(rng), s.vz, eps), 0.0, static_cast<double>(v.gz - 1));
  }
  return out;
}

/// Projected signed-gradient descent on one image channel. The ε-ball is
/// centred on `reference`; `start` supplies the initial point for that channel
/// and the values of every other modality, which stay fixed.
inline AttackResult pgd(const BoundTracker& model, const PatchInputs& start, const Image<double>& reference,
                        ImageChannel ch, const AttackObjective& obj, const AttackBudget& b,
                        const IterationHook& hook = {}) {
  b.validate();
  if (!image_of(start, ch)) throw UsageError("pgd: model input lacks the attacked channel");
  AttackResult r;
  r.adv = start;
  Image<double>& x = *image_of(r.adv, ch);
  if (!x.same_shape(reference)) throw UsageError("pgd: reference shape differs from input");
  project_image(x, reference, b.eps);
  InputSelection wrt{ch == ImageChannel::rgb, ch == ImageChannel::frame, false};
  for (int m = 0; m < b.iters; ++m) {
    auto ev = model.evaluate(r.adv, wrt, obj);
    if (m == 0) r.before = ev.output.bbox;
    r.loss_trace.push_back(ev.loss);
    const Image<double>& g = ch == ImageChannel::rgb ? ev.grad.rgb : ev.grad.frame;
    detail::check_finite(g, m);
    for (std::size_t i = 0; i < x.data.size(); ++i) x.data[i] -= b.alpha * sign(g.data[i]);
    project_image(x, reference, b.eps);
    detail::check_budget(linf_distance(x, reference), b.eps, "image", m + 1);
    if (hook) hook(m + 1, r.adv);
  }
  TrackerOutput out = model.predict(r.adv);
  r.loss_trace.push_back(obj.value(out));
  r.after = out.bbox;
  return r;
}

inline AttackResult pgd(const BoundTracker& model, const PatchInputs& clean, ImageChannel ch,
                        const AttackObjective& obj, const AttackBudget& b, const IterationHook& hook = {}) {
  if (!image_of(clean, ch)) throw UsageError("pgd: model input lacks the attacked channel");
  return pgd(model, clean, *image_of(clean, ch), ch, obj, b, hook);
}

/// One signed step of size ε, i.e. pgd with M = 1 and α = ε.
inline AttackResult fgsm(const BoundTracker& model, const PatchInputs& clean, ImageChannel ch,
                         const AttackObjective& obj, double eps) {
  if (!(eps >= 0.0)) throw ConfigError("fgsm: eps must be >= 0");
  if (eps == 0.0) {
    AttackResult r;
    r.adv = clean;
    TrackerOutput out = model.predict(clean);
    r.before = r.after = out.bbox;
    r.loss_trace.assign(2, obj.value(out));
    return r;
  }
  return pgd(model, clean, ch, obj, AttackBudget{eps, eps, 1});
}

// ---------------------------------------------------------------------------
// Voxel attacks

/// Cell ranges covered by a patch-pixel box.
inline std::pair<std::pair<int, int>, std::pair<int, int>> target_cells(const VoxelSet& v, const BBox& s) {
  auto range = [&](double lo, double len, int g) {
    int a = std::clamp(static_cast<int>(std::floor(lo / v.cell_px)), 0, g - 1);
    int b = std::clamp(static_cast<int>(std::ceil((lo + len) / v.cell_px)) - 1, a, g - 1);
    return std::pair{a, b};
  };
  return {range(s.x, s.w, v.gx), range(s.y, s.h, v.gy)};
}

/// Fills every padding slot with a voxel drawn uniformly over the target's
/// cells and temporal bins, with feature `polarity(rng)` (default +1).
inline VoxelSet adv_init_voxels(const VoxelSet& v, const TargetSpec& s, std::uint64_t seed,
                                const std::function<double(std::mt19937_64&)>& polarity = {}) {
  s.validate();
  VoxelSet out = v;
  std::size_t n = count_invalid_voxels(v);
  if (n == 0) return out;
  auto [xr, yr] = target_cells(v, s.box);
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> ux(xr.first, xr.second), uy(yr.first, yr.second), uz(0, v.gz - 1);
  for (std::size_t i = v.occupied; i < v.capacity(); ++i) {
    Voxel& s_ = out.slots[i];
    s_.vx = ux(rng);
    s_.vy = uy(rng);
    s_.vz = uz(rng);
    s_.vf = polarity ? polarity(rng) : 1.0;
  }
  out.occupied = v.capacity();
  return out;
}

/// Which voxel fields an optimization may change.
enum class VoxelFields { xyz, z, f };

inline double voxel_deviation(const VoxelSet& a, const VoxelSet& b) {
  if (a.occupied != b.occupied) throw UsageError("voxel sets differ in occupancy");
  double d = 0.0;
  for (std::size_t i = 0; i < a.occupied; ++i) {
    const auto &p = a.slots[i], &q = b.slots[i];
    d = std::max({d, std::fabs(p.vx - q.vx), std::fabs(p.vy - q.vy), std::fabs(p.vz - q.vz), std::fabs(p.vf - q.vf)});
  }
  return d;
}

/// Projected signed-gradient descent on the occupied voxels of `start`.
/// Coordinates stay within ε of `reference` (slot by slot) and inside the grid;
/// features stay within ε of the reference and inside [−K_max, K_max].
inline AttackResult grad_opt_voxels(const BoundTracker& model, const PatchInputs& start, const VoxelSet& reference,
                                    const AttackObjective& obj, const AttackBudget& b,
                                    VoxelFields fields = VoxelFields::xyz, const IterationHook& hook = {}) {
  b.validate();
  if (!start.voxels) throw UsageError("grad_opt: model input lacks voxels");
  if (start.voxels->occupied != reference.occupied) throw UsageError("grad_opt: reference occupancy differs");
  AttackResult r;
  r.adv = start;
  VoxelSet& v = *r.adv.voxels;
  const double gx = v.gx - 1, gy = v.gy - 1, gz = v.gz - 1, kmax = v.max_events;
  auto project = [&] {
    for (std::size_t i = 0; i < v.occupied; ++i) {
      Voxel& s = v.slots[i];
      const Voxel& o = reference.slots[i];
      if (fields == VoxelFields::xyz) {
        s.vx = std::clamp(within(s.vx, o.vx, b.eps), 0.0, gx);
        s.vy = std::clamp(within(s.vy, o.vy, b.eps), 0.0, gy);
      } else {
        s.vx = o.vx;
        s.vy = o.vy;
      }
      s.vz = fields != VoxelFields::f ? std::clamp(within(s.vz, o.vz, b.eps), 0.0, gz) : o.vz;
      s.vf = fields == VoxelFields::f ? std::clamp(within(s.vf, o.vf, b.eps), -kmax, kmax) : o.vf;
    }
  };
  project();
  for (int m = 0; m < b.iters; ++m) {
    auto ev = model.evaluate(r.adv, {false, false, true}, obj);
    if (m == 0) r.before = ev.output.bbox;
    r.loss_trace.push_back(ev.loss);
    for (std::size_t i = 0; i < v.occupied; ++i) {
      const Voxel& g = ev.grad.voxels[i];
      if (!std::isfinite(g.vx) || !std::isfinite(g.vy) || !std::isfinite(g.vz) || !std::isfinite(g.vf))
        throw NumericError("non-finite voxel gradient at iteration " + std::to_string(m));
      Voxel& s = v.slots[i];
      s.vx -= b.alpha * sign(g.vx);
      s.vy -= b.alpha * sign(g.vy);
      s.vz -= b.alpha * sign(g.vz);
      s.vf -= b.alpha * sign(g.vf);
    }
    project();
    detail::check_budget(voxel_deviation(v, reference), b.eps, "voxels", m + 1);
    if (hook) hook(m + 1, r.adv);
  }
  TrackerOutput out = model.predict(r.adv);
  r.loss_trace.push_back(obj.value(out));
  r.after = out.bbox;
  return r;
}

/// Relaxed Gumbel-Softmax sample over {+1, −1}; `hard` is the straight-through sign.
struct PolaritySample {
  double soft = 0.0;  // expected polarity under the relaxed distribution, in (−1, 1)
  double hard = 1.0;
};

inline PolaritySample gumbel_polarity(std::mt19937_64& rng, double logit_pos = 0.0, double logit_neg = 0.0,
                                      double temperature = 1.0) {
  if (!(temperature > 0.0)) throw ConfigError("gumbel temperature must be > 0");
  std::uniform_real_distribution<double> u(std::numeric_limits<double>::min(), 1.0);
  double gp = -std::log(-std::log(u(rng)));
  double gn = -std::log(-std::log(u(rng)));
  double a = (logit_pos + gp) / temperature;
  double c = (logit_neg + gn) / temperature;
  double m = std::max(a, c);
  double pp = std::exp(a - m), pn = std::exp(c - m);
  double p = pp / (pp + pn);
  return {2.0 * p - 1.0, p >= 0.5 ? 1.0 : -1.0};
}

// ---------------------------------------------------------------------------
// Temporal carry

enum class TemporalMode { off, on, eq5_literal };

inline TemporalMode parse_temporal(const std::string& s) {
  if (s == "off") return TemporalMode::off;
  if (s == "on") return TemporalMode::on;
  if (s == "eq5-literal") return TemporalMode::eq5_literal;
  throw ConfigError("temporal mode must be on, off or eq5-literal");
}

inline std::string to_string(TemporalMode m) {
  switch (m) {
    case TemporalMode::off: return "off";
    case TemporalMode::on: return "on";
    case TemporalMode::eq5_literal: return "eq5-literal";
  }
  return "?";
}

/// Perturbations carried between frames of one sequence.
struct PerturbationState {
  std::optional<Image<double>> eta_rgb;
  std::optional<Image<double>> eta_frame;
  std::vector<Voxel> eta_voxels;            // per-slot offsets of the last attacked voxel set
  std::optional<Image<double>> eta_universal;  // single channel, shared by both image modalities
  long frame = -1;                          // last frame that updated the state
};

/// Warm start for frame t: clean_t + s·ε_{t−1}, projected into the ε-ball and [0, 255].
/// s is +1 for `on`, −1 for `eq5_literal`; no carry when off or without history.
inline Image<double> temporal_carry(const Image<double>& clean_t, const std::optional<Image<double>>& eta_prev,
                                    double eps, TemporalMode mode) {
  Image<double> out = clean_t;
  if (mode == TemporalMode::off || !eta_prev || !eta_prev->same_shape(clean_t)) return out;
  double s = mode == TemporalMode::on ? 1.0 : -1.0;
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += s * eta_prev->data[i];
  project_image(out, clean_t, eps);
  return out;
}

/// ε_{t−1} = adv_{t−1} − clean_{t−1}.
inline Image<double> perturbation(const Image<double>& adv, const Image<double>& clean) {
  Image<double> eta = adv;
  for (std::size_t i = 0; i < eta.data.size(); ++i) eta.data[i] -= clean.data[i];
  return eta;
}

/// Voxel analogue of temporal_carry: per-slot offsets applied to the slots of
/// the new reference that exist in both frames, projected like grad_opt_voxels.
inline VoxelSet temporal_carry_voxels(const VoxelSet& reference, const std::vector<Voxel>& eta_prev, double eps,
                                      TemporalMode mode) {
  VoxelSet out = reference;
  if (mode == TemporalMode::off) return out;
  double s = mode == TemporalMode::on ? 1.0 : -1.0;
  std::size_t n = std::min<std::size_t>(out.occupied, eta_prev.size());
  for (std::size_t i = 0; i < n; ++i) {
    Voxel& v = out.slots[i];
    const Voxel& e = eta_prev[i];
    v.vx = std::clamp(within(v.vx + s * e.vx, v.vx, eps), 0.0, static_cast<double>(out.gx - 1));
    v.vy = std::clamp(within(v.vy + s * e.vy, v.vy, eps), 0.0, static_cast<double>(out.gy - 1));
    v.vz = std::clamp(within(v.vz + s * e.vz, v.vz, eps), 0.0, static_cast<double>(out.gz - 1));
  }
  return out;
}

inline std::vector<Voxel> voxel_offsets(const VoxelSet& adv, const VoxelSet& reference) {
  std::vector<Voxel> eta(adv.occupied);
  for (std::size_t i = 0; i < adv.occupied && i < reference.occupied; ++i)
    eta[i] = {adv.slots[i].vx - reference.slots[i].vx, adv.slots[i].vy - reference.slots[i].vy,
              adv.slots[i].vz - reference.slots[i].vz, adv.slots[i].vf - reference.slots[i].vf};
  return eta;
}

// ---------------------------------------------------------------------------
// Cross-modal attacks

struct JointBudgets {
  AttackBudget rgb = multimodal_budget();
  AttackBudget event = multimodal_budget();
};

/// RGB + voxel attack on one frame: carry both perturbations, inject voxels
/// into the target region, then run the RGB inner loop and the voxel inner loop
/// (or the reverse), each with the other modality at its current adversarial value.
inline AttackResult attack_rgb_event_voxel(const BoundTracker& model, const PatchInputs& clean,
                                           const AttackObjective& obj, const TargetSpec& target,
                                           const JointBudgets& b, PerturbationState& state, TemporalMode temporal,
                                           std::uint64_t seed, bool voxel_first = false,
                                           const IterationHook& hook = {}) {
  if (!clean.rgb || !clean.voxels) throw UsageError("joint voxel attack needs rgb and voxel inputs");
  b.rgb.validate();
  b.event.validate();
  // Padding count is taken once, before either inner loop.
  VoxelSet injected = b.event.eps == 0.0 ? *clean.voxels : adv_init_voxels(*clean.voxels, target, seed);
  PatchInputs cur = clean;
  cur.rgb = temporal_carry(*clean.rgb, state.eta_rgb, b.rgb.eps, temporal);
  cur.voxels = temporal_carry_voxels(injected, state.eta_voxels, b.event.eps, temporal);

  AttackResult r;
  auto rgb_step = [&] {
    AttackResult s = pgd(model, cur, *clean.rgb, ImageChannel::rgb, obj, b.rgb, hook);
    cur = s.adv;
    return s;
  };
  auto voxel_step = [&] {
    AttackResult s = grad_opt_voxels(model, cur, injected, obj, b.event, VoxelFields::xyz, hook);
    cur = s.adv;
    return s;
  };
  AttackResult first = voxel_first ? voxel_step() : rgb_step();
  AttackResult second = voxel_first ? rgb_step() : voxel_step();
  r.adv = cur;
  r.before = first.before;
  r.after = second.after;
  r.loss_trace = first.loss_trace;
  r.loss_trace.insert(r.loss_trace.end(), second.loss_trace.begin() + 1, second.loss_trace.end());
  state.eta_rgb = perturbation(*cur.rgb, *clean.rgb);
  state.eta_voxels = voxel_offsets(*cur.voxels, injected);
  return r;
}

/// Universal perturbation shared by the RGB patch and the event frame. Each
/// iteration takes a signed step on η through the RGB branch, then another
/// through the event-frame branch; η is clipped to [−ε, ε] after each half-step.
inline AttackResult attack_rgb_event_frame_universal(const BoundTracker& model, const PatchInputs& clean,
                                                     const AttackObjective& obj, const AttackBudget& b,
                                                     Image<double>& eta, const IterationHook& hook = {}) {
  b.validate();
  if (!clean.rgb || !clean.frame) throw UsageError("universal attack needs rgb and event-frame inputs");
  const Image<double>& I = *clean.rgb;
  const Image<double>& F = *clean.frame;
  if (eta.width != I.width || eta.height != I.height || eta.channels != 1) eta = Image<double>(I.width, I.height, 1);
  for (auto& e : eta.data) e = std::clamp(e, -b.eps, b.eps);

  auto apply = [&] {
    PatchInputs x = clean;
    for (int y = 0; y < I.height; ++y)
      for (int xx = 0; xx < I.width; ++xx) {
        double e = eta.at(xx, y);
        for (int c = 0; c < 3; ++c)
          x.rgb->at(xx, y, c) = std::clamp(within(I.at(xx, y, c) + e, I.at(xx, y, c), b.eps), 0.0, 255.0);
        x.frame->at(xx, y) = std::clamp(within(F.at(xx, y) + e, F.at(xx, y), b.eps), 0.0, 255.0);
      }
    return x;
  };
  auto inside = [](double v, double e) { return v + e >= 0.0 && v + e <= 255.0 ? 1.0 : 0.0; };

  AttackResult r;
  for (int m = 0; m < b.iters; ++m) {
    auto ev = model.evaluate(apply(), {true, false, false}, obj);
    if (m == 0) r.before = ev.output.bbox;
    r.loss_trace.push_back(ev.loss);
    detail::check_finite(ev.grad.rgb, m);
    for (int y = 0; y < I.height; ++y)
      for (int xx = 0; xx < I.width; ++xx) {
        double e = eta.at(xx, y), g = 0.0;
        for (int c = 0; c < 3; ++c) g += ev.grad.rgb.at(xx, y, c) * inside(I.at(xx, y, c), e);
        eta.at(xx, y) = std::clamp(e - b.alpha * sign(g), -b.eps, b.eps);
      }
    if (hook) hook(m + 1, apply());

    auto ef = model.evaluate(apply(), {false, true, false}, obj);
    detail::check_finite(ef.grad.frame, m);
    for (int y = 0; y < I.height; ++y)
      for (int xx = 0; xx < I.width; ++xx) {
        double e = eta.at(xx, y);
        double g = ef.grad.frame.at(xx, y) * inside(F.at(xx, y), e);
        eta.at(xx, y) = std::clamp(e - b.alpha * sign(g), -b.eps, b.eps);
      }
    double dev = 0.0;
    for (double e : eta.data) dev = std::max(dev, std::fabs(e));
    detail::check_budget(dev, b.eps, "universal perturbation", m + 1);
    if (hook) hook(m + 1, apply());
  }
  r.adv = apply();
  TrackerOutput out = model.predict(r.adv);
  r.loss_trace.push_back(obj.value(out));
  r.after = out.bbox;
  return r;
}

/// Timestamp-only voxel baseline: injection, then vz-only optimization; RGB via pgd when present.
inline AttackResult baseline_ae_adv(const BoundTracker& model, const PatchInputs& clean, const AttackObjective& obj,
                                    const TargetSpec& target, const JointBudgets& b, std::uint64_t seed,
                                    const IterationHook& hook = {}) {
  if (!clean.voxels) throw UsageError("timestamp baseline needs voxel input");
  PatchInputs cur = clean;
  AttackResult r;
  if (clean.rgb) {
    AttackResult s = pgd(model, cur, ImageChannel::rgb, obj, b.rgb, hook);
    cur = s.adv;
    r.before = s.before;
    r.loss_trace = s.loss_trace;
  }
  VoxelSet injected = b.event.eps == 0.0 ? *clean.voxels : adv_init_voxels(*clean.voxels, target, seed);
  cur.voxels = injected;
  AttackResult v = grad_opt_voxels(model, cur, injected, obj, b.event, VoxelFields::z, hook);
  if (!clean.rgb) r.before = v.before;
  r.loss_trace.insert(r.loss_trace.end(), v.loss_trace.begin() + (clean.rgb ? 1 : 0), v.loss_trace.end());
  r.adv = v.adv;
  r.after = v.after;
  return r;
}

/// Polarity-only voxel baseline: injected polarities drawn by Gumbel-Softmax at
/// temperature 1, then vf-only optimization clamped to [−K_max, K_max].
inline AttackResult baseline_dare_snn(const BoundTracker& model, const PatchInputs& clean, const AttackObjective& obj,
                                      const TargetSpec& target, const JointBudgets& b, std::uint64_t seed,
                                      const IterationHook& hook = {}) {
  if (!clean.voxels) throw UsageError("polarity baseline needs voxel input");
  PatchInputs cur = clean;
  AttackResult r;
  if (clean.rgb) {
    AttackResult s = pgd(model, cur, ImageChannel::rgb, obj, b.rgb, hook);
    cur = s.adv;
    r.before = s.before;
    r.loss_trace = s.loss_trace;
  }
  VoxelSet injected = b.event.eps == 0.0
                          ? *clean.voxels
                          : adv_init_voxels(*clean.voxels, target, seed,
                                            [](std::mt19937_64& g) { return gumbel_polarity(g).hard; });
  cur.voxels = injected;
  AttackResult v = grad_opt_voxels(model, cur, injected, obj, b.event, VoxelFields::f, hook);
  if (!clean.rgb) r.before = v.before;
  r.loss_trace.insert(r.loss_trace.end(), v.loss_trace.begin() + (clean.rgb ? 1 : 0), v.loss_trace.end());
  r.adv = v.adv;
  r.after = v.after;
  return r;
}

// ---------------------------------------------------------------------------
// Attack configurations for the benchmark loop

struct AttackConfig {
  std::string name = "pgd-rgb";
  std::optional<double> eps;   // defaults: 10 unimodal, 8 multimodal
  double alpha = 1.0;
  int iters = 10;
  std::optional<BBox> target;  // search-patch pixels; far quadrant when empty
  TemporalMode temporal = TemporalMode::on;
  LossKind loss = LossKind::adversarial;
  LossWeights weights;
  double sigma = 1.0;
  bool voxel_first = false;
  std::uint64_t seed = 0;
};

inline const std::vector<std::string>& attack_names() {
  static const std::vector<std::string> names{"noise",  "fgsm",         "pgd-rgb",      "pgd-frame", "adv-init",
                                              "grad-opt", "fusion-voxel", "fusion-frame", "ae-adv",    "dare-snn"};
  return names;
}

/// Throws UsageError when the attack cannot run against the modality.
inline void check_attack_modality(const std::string& name, Modality m) {
  auto need = [&](bool ok, const char* what) {
    if (!ok) throw UsageError("attack '" + name + "' needs " + what + ", model modality is " + to_string(m));
  };
  if (name == "noise") return;
  if (name == "fgsm" || name == "pgd-rgb") return need(uses_rgb(m), "rgb input");
  if (name == "pgd-frame") return need(uses_frames(m), "event-frame input");
  if (name == "adv-init" || name == "grad-opt" || name == "ae-adv" || name == "dare-snn")
    return need(uses_voxels(m), "voxel input");
  if (name == "fusion-voxel") return need(m == Modality::rgb_voxel, "rgb+voxel input");
  if (name == "fusion-frame") return need(m == Modality::rgb_frame, "rgb+frame input");
  throw UsageError("unknown attack '" + name + "'");
}

inline double default_eps(Modality m) {
  return m == Modality::rgb_voxel || m == Modality::rgb_frame ? multimodal_budget().eps : unimodal_budget().eps;
}

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t k) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (k + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Per-sequence state machine that applies one configured attack frame by frame.
class ConfiguredAttack : public FrameAttack {
 public:
  ConfiguredAttack(AttackConfig cfg, std::uint64_t sequence_seed) : cfg_(std::move(cfg)), seed_(sequence_seed) {}

  PatchInputs perturb(const AttackFrame& f) override {
    const BoundTracker& model = *f.model;
    const PatchInputs& clean = *f.clean;
    Modality m = model.modality();
    check_attack_modality(cfg_.name, m);
    double eps = cfg_.eps.value_or(default_eps(m));
    AttackBudget budget{eps, cfg_.alpha, cfg_.iters};
    std::uint64_t fs = mix_seed(seed_, f.frame);
    trace_.clear();
    if (cfg_.name == "noise") {
      PatchInputs x = clean;
      if (x.rgb) x.rgb = noise_baseline(*x.rgb, eps, fs);
      if (x.frame) x.frame = noise_baseline(*x.frame, eps, fs + 1);
      if (x.voxels) x.voxels = noise_voxels(*x.voxels, eps, fs + 2);
      return x;
    }
    TargetSpec target = cfg_.target ? TargetSpec{*cfg_.target} : far_quadrant_target(f.truth);
    AttackObjective obj = make_objective(model, clean, f.truth, target, cfg_.loss, cfg_.weights, cfg_.sigma);
    JointBudgets jb{budget, budget};
    AttackResult r;
    if (cfg_.name == "fgsm") {
      r = fgsm(model, clean, ImageChannel::rgb, obj, eps);
    } else if (cfg_.name == "pgd-rgb" || cfg_.name == "pgd-frame") {
      ImageChannel ch = cfg_.name == "pgd-rgb" ? ImageChannel::rgb : ImageChannel::frame;
      auto& eta = ch == ImageChannel::rgb ? state_.eta_rgb : state_.eta_frame;
      PatchInputs start = clean;
      image_of(start, ch) = temporal_carry(*image_of(clean, ch), eta, eps, cfg_.temporal);
      r = pgd(model, start, *image_of(clean, ch), ch, obj, budget);
      eta = perturbation(*image_of(r.adv, ch), *image_of(clean, ch));
    } else if (cfg_.name == "adv-init") {
      PatchInputs x = clean;
      if (eps > 0.0) x.voxels = adv_init_voxels(*clean.voxels, target, fs);
      TrackerOutput out = model.predict(x);
      r.adv = x;
      r.loss_trace = {obj.value(out)};
    } else if (cfg_.name == "grad-opt") {
      VoxelSet injected = eps > 0.0 ? adv_init_voxels(*clean.voxels, target, fs) : *clean.voxels;
      PatchInputs start = clean;
      start.voxels = temporal_carry_voxels(injected, state_.eta_voxels, eps, cfg_.temporal);
      r = grad_opt_voxels(model, start, injected, obj, budget);
      state_.eta_voxels = voxel_offsets(*r.adv.voxels, injected);
    } else if (cfg_.name == "fusion-voxel") {
      r = attack_rgb_event_voxel(model, clean, obj, target, jb, state_, cfg_.temporal, fs, cfg_.voxel_first);
    } else if (cfg_.name == "fusion-frame") {
      Image<double> eta = state_.eta_universal.value_or(Image<double>());
      r = attack_rgb_event_frame_universal(model, clean, obj, budget, eta);
      state_.eta_universal = std::move(eta);
    } else if (cfg_.name == "ae-adv") {
      r = baseline_ae_adv(model, clean, obj, target, jb, fs);
    } else if (cfg_.name == "dare-snn") {
      r = baseline_dare_snn(model, clean, obj, target, jb, fs);
    }
    state_.frame = static_cast<long>(f.frame);
    trace_ = r.loss_trace;
    return r.adv;
  }

  std::vector<double> last_trace() const override { return trace_; }
  const PerturbationState& state() const { return state_; }

 private:
  AttackConfig cfg_;
  std::uint64_t seed_;
  PerturbationState state_;
  std::vector<double> trace_;
};

/// Factory for the benchmark loop; validates the configuration up front.
inline AttackFactory make_attack(const AttackConfig& cfg, Modality m) {
  check_attack_modality(cfg.name, m);
  if (cfg.eps && !(*cfg.eps >= 0.0)) throw UsageError("eps must be >= 0");
  AttackBudget{cfg.eps.value_or(default_eps(m)), cfg.alpha, cfg.iters}.validate();
  if (cfg.target) TargetSpec{*cfg.target}.validate();
  cfg.weights.validate();
  return [cfg](const Sequence& seq) {
    std::uint64_t h = 1469598103934665603ULL;  // FNV-1a of the sequence name
    for (unsigned char c : seq.name) h = (h ^ c) * 1099511628211ULL;
    return std::make_unique<ConfiguredAttack>(cfg, mix_seed(cfg.seed, h));
  };
}

}  // namespace advbench
