#pragma once

// Tracking loss (focal + L1 + GIoU) and the adversarial loss built from it.

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <vector>

#include "advbench/diff.hpp"
#include "advbench/error.hpp"
#include "advbench/geometry.hpp"
#include "advbench/tracker.hpp"

namespace advbench {

enum class TargetRole { truth, target, ori };

/// Heatmap plus box in search-patch pixels.
struct TrackTarget {
  std::vector<double> map;  // row-major kScoreSize × kScoreSize
  BBox box;
  TargetRole role = TargetRole::truth;
};

/// Score-map cell holding the box centre.
inline std::pair<int, int> centre_cell(const BBox& b) {
  auto cell = [](double c) { return std::clamp(static_cast<int>(std::floor(c / kScoreStride)), 0, kScoreSize - 1); };
  return {cell(b.cx()), cell(b.cy())};
}

/// Gaussian heatmap peaking at 1 on the centre cell; sigma 0 gives a one-hot map.
inline TrackTarget make_target(const BBox& box, TargetRole role, double sigma = 1.0) {
  if (sigma < 0.0) throw ConfigError("heatmap sigma must be non-negative");
  TrackTarget t;
  t.box = box;
  t.role = role;
  t.map.assign(static_cast<std::size_t>(kScoreSize) * kScoreSize, 0.0);
  auto [ci, cj] = centre_cell(box);
  for (int y = 0; y < kScoreSize; ++y)
    for (int x = 0; x < kScoreSize; ++x) {
      double d2 = (x - ci) * (x - ci) + (y - cj) * (y - cj);
      double v = sigma == 0.0 ? (d2 == 0.0 ? 1.0 : 0.0) : std::exp(-d2 / (2.0 * sigma * sigma));
      t.map[static_cast<std::size_t>(y) * kScoreSize + x] = v;
    }
  return t;
}

struct LossWeights {
  double focal = 1.0;
  double l1 = 5.0;
  double giou = 2.0;

  void validate() const {
    if (focal < 0.0 || l1 < 0.0 || giou < 0.0) throw ConfigError("loss weights must be non-negative");
    if (focal == 0.0 && l1 == 0.0 && giou == 0.0) throw ConfigError("loss weights must not all be zero");
  }
};

struct BoxVars {
  Var x, y, w, h;

  BoxVars() = default;
  BoxVars(Var x_, Var y_, Var w_, Var h_) : x(x_), y(y_), w(w_), h(h_) {}
  BoxVars(const BBox& b) : x(b.x), y(b.y), w(b.w), h(b.h) {}  // NOLINT(google-explicit-constructor)
};

inline BoxVars box_of(const OutputVars& o) { return {o.x, o.y, o.w, o.h}; }

inline constexpr double kProbClamp = 1e-6;

/// Penalty-reduced pixelwise focal loss (gamma 2, beta 4), normalized by the
/// number of cells where gt equals 1.
inline Var focal_loss(std::span<const Var> pred, std::span<const double> gt) {
  if (pred.size() != gt.size() || pred.empty()) throw UsageError("focal loss: map shapes differ");
  std::vector<Var> terms;
  terms.reserve(pred.size());
  std::size_t positives = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    Var p = diff::clamp(pred[i], kProbClamp, 1.0 - kProbClamp);
    if (gt[i] >= 1.0) {
      ++positives;
      Var q = 1.0 - p;
      terms.push_back(q * q * diff::log(p));
    } else {
      double reduce = std::pow(1.0 - gt[i], 4.0);
      terms.push_back(p * p * diff::log(1.0 - p) * reduce);
    }
  }
  return diff::sum(terms) * (-1.0 / static_cast<double>(std::max<std::size_t>(1, positives)));
}

inline double focal_loss(std::span<const double> pred, std::span<const double> gt) {
  std::vector<Var> p(pred.begin(), pred.end());
  return focal_loss(std::span<const Var>(p), gt).value;
}

/// Mean absolute difference of (cx, cy, w, h), each normalized by the search patch size.
inline Var l1_box_loss(const BoxVars& a, const BoxVars& b) {
  Var dcx = (a.x + 0.5 * a.w) - (b.x + 0.5 * b.w);
  Var dcy = (a.y + 0.5 * a.h) - (b.y + 0.5 * b.h);
  std::vector<Var> terms{diff::abs(dcx), diff::abs(dcy), diff::abs(a.w - b.w), diff::abs(a.h - b.h)};
  return diff::sum(terms) * (1.0 / (4.0 * kSearchPx));
}

inline double l1_box_loss(const BBox& a, const BBox& b) { return l1_box_loss(BoxVars(a), BoxVars(b)).value; }

/// 1 − GIoU.
inline Var giou_loss(const BoxVars& a, const BoxVars& b) {
  Var ax2 = a.x + a.w, ay2 = a.y + a.h;
  Var bx2 = b.x + b.w, by2 = b.y + b.h;
  Var iw = diff::relu(diff::min(ax2, bx2) - diff::max(a.x, b.x));
  Var ih = diff::relu(diff::min(ay2, by2) - diff::max(a.y, b.y));
  Var inter = iw * ih;
  Var uni = a.w * a.h + b.w * b.h - inter;
  Var cw = diff::max(ax2, bx2) - diff::min(a.x, b.x);
  Var ch = diff::max(ay2, by2) - diff::min(a.y, b.y);
  Var enclose = cw * ch;
  if (!(uni.value > 0.0) || !(enclose.value > 0.0)) throw NumericError("giou of degenerate boxes");
  Var giou = inter / uni - (enclose - uni) / enclose;
  return 1.0 - giou;
}

inline double giou_loss(const BBox& a, const BBox& b) { return giou_loss(BoxVars(a), BoxVars(b)).value; }

/// λ1·focal + λ2·L1 + λ3·GIoU. Zero-weighted terms are skipped.
inline Var track_loss(std::span<const Var> score, const BoxVars& box, const TrackTarget& t, const LossWeights& w) {
  w.validate();
  Var total = 0.0;
  if (w.focal != 0.0) total = total + w.focal * focal_loss(score, t.map);
  if (w.l1 != 0.0) total = total + w.l1 * l1_box_loss(box, BoxVars(t.box));
  if (w.giou != 0.0) total = total + w.giou * giou_loss(box, BoxVars(t.box));
  return total;
}

inline Var track_loss(const OutputVars& y, const TrackTarget& t, const LossWeights& w) {
  return track_loss(y.score, box_of(y), t, w);
}

inline double track_loss(const TrackerOutput& y, const TrackTarget& t, const LossWeights& w) {
  std::vector<Var> s(y.score.begin(), y.score.end());
  return track_loss(s, BoxVars(y.bbox), t, w).value;
}

/// `adversarial`: e(y, target) − e(y, true) − e(y, ori).
/// `track`: e(y, target) − e(y, true), the ablation without the ori repulsor.
enum class LossKind { adversarial, track };

inline Var adversarial_loss(std::span<const Var> score, const BoxVars& box, const TrackTarget& target,
                            const TrackTarget& truth, const std::optional<TrackTarget>& ori, const LossWeights& w,
                            LossKind kind = LossKind::adversarial) {
  Var l = track_loss(score, box, target, w) - track_loss(score, box, truth, w);
  if (kind == LossKind::track) return l;
  if (!ori) throw UsageError("adversarial loss needs the clean model output");
  return l - track_loss(score, box, *ori, w);
}

inline Var adversarial_loss(const OutputVars& y, const TrackTarget& target, const TrackTarget& truth,
                            const std::optional<TrackTarget>& ori, const LossWeights& w,
                            LossKind kind = LossKind::adversarial) {
  return adversarial_loss(y.score, box_of(y), target, truth, ori, w, kind);
}

inline double adversarial_loss(const TrackerOutput& y, const TrackTarget& target, const TrackTarget& truth,
                               const std::optional<TrackTarget>& ori, const LossWeights& w,
                               LossKind kind = LossKind::adversarial) {
  std::vector<Var> s(y.score.begin(), y.score.end());
  return adversarial_loss(s, BoxVars(y.bbox), target, truth, ori, w, kind).value;
}

}  // namespace advbench
