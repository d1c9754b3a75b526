#pragma once

// Tracking metrics, the frame-by-frame benchmark loop and report files.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <memory>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "advbench/error.hpp"
#include "advbench/geometry.hpp"
#include "advbench/synth.hpp"
#include "advbench/tracker.hpp"
#include "advbench/train.hpp"

namespace advbench {

// ---------------------------------------------------------------------------
// Metrics

struct FrameRecord {
  std::size_t frame = 0;
  BBox gt;
  BBox pred;
  double center_error = 0.0;
  double norm_center_error = 0.0;
  double iou = 0.0;

  bool operator==(const FrameRecord&) const = default;
};

inline FrameRecord make_record(std::size_t frame, const BBox& gt, const BBox& pred) {
  FrameRecord r{frame, gt, pred, center_distance(gt, pred), 0.0, iou(gt, pred)};
  double diag = std::hypot(gt.w, gt.h);
  r.norm_center_error = diag > 0.0 ? r.center_error / diag : INFINITY;
  return r;
}

inline constexpr double kPrecisionThresholdPx = 20.0;

inline void require_records(std::span<const FrameRecord> r) {
  if (r.empty()) throw UsageError("metrics need at least one frame record");
}

/// Percentage of frames with centre error strictly below the threshold.
inline double precision_rate(std::span<const FrameRecord> r, double threshold = kPrecisionThresholdPx) {
  require_records(r);
  auto n = std::count_if(r.begin(), r.end(), [&](const FrameRecord& f) { return f.center_error < threshold; });
  return 100.0 * static_cast<double>(n) / static_cast<double>(r.size());
}

/// Mean over 51 thresholds in [0, 0.5] of the fraction with normalized error ≤ threshold.
inline double norm_precision_rate(std::span<const FrameRecord> r) {
  require_records(r);
  double acc = 0.0;
  for (int i = 0; i <= 50; ++i) {
    double t = 0.01 * i;
    auto n = std::count_if(r.begin(), r.end(), [&](const FrameRecord& f) { return f.norm_center_error <= t; });
    acc += static_cast<double>(n) / static_cast<double>(r.size());
  }
  return 100.0 * acc / 51.0;
}

/// Mean over t ∈ {0, 0.05, …, 1} of the fraction with IoU > t. A frame with
/// IoU exactly 1 passes every threshold.
inline double success_rate(std::span<const FrameRecord> r) {
  require_records(r);
  double acc = 0.0;
  for (int i = 0; i <= 20; ++i) {
    double t = 0.05 * i;
    auto n = std::count_if(r.begin(), r.end(), [&](const FrameRecord& f) { return f.iou > t || f.iou >= 1.0; });
    acc += static_cast<double>(n) / static_cast<double>(r.size());
  }
  return 100.0 * acc / 21.0;
}

struct Metrics {
  double pr = 0.0;
  double npr = 0.0;
  double sr = 0.0;

  bool operator==(const Metrics&) const = default;
};

inline Metrics compute_metrics(std::span<const FrameRecord> r) {
  return {precision_rate(r), norm_precision_rate(r), success_rate(r)};
}

// ---------------------------------------------------------------------------
// Trackers and attacks as seen by the benchmark loop

/// What a per-frame attack sees: the clean search inputs, the bound model and
/// the ground truth in search-patch pixels.
struct AttackFrame {
  std::size_t frame = 0;
  const BoundTracker* model = nullptr;
  const PatchInputs* clean = nullptr;
  BBox truth;
  CropRegion region;
};

/// Stateful attack on one sequence; frames arrive in order.
class FrameAttack {
 public:
  virtual ~FrameAttack() = default;
  virtual PatchInputs perturb(const AttackFrame& f) = 0;
  virtual std::vector<double> last_trace() const { return {}; }
};

using AttackFactory = std::function<std::unique_ptr<FrameAttack>(const Sequence&)>;

/// One tracking run over a sequence.
class TrackerSession {
 public:
  virtual ~TrackerSession() = default;
  /// Predicted box in frame pixels for frame k ≥ 1.
  virtual BBox update(std::size_t k, FrameAttack* attack) = 0;
};

class Tracker {
 public:
  virtual ~Tracker() = default;
  virtual std::string name() const = 0;
  /// Initializes on frame 0 with its ground-truth box.
  virtual std::unique_ptr<TrackerSession> start(const Sequence& seq) const = 0;
};

/// Surrogate network wrapped as a tracker; the search region follows the previous prediction.
class SurrogateTracker : public Tracker {
 public:
  explicit SurrogateTracker(TrackerParams params) : params_(std::move(params)) {
    check_params(params_, make_layout(params_.modality, params_.channels));
  }

  std::string name() const override { return "surrogate-" + to_string(params_.modality); }
  const TrackerParams& params() const { return params_; }

  std::unique_ptr<TrackerSession> start(const Sequence& seq) const override {
    return std::make_unique<Session>(params_, seq);
  }

 private:
  class Session : public TrackerSession {
   public:
    Session(const TrackerParams& p, const Sequence& seq)
        : seq_(seq),
          model_(p, patch_inputs(seq, 0, crop_region(seq.groundtruth.at(0), kTemplateScale), kTemplatePx, p.modality)),
          prev_(seq.groundtruth.at(0)) {}

    BBox update(std::size_t k, FrameAttack* attack) override {
      CropRegion region = crop_region(prev_, kSearchScale);
      PatchInputs clean = patch_inputs(seq_, k, region, kSearchPx, model_.modality());
      TrackerOutput out;
      if (attack) {
        AttackFrame f{k, &model_, &clean, to_patch(seq_.groundtruth.at(k), region, kSearchPx), region};
        out = model_.predict(attack->perturb(f));
      } else {
        out = model_.predict(clean);
      }
      BBox pred = from_patch(out.bbox, region, kSearchPx);
      // Keep the next search centre on the sensor and the size close to the previous one.
      double w = std::clamp(pred.w, 0.5 * prev_.w, 2.0 * prev_.w);
      double h = std::clamp(pred.h, 0.5 * prev_.h, 2.0 * prev_.h);
      w = std::clamp(w, 4.0, static_cast<double>(seq_.events.width));
      h = std::clamp(h, 4.0, static_cast<double>(seq_.events.height));
      double cx = std::clamp(pred.cx(), 0.0, static_cast<double>(seq_.events.width));
      double cy = std::clamp(pred.cy(), 0.0, static_cast<double>(seq_.events.height));
      prev_ = BBox::from_center(cx, cy, w, h);
      return pred;
    }

   private:
    const Sequence& seq_;
    BoundTracker model_;
    BBox prev_;
  };

  TrackerParams params_;
};

/// Test double that answers with the ground truth.
class OracleTracker : public Tracker {
 public:
  std::string name() const override { return "oracle"; }
  std::unique_ptr<TrackerSession> start(const Sequence& seq) const override {
    struct S : TrackerSession {
      const Sequence& seq;
      explicit S(const Sequence& s) : seq(s) {}
      BBox update(std::size_t k, FrameAttack*) override { return seq.groundtruth.at(k); }
    };
    return std::make_unique<S>(seq);
  }
};

/// Test double that always answers with the same box.
class FixedBoxTracker : public Tracker {
 public:
  explicit FixedBoxTracker(BBox box) : box_(box) {}
  std::string name() const override { return "fixed"; }
  std::unique_ptr<TrackerSession> start(const Sequence&) const override {
    struct S : TrackerSession {
      BBox box;
      explicit S(BBox b) : box(b) {}
      BBox update(std::size_t, FrameAttack*) override { return box; }
    };
    return std::make_unique<S>(box_);
  }

 private:
  BBox box_;
};

// ---------------------------------------------------------------------------
// Benchmark

struct SequenceReport {
  std::string name;
  std::vector<FrameRecord> records;
  Metrics metrics;
  std::string error;  // empty on success
  std::vector<std::vector<double>> loss_traces;

  bool operator==(const SequenceReport&) const = default;
};

inline constexpr const char* kReportSchema = "rgbe-advbench/report/v1";

struct BenchmarkReport {
  std::string tracker;
  std::string attack;            // "none" for clean runs
  std::string attack_manifest;   // path of the attack manifest, if any
  std::uint64_t seed = 0;
  std::vector<SequenceReport> sequences;
  Metrics aggregate;
  double wall_seconds = 0.0;

  bool operator==(const BenchmarkReport&) const = default;
  std::size_t failed() const {
    return static_cast<std::size_t>(
        std::count_if(sequences.begin(), sequences.end(), [](const SequenceReport& s) { return !s.error.empty(); }));
  }
};

/// Mean of per-sequence metrics over sequences that completed.
inline Metrics aggregate_metrics(std::span<const SequenceReport> seqs) {
  Metrics m;
  std::size_t n = 0;
  for (const auto& s : seqs) {
    if (!s.error.empty() || s.records.empty()) continue;
    m.pr += s.metrics.pr;
    m.npr += s.metrics.npr;
    m.sr += s.metrics.sr;
    ++n;
  }
  if (n > 0) {
    m.pr /= static_cast<double>(n);
    m.npr /= static_cast<double>(n);
    m.sr /= static_cast<double>(n);
  }
  return m;
}

/// Worker count: hardware threads, capped by RGBE_ADVBENCH_THREADS.
inline std::size_t worker_count(std::size_t jobs) {
  std::size_t n = std::max(1u, std::thread::hardware_concurrency());
  if (const char* cap = std::getenv("RGBE_ADVBENCH_THREADS")) {
    char* end = nullptr;
    long v = std::strtol(cap, &end, 10);
    if (end != cap && v > 0) n = std::min(n, static_cast<std::size_t>(v));
  }
  return std::max<std::size_t>(1, std::min(n, jobs));
}

/// Runs `fn(i)` for i in [0, n) over a small worker pool.
template <class Fn>
void parallel_for(std::size_t n, Fn&& fn) {
  std::size_t workers = worker_count(n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w)
    pool.emplace_back([&] {
      for (std::size_t i; (i = next++) < n;) fn(i);
    });
  for (auto& t : pool) t.join();
}

inline SequenceReport track_sequence(const Tracker& tracker, const Sequence& seq, const AttackFactory& attack) {
  SequenceReport rep;
  rep.name = seq.name;
  if (seq.frames.size() < 2 || seq.groundtruth.size() != seq.frames.size())
    throw UsageError("sequence " + seq.name + " needs at least two frames with ground truth");
  auto session = tracker.start(seq);
  std::unique_ptr<FrameAttack> atk = attack ? attack(seq) : nullptr;
  for (std::size_t k = 1; k < seq.frames.size(); ++k) {
    BBox pred = session->update(k, atk.get());
    rep.records.push_back(make_record(k, seq.groundtruth[k], pred));
    if (atk) {
      auto trace = atk->last_trace();
      if (!trace.empty()) rep.loss_traces.push_back(std::move(trace));
    }
  }
  rep.metrics = compute_metrics(rep.records);
  return rep;
}

using SequenceLoader = std::function<Sequence()>;

/// Tracks every sequence (optionally under attack). A sequence that fails to
/// load or track is recorded with its error and the run continues.
inline BenchmarkReport run_benchmark(const Tracker& tracker, std::span<const SequenceLoader> loaders,
                                     const AttackFactory& attack = {}, const std::string& attack_name = "none",
                                     std::uint64_t seed = 0) {
  auto t0 = std::chrono::steady_clock::now();
  BenchmarkReport report;
  report.tracker = tracker.name();
  report.attack = attack_name;
  report.seed = seed;
  report.sequences.resize(loaders.size());
  parallel_for(loaders.size(), [&](std::size_t i) {
    SequenceReport& out = report.sequences[i];
    try {
      Sequence seq = loaders[i]();
      out = track_sequence(tracker, seq, attack);
    } catch (const std::exception& e) {
      out.records.clear();
      out.error = e.what();
      if (out.name.empty()) out.name = "#" + std::to_string(i);
    }
  });
  report.aggregate = aggregate_metrics(report.sequences);
  report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return report;
}

inline BenchmarkReport run_benchmark(const Tracker& tracker, std::span<const Sequence> sequences,
                                     const AttackFactory& attack = {}, const std::string& attack_name = "none",
                                     std::uint64_t seed = 0) {
  std::vector<SequenceLoader> loaders;
  for (const auto& s : sequences) loaders.push_back([&s] { return s; });
  return run_benchmark(tracker, loaders, attack, attack_name, seed);
}

inline BenchmarkReport run_benchmark(const Tracker& tracker, std::span<const std::filesystem::path> dirs,
                                     const AttackFactory& attack = {}, const std::string& attack_name = "none",
                                     std::uint64_t seed = 0) {
  std::vector<SequenceLoader> loaders;
  for (const auto& d : dirs) loaders.push_back([d] { return load_sequence(d); });
  auto report = run_benchmark(tracker, loaders, attack, attack_name, seed);
  for (std::size_t i = 0; i < dirs.size(); ++i)
    if (report.sequences[i].name.rfind('#', 0) == 0) report.sequences[i].name = dirs[i].filename().string();
  return report;
}

// ---------------------------------------------------------------------------
// Report file

namespace detail {

inline double finite_or_throw(double v, const char* what) {
  if (!std::isfinite(v)) throw NumericError(std::string("report field '") + what + "' is not finite");
  return v;
}

inline nlohmann::json box_json(const BBox& b) {
  return nlohmann::json::array({finite_or_throw(b.x, "box"), finite_or_throw(b.y, "box"),
                                finite_or_throw(b.w, "box"), finite_or_throw(b.h, "box")});
}

inline BBox box_from(const nlohmann::json& j) {
  return {j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>(), j.at(3).get<double>()};
}

inline nlohmann::json metrics_json(const Metrics& m) {
  return {{"pr", finite_or_throw(m.pr, "pr")}, {"npr", finite_or_throw(m.npr, "npr")}, {"sr", finite_or_throw(m.sr, "sr")}};
}

inline Metrics metrics_from(const nlohmann::json& j) {
  return {j.at("pr").get<double>(), j.at("npr").get<double>(), j.at("sr").get<double>()};
}

}  // namespace detail

inline nlohmann::json report_json(const BenchmarkReport& r) {
  using nlohmann::json;
  json seqs = json::array();
  for (const auto& s : r.sequences) {
    json recs = json::array();
    for (const auto& f : s.records)
      recs.push_back({{"frame", f.frame},
                      {"gt", detail::box_json(f.gt)},
                      {"pred", detail::box_json(f.pred)},
                      {"center_error", detail::finite_or_throw(f.center_error, "center_error")},
                      {"norm_center_error", detail::finite_or_throw(f.norm_center_error, "norm_center_error")},
                      {"iou", detail::finite_or_throw(f.iou, "iou")}});
    json traces = json::array();
    for (const auto& t : s.loss_traces) {
      json tj = json::array();
      for (double v : t) tj.push_back(detail::finite_or_throw(v, "loss_trace"));
      traces.push_back(std::move(tj));
    }
    seqs.push_back({{"name", s.name},
                    {"error", s.error},
                    {"metrics", detail::metrics_json(s.metrics)},
                    {"records", std::move(recs)},
                    {"loss_traces", std::move(traces)}});
  }
  return {{"schema", kReportSchema},
          {"tracker", r.tracker},
          {"attack", r.attack},
          {"attack_manifest", r.attack_manifest},
          {"seed", r.seed},
          {"aggregate", detail::metrics_json(r.aggregate)},
          {"wall_seconds", detail::finite_or_throw(r.wall_seconds, "wall_seconds")},
          {"sequences", std::move(seqs)}};
}

inline BenchmarkReport report_from_json(const nlohmann::json& j) {
  if (!j.is_object() || !j.contains("schema")) throw ParseError(1, "report has no schema key");
  if (j.at("schema") != kReportSchema)
    throw VersionError("unsupported report schema " + j.at("schema").dump());
  try {
    BenchmarkReport r;
    r.tracker = j.at("tracker").get<std::string>();
    r.attack = j.at("attack").get<std::string>();
    r.attack_manifest = j.at("attack_manifest").get<std::string>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.aggregate = detail::metrics_from(j.at("aggregate"));
    r.wall_seconds = j.at("wall_seconds").get<double>();
    for (const auto& sj : j.at("sequences")) {
      SequenceReport s;
      s.name = sj.at("name").get<std::string>();
      s.error = sj.at("error").get<std::string>();
      s.metrics = detail::metrics_from(sj.at("metrics"));
      for (const auto& fj : sj.at("records"))
        s.records.push_back({fj.at("frame").get<std::size_t>(), detail::box_from(fj.at("gt")),
                             detail::box_from(fj.at("pred")), fj.at("center_error").get<double>(),
                             fj.at("norm_center_error").get<double>(), fj.at("iou").get<double>()});
      for (const auto& tj : sj.at("loss_traces")) s.loss_traces.push_back(tj.get<std::vector<double>>());
      r.sequences.push_back(std::move(s));
    }
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(1, std::string("malformed report: ") + e.what());
  }
}

inline std::string format_report(const BenchmarkReport& r) { return report_json(r).dump(2) + "\n"; }

inline void write_report(const BenchmarkReport& r, const std::filesystem::path& path) {
  std::string text = format_report(r);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out << text;
}

inline BenchmarkReport read_report(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(1, e.what());
  }
  return report_from_json(j);
}

// ---------------------------------------------------------------------------
// SVG line charts

struct Series {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
};

inline std::string line_chart_svg(const std::string& title, const std::string& xlabel, const std::string& ylabel,
                                  std::span<const Series> series) {
  const double W = 640, H = 400, L = 60, R = 20, T = 40, B = 50;
  double x0 = INFINITY, x1 = -INFINITY, y0 = INFINITY, y1 = -INFINITY;
  for (const auto& s : series)
    for (std::size_t i = 0; i < std::min(s.x.size(), s.y.size()); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
      x0 = std::min(x0, s.x[i]);
      x1 = std::max(x1, s.x[i]);
      y0 = std::min(y0, s.y[i]);
      y1 = std::max(y1, s.y[i]);
    }
  if (!(x0 <= x1)) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  if (x1 == x0) x1 = x0 + 1;
  if (y1 == y0) y1 = y0 + 1;
  auto sx = [&](double x) { return L + (x - x0) / (x1 - x0) * (W - L - R); };
  auto sy = [&](double y) { return H - B - (y - y0) / (y1 - y0) * (H - T - B); };
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};
  std::ostringstream o;
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\">\n"
    << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    << "<text x=\"" << W / 2 << "\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"16\">"
    << title << "</text>\n"
    << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n"
    << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n"
    << "<text x=\"" << W / 2 << "\" y=\"" << H - 12 << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">"
    << xlabel << "</text>\n"
    << "<text x=\"14\" y=\"" << H / 2 << "\" transform=\"rotate(-90 14 " << H / 2
    << ")\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">" << ylabel << "</text>\n";
  for (int i = 0; i <= 4; ++i) {
    double xv = x0 + (x1 - x0) * i / 4.0, yv = y0 + (y1 - y0) * i / 4.0;
    o << "<text x=\"" << sx(xv) << "\" y=\"" << H - B + 16 << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"10\">"
      << format_real(std::round(xv * 1000) / 1000) << "</text>\n"
      << "<text x=\"" << L - 6 << "\" y=\"" << sy(yv) + 3 << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"10\">"
      << format_real(std::round(yv * 1000) / 1000) << "</text>\n";
  }
  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& s = series[k];
    const char* c = colors[k % 6];
    o << "<polyline fill=\"none\" stroke=\"" << c << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < std::min(s.x.size(), s.y.size()); ++i)
      if (std::isfinite(s.x[i]) && std::isfinite(s.y[i])) o << sx(s.x[i]) << ',' << sy(s.y[i]) << ' ';
    o << "\"/>\n"
      << "<text x=\"" << W - R - 4 << "\" y=\"" << T + 14 * (k + 1) << "\" text-anchor=\"end\" fill=\"" << c
      << "\" font-family=\"sans-serif\" font-size=\"11\">" << s.label << "</text>\n";
  }
  o << "</svg>\n";
  return o.str();
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out << text;
}

/// Precision-vs-threshold and success-vs-IoU curves of a report.
inline std::pair<Series, Series> metric_curves(const BenchmarkReport& r, const std::string& label) {
  std::vector<FrameRecord> all;
  for (const auto& s : r.sequences) all.insert(all.end(), s.records.begin(), s.records.end());
  Series pr{label, {}, {}}, sr{label, {}, {}};
  if (all.empty()) return {pr, sr};
  for (int t = 0; t <= 50; ++t) {
    pr.x.push_back(t);
    pr.y.push_back(precision_rate(all, t));
  }
  for (int i = 0; i <= 20; ++i) {
    double t = 0.05 * i;
    auto n = std::count_if(all.begin(), all.end(), [&](const FrameRecord& f) { return f.iou > t || f.iou >= 1.0; });
    sr.x.push_back(t);
    sr.y.push_back(100.0 * static_cast<double>(n) / static_cast<double>(all.size()));
  }
  return {pr, sr};
}

}  // namespace advbench
