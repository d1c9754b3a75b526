// Acceptance run: prints one PASS/FAIL line per criterion and exits non-zero
// when any criterion fails.

#include <chrono>
#include <cstdarg>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <mutex>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "advbench/attacks.hpp"
#include "advbench/eval.hpp"
#include "support.hpp"

using namespace advbench;
using namespace advbench::testing;

namespace {

using Clock = std::chrono::steady_clock;

double since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, ...) {
  char buf[1024];
  va_list ap;
  va_start(ap, f);
  std::vsnprintf(buf, sizeof buf, f, ap);
  va_end(ap);
  return buf;
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

constexpr std::size_t kCells = static_cast<std::size_t>(kScoreSize) * kScoreSize;
constexpr Modality kAllModalities[] = {Modality::rgb, Modality::voxel, Modality::frame, Modality::rgb_voxel,
                                       Modality::rgb_frame};

std::vector<double> random_map(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.02, 0.98);
  std::vector<double> m(kCells);
  for (auto& v : m) v = u(rng);
  return m;
}

BBox random_box(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> pos(0.0, 100.0), size(2.0, 40.0);
  return {pos(rng), pos(rng), size(rng), size(rng)};
}

void push_box(std::vector<double>& v, const BBox& b) {
  for (double x : {b.x, b.y, b.w, b.h}) v.push_back(x);
}

BoxVars box_at(std::span<const Var> p, std::size_t i) { return BoxVars(p[i], p[i + 1], p[i + 2], p[i + 3]); }

// ---------------------------------------------------------------------------

Outcome gradient_correctness() {
  auto t0 = Clock::now();
  std::mt19937_64 rng(11);
  std::map<std::string, std::pair<int, int>> tally;  // passed, total
  double worst = 0.0;
  auto record = [&](const std::string& what, double rel) {
    worst = std::max(worst, rel);
    auto& t = tally[what];
    t.first += rel <= 1e-4;
    ++t.second;
  };

  for (int i = 0; i < 100; ++i) {
    auto t = make_target(random_box(rng), TargetRole::truth, i % 2 ? 1.0 : 0.0);
    auto focal = [&](std::span<const Var> p) { return focal_loss(p, t.map); };
    record("focal", diff::finite_diff_check(focal, random_map(rng), 1e-6));

    std::vector<double> boxes;
    push_box(boxes, random_box(rng));
    push_box(boxes, random_box(rng));
    auto l1 = [](std::span<const Var> p) { return l1_box_loss(box_at(p, 0), box_at(p, 4)); };
    record("l1", diff::finite_diff_check(l1, boxes, 1e-6));
    auto giou = [](std::span<const Var> p) { return giou_loss(box_at(p, 0), box_at(p, 4)); };
    record("giou", diff::finite_diff_check(giou, boxes, 1e-6));

    auto tgt = make_target(random_box(rng), TargetRole::target);
    auto tru = make_target(random_box(rng), TargetRole::truth);
    auto ori = make_target(random_box(rng), TargetRole::ori);
    auto out = random_map(rng);
    push_box(out, random_box(rng));
    auto track = [&](std::span<const Var> p) { return track_loss(p.first(kCells), box_at(p, kCells), tru, {}); };
    record("track", diff::finite_diff_check(track, out, 1e-6));
    auto adv = [&](std::span<const Var> p) {
      return adversarial_loss(p.first(kCells), box_at(p, kCells), tgt, tru, ori, {});
    };
    record("adversarial", diff::finite_diff_check(adv, out, 1e-6));
  }

  auto seqs = make_sequences(4, 1300, 8);
  std::uniform_real_distribution<double> offset(-6.0, 6.0);
  for (auto [m, field, name, h] : {std::tuple{Modality::rgb, Field::rgb, "rgb-pixel", 1e-6},
                                   std::tuple{Modality::frame, Field::frame, "frame-pixel", 1e-6},
                                   std::tuple{Modality::voxel, Field::voxels, "voxel", 1e-7}}) {
    std::vector<TrackerParams> models;
    for (std::uint64_t s = 0; s < 5; ++s) models.push_back(init_params(m, 8, 100 + s));
    for (int i = 0; i < 100; ++i) {
      const auto& seq = seqs[static_cast<std::size_t>(i) % seqs.size()];
      auto probe = probe_at(seq, 1 + static_cast<std::size_t>(i) % 7, m, offset(rng));
      jitter_voxels(probe.x, rng);
      jitter_pixels(probe.x, rng);
      BoundTracker model(models[static_cast<std::size_t>(i) % models.size()], probe.z);
      auto truth = make_target(probe.truth, TargetRole::truth);
      auto target = make_target(far_quadrant_target(probe.truth).box, TargetRole::target);
      auto ori = make_target(model.predict(probe.x).bbox, TargetRole::ori);
      BoundTracker::LossFn loss;
      if (i % 2)
        loss = [&](const OutputVars& y) { return track_loss(y, truth, {}); };
      else
        loss = [&](const OutputVars& y) { return adversarial_loss(y, target, truth, ori, {}); };
      record(name, directional_check(model, probe.x, field, loss, 500 + static_cast<std::uint64_t>(i), h).rel);
    }
  }

  double secs = since(t0);
  bool all = secs <= 120.0;
  std::string parts;
  for (const auto& [k, v] : tally) {
    all = all && v.first == v.second;
    parts += fmt(" %s %d/%d", k.c_str(), v.first, v.second);
  }
  return {all, fmt("%s; worst rel %.2e; %.1f s (limit 120 s)", parts.c_str() + 1, worst, secs)};
}

// ---------------------------------------------------------------------------

Outcome voxelization_oracle() {
  auto t0 = Clock::now();
  std::mt19937_64 rng(21);
  int mismatches = 0;
  std::size_t events = 0, capped = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    std::size_t n = std::uniform_int_distribution<std::size_t>(0, 10000)(rng);
    int w = std::uniform_int_distribution<int>(8, 96)(rng), h = std::uniform_int_distribution<int>(8, 96)(rng);
    auto s = random_stream(rng, n, w, h);
    events += n;
    VoxelGridSpec spec;
    const double cells[] = {1.0, 2.0, 4.0, 8.0};
    const std::size_t caps[] = {16, 256, 1024, 4096};
    spec.cell_px = cells[rng() % 4];
    spec.bins = 1 + static_cast<int>(rng() % 8);
    spec.capacity = caps[rng() % 4];
    spec.max_events = 1 + static_cast<int>(rng() % 8);
    std::int64_t lo = std::uniform_int_distribution<std::int64_t>(0, 5000)(rng);
    std::int64_t hi = std::uniform_int_distribution<std::int64_t>(lo + 1, 10000)(rng);
    auto v = voxelize(s, {lo, hi}, spec);
    auto want = oracle_voxelize(s, lo, hi, spec);
    bool ok = v.occupied == want.size() && v.capacity() == spec.capacity;
    for (std::size_t i = 0; ok && i < want.size(); ++i) {
      const auto& c = want[i];
      ok = v.slots[i] == Voxel{double(c.x), double(c.y), double(c.z), c.vf};
      capped += c.count == spec.max_events;
    }
    for (std::size_t i = v.occupied; ok && i < v.capacity(); ++i) ok = v.slots[i] == Voxel{};
    mismatches += !ok;
  }
  double secs = since(t0);
  return {mismatches == 0 && secs <= 60.0,
          fmt("%d/1000 streams mismatched (%zu events, %zu capped cells); %.1f s (limit 60 s)", mismatches, events,
              capped, secs)};
}

// ---------------------------------------------------------------------------

bool same_bits(const Image<double>& a, const Image<double>& b) {
  return a.same_shape(b) && std::memcmp(a.data.data(), b.data.data(), a.data.size() * sizeof(double)) == 0;
}

Outcome budget_invariants() {
  auto t0 = Clock::now();
  std::mt19937_64 rng(31);
  auto seqs = make_sequences(4, 3100, 6);
  std::map<Modality, std::vector<TrackerParams>> models;
  for (auto m : kAllModalities)
    for (std::uint64_t s = 0; s < 2; ++s) models[m].push_back(init_params(m, 8, 60 + s));

  std::map<std::string, int> runs;
  int violations = 0, identity_failures = 0, fgsm_mismatches = 0, fgsm_pairs = 0, zero_runs = 0, errors = 0;
  long iterations = 0;
  std::string first_error;
  const auto& names = attack_names();
  std::uniform_real_distribution<double> eps_d(0.1, 12.0), alpha_d(0.2, 3.0), off_d(-10.0, 10.0);

  for (int run = 0; run < 1000; ++run) {
    const std::string& name = names[static_cast<std::size_t>(run) % names.size()];
    std::vector<Modality> ok;
    for (auto m : kAllModalities) {
      try {
        check_attack_modality(name, m);
        ok.push_back(m);
      } catch (const UsageError&) {
      }
    }
    Modality m = ok[rng() % ok.size()];
    double eps = run % 5 == 0 ? 0.0 : eps_d(rng);
    AttackBudget b{eps, alpha_d(rng), 1 + static_cast<int>(rng() % 3)};
    JointBudgets jb{b, b};
    std::uint64_t seed = rng();
    const auto& seq = seqs[rng() % seqs.size()];
    auto probe = probe_at(seq, 1 + rng() % 5, m, off_d(rng));
    BoundTracker model(models[m][rng() % 2], probe.z);
    const PatchInputs& clean = probe.x;
    TargetSpec target = far_quadrant_target(probe.truth);
    AttackObjective obj = make_objective(model, clean, probe.truth, target);

    std::optional<VoxelSet> injected;
    if (clean.voxels) {
      if (eps == 0.0)
        injected = *clean.voxels;
      else if (name == "dare-snn")
        injected = adv_init_voxels(*clean.voxels, target, seed, [](std::mt19937_64& g) { return gumbel_polarity(g).hard; });
      else
        injected = adv_init_voxels(*clean.voxels, target, seed);
    }
    bool violated = false;
    auto check = [&](const PatchInputs& x) {
      ++iterations;
      if (x.rgb && linf_distance(*x.rgb, *clean.rgb) > eps) violated = true;
      if (x.frame && linf_distance(*x.frame, *clean.frame) > eps) violated = true;
      if (x.voxels) {
        const VoxelSet& ref = x.voxels->occupied == clean.voxels->occupied ? *clean.voxels : *injected;
        if (voxel_deviation(*x.voxels, ref) > eps) violated = true;
      }
    };
    IterationHook hook = [&](int, const PatchInputs& x) { check(x); };

    try {
      PatchInputs out = clean;
      if (name == "noise") {
        if (out.rgb) out.rgb = noise_baseline(*clean.rgb, eps, seed);
        if (out.frame) out.frame = noise_baseline(*clean.frame, eps, seed + 1);
        if (out.voxels) out.voxels = noise_voxels(*clean.voxels, eps, seed + 2);
      } else if (name == "fgsm") {
        auto r = fgsm(model, clean, ImageChannel::rgb, obj, eps);
        out = r.adv;
        if (eps > 0.0) {
          auto p = pgd(model, clean, ImageChannel::rgb, obj, AttackBudget{eps, eps, 1});
          ++fgsm_pairs;
          bool same = same_bits(*r.adv.rgb, *p.adv.rgb) && r.loss_trace.size() == p.loss_trace.size() &&
                      std::memcmp(r.loss_trace.data(), p.loss_trace.data(), r.loss_trace.size() * sizeof(double)) == 0;
          fgsm_mismatches += !same;
        }
      } else if (name == "pgd-rgb" || name == "pgd-frame") {
        out = pgd(model, clean, name == "pgd-rgb" ? ImageChannel::rgb : ImageChannel::frame, obj, b, hook).adv;
      } else if (name == "adv-init") {
        out.voxels = *injected;
      } else if (name == "grad-opt") {
        PatchInputs start = clean;
        start.voxels = *injected;
        out = grad_opt_voxels(model, start, *injected, obj, b, VoxelFields::xyz, hook).adv;
      } else if (name == "fusion-voxel") {
        PerturbationState st;
        bool voxel_first = run % 2;
        out = attack_rgb_event_voxel(model, clean, obj, target, jb, st, TemporalMode::on, seed, voxel_first, hook).adv;
        check(out);
        // Second frame warm-started from the carried perturbations.
        out = attack_rgb_event_voxel(model, clean, obj, target, jb, st, TemporalMode::on, seed, voxel_first, hook).adv;
      } else if (name == "fusion-frame") {
        Image<double> eta;
        out = attack_rgb_event_frame_universal(model, clean, obj, b, eta, hook).adv;
        for (double e : eta.data) violated = violated || std::fabs(e) > eps;
      } else if (name == "ae-adv") {
        out = baseline_ae_adv(model, clean, obj, target, jb, seed, hook).adv;
      } else if (name == "dare-snn") {
        out = baseline_dare_snn(model, clean, obj, target, jb, seed, hook).adv;
      }
      check(out);
      if (eps == 0.0) {
        ++zero_runs;
        bool same = (!clean.rgb || same_bits(*out.rgb, *clean.rgb)) &&
                    (!clean.frame || same_bits(*out.frame, *clean.frame)) &&
                    (!clean.voxels || *out.voxels == *clean.voxels);
        identity_failures += !same;
      }
    } catch (const std::exception& e) {
      ++errors;
      if (first_error.empty()) first_error = name + ": " + e.what();
    }
    violations += violated;
    ++runs[name];
  }
  bool covered = runs.size() == names.size();
  bool pass = violations == 0 && identity_failures == 0 && fgsm_mismatches == 0 && errors == 0 && covered;
  std::string d = fmt("1000 runs over %zu attacks, %ld checked iterates, %d budget violations; eps=0 identity %d/%d; "
                      "fgsm vs pgd(M=1, alpha=eps) bitwise %d/%d; %d errors; %.1f s",
                      runs.size(), iterations, violations, zero_runs - identity_failures, zero_runs,
                      fgsm_pairs - fgsm_mismatches, fgsm_pairs, errors, since(t0));
  if (!first_error.empty()) d += " (first error: " + first_error + ")";
  return {pass, d};
}

// ---------------------------------------------------------------------------
// Desk-scale experiments on trained surrogates

struct Bench {
  std::vector<Sequence> training = make_sequences(32, 1000);
  std::vector<Sequence> held = make_sequences(16, 5000);
  std::map<Modality, TrackerParams> models;
  std::map<Modality, double> train_seconds;

  const TrackerParams& model(Modality m) {
    auto it = models.find(m);
    if (it != models.end()) return it->second;
    auto t0 = Clock::now();
    TrainConfig cfg;
    cfg.steps = 300;
    cfg.batch = 8;
    auto r = train(init_params(m, 8, 1), std::span<const Sequence>(training), cfg);
    train_seconds[m] = since(t0);
    std::fprintf(stderr, "  trained %s surrogate in %.1f s (loss %.3f -> %.3f)\n", to_string(m).c_str(),
                 train_seconds[m], r.loss_curve.front(), r.loss_curve.back());
    return models.emplace(m, std::move(r.params)).first->second;
  }

  BenchmarkReport run(Modality m, const std::optional<AttackConfig>& cfg = std::nullopt) {
    SurrogateTracker trk(model(m));
    if (!cfg) return run_benchmark(trk, std::span<const Sequence>(held));
    return run_benchmark(trk, std::span<const Sequence>(held), make_attack(*cfg, m), cfg->name, cfg->seed);
  }

  std::map<std::string, BenchmarkReport> cache;
  const BenchmarkReport& cached(const std::string& key, Modality m, const std::optional<AttackConfig>& cfg) {
    auto it = cache.find(key);
    if (it != cache.end()) return it->second;
    auto t0 = Clock::now();
    auto rep = run(m, cfg);
    std::fprintf(stderr, "  %-28s PR %5.1f NPR %5.1f SR %5.1f  failed %zu  (%.1f s)\n", key.c_str(), rep.aggregate.pr,
                 rep.aggregate.npr, rep.aggregate.sr, rep.failed(), since(t0));
    return cache.emplace(key, std::move(rep)).first->second;
  }
};

AttackConfig attack_cfg(const std::string& name, LossKind loss = LossKind::adversarial) {
  AttackConfig c;
  c.name = name;
  c.alpha = 1.0;
  c.iters = 10;
  c.loss = loss;
  c.seed = 17;
  return c;
}

Outcome desk_efficacy(Bench& bench) {
  auto t0 = Clock::now();
  bench.model(Modality::rgb);
  const auto& clean = bench.cached("rgb clean", Modality::rgb, std::nullopt);
  auto pgd_cfg = attack_cfg("pgd-rgb");
  pgd_cfg.eps = 10.0;
  const auto& attacked = bench.cached("rgb pgd-rgb", Modality::rgb, pgd_cfg);
  double drop = clean.aggregate.sr > 0.0 ? (clean.aggregate.sr - attacked.aggregate.sr) / clean.aggregate.sr : 0.0;

  // Targeted pull: search crops centred on the ground truth, target in the far quadrant.
  SurrogateTracker trk(bench.model(Modality::rgb));
  double d_clean = 0.0, d_adv = 0.0;
  int n = 0;
  for (const auto& seq : bench.held) {
    BoundTracker model(trk.params(), probe_at(seq, 1, Modality::rgb).z);
    for (std::size_t k = 1; k < seq.frames.size(); k += 2) {
      auto probe = probe_at(seq, k, Modality::rgb);
      TargetSpec target = far_quadrant_target(probe.truth);
      auto obj = make_objective(model, probe.x, probe.truth, target);
      auto r = pgd(model, probe.x, ImageChannel::rgb, obj, AttackBudget{10.0, 1.0, 10});
      d_clean += center_distance(model.predict(probe.x).bbox, target.box);
      d_adv += center_distance(r.after, target.box);
      ++n;
    }
  }
  d_clean /= n;
  d_adv /= n;
  double secs = since(t0);
  bool pass = clean.aggregate.sr >= 50.0 && drop >= 0.6 && d_adv <= 0.5 * d_clean && clean.failed() == 0 &&
              attacked.failed() == 0 && secs <= 1200.0;
  return {pass, fmt("clean SR %.1f (need >= 50); PGD-RGB SR %.1f, relative drop %.0f%% (need >= 60%%); "
                    "distance to target %.1f -> %.1f px over %d crops (%.0f%% shrink, need >= 50%%); %.0f s (limit 1200 s)",
                    clean.aggregate.sr, attacked.aggregate.sr, 100.0 * drop, d_clean, d_adv, n,
                    100.0 * (1.0 - d_adv / d_clean), secs)};
}

Outcome voxel_ordering(Bench& bench) {
  const auto& clean = bench.cached("voxel clean", Modality::voxel, std::nullopt);
  const auto& init = bench.cached("voxel adv-init", Modality::voxel, attack_cfg("adv-init"));
  const auto& full = bench.cached("voxel grad-opt", Modality::voxel, attack_cfg("grad-opt"));
  double a = clean.aggregate.sr, b = init.aggregate.sr, c = full.aggregate.sr;
  bool pass = a - b >= 3.0 && b - c >= 3.0 && clean.failed() + init.failed() + full.failed() == 0;
  return {pass, fmt("SR clean %.1f > adv-init %.1f > adv-init+grad-opt %.1f (gaps %.1f, %.1f; need >= 3)", a, b, c,
                    a - b, b - c)};
}

Outcome loss_ablation(Bench& bench) {
  auto pgd_adv = attack_cfg("pgd-rgb"), pgd_track = attack_cfg("pgd-rgb", LossKind::track);
  const auto& ra = bench.cached("rgb pgd-rgb", Modality::rgb, [&] {
    auto c = pgd_adv;
    c.eps = 10.0;
    return c;
  }());
  pgd_track.eps = 10.0;
  const auto& rt = bench.cached("rgb pgd-rgb track-loss", Modality::rgb, pgd_track);
  const auto& va = bench.cached("voxel grad-opt", Modality::voxel, attack_cfg("grad-opt"));
  const auto& vt = bench.cached("voxel grad-opt track-loss", Modality::voxel, attack_cfg("grad-opt", LossKind::track));
  bool pass = ra.aggregate.pr <= rt.aggregate.pr + 1.0 && va.aggregate.pr <= vt.aggregate.pr + 1.0;
  return {pass, fmt("PR adversarial vs track loss: pgd-rgb %.1f vs %.1f, voxel grad-opt %.1f vs %.1f (tie within 1)",
                    ra.aggregate.pr, rt.aggregate.pr, va.aggregate.pr, vt.aggregate.pr)};
}

// Records the iteration-0 loss of the warm-started PGD next to the loss a cold start would see.
class WarmColdProbe : public FrameAttack {
 public:
  struct Shared {
    std::mutex mu;
    int frames = 0;
    int warm_wins = 0;
  };

  explicit WarmColdProbe(Shared& shared) : shared_(shared) {}

  PatchInputs perturb(const AttackFrame& f) override {
    const BoundTracker& model = *f.model;
    const PatchInputs& clean = *f.clean;
    TargetSpec target = far_quadrant_target(f.truth);
    AttackObjective obj = make_objective(model, clean, f.truth, target);
    AttackBudget b{10.0, 1.0, 10};
    PatchInputs start = clean;
    start.rgb = temporal_carry(*clean.rgb, eta_, b.eps, TemporalMode::on);
    auto r = pgd(model, start, *clean.rgb, ImageChannel::rgb, obj, b);
    double cold = obj.value(model.predict(clean));
    if (f.frame > 3) {
      std::lock_guard lock(shared_.mu);
      ++shared_.frames;
      shared_.warm_wins += r.loss_trace.front() <= cold;
    }
    eta_ = perturbation(*r.adv.rgb, *clean.rgb);
    return r.adv;
  }

 private:
  Shared& shared_;
  std::optional<Image<double>> eta_;
};

Outcome temporal_carry_check(Bench& bench) {
  SurrogateTracker trk(bench.model(Modality::rgb));
  WarmColdProbe::Shared shared;
  AttackFactory factory = [&](const Sequence&) { return std::make_unique<WarmColdProbe>(shared); };
  auto rep = run_benchmark(trk, std::span<const Sequence>(bench.held), factory, "pgd-rgb-warm-cold");
  double frac = shared.frames ? static_cast<double>(shared.warm_wins) / shared.frames : 0.0;
  return {frac >= 0.8 && rep.failed() == 0,
          fmt("warm-start iteration-0 loss <= cold start on %d/%d frames after frame 3 (%.1f%%, need >= 80%%)",
              shared.warm_wins, shared.frames, 100.0 * frac)};
}

PatchInputs with_universal(const PatchInputs& clean, const Image<double>& eta) {
  PatchInputs x = clean;
  for (int y = 0; y < eta.height; ++y)
    for (int xx = 0; xx < eta.width; ++xx) {
      double e = eta.at(xx, y);
      for (int c = 0; c < 3; ++c) x.rgb->at(xx, y, c) = std::clamp(clean.rgb->at(xx, y, c) + e, 0.0, 255.0);
      x.frame->at(xx, y) = std::clamp(clean.frame->at(xx, y) + e, 0.0, 255.0);
    }
  return x;
}

Outcome universal_generalization(Bench& bench) {
  const auto& params = bench.model(Modality::rgb_frame);
  int frames = 0, lowered = 0;
  for (const auto& seq : bench.held) {
    BoundTracker model(params, probe_at(seq, 1, Modality::rgb_frame).z);
    std::size_t n = seq.frames.size();
    std::size_t fit_end = (3 * n) / 4;
    TargetSpec target = far_quadrant_target(probe_at(seq, 1, Modality::rgb_frame).truth);
    Image<double> eta;
    for (std::size_t k = 1; k < fit_end; ++k) {
      auto probe = probe_at(seq, k, Modality::rgb_frame);
      auto obj = make_objective(model, probe.x, probe.truth, target);
      attack_rgb_event_frame_universal(model, probe.x, obj, multimodal_budget(), eta);
    }
    for (std::size_t k = fit_end; k < n; ++k) {
      auto probe = probe_at(seq, k, Modality::rgb_frame);
      auto obj = make_objective(model, probe.x, probe.truth, target);
      double clean = obj.value(model.predict(probe.x));
      double adv = obj.value(model.predict(with_universal(probe.x, eta)));
      ++frames;
      lowered += adv < clean;
    }
  }
  double frac = frames ? static_cast<double>(lowered) / frames : 0.0;
  return {frac >= 0.7, fmt("eta fit on the first 75%% of frames lowers adversarial loss on %d/%d held-out frames "
                           "(%.1f%%, need >= 70%%)",
                           lowered, frames, 100.0 * frac)};
}

Outcome metric_fixtures() {
  auto seqs = make_sequences(4, 800, 12);
  auto perfect = run_benchmark(OracleTracker(), std::span<const Sequence>(seqs));
  auto disjoint = run_benchmark(FixedBoxTracker(BBox{10000, 10000, 1, 1}), std::span<const Sequence>(seqs));
  bool exact = perfect.aggregate.pr == 100.0 && perfect.aggregate.npr == 100.0 && perfect.aggregate.sr == 100.0;
  bool far = disjoint.aggregate.sr == 0.0 && disjoint.aggregate.pr < 5.0;

  auto golden = golden_fixture();
  auto path = std::filesystem::temp_directory_path() / "advbench-acceptance" / "report.json";
  write_report(golden, path);
  bool round_trip = read_report(path) == golden;
  std::filesystem::remove_all(path.parent_path());
  std::ifstream in(std::filesystem::path(ADVBENCH_GOLDEN_DIR) / "report.json", std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  bool bytes = in.good() && ss.str() == format_report(golden);
  return {exact && far && round_trip && bytes,
          fmt("perfect PR/NPR/SR %.1f/%.1f/%.1f; disjoint SR %.1f PR %.1f; round trip %s; golden bytes %s",
              perfect.aggregate.pr, perfect.aggregate.npr, perfect.aggregate.sr, disjoint.aggregate.sr,
              disjoint.aggregate.pr, round_trip ? "equal" : "differ", bytes ? "equal" : "differ")};
}

Outcome harm_ordering(Bench& bench) {
  const auto& clean = bench.cached("rgb clean", Modality::rgb, std::nullopt);
  auto noise_cfg = attack_cfg("noise"), fgsm_cfg = attack_cfg("fgsm"), pgd_cfg = attack_cfg("pgd-rgb");
  noise_cfg.eps = fgsm_cfg.eps = pgd_cfg.eps = 10.0;
  const auto& noise = bench.cached("rgb noise", Modality::rgb, noise_cfg);
  const auto& fg = bench.cached("rgb fgsm", Modality::rgb, fgsm_cfg);
  const auto& pg = bench.cached("rgb pgd-rgb", Modality::rgb, pgd_cfg);
  double a = clean.aggregate.sr, b = noise.aggregate.sr, c = fg.aggregate.sr, d = pg.aggregate.sr;
  return {a - b >= 5.0 && b - c >= 5.0 && c - d >= 5.0,
          fmt("SR clean %.1f, noise %.1f, fgsm %.1f, pgd-rgb %.1f (each step needs >= 5)", a, b, c, d)};
}

}  // namespace

int main(int argc, char** argv) {
  // Optional arguments select criteria by number; "info" selects the informational check.
  std::vector<std::string> only(argv + 1, argv + argc);
  auto wanted = [&](const std::string& id) { return only.empty() || std::find(only.begin(), only.end(), id) != only.end(); };
  auto t0 = Clock::now();
  Bench bench;
  int failed = 0, ran = 0;
  auto run = [&](const std::string& id, const char* label, auto&& fn) {
    if (!wanted(id)) return;
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    std::printf("%s %s: %s\n", o.pass ? "PASS" : "FAIL", label, o.detail.c_str());
    std::fflush(stdout);
    if (id != "info") {
      ++ran;
      failed += !o.pass;
    }
  };
  run("1", "criterion 1 (gradient correctness)", gradient_correctness);
  run("2", "criterion 2 (voxelization oracle)", voxelization_oracle);
  run("3", "criterion 3 (budget invariants)", budget_invariants);
  run("4", "criterion 4 (desk-scale efficacy)", [&] { return desk_efficacy(bench); });
  run("5", "criterion 5 (voxel-attack ordering)", [&] { return voxel_ordering(bench); });
  run("6", "criterion 6 (loss-ablation ordering)", [&] { return loss_ablation(bench); });
  run("7", "criterion 7 (temporal carry)", [&] { return temporal_carry_check(bench); });
  run("8", "criterion 8 (universal perturbation generalization)", [&] { return universal_generalization(bench); });
  run("9", "criterion 9 (metric fixtures)", metric_fixtures);
  // Module invariant outside the numbered criteria; reported, not counted.
  run("info", "info: harm ordering clean > noise > fgsm > pgd", [&] { return harm_ordering(bench); });
  std::printf("%d of %d criteria failed; %.0f s total\n", failed, ran, since(t0));
  return failed == 0 ? 0 : 1;
}
