#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "advbench/attacks.hpp"
#include "advbench/eval.hpp"
#include "advbench/synth.hpp"
#include "advbench/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace advbench;

namespace {

struct RunConfig {
  std::string command;
  fs::path data, out, ckpt;
  std::string name;
  std::optional<double> eps;
  double alpha = 1.0;
  int iters = 10;
  std::uint64_t seed = 0;
  std::string modality;
  std::string target = "far-quadrant";
  std::string temporal = "on";
  std::string loss = "adversarial";
  std::string tracker = "surrogate";
  bool force = false;
  int n = 8;
  int frames = 32;
  std::size_t steps = 300;
  std::size_t batch = 8;
  double lr = 3e-3;
  int channels = 8;
  std::vector<std::string> compare;
};

fs::path resolve(const fs::path& p) { return p.empty() ? p : fs::weakly_canonical(fs::absolute(p)); }

std::string utc_now() {
  std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

json config_json(const RunConfig& c) {
  json j{{"command", c.command}, {"seed", c.seed}};
  if (!c.data.empty()) j["data"] = c.data.string();
  if (!c.out.empty()) j["out"] = c.out.string();
  if (!c.ckpt.empty()) j["ckpt"] = c.ckpt.string();
  if (!c.modality.empty()) j["modality"] = c.modality;
  return j;
}

/// Manifests carry the wall-clock fields; everything else a run writes is reproducible.
void write_manifest(const fs::path& path, json body, double seconds) {
  body["tool"] = "advbench";
  body["run"] = {{"created_utc", utc_now()}, {"wall_seconds", seconds}};
  write_text(path, body.dump(2) + "\n");
}

void prepare_output(const fs::path& dir, bool force) {
  if (fs::exists(dir) && !fs::is_directory(dir)) throw UsageError(dir.string() + " exists and is not a directory");
  if (fs::exists(dir) && !fs::is_empty(dir)) {
    if (!force) throw UsageError(dir.string() + " is not empty (use --force to overwrite)");
    fs::remove_all(dir);
  }
  fs::create_directories(dir);
}

std::vector<fs::path> sequence_dirs(const fs::path& data) {
  if (data.empty()) throw UsageError("--data is required");
  if (!fs::is_directory(data)) throw UsageError("data directory " + data.string() + " does not exist");
  std::vector<fs::path> dirs;
  for (const auto& e : fs::directory_iterator(data))
    if (e.is_directory() && fs::exists(e.path() / "groundtruth.txt")) dirs.push_back(e.path());
  std::sort(dirs.begin(), dirs.end());
  if (dirs.empty()) throw UsageError("no sequences under " + data.string());
  return dirs;
}

TrackerParams load_checkpoint(const fs::path& ckpt) {
  if (ckpt.empty()) throw UsageError("--ckpt is required");
  if (!fs::exists(ckpt)) throw UsageError("checkpoint " + ckpt.string() + " does not exist");
  return load_params(ckpt);
}

std::optional<BBox> parse_target(const std::string& s) {
  if (s == "far-quadrant") return std::nullopt;
  BBox b;
  char c1 = 0, c2 = 0, c3 = 0;
  std::istringstream in(s);
  if (!(in >> b.x >> c1 >> b.y >> c2 >> b.w >> c3 >> b.h) || c1 != ',' || c2 != ',' || c3 != ',' || !in.eof())
    throw UsageError("--target expects far-quadrant or x,y,w,h, got '" + s + "'");
  return b;
}

LossKind parse_loss(const std::string& s) {
  if (s == "adversarial") return LossKind::adversarial;
  if (s == "track") return LossKind::track;
  throw UsageError("--loss expects adversarial or track, got '" + s + "'");
}

void print_row(const std::string& tracker, const std::string& attack, const Metrics& m) {
  std::printf("%-22s %-16s %6.1f %6.1f %6.1f\n", tracker.c_str(), attack.c_str(), m.pr, m.npr, m.sr);
}

void print_header() { std::printf("%-22s %-16s %6s %6s %6s\n", "tracker", "attack", "PR", "NPR", "SR"); }

void write_curves(const fs::path& dir, std::span<const std::pair<BenchmarkReport, std::string>> reports) {
  std::vector<Series> pr, sr;
  for (const auto& [r, label] : reports) {
    auto [p, s] = metric_curves(r, label);
    pr.push_back(std::move(p));
    sr.push_back(std::move(s));
  }
  write_text(dir / "precision.svg", line_chart_svg("Precision plot", "location error threshold (px)", "precision (%)", pr));
  write_text(dir / "success.svg", line_chart_svg("Success plot", "overlap threshold", "success (%)", sr));
}

int report_failures(const BenchmarkReport& r) {
  for (const auto& s : r.sequences)
    if (!s.error.empty()) std::fprintf(stderr, "sequence %s failed: %s\n", s.name.c_str(), s.error.c_str());
  return r.failed() ? 1 : 0;
}

// ---------------------------------------------------------------------------

int cmd_synth(const RunConfig& c) {
  auto t0 = std::chrono::steady_clock::now();
  if (c.n < 1) throw UsageError("--n must be at least 1");
  if (c.out.empty()) throw UsageError("--out is required");
  prepare_output(c.out, c.force);
  SceneConfig scene;
  scene.frames = c.frames;
  json seqs = json::array();
  for (int i = 0; i < c.n; ++i) {
    std::uint64_t seed = c.seed + static_cast<std::uint64_t>(i);
    Sequence s = synthesize_sequence(scene, seed);
    char name[32];
    std::snprintf(name, sizeof name, "seq%03d", i);
    save_sequence(s, c.out / name);
    seqs.push_back({{"name", name}, {"seed", seed}, {"frames", s.frames.size()}, {"events", s.events.events.size()}});
  }
  json m = config_json(c);
  m["n"] = c.n;
  m["frames"] = c.frames;
  m["sequences"] = seqs;
  write_manifest(c.out / "manifest.json",
                 m, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  std::printf("wrote %d sequences to %s\n", c.n, c.out.string().c_str());
  return 0;
}

int cmd_train(const RunConfig& c) {
  auto t0 = std::chrono::steady_clock::now();
  if (c.ckpt.empty()) throw UsageError("--ckpt is required");
  auto dirs = sequence_dirs(c.data);
  std::vector<Sequence> seqs;
  for (const auto& d : dirs) seqs.push_back(load_sequence(d));
  Modality m = parse_modality(c.modality.empty() ? "rgb" : c.modality);
  TrainConfig cfg;
  cfg.steps = c.steps;
  cfg.batch = c.batch;
  cfg.lr = c.lr;
  cfg.seed = c.seed;
  auto r = train(init_params(m, c.channels, c.seed), std::span<const Sequence>(seqs), cfg,
                 [&](std::size_t step, double loss) {
                   if (step % 50 == 0 || step + 1 == cfg.steps) std::fprintf(stderr, "step %zu loss %.4f\n", step, loss);
                 });
  if (c.ckpt.has_parent_path()) fs::create_directories(c.ckpt.parent_path());
  save_params(r.params, c.ckpt);
  Series curve{"loss", {}, r.loss_curve};
  for (std::size_t i = 0; i < r.loss_curve.size(); ++i) curve.x.push_back(static_cast<double>(i));
  std::vector<Series> one{curve};
  auto svg = c.ckpt;
  svg.replace_extension(".loss.svg");
  write_text(svg, line_chart_svg("Training loss", "step", "loss", one));

  json man = config_json(c);
  man["modality"] = to_string(m);
  man["train"] = {{"steps", cfg.steps}, {"batch", cfg.batch}, {"lr", cfg.lr}, {"channels", c.channels}};
  man["sequences"] = json::array();
  for (const auto& d : dirs) man["sequences"].push_back(d.filename().string());
  man["loss"] = {{"initial", r.loss_curve.front()}, {"final", r.loss_curve.back()}};
  auto mpath = c.ckpt;
  mpath += ".manifest.json";
  write_manifest(mpath, man, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  std::printf("trained %s surrogate: loss %.4f -> %.4f, checkpoint %s\n", to_string(m).c_str(), r.loss_curve.front(),
              r.loss_curve.back(), c.ckpt.string().c_str());
  return 0;
}

// Passes frames through a configured attack and stores the adversarial inputs it returns.
class RecordingAttack : public FrameAttack {
 public:
  RecordingAttack(std::unique_ptr<FrameAttack> inner, fs::path dir) : inner_(std::move(inner)), dir_(std::move(dir)) {
    fs::create_directories(dir_);
  }

  PatchInputs perturb(const AttackFrame& f) override {
    PatchInputs x = inner_->perturb(f);
    char stem[32];
    std::snprintf(stem, sizeof stem, "%06zu", f.frame);
    if (x.rgb) write_pnm(quantize(*x.rgb), dir_ / (std::string("I") + stem + ".ppm"));
    if (x.frame) write_pnm(quantize(*x.frame), dir_ / (std::string("F") + stem + ".pgm"));
    if (x.voxels) {
      std::ofstream out(dir_ / (std::string("V") + stem + ".txt"));
      const auto& v = *x.voxels;
      out << "# voxels " << v.occupied << ' ' << v.gx << ' ' << v.gy << ' ' << v.gz << '\n';
      for (const auto& s : v.valid())
        out << format_real(s.vx) << ' ' << format_real(s.vy) << ' ' << format_real(s.vz) << ' ' << format_real(s.vf)
            << '\n';
    }
    return x;
  }

  std::vector<double> last_trace() const override { return inner_->last_trace(); }

 private:
  std::unique_ptr<FrameAttack> inner_;
  fs::path dir_;
};

AttackConfig attack_config(const RunConfig& c) {
  AttackConfig a;
  a.name = c.name;
  a.eps = c.eps;
  a.alpha = c.alpha;
  a.iters = c.iters;
  a.seed = c.seed;
  a.target = parse_target(c.target);
  a.temporal = parse_temporal(c.temporal);
  a.loss = parse_loss(c.loss);
  return a;
}

json budget_json(const AttackConfig& a, Modality m) {
  json j{{"name", a.name},           {"eps", a.eps.value_or(default_eps(m))}, {"alpha", a.alpha},
         {"iters", a.iters},         {"temporal", to_string(a.temporal)},     {"seed", a.seed},
         {"loss", a.loss == LossKind::adversarial ? "adversarial" : "track"}};
  j["target"] = a.target ? detail::box_json(*a.target) : json("far-quadrant");
  return j;
}

int cmd_attack(const RunConfig& c) {
  auto t0 = std::chrono::steady_clock::now();
  if (c.name.empty()) throw UsageError("--name is required");
  if (c.eps && !(*c.eps >= 0.0)) throw UsageError("--eps must be >= 0");
  if (c.out.empty()) throw UsageError("--out is required");
  auto dirs = sequence_dirs(c.data);
  TrackerParams params = load_checkpoint(c.ckpt);
  if (!c.modality.empty() && parse_modality(c.modality) != params.modality)
    throw UsageError("--modality " + c.modality + " does not match checkpoint modality " + to_string(params.modality));
  AttackConfig a = attack_config(c);
  AttackFactory inner = make_attack(a, params.modality);
  prepare_output(c.out, c.force);
  fs::path out = c.out;
  AttackFactory recording = [inner, out](const Sequence& seq) {
    return std::make_unique<RecordingAttack>(inner(seq), out / seq.name);
  };
  SurrogateTracker tracker(params);
  auto report = run_benchmark(tracker, std::span<const fs::path>(dirs), recording, a.name, a.seed);
  report.wall_seconds = 0.0;
  report.attack_manifest = "manifest.json";  // relative to the report
  write_report(report, out / "report.json");

  std::vector<Series> traces;
  for (const auto& s : report.sequences) {
    Series t{s.name, {}, {}};
    for (const auto& tr : s.loss_traces)
      for (double v : tr) {
        t.x.push_back(static_cast<double>(t.x.size()));
        t.y.push_back(v);
      }
    traces.push_back(std::move(t));
  }
  write_text(out / "loss_traces.svg", line_chart_svg("Attack loss", "iteration (frames concatenated)", "loss", traces));

  json man = config_json(c);
  man["modality"] = to_string(params.modality);
  man["budget"] = budget_json(a, params.modality);
  man["sequences"] = json::array();
  for (const auto& s : report.sequences)
    man["sequences"].push_back({{"name", s.name}, {"frames", s.records.size()}, {"error", s.error}});
  write_manifest(out / "manifest.json", man,
                 std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  print_header();
  print_row(report.tracker, report.attack, report.aggregate);
  return report_failures(report);
}

BenchmarkReport read_report_arg(const std::string& s) {
  fs::path p = resolve(s);
  if (fs::is_directory(p)) p /= "report.json";
  if (!fs::exists(p)) throw UsageError("report " + p.string() + " does not exist");
  return read_report(p);
}

int cmd_eval(const RunConfig& c) {
  auto t0 = std::chrono::steady_clock::now();
  if (!c.compare.empty()) {
    if (c.compare.size() != 2) throw UsageError("--compare takes exactly two reports");
    auto a = read_report_arg(c.compare[0]);
    auto b = read_report_arg(c.compare[1]);
    print_header();
    print_row(a.tracker, a.attack, a.aggregate);
    print_row(b.tracker, b.attack, b.aggregate);
    Metrics d{b.aggregate.pr - a.aggregate.pr, b.aggregate.npr - a.aggregate.npr, b.aggregate.sr - a.aggregate.sr};
    std::printf("%-22s %-16s %+6.1f %+6.1f %+6.1f\n", "delta", "", d.pr, d.npr, d.sr);
    if (!c.out.empty()) {
      fs::create_directories(c.out);
      std::vector<std::pair<BenchmarkReport, std::string>> both{{a, a.attack}, {b, b.attack}};
      write_curves(c.out, both);
      json man = config_json(c);
      man["compare"] = c.compare;
      write_manifest(c.out / "manifest.json", man,
                     std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    }
    return std::max(report_failures(a), report_failures(b));
  }

  auto dirs = sequence_dirs(c.data);
  std::unique_ptr<Tracker> tracker;
  AttackFactory attack;
  std::optional<AttackConfig> a;
  json man = config_json(c);
  if (c.tracker == "oracle") {
    tracker = std::make_unique<OracleTracker>();
    if (!c.name.empty()) throw UsageError("the oracle tracker cannot be attacked");
  } else if (c.tracker == "surrogate") {
    if (c.ckpt.empty() || !fs::exists(c.ckpt)) throw UsageError("missing checkpoint (--ckpt)");
    TrackerParams params = load_params(c.ckpt);
    if (!c.name.empty()) {
      a = attack_config(c);
      attack = make_attack(*a, params.modality);
      man["budget"] = budget_json(*a, params.modality);
    }
    tracker = std::make_unique<SurrogateTracker>(std::move(params));
  } else {
    throw UsageError("--tracker expects surrogate or oracle");
  }
  auto report = run_benchmark(*tracker, std::span<const fs::path>(dirs), attack, a ? a->name : "none",
                              a ? a->seed : 0);
  report.wall_seconds = 0.0;
  print_header();
  print_row(report.tracker, report.attack, report.aggregate);
  if (!c.out.empty()) {
    fs::create_directories(c.out);
    write_report(report, c.out / "report.json");
    std::vector<std::pair<BenchmarkReport, std::string>> one{{report, report.attack}};
    write_curves(c.out, one);
    man["tracker"] = report.tracker;
    write_manifest(c.out / "manifest.json", man,
                   std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  }
  return report_failures(report);
}

void add_attack_flags(CLI::App* sub, RunConfig& c) {
  sub->add_option("--name", c.name, "attack: " + [] {
    std::string s;
    for (const auto& n : attack_names()) s += (s.empty() ? "" : ", ") + n;
    return s;
  }());
  sub->add_option("--eps", c.eps, "L-inf budget (default 10 unimodal, 8 multimodal)");
  sub->add_option("--alpha", c.alpha, "step size")->capture_default_str();
  sub->add_option("--iters", c.iters, "iterations per frame")->capture_default_str();
  sub->add_option("--target", c.target, "far-quadrant or x,y,w,h in search-patch pixels")->capture_default_str();
  sub->add_option("--temporal", c.temporal, "on, off or eq5-literal")->capture_default_str();
  sub->add_option("--loss", c.loss, "adversarial or track")->capture_default_str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cross-modal adversarial attacks on a surrogate RGB-event tracker"};
  app.set_config("--config", "", "TOML/INI file with option values; command-line flags win");
  app.allow_config_extras(CLI::config_extras_mode::error);
  app.require_subcommand(1);
  RunConfig c;

  auto* synth = app.add_subcommand("synth", "write synthetic RGB + event sequences");
  synth->add_option("--n", c.n, "number of sequences")->capture_default_str();
  synth->add_option("--frames", c.frames, "frames per sequence")->capture_default_str();

  auto* trn = app.add_subcommand("train", "train the surrogate tracker");
  trn->add_option("--steps", c.steps, "optimizer steps")->capture_default_str();
  trn->add_option("--batch", c.batch, "pairs per step")->capture_default_str();
  trn->add_option("--lr", c.lr, "Adam learning rate")->capture_default_str();
  trn->add_option("--channels", c.channels, "encoder width")->capture_default_str();

  auto* atk = app.add_subcommand("attack", "attack every sequence and store adversarial inputs");
  add_attack_flags(atk, c);

  auto* ev = app.add_subcommand("eval", "benchmark a tracker and print PR/NPR/SR");
  add_attack_flags(ev, c);
  ev->add_option("--tracker", c.tracker, "surrogate or oracle")->capture_default_str();
  ev->add_option("--compare", c.compare, "two reports (or run directories) to tabulate side by side")->expected(2);

  for (auto* sub : {synth, trn, atk, ev}) {
    sub->add_option("--seed", c.seed, "random seed")->capture_default_str();
    sub->add_flag("--force", c.force, "overwrite a non-empty output directory");
    if (sub != synth) {
      sub->add_option("--data", c.data, "directory of sequence directories");
      sub->add_option("--ckpt", c.ckpt, "checkpoint path");
      sub->add_option("--modality", c.modality, "rgb, voxel, frame, rgb+voxel or rgb+frame");
    }
    sub->add_option("--out", c.out, "output directory");
  }

  CLI11_PARSE(app, argc, argv);
  c.command = app.get_subcommands().front()->get_name();
  c.data = resolve(c.data);
  c.out = resolve(c.out);
  c.ckpt = resolve(c.ckpt);

  try {
    if (c.command == "synth") return cmd_synth(c);
    if (c.command == "train") return cmd_train(c);
    if (c.command == "attack") return cmd_attack(c);
    return cmd_eval(c);
  } catch (const UsageError& e) {
    std::fprintf(stderr, "usage error: %s\n", e.what());
    return 2;
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "usage error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
