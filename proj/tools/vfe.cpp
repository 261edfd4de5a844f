// vfe: command-line front end for training, degradation, curation, evaluation
// and enhancement over the canonical PNG dataset layout.

#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <torch/torch.h>
#include <vfe/checkpoint.hpp>
#include <vfe/config.hpp>
#include <vfe/curator.hpp>
#include <vfe/dataset.hpp>
#include <vfe/degrade.hpp>
#include <vfe/evalkit.hpp>
#include <vfe/synthetic.hpp>
#include <vfe/training.hpp>

#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace vfe;

namespace {

enum ExitCode { kOk = 0, kFailure = 1, kConfig = 2, kData = 3, kExternal = 4 };

struct Common {
  std::string config_path;
  std::optional<uint64_t> seed;
  std::optional<int64_t> iters;
  std::string out;
  bool dry_run = false;
  int workers = 1;
};

void write_json(const fs::path& path, const json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << j.dump(2) << "\n";
}

class JsonlLog {
 public:
  explicit JsonlLog(const fs::path& path) : out_(path) {
    if (!out_) throw DataError("cannot write log " + path.string());
  }
  void operator()(const json& j) {
    out_ << j.dump() << "\n";
    out_.flush();
    std::cerr << j.dump() << "\n";
  }

 private:
  std::ofstream out_;
};

// Re-raises the active exception with the video identifier prefixed, keeping its category.
[[noreturn]] void rethrow_for(const std::string& id) {
  try {
    throw;
  } catch (const ConfigError& e) {
    throw ConfigError(id + ": " + e.what());
  } catch (const ExternalToolError& e) {
    throw ExternalToolError(id + ": " + e.what());
  } catch (const ShapeError& e) {
    throw ShapeError(id + ": " + e.what());
  } catch (const DataError& e) {
    throw DataError(id + ": " + e.what());
  } catch (const TrainingError& e) {
    throw TrainingError(id + ": " + e.what());
  } catch (const std::exception& e) {
    throw std::runtime_error(id + ": " + e.what());
  }
}

// Runs job(i) for i in [0, n) on `workers` threads; the first failure is re-raised after all threads stop.
template <class Job>
void parallel_for(size_t n, int workers, Job job) {
  const size_t count = std::max<size_t>(1, std::min<size_t>(static_cast<size_t>(std::max(workers, 1)), n));
  if (count > 1) torch::set_num_threads(1);
  std::atomic<size_t> next{0};
  std::exception_ptr failure;
  std::mutex mu;
  auto run = [&] {
    for (size_t i = next++; i < n; i = next++) {
      {
        std::lock_guard<std::mutex> lock(mu);
        if (failure) return;
      }
      try {
        job(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(mu);
        if (!failure) failure = std::current_exception();
        return;
      }
    }
  };
  std::vector<std::thread> threads;
  for (size_t t = 1; t < count; ++t) threads.emplace_back(run);
  run();
  for (auto& t : threads) t.join();
  if (failure) std::rethrow_exception(failure);
}

RunConfig resolve_config(const Common& c) {
  RunConfig cfg = c.config_path.empty() ? parse_config(json{{"version", kConfigVersion}}) : load_config(c.config_path);
  if (c.seed) {
    cfg.seed = *c.seed;
    cfg.stage1.seed = *c.seed;
    cfg.stage2.seed = *c.seed;
  }
  if (!c.out.empty()) cfg.output_dir = c.out;
  try {
    cfg.validate();
  } catch (const ShapeError& e) {
    throw ConfigError(e.what());
  }
  return cfg;
}

json run_manifest(const std::string& command, const RunConfig& cfg) {
  json cfg_json = cfg;
  return {{"command", command},
          {"config_hash", config_hash(cfg)},
          {"config", cfg_json},
          {"seeds", {{"run", cfg.seed}, {"stage1", cfg.stage1.seed}, {"stage2", cfg.stage2.seed}}},
          {"checkpoints", json::object()}};
}

void require_dir(const std::string& path, const std::string& what) {
  if (path.empty()) throw ConfigError(what + " is not set");
  if (!fs::is_directory(path)) throw DataError(what + " '" + path + "' is not a directory");
}

// Training windows of every video under `root`, each video checked against the configured resolution.
std::vector<VideoTensor> load_windows(const std::string& root, const DataConfig& data, int64_t limit = 0) {
  validate_layout(root);
  std::vector<VideoTensor> clips;
  for (const auto& id : list_videos(root)) {
    try {
      auto video = read_video_dir(fs::path(root) / id);
      if (video.height() != data.resolution || video.width() != data.resolution) {
        throw DataError("frames are " + std::to_string(video.height()) + "x" + std::to_string(video.width()) +
                        ", expected " + std::to_string(data.resolution) + "x" + std::to_string(data.resolution));
      }
      for (auto& w : chunk_clips(video, data.clip_frames)) clips.push_back(std::move(w));
    } catch (...) {
      rethrow_for("video " + id);
    }
    if (limit > 0 && static_cast<int64_t>(clips.size()) >= limit) break;
  }
  if (limit > 0 && static_cast<int64_t>(clips.size()) > limit) clips.resize(static_cast<size_t>(limit));
  if (clips.empty()) throw DataError("no " + std::to_string(data.clip_frames) + "-frame windows under " + root);
  return clips;
}

// Runs `enhance` window by window; a short tail is padded with its last frame and trimmed afterwards.
VideoTensor enhance_video(Stage1Model& s1, Stage2Model& s2, const VideoTensor& lq) {
  const int64_t window = s2.video_shape()[0];
  std::vector<torch::Tensor> parts;
  for (int64_t start = 0; start < lq.num_frames(); start += window) {
    const int64_t len = std::min(window, lq.num_frames() - start);
    auto frames = lq.frames.slice(0, start, start + len);
    if (len < window) {
      frames = torch::cat({frames, frames.slice(0, len - 1, len).expand({window - len, -1, -1, -1})});
    }
    auto out = enhance(s1, s2, VideoTensor{frames.contiguous(), lq.frame_rate});
    parts.push_back(out.frames.slice(0, 0, len));
  }
  return VideoTensor{torch::cat(parts).contiguous(), lq.frame_rate};
}

json held_out_reports(const RunConfig& cfg, const std::function<VideoTensor(const VideoTensor&)>& restore,
                      const fs::path& out_path) {
  auto clips = load_windows(cfg.data.eval_root, cfg.data, cfg.data.eval_clips);
  std::vector<MetricReport> reports;
  for (size_t i = 0; i < clips.size(); ++i) {
    reports.push_back(evaluate_pair("eval-" + std::to_string(i), restore(clips[i]), clips[i]));
  }
  json per_clip = json::array();
  for (const auto& r : reports) per_clip.push_back(r);
  json result{{"clips", per_clip}, {"aggregate", aggregate(reports)}};
  write_json(out_path, result);
  return result["aggregate"];
}

// ---------------------------------------------------------------------------

int cmd_show_config(const Common& c) {
  auto cfg = resolve_config(c);
  json j = cfg;
  std::cout << json{{"config", j}, {"config_hash", config_hash(cfg)}}.dump(2) << "\n";
  return kOk;
}

int cmd_train_stage1(const Common& c) {
  auto cfg = resolve_config(c);
  if (c.iters) cfg.stage1.iterations = *c.iters;
  cfg.stage1.validate();
  require_dir(cfg.data.train_root, "data.train_root");
  auto clips = load_windows(cfg.data.train_root, cfg.data);
  if (!cfg.data.eval_root.empty()) require_dir(cfg.data.eval_root, "data.eval_root");
  if (c.dry_run) {
    std::cout << json{{"valid", true}, {"windows", clips.size()}, {"config_hash", config_hash(cfg)}}.dump() << "\n";
    return kOk;
  }
  const fs::path out = cfg.output_dir;
  fs::create_directories(out);
  Stage1Model model(cfg.model, cfg.seed);
  JsonlLog log(out / "stage1_log.jsonl");
  auto manifest = run_manifest("train-stage1", cfg);
  auto save = [&](int64_t iteration, const fs::path& path) {
    save_stage1(path.string(), model, iteration, {{"config_hash", config_hash(cfg)}});
    manifest["checkpoints"][path.filename().string()] = file_hash(path.string());
  };
  train_stage1(model, clips, cfg.stage1, cfg.loss, std::ref(log),
               [&](int64_t it) { save(it, out / ("stage1_" + std::to_string(it) + ".pt")); });
  save(cfg.stage1.iterations, out / "stage1.pt");
  auto util = corpus_utilization(model, clips);
  manifest["utilization"] = {{"spatial", util.spatial}, {"temporal", util.temporal}};
  if (!cfg.data.eval_root.empty()) {
    manifest["eval"] = held_out_reports(
        cfg,
        [&](const VideoTensor& v) {
          auto out_frames = model.reconstruct(v.frames.unsqueeze(0)).squeeze(0);
          return VideoTensor{out_frames, v.frame_rate};
        },
        out / "stage1_eval.json");
  }
  write_json(out / "stage1_manifest.json", manifest);
  return kOk;
}

int cmd_train_stage2(const Common& c) {
  auto cfg = resolve_config(c);
  if (c.iters) cfg.stage2.iterations = *c.iters;
  cfg.stage2.validate();
  if (cfg.stage1_checkpoint.empty()) throw ConfigError("train-stage2 requires stage1_checkpoint");
  if (!fs::is_regular_file(cfg.stage1_checkpoint)) {
    throw ConfigError("stage1_checkpoint '" + cfg.stage1_checkpoint + "' does not exist");
  }
  require_dir(cfg.data.train_root, "data.train_root");
  auto clips = load_windows(cfg.data.train_root, cfg.data);
  auto teacher = load_stage1(cfg.stage1_checkpoint, &cfg.model);
  if (cfg.stage2.codec.mode == CodecMode::external && cfg.stage2.codec.binary.empty() && !std::getenv(kCodecEnvVar)) {
    throw ExternalToolError(std::string("external codec requested but no binary configured (set ") + kCodecEnvVar +
                            ")");
  }
  if (c.dry_run) {
    std::cout << json{{"valid", true}, {"windows", clips.size()}, {"config_hash", config_hash(cfg)}}.dump() << "\n";
    return kOk;
  }
  const fs::path out = cfg.output_dir;
  fs::create_directories(out);
  Stage2Model student(*teacher, cfg.stage2.lookup, {cfg.data.clip_frames, cfg.data.resolution, cfg.data.resolution},
                      cfg.seed);
  JsonlLog log(out / "stage2_log.jsonl");
  auto manifest = run_manifest("train-stage2", cfg);
  manifest["checkpoints"]["stage1"] = file_hash(cfg.stage1_checkpoint);
  auto save = [&](int64_t iteration, const fs::path& path) {
    save_stage2(path.string(), student, iteration,
                {{"config_hash", config_hash(cfg)}, {"stage1_hash", file_hash(cfg.stage1_checkpoint)}});
    manifest["checkpoints"][path.filename().string()] = file_hash(path.string());
  };
  train_stage2(*teacher, student, clips, cfg.stage2, cfg.loss, std::ref(log),
               [&](int64_t it) { save(it, out / ("stage2_" + std::to_string(it) + ".pt")); });
  save(cfg.stage2.iterations, out / "stage2.pt");
  if (!cfg.data.eval_root.empty()) {
    std::mt19937_64 rng(cfg.seed ^ 0x5eedULL);
    manifest["eval"] = held_out_reports(
        cfg,
        [&](const VideoTensor& v) {
          auto lq = degrade_video(v, sample_params(rng, cfg.stage2.degradation), cfg.stage2.codec).video;
          return enhance(*teacher, student, lq);
        },
        out / "stage2_eval.json");
  }
  write_json(out / "stage2_manifest.json", manifest);
  return kOk;
}

struct EnhanceArgs {
  std::string input, output, stage1, stage2;
  bool deflicker = false;
};

int cmd_enhance(const Common& c, const EnhanceArgs& a) {
  for (const auto& [path, what] : {std::pair{a.stage1, "--stage1"}, std::pair{a.stage2, "--stage2"}}) {
    if (!fs::is_regular_file(path)) throw DataError(std::string(what) + " checkpoint '" + path + "' does not exist");
  }
  VideoMeta meta;
  auto lq = read_video_dir(a.input, &meta);
  auto s1 = load_stage1(a.stage1);
  auto s2 = load_stage2(a.stage2, *s1);
  const auto& vs = s2->video_shape();
  if (lq.height() != vs[1] || lq.width() != vs[2]) {
    throw ShapeError("input is " + std::to_string(lq.height()) + "x" + std::to_string(lq.width()) +
                     " but the model was trained at " + std::to_string(vs[1]) + "x" + std::to_string(vs[2]));
  }
  if (c.dry_run) {
    std::cout << json{{"valid", true}, {"frames", lq.num_frames()}}.dump() << "\n";
    return kOk;
  }
  auto restored = enhance_video(*s1, *s2, lq);
  json extra{{"preset", a.deflicker ? "deflicker" : "restore"},
             {"checkpoints", {{"stage1", file_hash(a.stage1)}, {"stage2", file_hash(a.stage2)}}},
             {"source", a.input}};
  write_video_dir(a.output, restored, "enhanced", extra);
  return kOk;
}

struct DegradeArgs {
  std::string input, flicker;
  double probability = 0.3;
};

int cmd_degrade(const Common& c, const DegradeArgs& a) {
  auto cfg = resolve_config(c);
  require_dir(a.input, "--in");
  validate_layout(a.input);
  const fs::path out_root = cfg.output_dir;
  std::optional<FlickerSpec> flicker;
  if (!a.flicker.empty()) {
    FlickerSpec spec;
    if (a.flicker == "brightness") {
      spec.kind = FlickerKind::brightness;
    } else if (a.flicker == "pixel") {
      spec.kind = FlickerKind::pixel;
    } else {
      throw ConfigError("--flicker must be 'brightness' or 'pixel'");
    }
    spec.probability = a.probability;
    spec.validate();
    flicker = spec;
  }
  if (!flicker && cfg.stage2.codec.mode == CodecMode::external && cfg.stage2.codec.binary.empty() &&
      !std::getenv(kCodecEnvVar)) {
    throw ExternalToolError(std::string("external codec requested but no binary configured (set ") + kCodecEnvVar +
                            ")");
  }
  const auto ids = list_videos(a.input);
  if (c.dry_run) {
    std::cout << json{{"valid", true}, {"videos", ids.size()}}.dump() << "\n";
    return kOk;
  }
  std::vector<json> records(ids.size());
  parallel_for(ids.size(), c.workers, [&](size_t i) {
    try {
      VideoMeta meta;
      auto video = read_video_dir(fs::path(a.input) / ids[i], &meta);
      // Per-video stream so results do not depend on the worker count.
      std::mt19937_64 rng(cfg.seed * 0x9e3779b97f4a7c15ULL + i + 1);
      json extra = meta.extra;
      VideoTensor out;
      if (flicker) {
        auto spec = *flicker;
        spec.seed = rng();
        auto r = apply_flicker(video, spec);
        out = r.video;
        extra["flicker"] = {{"kind", a.flicker},
                            {"probability", spec.probability},
                            {"selected", r.selected},
                            {"proxy", r.proxy},
                            {"seed", spec.seed}};
      } else {
        auto params = sample_params(rng, cfg.stage2.degradation);
        auto r = degrade_video(video, params, cfg.stage2.codec);
        out = r.video;
        extra["degradation"] = {{"params", r.params}, {"codec_proxy", r.codec_proxy}};
      }
      write_video_dir(out_root / ids[i], out, meta.provenance.empty() ? "degraded" : meta.provenance,
                      extra);
      records[i] = {{"video", ids[i]}, {"record", extra.contains("flicker") ? extra["flicker"] : extra["degradation"]}};
    } catch (...) {
      rethrow_for("video " + ids[i]);
    }
  });
  auto manifest = run_manifest("degrade", cfg);
  manifest["input"] = a.input;
  manifest["videos"] = records;
  write_json(out_root / "degrade_manifest.json", manifest);
  return kOk;
}

struct CurateArgs {
  std::string input, detections;
  std::optional<double> min_motion;
};

int cmd_curate(const Common& c, const CurateArgs& a) {
  auto cfg = resolve_config(c);
  require_dir(a.input, "--in");
  validate_layout(a.input);
  const std::string det_dir = a.detections.empty() ? cfg.curate.detections : a.detections;
  require_dir(det_dir, "curate.detections");
  const fs::path out_root = cfg.output_dir;
  auto options = cfg.curate.options();
  if (a.min_motion) options.min_motion = *a.min_motion;
  const auto ids = list_videos(a.input);
  for (const auto& id : ids) {
    if (!fs::is_regular_file(fs::path(det_dir) / (id + ".json"))) {
      throw DataError("video " + id + ": no detection record in " + det_dir);
    }
  }
  if (c.dry_run) {
    std::cout << json{{"valid", true}, {"videos", ids.size()}}.dump() << "\n";
    return kOk;
  }
  std::vector<CurationReport> reports(ids.size());
  parallel_for(ids.size(), c.workers, [&](size_t i) {
    try {
      VideoMeta meta;
      auto video = read_video_dir(fs::path(a.input) / ids[i], &meta);
      auto det = RecordedDetections::load((fs::path(det_dir) / (ids[i] + ".json")).string());
      RecordedOcrClient ocr(det.text());
      auto out = curate_video(ids[i], video, det, det, ocr, options);
      reports[i] = out.report;
      if (out.report.kept() && out.cropped) {
        json extra = meta.extra;
        extra["curation"] = out.report;
        write_video_dir(out_root / "videos" / ids[i], *out.cropped, meta.provenance, extra);
      }
    } catch (...) {
      rethrow_for("video " + ids[i]);
    }
  });
  fs::create_directories(out_root);
  {
    std::ofstream jl(out_root / "reports.jsonl");
    std::ofstream kept(out_root / "kept.txt");
    for (const auto& r : reports) {
      jl << json(r).dump() << "\n";
      if (r.kept()) kept << r.video_id << "\n";
    }
  }
  const auto s = survivor_counts(reports);
  json survivors{{"input", s.input},
                 {"after_a", s.after_a},
                 {"after_b", s.after_b},
                 {"after_c", s.after_c},
                 {"after_motion", s.after_motion}};
  auto manifest = run_manifest("curate", cfg);
  manifest["input"] = a.input;
  manifest["detections"] = det_dir;
  manifest["survivors"] = survivors;
  write_json(out_root / "curate_manifest.json", manifest);
  std::cout << survivors.dump() << "\n";
  return kOk;
}

struct EvaluateArgs {
  std::string restored, reference;
  std::vector<std::string> metrics;  // name=command
};

int cmd_evaluate(const Common& c, const EvaluateArgs& a) {
  auto cfg = resolve_config(c);
  require_dir(a.restored, "--restored");
  require_dir(a.reference, "--reference");
  std::vector<std::shared_ptr<ExternalMetricClient>> clients;
  for (const auto& m : a.metrics) {
    const auto eq = m.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("--metric expects name=command, got '" + m + "'");
    clients.push_back(std::make_shared<CommandMetricClient>(m.substr(0, eq), m.substr(eq + 1)));
  }
  const auto ids = list_videos(a.reference);
  for (const auto& id : ids) {
    if (!fs::is_directory(fs::path(a.restored) / id)) throw DataError("video " + id + ": missing from restored set");
  }
  if (c.dry_run) {
    std::cout << json{{"valid", true}, {"videos", ids.size()}}.dump() << "\n";
    return kOk;
  }
  std::vector<MetricReport> reports(ids.size());
  parallel_for(ids.size(), c.workers, [&](size_t i) {
    try {
      auto restored = read_video_dir(fs::path(a.restored) / ids[i]);
      auto reference = read_video_dir(fs::path(a.reference) / ids[i]);
      reports[i] = evaluate_pair(ids[i], restored, reference, nullptr, clients);
    } catch (...) {
      rethrow_for("video " + ids[i]);
    }
  });
  json per_clip = json::array();
  for (const auto& r : reports) per_clip.push_back(r);
  auto agg = aggregate(reports);
  const fs::path out = cfg.output_dir;
  write_json(out / "metrics.json", {{"clips", per_clip}, {"aggregate", agg}});
  auto manifest = run_manifest("evaluate", cfg);
  manifest["restored"] = a.restored;
  manifest["reference"] = a.reference;
  write_json(out / "evaluate_manifest.json", manifest);
  std::cout << agg.dump() << "\n";
  return kOk;
}

struct ProfileArgs {
  std::string input, output;
  int64_t column = -1;
};

int cmd_profile(const Common& c, const ProfileArgs& a) {
  auto video = read_video_dir(a.input);
  const int64_t column = a.column < 0 ? video.width() / 2 : a.column;
  auto profile = temporal_profile(video, column);
  if (c.dry_run) return kOk;
  write_png(a.output, profile);
  return kOk;
}

struct SynthArgs {
  int64_t count = 4, frames = 24, size = 64;
  bool static_scene = false;
};

int cmd_synth(const Common& c, const SynthArgs& a) {
  SynthOptions opts;
  opts.frames = a.frames;
  opts.size = a.size;
  opts.static_scene = a.static_scene;
  const uint64_t seed = c.seed.value_or(0);
  if (c.out.empty()) throw ConfigError("synth requires --out");
  if (c.dry_run) return kOk;
  auto clips = synth_corpus(a.count, seed, opts);
  for (size_t i = 0; i < clips.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "clip%04zu", i);
    write_video_dir(fs::path(c.out) / name, clips[i], "synthetic", {{"seed", seed}, {"index", i}});
  }
  return kOk;
}

void add_common(CLI::App* cmd, Common& c, bool with_iters) {
  cmd->add_option("--config", c.config_path, "Run configuration file (JSON)");
  cmd->add_option("--seed", c.seed, "Override every seed in the configuration");
  cmd->add_option("--out", c.out, "Output directory (overrides output_dir)");
  cmd->add_flag("--dry-run", c.dry_run, "Validate configuration and inputs, then exit");
  if (with_iters) cmd->add_option("--iters", c.iters, "Override the iteration count")->check(CLI::NonNegativeNumber);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Video face enhancement toolkit"};
  app.require_subcommand(1);
  Common common;
  EnhanceArgs enhance_args;
  DegradeArgs degrade_args;
  CurateArgs curate_args;
  EvaluateArgs evaluate_args;
  ProfileArgs profile_args;
  SynthArgs synth_args;

  auto* show = app.add_subcommand("show-config", "Print the resolved configuration");
  add_common(show, common, false);

  auto* s1 = app.add_subcommand("train-stage1", "Train the HQ codec, codebooks and critic heads");
  add_common(s1, common, true);
  auto* s2 = app.add_subcommand("train-stage2", "Train the LQ encoder and lookup transformers");
  add_common(s2, common, true);

  auto* enh = app.add_subcommand("enhance", "Restore a low-quality video directory");
  add_common(enh, common, false);
  enh->add_option("--input", enhance_args.input, "Low-quality video directory")->required();
  enh->add_option("--output", enhance_args.output, "Output video directory")->required();
  enh->add_option("--stage1", enhance_args.stage1, "Stage-I checkpoint")->required();
  enh->add_option("--stage2", enhance_args.stage2, "Stage-II checkpoint")->required();
  enh->add_flag("--deflicker", enhance_args.deflicker, "Flickering input; same restoration path");

  auto* deg = app.add_subcommand("degrade", "Synthesize low-quality or flickering counterparts");
  add_common(deg, common, false);
  deg->add_option("--in", degrade_args.input, "Input dataset root")->required();
  deg->add_option("--flicker", degrade_args.flicker, "brightness | pixel");
  deg->add_option("--p", degrade_args.probability, "Per-frame flicker probability")->check(CLI::Range(0.0, 1.0));
  deg->add_option("--workers", common.workers, "Parallel videos")->check(CLI::PositiveNumber);

  auto* cur = app.add_subcommand("curate", "Crop and filter a raw dataset");
  add_common(cur, common, false);
  cur->add_option("--in", curate_args.input, "Input dataset root")->required();
  cur->add_option("--detections", curate_args.detections, "Directory of per-video detection records");
  cur->add_option("--min-motion", curate_args.min_motion, "Keep only videos with at least this motion intensity");
  cur->add_option("--workers", common.workers, "Parallel videos")->check(CLI::PositiveNumber);

  auto* ev = app.add_subcommand("evaluate", "Score restored videos against references");
  add_common(ev, common, false);
  ev->add_option("--restored", evaluate_args.restored, "Restored dataset root")->required();
  ev->add_option("--reference", evaluate_args.reference, "Reference dataset root")->required();
  ev->add_option("--metric", evaluate_args.metrics, "External metric as name=command (repeatable)");
  ev->add_option("--workers", common.workers, "Parallel videos")->check(CLI::PositiveNumber);

  auto* prof = app.add_subcommand("profile", "Render a temporal profile image");
  add_common(prof, common, false);
  prof->add_option("--input", profile_args.input, "Video directory")->required();
  prof->add_option("--output", profile_args.output, "PNG path")->required();
  prof->add_option("--column", profile_args.column, "Pixel column (default: centre)");

  auto* syn = app.add_subcommand("synth", "Write a synthetic face-like dataset");
  add_common(syn, common, false);
  syn->add_option("--count", synth_args.count, "Number of videos")->check(CLI::PositiveNumber);
  syn->add_option("--frames", synth_args.frames, "Frames per video")->check(CLI::PositiveNumber);
  syn->add_option("--size", synth_args.size, "Frame side in pixels")->check(CLI::PositiveNumber);
  syn->add_flag("--static", synth_args.static_scene, "Identical frames");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kConfig;
  }

  try {
    if (*show) return cmd_show_config(common);
    if (*s1) return cmd_train_stage1(common);
    if (*s2) return cmd_train_stage2(common);
    if (*enh) return cmd_enhance(common, enhance_args);
    if (*deg) return cmd_degrade(common, degrade_args);
    if (*cur) return cmd_curate(common, curate_args);
    if (*ev) return cmd_evaluate(common, evaluate_args);
    if (*prof) return cmd_profile(common, profile_args);
    if (*syn) return cmd_synth(common, synth_args);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const ExternalToolError& e) {
    std::cerr << "external tool error: " << e.what() << "\n";
    return kExternal;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  } catch (const ShapeError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFailure;
  }
  return kFailure;
}
