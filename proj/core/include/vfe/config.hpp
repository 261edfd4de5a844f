#pragma once

// Run configuration: one JSON file with a version field. Every key is
// optional and falls back to the defaults below; unknown keys are rejected.

#include <nlohmann/json.hpp>

#include <cstdint>
#include <string>

#include "vfe/curator.hpp"
#include "vfe/training.hpp"

namespace vfe {

inline constexpr int kConfigVersion = 1;

struct DataConfig {
  std::string train_root;
  std::string eval_root;
  int64_t clip_frames = 24;
  int64_t resolution = 512;  // square training frames
  int64_t eval_clips = 0;    // 0: all
};

void to_json(nlohmann::json& j, const DataConfig& c);
void from_json(const nlohmann::json& j, DataConfig& c);

struct CurateConfig {
  double margin = 0.2;
  int64_t target_size = 512;
  double motion_threshold = 10.0 / 255.0;
  double min_motion = -1.0;  // negative: no motion filter
  double text_confidence = 0.5;
  int64_t text_stride = 1;
  double side_fraction = 0.5;
  std::string detections;  // per-video fixture directory: <dir>/<video>.json

  CurationOptions options() const;
};

void to_json(nlohmann::json& j, const CurateConfig& c);
void from_json(const nlohmann::json& j, CurateConfig& c);

struct RunConfig {
  int version = kConfigVersion;
  std::string output_dir = "runs/default";
  uint64_t seed = 0;
  DataConfig data;
  ModelConfig model;
  LossWeights loss;
  Stage1Config stage1;
  Stage2Config stage2;
  std::string stage1_checkpoint;  // required by train-stage2
  CurateConfig curate;

  void validate() const;
};

void to_json(nlohmann::json& j, const RunConfig& c);
// Applies defaults, rejects unknown keys and a wrong version.
RunConfig parse_config(const nlohmann::json& j);
RunConfig load_config(const std::string& path);

// Throws ConfigError naming the first key of `given` that `schema` lacks, recursing into objects.
void reject_unknown_keys(const nlohmann::json& given, const nlohmann::json& schema, const std::string& where = "");

std::string config_hash(const RunConfig& c);

}  // namespace vfe
