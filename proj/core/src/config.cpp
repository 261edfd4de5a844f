#include "vfe/config.hpp"

#include <fstream>

namespace vfe {

namespace {

template <class T>
void get_if(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

void to_json(nlohmann::json& j, const DataConfig& c) {
  j = {{"train_root", c.train_root},
       {"eval_root", c.eval_root},
       {"clip_frames", c.clip_frames},
       {"resolution", c.resolution},
       {"eval_clips", c.eval_clips}};
}

void from_json(const nlohmann::json& j, DataConfig& c) {
  get_if(j, "train_root", c.train_root);
  get_if(j, "eval_root", c.eval_root);
  get_if(j, "clip_frames", c.clip_frames);
  get_if(j, "resolution", c.resolution);
  get_if(j, "eval_clips", c.eval_clips);
}

CurationOptions CurateConfig::options() const {
  CurationOptions o;
  o.crop.margin = margin;
  o.crop.target_size = target_size;
  o.motion_threshold = motion_threshold;
  if (min_motion >= 0) o.min_motion = min_motion;
  o.text.confidence = text_confidence;
  o.text.stride = text_stride;
  o.side_fraction = side_fraction;
  return o;
}

void to_json(nlohmann::json& j, const CurateConfig& c) {
  j = {{"margin", c.margin},
       {"target_size", c.target_size},
       {"motion_threshold", c.motion_threshold},
       {"min_motion", c.min_motion},
       {"text_confidence", c.text_confidence},
       {"text_stride", c.text_stride},
       {"side_fraction", c.side_fraction},
       {"detections", c.detections}};
}

void from_json(const nlohmann::json& j, CurateConfig& c) {
  get_if(j, "margin", c.margin);
  get_if(j, "target_size", c.target_size);
  get_if(j, "motion_threshold", c.motion_threshold);
  get_if(j, "min_motion", c.min_motion);
  get_if(j, "text_confidence", c.text_confidence);
  get_if(j, "text_stride", c.text_stride);
  get_if(j, "side_fraction", c.side_fraction);
  get_if(j, "detections", c.detections);
}

void RunConfig::validate() const {
  if (version != kConfigVersion) {
    throw ConfigError("config version " + std::to_string(version) + " is not supported (expected " +
                      std::to_string(kConfigVersion) + ")");
  }
  model.validate();
  loss.validate();
  stage1.validate();
  stage2.validate();
  if (data.clip_frames <= 0 || data.resolution <= 0 || data.eval_clips < 0) {
    throw ConfigError("data.clip_frames and data.resolution must be positive");
  }
  check_divisible(model.backbone, data.clip_frames, data.resolution, data.resolution);
  if (curate.margin < 0 || curate.target_size < 0 || curate.text_stride < 1 || curate.side_fraction < 0 ||
      curate.side_fraction > 1) {
    throw ConfigError("curate options out of range");
  }
  // Lookup transformer head split must divide the latent size.
  if (model.backbone.latent_dim % stage2.lookup.heads != 0) {
    throw ConfigError("stage2.lookup.heads must divide backbone.latent_dim");
  }
}

void to_json(nlohmann::json& j, const RunConfig& c) {
  j = {{"version", c.version},   {"output_dir", c.output_dir}, {"seed", c.seed},
       {"data", c.data},         {"model", c.model},           {"loss", c.loss},
       {"stage1", c.stage1},     {"stage2", c.stage2},         {"stage1_checkpoint", c.stage1_checkpoint},
       {"curate", c.curate}};
}

void reject_unknown_keys(const nlohmann::json& given, const nlohmann::json& schema, const std::string& where) {
  if (!given.is_object() || !schema.is_object()) return;
  for (const auto& [key, value] : given.items()) {
    const auto path = where.empty() ? key : where + "." + key;
    if (!schema.contains(key)) throw ConfigError("unknown config key '" + path + "'");
    reject_unknown_keys(value, schema.at(key), path);
  }
}

RunConfig parse_config(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  if (!j.contains("version")) throw ConfigError("config is missing the 'version' field");
  reject_unknown_keys(j, nlohmann::json(RunConfig{}));
  RunConfig c;
  try {
    get_if(j, "version", c.version);
    get_if(j, "output_dir", c.output_dir);
    get_if(j, "seed", c.seed);
    get_if(j, "data", c.data);
    get_if(j, "model", c.model);
    get_if(j, "loss", c.loss);
    get_if(j, "stage1", c.stage1);
    get_if(j, "stage2", c.stage2);
    get_if(j, "stage1_checkpoint", c.stage1_checkpoint);
    get_if(j, "curate", c.curate);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config value has the wrong type: ") + e.what());
  }
  c.validate();
  return c;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config " + path + " is not valid JSON: " + e.what());
  }
  return parse_config(j);
}

std::string config_hash(const RunConfig& c) { return hex64(fnv1a64(nlohmann::json(c).dump())); }

}  // namespace vfe
