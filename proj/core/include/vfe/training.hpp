#pragma once

// Two-stage training and the enhancement path.
//
// Stage I learns the HQ encoder, decoder, both codebooks and the critic heads.
// Stage II freezes the decoder and codebooks, initialises the LQ encoder from
// the HQ encoder and trains it together with one lookup transformer per
// codebook, using the frozen HQ path as teacher.

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include <array>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "vfe/checkpoint.hpp"
#include "vfe/critic.hpp"
#include "vfe/degrade.hpp"
#include "vfe/evalkit.hpp"
#include "vfe/lookup.hpp"
#include "vfe/stcodec.hpp"
#include "vfe/stquant.hpp"
#include "vfe/types.hpp"

namespace vfe {

struct LossWeights {
  double beta = 0.25;
  double lambda_adv = 0.1;
  double lambda_ce = 1.0;
  // Toggles for ablations. L1 and the code loss are always on.
  bool perceptual = true;
  bool adversarial = true;
  bool kl = true;

  void validate() const;
};

void to_json(nlohmann::json& j, const LossWeights& w);
void from_json(const nlohmann::json& j, LossWeights& w);

void to_json(nlohmann::json& j, const ExtractorConfig& c);
void from_json(const nlohmann::json& j, ExtractorConfig& c);

struct ModelConfig {
  BackboneConfig backbone = BackboneConfig::standard();
  int64_t spatial_codes = 1024;
  int64_t temporal_codes = 1024;
  int64_t motion_window = 1;
  int64_t critic_hidden = 32;
  ExtractorConfig extractor;

  void validate() const;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

struct Stage1Config {
  int64_t iterations = 200000;
  int64_t batch_size = 1;
  double lr_generator = 1e-4;
  double lr_discriminator = 4e-4;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.99;
  int64_t adv_warmup = 500;
  int64_t log_every = 50;
  int64_t checkpoint_every = 0;  // 0: only the final checkpoint
  uint64_t seed = 0;

  void validate() const;
};

void to_json(nlohmann::json& j, const Stage1Config& c);
void from_json(const nlohmann::json& j, Stage1Config& c);

struct LookupShape {
  int64_t layers = 6;
  int64_t heads = 8;
  int64_t ff_mult = 4;
};

void to_json(nlohmann::json& j, const LookupShape& s);
void from_json(const nlohmann::json& j, LookupShape& s);

struct Stage2Config {
  int64_t iterations = 100000;
  int64_t batch_size = 1;
  double lr = 1e-4;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.99;
  double noise_free_fraction = 0.4;
  bool identity_degradation = false;
  DegradationRanges degradation;
  CodecOptions codec;
  LookupShape lookup;
  int64_t log_every = 50;
  int64_t checkpoint_every = 0;
  uint64_t seed = 0;

  void validate() const;
};

void to_json(nlohmann::json& j, const Stage2Config& c);
void from_json(const nlohmann::json& j, Stage2Config& c);

void to_json(nlohmann::json& j, const CodecOptions& c);
void from_json(const nlohmann::json& j, CodecOptions& c);

// Stacks clips into a [B, T, H, W, 3] batch.
torch::Tensor stack_clips(const std::vector<VideoTensor>& clips);

class Stage1Model {
 public:
  explicit Stage1Model(ModelConfig config, uint64_t seed = 0);

  const ModelConfig& config() const { return config_; }

  Encoder3d encoder{nullptr};
  Decoder3d decoder{nullptr};
  SpatialTemporalCodebooks codebooks{nullptr};
  HeadEnsemble heads{nullptr};
  std::shared_ptr<FeatureExtractor> extractor;

  std::vector<torch::Tensor> generator_parameters() const;
  LookupResult quantize(const torch::Tensor& z_h) const;
  // Encode, look up and decode a [B, T, H, W, 3] batch without gradients; output clamped.
  torch::Tensor reconstruct(const torch::Tensor& clips);

  TensorMap tensors() const;
  void load(const TensorMap& tensors);

 private:
  ModelConfig config_;
};

struct Stage1Terms {
  torch::Tensor l1, perceptual, code, kl_spatial, kl_temporal, adversarial, total;
  torch::Tensor discriminator;  // undefined while the adversarial term is inactive
  double real_score = 0.0, fake_score = 0.0;
  bool adversarial_active = false;
  LookupResult lookup;
  torch::Tensor reconstruction;  // [B, 3, T, H, W], unclamped
};

// All Stage-I terms for one [B, T, H, W, 3] batch; total = l1 + perceptual + code
// + kl_spatial + kl_temporal + lambda_adv * adversarial. The prior terms are the
// marginal KL scaled by the number of latent cells.
Stage1Terms stage1_terms(Stage1Model& model, const torch::Tensor& clips, const LossWeights& weights,
                         bool adversarial_active);

struct Stage1Report {
  int64_t iteration = 0;
  double l1 = 0, perceptual = 0, code = 0, kl_spatial = 0, kl_temporal = 0, adversarial = 0, discriminator = 0;
  double total = 0;
  double real_score = 0, fake_score = 0;
  double spatial_utilization = 0, temporal_utilization = 0;  // within the batch
  bool adversarial_active = false;
};

void to_json(nlohmann::json& j, const Stage1Report& r);

class Stage1Trainer {
 public:
  Stage1Trainer(Stage1Model& model, Stage1Config config, LossWeights weights);

  // One generator update followed, once the warm-up is over, by one critic update.
  Stage1Report step(const torch::Tensor& clips);
  int64_t iteration() const { return iteration_; }

 private:
  Stage1Model& model_;
  Stage1Config config_;
  LossWeights weights_;
  int64_t iteration_ = 0;
  std::unique_ptr<torch::optim::Adam> generator_opt_, critic_opt_;
};

using LogSink = std::function<void(const nlohmann::json&)>;
// Called with the number of completed iterations every config.checkpoint_every iterations.
using CheckpointSink = std::function<void(int64_t)>;

// Draws batches uniformly (with replacement) from `clips` using config.seed.
std::vector<Stage1Report> train_stage1(Stage1Model& model, const std::vector<VideoTensor>& clips,
                                       const Stage1Config& config, const LossWeights& weights,
                                       const LogSink& log = {}, const CheckpointSink& checkpoint = {});

// Hard-retrieval utilization of both codebooks over a corpus.
CodebookReport corpus_utilization(Stage1Model& model, const std::vector<VideoTensor>& clips);

enum class Phase { noise_free, full };

std::string_view to_string(Phase p);

// Iteration at which Stage II switches to full degradations.
int64_t phase_switch(int64_t total_iterations, double noise_free_fraction);
Phase incremental_phase(int64_t iteration, int64_t switch_iteration);

LookupConfig make_lookup_config(const ModelConfig& model, const LookupShape& shape, CodebookKind kind,
                                const std::array<int64_t, 3>& video_shape);

class Stage2Model {
 public:
  // The LQ encoder starts as a copy of the teacher's HQ encoder.
  Stage2Model(const Stage1Model& teacher, LookupShape shape, std::array<int64_t, 3> video_shape, uint64_t seed = 0);

  Encoder3d lq_encoder{nullptr};
  LookupTransformer spatial_lookup{nullptr};
  LookupTransformer temporal_lookup{nullptr};

  const LookupShape& shape() const { return shape_; }
  // Training clip (T, H, W); fixes the lookup sequence length.
  const std::array<int64_t, 3>& video_shape() const { return video_shape_; }

  std::vector<torch::Tensor> parameters() const;
  TensorMap tensors() const;
  void load(const TensorMap& tensors);

 private:
  LookupShape shape_;
  std::array<int64_t, 3> video_shape_;
};

struct Stage2Terms {
  torch::Tensor feature, ce_spatial, ce_temporal, total;
  double accuracy_spatial = 0.0, accuracy_temporal = 0.0;
};

// total = feature + lambda_ce * (ce_spatial + ce_temporal). Teacher runs without gradients.
Stage2Terms stage2_terms(Stage1Model& teacher, Stage2Model& student, const torch::Tensor& hq_clips,
                         const torch::Tensor& lq_clips, const LossWeights& weights);

struct Stage2Report {
  int64_t iteration = 0;
  Phase phase = Phase::noise_free;
  double feature = 0, ce_spatial = 0, ce_temporal = 0, total = 0;
  double accuracy_spatial = 0, accuracy_temporal = 0;
};

void to_json(nlohmann::json& j, const Stage2Report& r);

class Stage2Trainer {
 public:
  // Freezes every teacher parameter.
  Stage2Trainer(Stage1Model& teacher, Stage2Model& student, Stage2Config config, LossWeights weights);

  Stage2Report step(const std::vector<VideoTensor>& hq_clips);
  int64_t iteration() const { return iteration_; }
  // Low-quality counterpart of a clip under the phase of the current iteration.
  VideoTensor degrade_for_training(const VideoTensor& hq, Phase phase);

 private:
  Stage1Model& teacher_;
  Stage2Model& student_;
  Stage2Config config_;
  LossWeights weights_;
  int64_t iteration_ = 0;
  int64_t switch_;
  std::mt19937_64 rng_;
  std::unique_ptr<torch::optim::Adam> opt_;
};

std::vector<Stage2Report> train_stage2(Stage1Model& teacher, Stage2Model& student, const std::vector<VideoTensor>& clips,
                                       const Stage2Config& config, const LossWeights& weights,
                                       const LogSink& log = {}, const CheckpointSink& checkpoint = {});

// E_l -> split -> predict both branches -> assemble -> D_h. Deterministic.
VideoTensor enhance(Stage1Model& stage1, Stage2Model& stage2, const VideoTensor& lq);

void save_stage1(const std::string& path, const Stage1Model& model, int64_t iteration,
                 const nlohmann::json& extra = nlohmann::json::object());
// Rebuilds the model from the manifest. With `expected`, rejects mismatched ratios or latent size.
std::unique_ptr<Stage1Model> load_stage1(const std::string& path, const ModelConfig* expected = nullptr);

void save_stage2(const std::string& path, const Stage2Model& model, int64_t iteration,
                 const nlohmann::json& extra = nlohmann::json::object());
std::unique_ptr<Stage2Model> load_stage2(const std::string& path, const Stage1Model& stage1);

}  // namespace vfe
