#include "vfe/training.hpp"

#include <cmath>
#include <sstream>

namespace vfe {

namespace {

torch::Tensor zero_scalar() { return torch::zeros({}, torch::kFloat32); }

// Summed (not averaged) similarity mass: the normalised KL times the cell count,
// up to a constant. Latents are detached so only codebook items move.
torch::Tensor prior_term(const LatentGrid& latents, const Codebook& codebook) {
  return marginal_prior_kl(LatentGrid{latents.values.detach()}, codebook).kl * static_cast<double>(latents.cells());
}

void require(bool ok, const std::string& message) {
  if (!ok) throw ConfigError(message);
}

std::vector<torch::Tensor> params_of(const torch::nn::Module& m) { return m.parameters(true); }

void append(std::vector<torch::Tensor>& out, const std::vector<torch::Tensor>& more) {
  out.insert(out.end(), more.begin(), more.end());
}

double accuracy(const CodeIndexGrid& predicted, const CodeIndexGrid& truth) {
  return predicted.indices.eq(truth.indices).to(torch::kFloat64).mean().item<double>();
}

template <class T>
void get_if(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

void LossWeights::validate() const {
  require(beta >= 0 && lambda_adv >= 0 && lambda_ce >= 0, "loss weights must be non-negative");
}

void to_json(nlohmann::json& j, const LossWeights& w) {
  j = {{"beta", w.beta},           {"lambda_adv", w.lambda_adv},   {"lambda_ce", w.lambda_ce},
       {"perceptual", w.perceptual}, {"adversarial", w.adversarial}, {"kl", w.kl}};
}

void from_json(const nlohmann::json& j, LossWeights& w) {
  get_if(j, "beta", w.beta);
  get_if(j, "lambda_adv", w.lambda_adv);
  get_if(j, "lambda_ce", w.lambda_ce);
  get_if(j, "perceptual", w.perceptual);
  get_if(j, "adversarial", w.adversarial);
  get_if(j, "kl", w.kl);
}

void to_json(nlohmann::json& j, const ExtractorConfig& c) {
  j = {{"weights_path", c.weights_path},
       {"allow_fallback", c.allow_fallback},
       {"patch_size", c.patch_size},
       {"widths", c.widths},
       {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, ExtractorConfig& c) {
  get_if(j, "weights_path", c.weights_path);
  get_if(j, "allow_fallback", c.allow_fallback);
  get_if(j, "patch_size", c.patch_size);
  get_if(j, "widths", c.widths);
  get_if(j, "seed", c.seed);
}

void ModelConfig::validate() const {
  backbone.validate();
  require(spatial_codes > 0 && temporal_codes > 0, "codebook sizes must be positive");
  require(motion_window >= 1, "motion window must be at least 1");
  require(critic_hidden > 0, "critic hidden width must be positive");
  require(extractor.patch_size > 0 && !extractor.widths.empty(), "extractor needs a patch size and widths");
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = {{"backbone", c.backbone},
       {"spatial_codes", c.spatial_codes},
       {"temporal_codes", c.temporal_codes},
       {"motion_window", c.motion_window},
       {"critic_hidden", c.critic_hidden},
       {"extractor", c.extractor}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  get_if(j, "backbone", c.backbone);
  get_if(j, "spatial_codes", c.spatial_codes);
  get_if(j, "temporal_codes", c.temporal_codes);
  get_if(j, "motion_window", c.motion_window);
  get_if(j, "critic_hidden", c.critic_hidden);
  get_if(j, "extractor", c.extractor);
}

void Stage1Config::validate() const {
  require(iterations >= 0, "stage1.iterations must be >= 0");
  require(batch_size >= 1, "stage1.batch_size must be >= 1");
  require(lr_generator > 0 && lr_discriminator > 0, "stage1 learning rates must be positive");
  require(adam_beta1 >= 0 && adam_beta1 < 1 && adam_beta2 >= 0 && adam_beta2 < 1, "stage1 Adam betas must be in [0, 1)");
  require(adv_warmup >= 0 && log_every >= 1 && checkpoint_every >= 0, "stage1 schedule values out of range");
}

void to_json(nlohmann::json& j, const Stage1Config& c) {
  j = {{"iterations", c.iterations},         {"batch_size", c.batch_size},       {"lr_generator", c.lr_generator},
       {"lr_discriminator", c.lr_discriminator}, {"adam_beta1", c.adam_beta1},     {"adam_beta2", c.adam_beta2},
       {"adv_warmup", c.adv_warmup},         {"log_every", c.log_every},         {"checkpoint_every", c.checkpoint_every},
       {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, Stage1Config& c) {
  get_if(j, "iterations", c.iterations);
  get_if(j, "batch_size", c.batch_size);
  get_if(j, "lr_generator", c.lr_generator);
  get_if(j, "lr_discriminator", c.lr_discriminator);
  get_if(j, "adam_beta1", c.adam_beta1);
  get_if(j, "adam_beta2", c.adam_beta2);
  get_if(j, "adv_warmup", c.adv_warmup);
  get_if(j, "log_every", c.log_every);
  get_if(j, "checkpoint_every", c.checkpoint_every);
  get_if(j, "seed", c.seed);
}

void to_json(nlohmann::json& j, const LookupShape& s) {
  j = {{"layers", s.layers}, {"heads", s.heads}, {"ff_mult", s.ff_mult}};
}

void from_json(const nlohmann::json& j, LookupShape& s) {
  get_if(j, "layers", s.layers);
  get_if(j, "heads", s.heads);
  get_if(j, "ff_mult", s.ff_mult);
}

void to_json(nlohmann::json& j, const CodecOptions& c) {
  j = {{"mode", c.mode == CodecMode::proxy ? "proxy" : "external"}, {"binary", c.binary}, {"codec", c.codec}};
}

void from_json(const nlohmann::json& j, CodecOptions& c) {
  if (j.contains("mode")) {
    const auto m = j.at("mode").get<std::string>();
    if (m == "proxy") {
      c.mode = CodecMode::proxy;
    } else if (m == "external") {
      c.mode = CodecMode::external;
    } else {
      throw ConfigError("codec.mode must be 'proxy' or 'external', got '" + m + "'");
    }
  }
  get_if(j, "binary", c.binary);
  get_if(j, "codec", c.codec);
}

void Stage2Config::validate() const {
  require(iterations >= 0, "stage2.iterations must be >= 0");
  require(batch_size >= 1, "stage2.batch_size must be >= 1");
  require(lr > 0, "stage2.lr must be positive");
  require(adam_beta1 >= 0 && adam_beta1 < 1 && adam_beta2 >= 0 && adam_beta2 < 1, "stage2 Adam betas must be in [0, 1)");
  require(noise_free_fraction >= 0 && noise_free_fraction <= 1, "stage2.noise_free_fraction must be in [0, 1]");
  require(lookup.layers >= 1 && lookup.heads >= 1 && lookup.ff_mult >= 1, "lookup shape values must be positive");
  require(log_every >= 1 && checkpoint_every >= 0, "stage2 schedule values out of range");
  degradation.validate();
}

void to_json(nlohmann::json& j, const Stage2Config& c) {
  j = {{"iterations", c.iterations},
       {"batch_size", c.batch_size},
       {"lr", c.lr},
       {"adam_beta1", c.adam_beta1},
       {"adam_beta2", c.adam_beta2},
       {"noise_free_fraction", c.noise_free_fraction},
       {"identity_degradation", c.identity_degradation},
       {"degradation", c.degradation},
       {"codec", c.codec},
       {"lookup", c.lookup},
       {"log_every", c.log_every},
       {"checkpoint_every", c.checkpoint_every},
       {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, Stage2Config& c) {
  get_if(j, "iterations", c.iterations);
  get_if(j, "batch_size", c.batch_size);
  get_if(j, "lr", c.lr);
  get_if(j, "adam_beta1", c.adam_beta1);
  get_if(j, "adam_beta2", c.adam_beta2);
  get_if(j, "noise_free_fraction", c.noise_free_fraction);
  get_if(j, "identity_degradation", c.identity_degradation);
  get_if(j, "degradation", c.degradation);
  get_if(j, "codec", c.codec);
  get_if(j, "lookup", c.lookup);
  get_if(j, "log_every", c.log_every);
  get_if(j, "checkpoint_every", c.checkpoint_every);
  get_if(j, "seed", c.seed);
}

torch::Tensor stack_clips(const std::vector<VideoTensor>& clips) {
  if (clips.empty()) throw DataError("empty batch");
  std::vector<torch::Tensor> frames;
  frames.reserve(clips.size());
  for (const auto& c : clips) {
    if (c.frames.sizes() != clips.front().frames.sizes()) {
      throw ShapeError("batch clips differ in shape: " + c10::str(c.frames.sizes()) + " vs " +
                       c10::str(clips.front().frames.sizes()));
    }
    frames.push_back(c.frames);
  }
  return torch::stack(frames);
}

// ---------------------------------------------------------------------------
// Stage I

Stage1Model::Stage1Model(ModelConfig config, uint64_t seed) : config_(std::move(config)) {
  config_.validate();
  torch::manual_seed(seed);
  encoder = build_encoder(config_.backbone, BackboneRole::hq_encoder);
  decoder = build_decoder(config_.backbone);
  codebooks = SpatialTemporalCodebooks(config_.spatial_codes, config_.temporal_codes, config_.backbone.latent_dim);
  extractor = make_feature_extractor(config_.extractor);
  heads = HeadEnsemble(extractor->channels(), config_.critic_hidden);
}

std::vector<torch::Tensor> Stage1Model::generator_parameters() const {
  std::vector<torch::Tensor> out = params_of(*encoder);
  append(out, params_of(*decoder));
  append(out, params_of(*codebooks));
  return out;
}

LookupResult Stage1Model::quantize(const torch::Tensor& z_h) const {
  return st_lookup(LatentGrid{z_h}, codebooks->spatial(), codebooks->temporal(), config_.motion_window);
}

torch::Tensor Stage1Model::reconstruct(const torch::Tensor& clips) {
  torch::NoGradGuard no_grad;
  auto x = to_channels_first(clips);
  const auto s = x.sizes();
  check_divisible(config_.backbone, s[2], s[3], s[4]);
  auto z_h = encoder->forward(x);
  auto res = quantize(z_h);
  return to_channels_last(decoder->forward(res.z_q.values)).clamp(0.0, 1.0);
}

TensorMap Stage1Model::tensors() const {
  TensorMap out;
  collect_tensors(out, "encoder.hq", *encoder);
  collect_tensors(out, "decoder.hq", *decoder);
  collect_tensors(out, "codebook", *codebooks);
  collect_tensors(out, "critic.heads", *heads);
  return out;
}

void Stage1Model::load(const TensorMap& tensors) {
  restore_tensors(tensors, "encoder.hq", *encoder);
  restore_tensors(tensors, "decoder.hq", *decoder);
  restore_tensors(tensors, "codebook", *codebooks);
  restore_tensors(tensors, "critic.heads", *heads);
}

Stage1Terms stage1_terms(Stage1Model& model, const torch::Tensor& clips, const LossWeights& weights,
                         bool adversarial_active) {
  weights.validate();
  auto x = to_channels_first(clips);
  const auto s = x.sizes();
  check_divisible(model.config().backbone, s[2], s[3], s[4]);

  Stage1Terms t;
  auto z_h = model.encoder->forward(x);
  t.lookup = model.quantize(z_h);
  auto z = straight_through(LatentGrid{z_h}, t.lookup.z_q);
  t.reconstruction = model.decoder->forward(z.values);

  t.l1 = (x - t.reconstruction).abs().mean();
  auto real_frames = frames_of(x), fake_frames = frames_of(t.reconstruction);
  t.perceptual = weights.perceptual ? perceptual_loss(real_frames, fake_frames, *model.extractor) : zero_scalar();
  t.code = code_loss(LatentGrid{z_h}, t.lookup.z_q, weights.beta);
  if (weights.kl) {
    t.kl_spatial = prior_term(t.lookup.split.spatial, model.codebooks->spatial());
    t.kl_temporal = prior_term(t.lookup.split.temporal, model.codebooks->temporal());
  } else {
    t.kl_spatial = zero_scalar();
    t.kl_temporal = zero_scalar();
  }
  t.adversarial_active = weights.adversarial && adversarial_active;
  if (t.adversarial_active) {
    auto adv = adversarial_losses_frames(real_frames, fake_frames, *model.extractor, model.heads);
    t.adversarial = adv.generator;
    t.discriminator = adv.discriminator;
    t.real_score = adv.real_score;
    t.fake_score = adv.fake_score;
  } else {
    t.adversarial = zero_scalar();
  }
  t.total = t.l1 + t.perceptual + t.code + t.kl_spatial + t.kl_temporal + weights.lambda_adv * t.adversarial;
  return t;
}

void to_json(nlohmann::json& j, const Stage1Report& r) {
  j = {{"stage", "I"},
       {"iteration", r.iteration},
       {"l1", r.l1},
       {"perceptual", r.perceptual},
       {"code", r.code},
       {"kl_spatial", r.kl_spatial},
       {"kl_temporal", r.kl_temporal},
       {"adversarial", r.adversarial},
       {"discriminator", r.discriminator},
       {"total", r.total},
       {"real_score", r.real_score},
       {"fake_score", r.fake_score},
       {"spatial_utilization", r.spatial_utilization},
       {"temporal_utilization", r.temporal_utilization},
       {"adversarial_active", r.adversarial_active}};
}

Stage1Trainer::Stage1Trainer(Stage1Model& model, Stage1Config config, LossWeights weights)
    : model_(model), config_(config), weights_(weights) {
  config_.validate();
  weights_.validate();
  const auto betas = std::make_tuple(config_.adam_beta1, config_.adam_beta2);
  generator_opt_ = std::make_unique<torch::optim::Adam>(
      model_.generator_parameters(), torch::optim::AdamOptions(config_.lr_generator).betas(betas));
  critic_opt_ = std::make_unique<torch::optim::Adam>(params_of(*model_.heads),
                                                     torch::optim::AdamOptions(config_.lr_discriminator).betas(betas));
}

Stage1Report Stage1Trainer::step(const torch::Tensor& clips) {
  const bool adv_on = iteration_ >= config_.adv_warmup;
  auto t = stage1_terms(model_, clips, weights_, adv_on);

  Stage1Report r;
  r.iteration = iteration_;
  r.l1 = t.l1.item<double>();
  r.perceptual = t.perceptual.item<double>();
  r.code = t.code.item<double>();
  r.kl_spatial = t.kl_spatial.item<double>();
  r.kl_temporal = t.kl_temporal.item<double>();
  r.adversarial = t.adversarial.item<double>();
  r.total = t.total.item<double>();
  r.real_score = t.real_score;
  r.fake_score = t.fake_score;
  r.adversarial_active = t.adversarial_active;
  const auto n_s = model_.config().spatial_codes, n_t = model_.config().temporal_codes;
  r.spatial_utilization = utilization(t.lookup.spatial_indices, n_s);
  r.temporal_utilization = utilization(t.lookup.temporal_indices, n_t);

  if (!std::isfinite(r.total)) {
    std::ostringstream os;
    os << "non-finite Stage-I loss at iteration " << iteration_ << ": l1=" << r.l1 << " perceptual=" << r.perceptual
       << " code=" << r.code << " kl_spatial=" << r.kl_spatial << " kl_temporal=" << r.kl_temporal
       << " adversarial=" << r.adversarial;
    throw TrainingError(os.str());
  }

  generator_opt_->zero_grad();
  critic_opt_->zero_grad();
  t.total.backward();
  generator_opt_->step();

  if (t.adversarial_active) {
    critic_opt_->zero_grad();
    t.discriminator.backward();
    critic_opt_->step();
    r.discriminator = t.discriminator.item<double>();
  }
  ++iteration_;
  return r;
}

std::vector<Stage1Report> train_stage1(Stage1Model& model, const std::vector<VideoTensor>& clips,
                                       const Stage1Config& config, const LossWeights& weights, const LogSink& log,
                                       const CheckpointSink& checkpoint) {
  if (clips.empty()) throw DataError("Stage I needs at least one training clip");
  Stage1Trainer trainer(model, config, weights);
  std::mt19937_64 rng(config.seed);
  std::uniform_int_distribution<size_t> pick(0, clips.size() - 1);
  std::vector<Stage1Report> reports;
  reports.reserve(static_cast<size_t>(config.iterations));
  for (int64_t i = 0; i < config.iterations; ++i) {
    std::vector<VideoTensor> batch;
    for (int64_t b = 0; b < config.batch_size; ++b) batch.push_back(clips[pick(rng)]);
    reports.push_back(trainer.step(stack_clips(batch)));
    if (log && (i % config.log_every == 0 || i + 1 == config.iterations)) log(reports.back());
    if (checkpoint && config.checkpoint_every > 0 && (i + 1) % config.checkpoint_every == 0) checkpoint(i + 1);
  }
  return reports;
}

CodebookReport corpus_utilization(Stage1Model& model, const std::vector<VideoTensor>& clips) {
  torch::NoGradGuard no_grad;
  UtilizationAccumulator acc(model.config().spatial_codes, model.config().temporal_codes);
  for (const auto& c : clips) {
    auto z_h = model.encoder->forward(to_channels_first(c.frames.unsqueeze(0)));
    auto res = model.quantize(z_h);
    acc.add(res.spatial_indices, res.temporal_indices);
  }
  return acc.report();
}

// ---------------------------------------------------------------------------
// Stage II

std::string_view to_string(Phase p) { return p == Phase::noise_free ? "noise_free" : "full"; }

int64_t phase_switch(int64_t total_iterations, double noise_free_fraction) {
  return static_cast<int64_t>(std::floor(noise_free_fraction * static_cast<double>(total_iterations)));
}

Phase incremental_phase(int64_t iteration, int64_t switch_iteration) {
  return iteration < switch_iteration ? Phase::noise_free : Phase::full;
}

LookupConfig make_lookup_config(const ModelConfig& model, const LookupShape& shape, CodebookKind kind,
                                const std::array<int64_t, 3>& video_shape) {
  check_divisible(model.backbone, video_shape[0], video_shape[1], video_shape[2]);
  LookupConfig c;
  c.layers = shape.layers;
  c.heads = shape.heads;
  c.ff_mult = shape.ff_mult;
  c.dim = model.backbone.latent_dim;
  c.codebook_size = kind == CodebookKind::spatial ? model.spatial_codes : model.temporal_codes;
  c.grid = {video_shape[0] / model.backbone.temporal_ratio, video_shape[1] / model.backbone.spatial_ratio,
            video_shape[2] / model.backbone.spatial_ratio};
  c.validate();
  return c;
}

Stage2Model::Stage2Model(const Stage1Model& teacher, LookupShape shape, std::array<int64_t, 3> video_shape,
                         uint64_t seed)
    : shape_(shape), video_shape_(video_shape) {
  const auto& mc = teacher.config();
  torch::manual_seed(seed);
  lq_encoder = build_encoder(mc.backbone, BackboneRole::lq_encoder);
  TensorMap hq;
  collect_tensors(hq, "e", *teacher.encoder);
  restore_tensors(hq, "e", *lq_encoder);
  spatial_lookup = LookupTransformer(make_lookup_config(mc, shape, CodebookKind::spatial, video_shape),
                                     CodebookKind::spatial);
  temporal_lookup = LookupTransformer(make_lookup_config(mc, shape, CodebookKind::temporal, video_shape),
                                      CodebookKind::temporal);
}

std::vector<torch::Tensor> Stage2Model::parameters() const {
  std::vector<torch::Tensor> out = params_of(*lq_encoder);
  append(out, params_of(*spatial_lookup));
  append(out, params_of(*temporal_lookup));
  return out;
}

TensorMap Stage2Model::tensors() const {
  TensorMap out;
  collect_tensors(out, "encoder.lq", *lq_encoder);
  collect_tensors(out, "lookup.spatial", *spatial_lookup);
  collect_tensors(out, "lookup.temporal", *temporal_lookup);
  return out;
}

void Stage2Model::load(const TensorMap& tensors) {
  restore_tensors(tensors, "encoder.lq", *lq_encoder);
  restore_tensors(tensors, "lookup.spatial", *spatial_lookup);
  restore_tensors(tensors, "lookup.temporal", *temporal_lookup);
}

Stage2Terms stage2_terms(Stage1Model& teacher, Stage2Model& student, const torch::Tensor& hq_clips,
                         const torch::Tensor& lq_clips, const LossWeights& weights) {
  weights.validate();
  LookupResult gt;
  {
    torch::NoGradGuard no_grad;
    gt = teacher.quantize(teacher.encoder->forward(to_channels_first(hq_clips)));
  }
  auto z_l = LatentGrid{student.lq_encoder->forward(to_channels_first(lq_clips))};
  auto split = split_latents(z_l, teacher.config().motion_window);
  auto pred_s = predict_codes(split.spatial, student.spatial_lookup);
  auto pred_t = predict_codes(split.temporal, student.temporal_lookup);

  Stage2Terms t;
  t.feature = stage2_code_loss(z_l, gt.z_q);
  t.ce_spatial = cross_entropy_codes(pred_s.logits, gt.spatial_indices);
  t.ce_temporal = cross_entropy_codes(pred_t.logits, gt.temporal_indices);
  t.total = t.feature + weights.lambda_ce * (t.ce_spatial + t.ce_temporal);
  t.accuracy_spatial = accuracy(pred_s.indices, gt.spatial_indices);
  t.accuracy_temporal = accuracy(pred_t.indices, gt.temporal_indices);
  return t;
}

void to_json(nlohmann::json& j, const Stage2Report& r) {
  j = {{"stage", "II"},
       {"iteration", r.iteration},
       {"phase", to_string(r.phase)},
       {"feature", r.feature},
       {"ce_spatial", r.ce_spatial},
       {"ce_temporal", r.ce_temporal},
       {"total", r.total},
       {"accuracy_spatial", r.accuracy_spatial},
       {"accuracy_temporal", r.accuracy_temporal}};
}

Stage2Trainer::Stage2Trainer(Stage1Model& teacher, Stage2Model& student, Stage2Config config, LossWeights weights)
    : teacher_(teacher),
      student_(student),
      config_(std::move(config)),
      weights_(weights),
      switch_(phase_switch(config_.iterations, config_.noise_free_fraction)),
      rng_(config_.seed) {
  config_.validate();
  weights_.validate();
  for (auto& p : teacher_.generator_parameters()) p.set_requires_grad(false);
  for (auto& p : params_of(*teacher_.heads)) p.set_requires_grad(false);
  opt_ = std::make_unique<torch::optim::Adam>(
      student_.parameters(),
      torch::optim::AdamOptions(config_.lr).betas(std::make_tuple(config_.adam_beta1, config_.adam_beta2)));
}

VideoTensor Stage2Trainer::degrade_for_training(const VideoTensor& hq, Phase phase) {
  if (config_.identity_degradation) return hq;
  auto params = sample_params(rng_, config_.degradation, phase == Phase::noise_free);
  return degrade_video(hq, params, config_.codec).video;
}

Stage2Report Stage2Trainer::step(const std::vector<VideoTensor>& hq_clips) {
  Stage2Report r;
  r.iteration = iteration_;
  r.phase = incremental_phase(iteration_, switch_);
  std::vector<VideoTensor> lq;
  lq.reserve(hq_clips.size());
  for (const auto& c : hq_clips) lq.push_back(degrade_for_training(c, r.phase));

  auto t = stage2_terms(teacher_, student_, stack_clips(hq_clips), stack_clips(lq), weights_);
  r.feature = t.feature.item<double>();
  r.ce_spatial = t.ce_spatial.item<double>();
  r.ce_temporal = t.ce_temporal.item<double>();
  r.total = t.total.item<double>();
  r.accuracy_spatial = t.accuracy_spatial;
  r.accuracy_temporal = t.accuracy_temporal;
  if (!std::isfinite(r.total)) {
    std::ostringstream os;
    os << "non-finite Stage-II loss at iteration " << iteration_ << ": feature=" << r.feature
       << " ce_spatial=" << r.ce_spatial << " ce_temporal=" << r.ce_temporal;
    throw TrainingError(os.str());
  }
  opt_->zero_grad();
  t.total.backward();
  opt_->step();
  ++iteration_;
  return r;
}

std::vector<Stage2Report> train_stage2(Stage1Model& teacher, Stage2Model& student, const std::vector<VideoTensor>& clips,
                                       const Stage2Config& config, const LossWeights& weights, const LogSink& log,
                                       const CheckpointSink& checkpoint) {
  if (clips.empty()) throw DataError("Stage II needs at least one training clip");
  Stage2Trainer trainer(teacher, student, config, weights);
  std::mt19937_64 rng(config.seed ^ 0x9e3779b97f4a7c15ULL);
  std::uniform_int_distribution<size_t> pick(0, clips.size() - 1);
  std::vector<Stage2Report> reports;
  reports.reserve(static_cast<size_t>(config.iterations));
  for (int64_t i = 0; i < config.iterations; ++i) {
    std::vector<VideoTensor> batch;
    for (int64_t b = 0; b < config.batch_size; ++b) batch.push_back(clips[pick(rng)]);
    reports.push_back(trainer.step(batch));
    if (log && (i % config.log_every == 0 || i + 1 == config.iterations)) log(reports.back());
    if (checkpoint && config.checkpoint_every > 0 && (i + 1) % config.checkpoint_every == 0) checkpoint(i + 1);
  }
  return reports;
}

VideoTensor enhance(Stage1Model& stage1, Stage2Model& stage2, const VideoTensor& lq) {
  torch::NoGradGuard no_grad;
  const auto& vs = stage2.video_shape();
  if (lq.height() != vs[1] || lq.width() != vs[2]) {
    throw ShapeError("enhance: input is " + std::to_string(lq.height()) + "x" + std::to_string(lq.width()) +
                     " but the lookup transformers were trained at " + std::to_string(vs[1]) + "x" +
                     std::to_string(vs[2]) + "; learnable position embeddings fix the resolution");
  }
  check_divisible(stage1.config().backbone, lq.num_frames(), lq.height(), lq.width());
  if (lq.num_frames() != vs[0]) {
    throw ShapeError("enhance: clip has " + std::to_string(lq.num_frames()) + " frames, the model was trained on " +
                     std::to_string(vs[0]) + "-frame windows");
  }
  auto z_l = LatentGrid{stage2.lq_encoder->forward(to_channels_first(lq.frames.unsqueeze(0)))};
  auto split = split_latents(z_l, stage1.config().motion_window);
  auto pred_s = predict_codes(split.spatial, stage2.spatial_lookup);
  auto pred_t = predict_codes(split.temporal, stage2.temporal_lookup);
  auto z_q = assemble_quantized(pred_s.indices, pred_t.indices, stage1.codebooks->spatial(),
                                stage1.codebooks->temporal());
  auto out = to_channels_last(stage1.decoder->forward(z_q.values)).squeeze(0);
  return VideoTensor::from_tensor(out, lq.frame_rate);
}

// ---------------------------------------------------------------------------
// Checkpoints

void save_stage1(const std::string& path, const Stage1Model& model, int64_t iteration, const nlohmann::json& extra) {
  Checkpoint ck;
  ck.manifest = extra;
  ck.manifest["stage"] = "I";
  ck.manifest["iteration"] = iteration;
  ck.manifest["model"] = model.config();
  ck.manifest["spatial_ratio"] = model.config().backbone.spatial_ratio;
  ck.manifest["temporal_ratio"] = model.config().backbone.temporal_ratio;
  ck.manifest["latent_dim"] = model.config().backbone.latent_dim;
  ck.manifest["extractor_checksum"] = model.extractor->checksum();
  ck.tensors = model.tensors();
  save_checkpoint(path, ck);
}

std::unique_ptr<Stage1Model> load_stage1(const std::string& path, const ModelConfig* expected) {
  auto ck = load_checkpoint(path);
  if (ck.manifest.value("stage", std::string()) != "I") throw DataError(path + " is not a Stage-I checkpoint");
  auto mc = ck.manifest.at("model").get<ModelConfig>();
  if (expected) {
    const auto& e = expected->backbone;
    if (e.spatial_ratio != mc.backbone.spatial_ratio || e.temporal_ratio != mc.backbone.temporal_ratio ||
        e.latent_dim != mc.backbone.latent_dim) {
      throw ConfigError("checkpoint " + path + " has ratios (spatial " + std::to_string(mc.backbone.spatial_ratio) +
                        ", temporal " + std::to_string(mc.backbone.temporal_ratio) + ", D " +
                        std::to_string(mc.backbone.latent_dim) + ") that do not match the configuration (spatial " +
                        std::to_string(e.spatial_ratio) + ", temporal " + std::to_string(e.temporal_ratio) + ", D " +
                        std::to_string(e.latent_dim) + ")");
    }
  }
  auto model = std::make_unique<Stage1Model>(mc);
  model->load(ck.tensors);
  return model;
}

void save_stage2(const std::string& path, const Stage2Model& model, int64_t iteration, const nlohmann::json& extra) {
  Checkpoint ck;
  ck.manifest = extra;
  ck.manifest["stage"] = "II";
  ck.manifest["iteration"] = iteration;
  ck.manifest["lookup"] = model.shape();
  ck.manifest["training_clip"] = {{"frames", model.video_shape()[0]},
                                  {"height", model.video_shape()[1]},
                                  {"width", model.video_shape()[2]}};
  ck.manifest["flatten_order"] = "t,h,w";
  ck.tensors = model.tensors();
  save_checkpoint(path, ck);
}

std::unique_ptr<Stage2Model> load_stage2(const std::string& path, const Stage1Model& stage1) {
  auto ck = load_checkpoint(path);
  if (ck.manifest.value("stage", std::string()) != "II") throw DataError(path + " is not a Stage-II checkpoint");
  if (ck.manifest.value("flatten_order", std::string()) != "t,h,w") {
    throw ConfigError(path + ": unsupported flattening order");
  }
  const auto& clip = ck.manifest.at("training_clip");
  std::array<int64_t, 3> shape{clip.at("frames").get<int64_t>(), clip.at("height").get<int64_t>(),
                               clip.at("width").get<int64_t>()};
  auto model = std::make_unique<Stage2Model>(stage1, ck.manifest.at("lookup").get<LookupShape>(), shape);
  model->load(ck.tensors);
  return model;
}

}  // namespace vfe
