#include "vfe/critic.hpp"

#include <ATen/CPUGeneratorImpl.h>

#include <cmath>
#include <filesystem>
#include <sstream>

namespace vfe {

namespace {

namespace F = torch::nn::functional;

torch::Tensor leaky(const torch::Tensor& x) { return F::leaky_relu(x, F::LeakyReLUFuncOptions().negative_slope(0.2)); }

double tensor_sum(const std::vector<torch::Tensor>& ts) {
  double s = 0.0;
  for (const auto& t : ts) s += t.to(torch::kFloat64).sum().item<double>();
  return s;
}

}  // namespace

RandomPyramidExtractor::RandomPyramidExtractor(const ExtractorConfig& config)
    : patch_(config.patch_size), widths_(config.widths) {
  if (patch_ < 1 || widths_.empty()) throw ConfigError("fallback extractor needs patch_size >= 1 and widths");
  auto gen = at::make_generator<at::CPUGeneratorImpl>(config.seed);
  int64_t in = 3;
  for (size_t i = 0; i < widths_.size(); ++i) {
    const int64_t k = i == 0 ? patch_ : 3;
    const double std = std::sqrt(2.0 / static_cast<double>(in * k * k));
    weights_.push_back(torch::randn({widths_[i], in, k, k}, gen, torch::kFloat32) * std);
    biases_.push_back(torch::zeros({widths_[i]}));
    in = widths_[i];
  }
}

std::vector<torch::Tensor> RandomPyramidExtractor::extract(const torch::Tensor& frames) const {
  std::vector<torch::Tensor> out;
  auto h = frames * 2.0 - 1.0;
  for (size_t i = 0; i < weights_.size(); ++i) {
    auto w = weights_[i].to(h.dtype());
    auto b = biases_[i].to(h.dtype());
    h = i == 0 ? F::conv2d(h, w, F::Conv2dFuncOptions().bias(b).stride(patch_))
               : F::conv2d(h, w, F::Conv2dFuncOptions().bias(b).stride(2).padding(1));
    h = leaky(h);
    out.push_back(h);
  }
  return out;
}

double RandomPyramidExtractor::checksum() const { return tensor_sum(weights_) + tensor_sum(biases_); }

TorchScriptExtractor::TorchScriptExtractor(const std::string& path, int64_t patch_size) : patch_(patch_size) {
  if (!std::filesystem::exists(path)) throw ConfigError("feature extractor weights not found: " + path);
  try {
    module_ = torch::jit::load(path);
  } catch (const c10::Error& e) {
    throw ConfigError("cannot load feature extractor '" + path + "': " + e.what_without_backtrace());
  }
  module_.eval();
  for (auto p : module_.parameters()) p.set_requires_grad(false);
  torch::NoGradGuard no_grad;
  for (const auto& f : extract(torch::zeros({1, 3, patch_ * 4, patch_ * 4}))) channels_.push_back(f.size(1));
}

std::vector<torch::Tensor> TorchScriptExtractor::extract(const torch::Tensor& frames) const {
  auto out = module_.forward({frames});
  std::vector<torch::Tensor> feats;
  if (out.isTensor()) {
    feats.push_back(out.toTensor());
  } else if (out.isTuple()) {
    for (const auto& v : out.toTupleRef().elements()) feats.push_back(v.toTensor());
  } else if (out.isList()) {
    for (const auto& v : out.toListRef()) feats.push_back(v.toTensor());
  } else {
    throw ConfigError("feature extractor must return a tensor, tuple or list of tensors");
  }
  return feats;
}

double TorchScriptExtractor::checksum() const {
  std::vector<torch::Tensor> ps;
  for (const auto& p : module_.parameters()) ps.push_back(p);
  return tensor_sum(ps);
}

std::shared_ptr<FeatureExtractor> make_feature_extractor(const ExtractorConfig& config) {
  if (!config.weights_path.empty()) return std::make_shared<TorchScriptExtractor>(config.weights_path, config.patch_size);
  if (!config.allow_fallback) {
    throw ConfigError("no pretrained feature extractor configured and the fallback extractor is disabled");
  }
  return std::make_shared<RandomPyramidExtractor>(config);
}

FeatureStack extract_features(const VideoTensor& video, const FeatureExtractor& extractor) {
  return {extractor.extract(video.frames.permute({0, 3, 1, 2}))};
}

CriticHeadImpl::CriticHeadImpl(int64_t in_channels, int64_t hidden) {
  conv1_ = register_module(
      "conv1", torch::nn::Conv2d(torch::nn::Conv2dOptions(in_channels, hidden, 3).stride(2).padding(1)));
  conv2_ = register_module("conv2", torch::nn::Conv2d(torch::nn::Conv2dOptions(hidden, 1, 1)));
}

torch::Tensor CriticHeadImpl::forward(const torch::Tensor& features) {
  return conv2_->forward(leaky(conv1_->forward(features)));
}

void CriticHeadImpl::zero_() {
  torch::NoGradGuard no_grad;
  for (auto& p : parameters()) p.zero_();
}

HeadEnsembleImpl::HeadEnsembleImpl(const std::vector<int64_t>& scale_channels, int64_t hidden) {
  if (scale_channels.empty()) throw ConfigError("head ensemble needs at least one scale");
  for (size_t k = 0; k < scale_channels.size(); ++k) {
    heads_.push_back(register_module("head" + std::to_string(k), CriticHead(scale_channels[k], hidden)));
  }
}

torch::Tensor HeadEnsembleImpl::summed_response(const std::vector<torch::Tensor>& features) {
  if (features.size() != heads_.size()) {
    throw ConfigError("critic has " + std::to_string(heads_.size()) + " heads but the extractor yields " +
                      std::to_string(features.size()) + " scales");
  }
  torch::Tensor total;
  for (size_t k = 0; k < heads_.size(); ++k) {
    auto r = heads_[k]->forward(features[k]).mean();
    total = total.defined() ? total + r : r;
  }
  return total;
}

void HeadEnsembleImpl::zero_() {
  for (auto& h : heads_) h->zero_();
}

torch::Tensor discriminate_frames(const torch::Tensor& frames, const FeatureExtractor& extractor,
                                  HeadEnsemble& heads) {
  return -heads->summed_response(extractor.extract(frames));
}

torch::Tensor discriminate(const VideoTensor& video, const FeatureExtractor& extractor, HeadEnsemble& heads) {
  return discriminate_frames(video.frames.permute({0, 3, 1, 2}), extractor, heads);
}

AdversarialLosses adversarial_losses_frames(const torch::Tensor& real, const torch::Tensor& fake,
                                            const FeatureExtractor& extractor, HeadEnsemble& heads) {
  auto d_real = discriminate_frames(real.detach(), extractor, heads);
  auto d_fake_detached = discriminate_frames(fake.detach(), extractor, heads);
  auto d_fake = discriminate_frames(fake, extractor, heads);
  const double r = d_real.item<double>(), f = d_fake.item<double>();
  if (!std::isfinite(r) || !std::isfinite(f)) {
    std::ostringstream os;
    os << "non-finite critic scores: D(real) = " << r << ", D(fake) = " << f;
    throw TrainingError(os.str());
  }
  AdversarialLosses out;
  // -log sigmoid(a) = softplus(-a); -log(1 - sigmoid(b)) = softplus(b)
  out.discriminator = F::softplus(-d_real) + F::softplus(d_fake_detached);
  out.generator = F::softplus(-d_fake);
  out.real_score = 1.0 / (1.0 + std::exp(-r));
  out.fake_score = 1.0 / (1.0 + std::exp(-f));
  return out;
}

AdversarialLosses adversarial_losses(const VideoTensor& real, const VideoTensor& fake,
                                     const FeatureExtractor& extractor, HeadEnsemble& heads) {
  return adversarial_losses_frames(real.frames.permute({0, 3, 1, 2}), fake.frames.permute({0, 3, 1, 2}), extractor,
                                   heads);
}

torch::Tensor perceptual_loss(const torch::Tensor& real, const torch::Tensor& fake, const FeatureExtractor& extractor) {
  std::vector<torch::Tensor> target;
  {
    torch::NoGradGuard no_grad;
    target = extractor.extract(real);
  }
  auto pred = extractor.extract(fake);
  torch::Tensor total;
  for (size_t k = 0; k < pred.size(); ++k) {
    auto term = torch::mse_loss(pred[k], target[k]);
    total = total.defined() ? total + term : term;
  }
  return total;
}

torch::Tensor frames_of(const torch::Tensor& clips_channels_first) {
  const auto s = clips_channels_first.sizes();
  return clips_channels_first.transpose(1, 2).reshape({s[0] * s[2], s[1], s[3], s[4]});
}

}  // namespace vfe
