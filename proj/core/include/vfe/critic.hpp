#pragma once

// Adversarial critic: a frozen multi-scale feature network plus trainable
// lightweight heads, one per feature scale. Frames are scored independently
// and averaged, so the critic is image-based.

#include <torch/script.h>
#include <torch/torch.h>

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "vfe/types.hpp"

namespace vfe {

// Frozen per-frame feature network. `extract` takes frames [N, 3, H, W] in
// [0, 1] and returns one feature map [N, C_k, h_k, w_k] per scale. Gradients
// flow to the input but never into the network's own weights.
class FeatureExtractor {
 public:
  virtual ~FeatureExtractor() = default;
  virtual std::vector<torch::Tensor> extract(const torch::Tensor& frames) const = 0;
  virtual std::vector<int64_t> channels() const = 0;
  virtual int64_t patch_size() const = 0;
  // Sum of all weights; used to audit that the network never changes.
  virtual double checksum() const = 0;
};

struct ExtractorConfig {
  std::string weights_path;  // TorchScript module; empty selects the fallback
  bool allow_fallback = true;
  int64_t patch_size = 4;    // fallback patch-embedding stride
  std::vector<int64_t> widths{16, 32, 64};
  uint64_t seed = 0x5eed;
};

// Randomly initialised convolutional pyramid with a fixed seed: patch
// embedding (kernel = stride = patch_size) followed by stride-2 convolutions.
class RandomPyramidExtractor : public FeatureExtractor {
 public:
  explicit RandomPyramidExtractor(const ExtractorConfig& config);

  std::vector<torch::Tensor> extract(const torch::Tensor& frames) const override;
  std::vector<int64_t> channels() const override { return widths_; }
  int64_t patch_size() const override { return patch_; }
  double checksum() const override;

 private:
  int64_t patch_;
  std::vector<int64_t> widths_;
  std::vector<torch::Tensor> weights_, biases_;
};

// Pretrained network exported as TorchScript; forward must return a list or
// tuple of feature maps.
class TorchScriptExtractor : public FeatureExtractor {
 public:
  TorchScriptExtractor(const std::string& path, int64_t patch_size);

  std::vector<torch::Tensor> extract(const torch::Tensor& frames) const override;
  std::vector<int64_t> channels() const override { return channels_; }
  int64_t patch_size() const override { return patch_; }
  double checksum() const override;

 private:
  mutable torch::jit::Module module_;
  int64_t patch_;
  std::vector<int64_t> channels_;
};

std::shared_ptr<FeatureExtractor> make_feature_extractor(const ExtractorConfig& config);

struct FeatureStack {
  std::vector<torch::Tensor> scales;  // each [T, C, h, w]
  int64_t num_frames() const { return scales.empty() ? 0 : scales.front().size(0); }
};

FeatureStack extract_features(const VideoTensor& video, const FeatureExtractor& extractor);

// Conv(3x3, stride 2) -> LeakyReLU -> Conv(1x1) producing a one-channel score map.
class CriticHeadImpl : public torch::nn::Module {
 public:
  CriticHeadImpl(int64_t in_channels, int64_t hidden);
  torch::Tensor forward(const torch::Tensor& features);
  void zero_();

 private:
  torch::nn::Conv2d conv1_{nullptr}, conv2_{nullptr};
};
TORCH_MODULE(CriticHead);

class HeadEnsembleImpl : public torch::nn::Module {
 public:
  HeadEnsembleImpl(const std::vector<int64_t>& scale_channels, int64_t hidden = 32);

  int64_t size() const { return static_cast<int64_t>(heads_.size()); }
  CriticHead head(int64_t k) const { return heads_.at(k); }
  // Sum over heads of each head's mean response (before the sign flip).
  torch::Tensor summed_response(const std::vector<torch::Tensor>& features);
  void zero_();

 private:
  std::vector<CriticHead> heads_;
};
TORCH_MODULE(HeadEnsemble);

// D(x) = -mean over frames/positions of sum_k head_k(F(x)). Frames layout [N, 3, H, W].
torch::Tensor discriminate_frames(const torch::Tensor& frames, const FeatureExtractor& extractor,
                                  HeadEnsemble& heads);
torch::Tensor discriminate(const VideoTensor& video, const FeatureExtractor& extractor, HeadEnsemble& heads);

struct AdversarialLosses {
  torch::Tensor generator;      // -log sigmoid(D(fake)), gradients reach fake
  torch::Tensor discriminator;  // -[log sigmoid(D(real)) + log(1 - sigmoid(D(fake)))], fake detached
  double real_score = 0.0;      // sigmoid(D(real))
  double fake_score = 0.0;
};

// Frames layout [N, 3, H, W]. Throws TrainingError on non-finite scores.
AdversarialLosses adversarial_losses_frames(const torch::Tensor& real, const torch::Tensor& fake,
                                            const FeatureExtractor& extractor, HeadEnsemble& heads);
AdversarialLosses adversarial_losses(const VideoTensor& real, const VideoTensor& fake,
                                     const FeatureExtractor& extractor, HeadEnsemble& heads);

// Unit-weight sum of per-scale mean squared feature differences.
torch::Tensor perceptual_loss(const torch::Tensor& real, const torch::Tensor& fake, const FeatureExtractor& extractor);

// [B, 3, T, H, W] -> [B*T, 3, H, W]
torch::Tensor frames_of(const torch::Tensor& clips_channels_first);

}  // namespace vfe
