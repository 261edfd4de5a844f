#pragma once

// 3D convolutional encoder/decoder backbone.
//
// Encoders map a [B, 3, T, H, W] batch in [0, 1] to a channels-last latent
// [B, T/temporal_ratio, H/spatial_ratio, W/spatial_ratio, D]. Decoders mirror
// the encoder layout with nearest upsampling in place of strided convolution.
// All convolutions pad by edge replication, so a clip that is constant along
// time stays constant along time through the whole network.

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include <cstdint>
#include <string>
#include <vector>

#include "vfe/types.hpp"

namespace vfe {

enum class BlockKind { residual, downsample, attention };

struct BlockSpec {
  BlockKind kind = BlockKind::residual;
  // Output width for residual/downsample blocks; ignored by attention.
  int64_t channels = 0;
  int64_t spatial_stride = 1;
  int64_t temporal_stride = 1;

  bool operator==(const BlockSpec&) const = default;
};

struct BackboneConfig {
  int64_t spatial_ratio = 8;
  int64_t temporal_ratio = 2;
  int64_t latent_dim = 256;
  int64_t stem_channels = 64;
  std::vector<BlockSpec> blocks;

  // Three spatial 2x stages, temporal 2x on the middle one, attention at the bottleneck.
  static BackboneConfig standard(int64_t latent_dim = 256, std::vector<int64_t> widths = {128, 256, 256},
                                 int64_t stem_channels = 64);

  void validate() const;
  bool operator==(const BackboneConfig&) const = default;
};

void to_json(nlohmann::json& j, const BackboneConfig& c);
void from_json(const nlohmann::json& j, BackboneConfig& c);

enum class BackboneRole { hq_encoder, lq_encoder, decoder };

// Conv3d preceded by replicate padding of (kernel-1)/2 on every axis.
class ReplicateConv3dImpl : public torch::nn::Module {
 public:
  ReplicateConv3dImpl(int64_t in, int64_t out, int64_t kernel, std::vector<int64_t> stride = {1, 1, 1});
  torch::Tensor forward(const torch::Tensor& x);

 private:
  int64_t pad_;
  torch::nn::Conv3d conv_{nullptr};
};
TORCH_MODULE(ReplicateConv3d);

class ResidualBlock3dImpl : public torch::nn::Module {
 public:
  ResidualBlock3dImpl(int64_t in, int64_t out);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  torch::nn::GroupNorm norm1_{nullptr}, norm2_{nullptr};
  ReplicateConv3d conv1_{nullptr}, conv2_{nullptr};
  torch::nn::Conv3d skip_{nullptr};
};
TORCH_MODULE(ResidualBlock3d);

// Single-head self-attention over the spatial positions of each frame slice.
class ConvAttention3dImpl : public torch::nn::Module {
 public:
  explicit ConvAttention3dImpl(int64_t channels);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  torch::nn::GroupNorm norm_{nullptr};
  torch::nn::Conv3d q_{nullptr}, k_{nullptr}, v_{nullptr}, proj_{nullptr};
};
TORCH_MODULE(ConvAttention3d);

class Upsample3dImpl : public torch::nn::Module {
 public:
  Upsample3dImpl(int64_t in, int64_t out, int64_t spatial_stride, int64_t temporal_stride);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  int64_t spatial_stride_, temporal_stride_;
  ReplicateConv3d conv_{nullptr};
};
TORCH_MODULE(Upsample3d);

class Encoder3dImpl : public torch::nn::Module {
 public:
  Encoder3dImpl(BackboneConfig config, BackboneRole role = BackboneRole::hq_encoder);

  // [B, 3, T, H, W] in [0, 1] -> [B, t, h, w, D].
  torch::Tensor forward(const torch::Tensor& x);

  const BackboneConfig& config() const { return config_; }
  BackboneRole role() const { return role_; }

 private:
  BackboneConfig config_;
  BackboneRole role_;
  ReplicateConv3d stem_{nullptr};
  torch::nn::Sequential body_{nullptr};
  torch::nn::GroupNorm norm_out_{nullptr};
  torch::nn::Conv3d to_latent_{nullptr};
};
TORCH_MODULE(Encoder3d);

class Decoder3dImpl : public torch::nn::Module {
 public:
  explicit Decoder3dImpl(BackboneConfig config);

  // [B, t, h, w, D] -> [B, 3, T, H, W], unclamped, nominally in [0, 1].
  torch::Tensor forward(const torch::Tensor& z);

  const BackboneConfig& config() const { return config_; }

 private:
  BackboneConfig config_;
  torch::nn::Conv3d from_latent_{nullptr};
  torch::nn::Sequential body_{nullptr};
  torch::nn::GroupNorm norm_out_{nullptr};
  ReplicateConv3d to_rgb_{nullptr};
};
TORCH_MODULE(Decoder3d);

Encoder3d build_encoder(const BackboneConfig& config, BackboneRole role = BackboneRole::hq_encoder);
Decoder3d build_decoder(const BackboneConfig& config);

int64_t parameter_count(const torch::nn::Module& m);

// Throws ShapeError naming the first axis that is not divisible by its ratio.
void check_divisible(const BackboneConfig& config, int64_t frames, int64_t height, int64_t width);

LatentGrid encode(Encoder3d& encoder, const VideoTensor& video);
VideoTensor decode(Decoder3d& decoder, const LatentGrid& z_q);

}  // namespace vfe
