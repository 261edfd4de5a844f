#include "vfe/types.hpp"

namespace vfe {

std::string_view to_string(CodebookKind kind) {
  return kind == CodebookKind::spatial ? "spatial" : "temporal";
}

VideoTensor VideoTensor::from_tensor(torch::Tensor frames, double frame_rate) {
  if (frames.dim() != 4 || frames.size(3) != 3) {
    throw ShapeError("video must have layout [T, H, W, 3], got " + c10::str(frames.sizes()));
  }
  if (frames.size(0) < 1) throw ShapeError("video must hold at least one frame");
  if (!frames.is_floating_point()) frames = frames.to(torch::kFloat32);
  if (!torch::isfinite(frames).all().item<bool>()) throw DataError("video holds non-finite values");
  return VideoTensor{frames.clamp(0.0, 1.0), frame_rate};
}

void check_latent(const LatentGrid& z, std::string_view what) {
  if (!z.values.defined() || (z.values.dim() != 4 && z.values.dim() != 5)) {
    throw ShapeError(std::string(what) + ": latent must have layout [t, h, w, D] or [B, t, h, w, D]");
  }
}

void check_codebook(const Codebook& c) {
  if (!c.items.defined() || c.items.dim() != 2) throw ShapeError("codebook must have layout [N, D]");
  if (c.items.size(0) < 2) throw ConfigError("codebook needs at least two items");
}

torch::Tensor to_channels_first(const torch::Tensor& clips) { return clips.permute({0, 4, 1, 2, 3}); }

torch::Tensor to_channels_last(const torch::Tensor& clips) { return clips.permute({0, 2, 3, 4, 1}); }

}  // namespace vfe
