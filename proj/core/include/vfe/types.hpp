#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace vfe {

// Error categories map onto CLI exit codes (see tools/vfe.cpp).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class ShapeError : public Error {
 public:
  using Error::Error;
};
class ConfigError : public Error {
 public:
  using Error::Error;
};
class DataError : public Error {
 public:
  using Error::Error;
};
class ExternalToolError : public Error {
 public:
  using Error::Error;
};
class TrainingError : public Error {
 public:
  using Error::Error;
};

enum class CodebookKind { spatial, temporal };

std::string_view to_string(CodebookKind kind);

// A clip of RGB frames, layout [T, H, W, 3], float32 in [0, 1].
struct VideoTensor {
  torch::Tensor frames;
  double frame_rate = 24.0;

  int64_t num_frames() const { return frames.size(0); }
  int64_t height() const { return frames.size(1); }
  int64_t width() const { return frames.size(2); }

  // Validates layout and clamps to [0, 1].
  static VideoTensor from_tensor(torch::Tensor frames, double frame_rate = 24.0);
};

// Compressed latent, layout [t, h, w, D] or batched [B, t, h, w, D].
struct LatentGrid {
  torch::Tensor values;

  int64_t dim() const { return values.size(-1); }
  bool batched() const { return values.dim() == 5; }
  // Number of grid cells (t*h*w, times B when batched).
  int64_t cells() const { return values.numel() / values.size(-1); }
};

// N x D learnable code items. `items` may alias a trainable parameter.
struct Codebook {
  torch::Tensor items;
  CodebookKind kind = CodebookKind::spatial;

  int64_t size() const { return items.size(0); }
  int64_t dim() const { return items.size(1); }
};

// Integer codebook indices, layout [t, h, w] or batched [B, t, h, w], int64.
struct CodeIndexGrid {
  torch::Tensor indices;
  CodebookKind kind = CodebookKind::spatial;
};

void check_latent(const LatentGrid& z, std::string_view what);
void check_codebook(const Codebook& c);

// Shorthand for a [B, 3, T, H, W] batch built from [B, T, H, W, 3] clips.
torch::Tensor to_channels_first(const torch::Tensor& clips);
torch::Tensor to_channels_last(const torch::Tensor& clips);

}  // namespace vfe
