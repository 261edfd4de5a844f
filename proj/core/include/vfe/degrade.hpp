#pragma once

// Low-quality input synthesis.
//
// degrade_video applies, per frame and with one parameter record per clip:
//   blur (Gaussian, size 2*ceil(3 sigma)+1) -> bicubic downscale by r
//   -> additive Gaussian noise (delta on the 0-255 scale) -> codec round trip
//   -> bicubic upscale to the input size.
// The codec stage runs either an external encoder binary (ffmpeg-compatible
// command line) or a deterministic blockwise-DCT quantization proxy.

#include <nlohmann/json.hpp>

#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "vfe/types.hpp"

namespace vfe {

struct Range {
  double lo = 0.0;
  double hi = 0.0;
};

struct DegradationRanges {
  Range sigma{2.0, 5.0};
  Range scale{2.0, 4.0};
  Range noise{0.0, 5.0};
  Range crf{18.0, 32.0};

  void validate() const;
};

void to_json(nlohmann::json& j, const DegradationRanges& r);
void from_json(const nlohmann::json& j, DegradationRanges& r);

struct DegradationParams {
  double sigma = 0.0;  // blur std-dev, pixels
  double scale = 1.0;  // down/up factor r
  double noise = 0.0;  // std-dev on the 0-255 scale
  int crf = 23;
  uint64_t seed = 0;

  bool operator==(const DegradationParams&) const = default;
};

void to_json(nlohmann::json& j, const DegradationParams& p);
void from_json(const nlohmann::json& j, DegradationParams& p);

// One uniform draw per field. noise_free forces noise = 0.
DegradationParams sample_params(std::mt19937_64& rng, const DegradationRanges& ranges, bool noise_free = false);

enum class CodecMode { proxy, external };

struct CodecOptions {
  CodecMode mode = CodecMode::proxy;
  std::string binary;  // external mode; falls back to $VFE_CODEC_BIN
  std::string codec = "libx264";
};

// Environment variable consulted for the external codec binary.
inline constexpr const char* kCodecEnvVar = "VFE_CODEC_BIN";

struct DegradeResult {
  VideoTensor video;
  DegradationParams params;
  bool codec_proxy = true;  // true: output is not what a real codec would produce
  int64_t low_height = 0, low_width = 0;
};

DegradeResult degrade_video(const VideoTensor& hq, const DegradationParams& params, const CodecOptions& codec = {});

// Individual stages, exposed for audits.
torch::Tensor gaussian_kernel1d(double sigma);                       // normalised, odd length
torch::Tensor gaussian_blur(const torch::Tensor& frames, double sigma);  // [N, 3, H, W]
torch::Tensor resize_bicubic(const torch::Tensor& frames, int64_t height, int64_t width);
std::pair<int64_t, int64_t> low_resolution(int64_t height, int64_t width, double scale);
torch::Tensor add_noise(const torch::Tensor& frames, double noise, uint64_t seed);
torch::Tensor proxy_codec(const torch::Tensor& frames, int crf);
torch::Tensor external_codec(const torch::Tensor& frames, int crf, double frame_rate, const CodecOptions& options);

enum class FlickerKind { brightness, pixel };

struct FlickerSpec {
  FlickerKind kind = FlickerKind::brightness;
  double probability = 0.3;
  Range gain{0.5, 1.5};
  Range bias{-0.1, 0.1};
  // Pixel flicker: target PSNR band of a perturbed frame against its source.
  Range psnr_db{25.0, 35.0};
  double warp_pixels = 1.5;  // amplitude of the smooth displacement field
  int64_t warp_grid = 4;     // control points per axis of the displacement field
  uint64_t seed = 0;

  void validate() const;
};

struct FlickerResult {
  VideoTensor video;
  std::vector<bool> selected;
  bool proxy = false;  // pixel flicker is a perturbation proxy, not generative re-rendering
};

FlickerResult brightness_flicker(const VideoTensor& video, const FlickerSpec& spec);
FlickerResult pixel_flicker(const VideoTensor& video, const FlickerSpec& spec);
FlickerResult apply_flicker(const VideoTensor& video, const FlickerSpec& spec);

}  // namespace vfe
