#include "vfe/synthetic.hpp"

#include <cmath>
#include <random>

namespace vfe {

namespace {

// Soft inside-mask of an axis-aligned ellipse.
torch::Tensor ellipse(const torch::Tensor& x, const torch::Tensor& y, double cx, double cy, double rx, double ry,
                      double softness) {
  auto d = ((x - cx) / rx).square() + ((y - cy) / ry).square();
  return torch::sigmoid((1.0 - d) / softness);
}

}  // namespace

VideoTensor synth_clip(uint64_t seed, const SynthOptions& o) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  auto lin = torch::linspace(0.0, 1.0, o.size, torch::kFloat64);
  auto y = lin.view({-1, 1}).expand({o.size, o.size});
  auto x = lin.view({1, -1}).expand({o.size, o.size});

  const double bg_r = 0.1 + 0.5 * u(rng), bg_g = 0.1 + 0.5 * u(rng), bg_b = 0.1 + 0.5 * u(rng);
  const double tilt = u(rng) * 0.4 - 0.2;
  const double skin_r = 0.65 + 0.3 * u(rng), skin_g = 0.45 + 0.25 * u(rng), skin_b = 0.35 + 0.2 * u(rng);
  const double cx0 = 0.4 + 0.2 * u(rng), cy0 = 0.4 + 0.2 * u(rng);
  const double rx = 0.2 + 0.08 * u(rng), ry = 0.26 + 0.08 * u(rng);
  const double phase = 6.283185307179586 * u(rng);
  const double speed = o.static_scene ? 0.0 : 0.5 + u(rng);
  const double mouth_open = 0.2 + 0.6 * u(rng);

  std::vector<torch::Tensor> frames;
  for (int64_t t = 0; t < o.frames; ++t) {
    const double s = speed * static_cast<double>(t) / std::max<int64_t>(o.frames - 1, 1);
    const double cx = cx0 + o.max_shift * std::sin(phase + 3.0 * s);
    const double cy = cy0 + o.max_shift * std::cos(phase + 2.0 * s);
    auto bg = torch::stack({bg_r + tilt * (x - 0.5), bg_g + tilt * (y - 0.5), bg_b + 0.0 * x}, -1);
    auto head = ellipse(x, y, cx, cy, rx, ry, 0.08);
    auto shade = 1.0 - 0.35 * ((x - cx + 0.3 * rx).square() + (y - cy + 0.3 * ry).square()) / (rx * ry * 4.0);
    auto skin = torch::stack({skin_r * shade, skin_g * shade, skin_b * shade}, -1);
    auto img = bg * (1.0 - head.unsqueeze(-1)) + skin * head.unsqueeze(-1);
    const double ey = cy - 0.3 * ry, ex = 0.4 * rx;
    auto eyes = ellipse(x, y, cx - ex, ey, 0.18 * rx, 0.1 * ry, 0.1) + ellipse(x, y, cx + ex, ey, 0.18 * rx, 0.1 * ry, 0.1);
    const double open = mouth_open * (0.6 + 0.4 * std::sin(phase + 5.0 * s));
    auto mouth = ellipse(x, y, cx, cy + 0.45 * ry, 0.35 * rx, 0.05 * ry + 0.08 * ry * open, 0.1);
    auto dark = (eyes + mouth).clamp(0.0, 1.0).unsqueeze(-1);
    auto feature = torch::tensor({0.15, 0.08, 0.08}, torch::kFloat64);
    img = img * (1.0 - dark) + feature * dark;
    frames.push_back(img.clamp(0.0, 1.0).to(torch::kFloat32));
  }
  return VideoTensor::from_tensor(torch::stack(frames), 24.0);
}

std::vector<VideoTensor> synth_corpus(int64_t count, uint64_t seed, const SynthOptions& options) {
  std::mt19937_64 rng(seed);
  std::vector<VideoTensor> out;
  out.reserve(static_cast<size_t>(count));
  for (int64_t i = 0; i < count; ++i) out.push_back(synth_clip(rng(), options));
  return out;
}

VideoTensor constant_clip(int64_t frames, int64_t height, int64_t width, float r, float g, float b) {
  auto px = torch::tensor({r, g, b}, torch::kFloat32);
  return VideoTensor::from_tensor(px.view({1, 1, 1, 3}).expand({frames, height, width, 3}).contiguous(), 24.0);
}

}  // namespace vfe
