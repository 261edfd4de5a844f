#include "vfe/degrade.hpp"

#include <ATen/CPUGeneratorImpl.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>

namespace vfe {

namespace {

namespace F = torch::nn::functional;
namespace fs = std::filesystem;

double unit_draw(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

double draw(std::mt19937_64& rng, const Range& r) { return r.lo + (r.hi - r.lo) * unit_draw(rng); }

void check_range(const Range& r, const char* name) {
  if (!(r.lo <= r.hi)) throw ConfigError(std::string("degradation range '") + name + "' has inverted bounds");
}

torch::Tensor dct_matrix() {
  auto c = torch::empty({8, 8}, torch::kFloat64);
  for (int k = 0; k < 8; ++k) {
    const double a = k == 0 ? std::sqrt(1.0 / 8.0) : std::sqrt(2.0 / 8.0);
    for (int n = 0; n < 8; ++n) c[k][n] = a * std::cos(std::numbers::pi * (2 * n + 1) * k / 16.0);
  }
  return c.to(torch::kFloat32);
}

torch::Tensor quant_steps(int crf) {
  // DC: mean level on the 8-bit grid. AC: step grows 2x every 6 CRF and with frequency.
  const double base = std::pow(2.0, (crf - 4) / 6.0) / 255.0;
  auto s = torch::empty({8, 8}, torch::kFloat32);
  for (int u = 0; u < 8; ++u) {
    for (int v = 0; v < 8; ++v) s[u][v] = (u == 0 && v == 0) ? 8.0 / 255.0 : base * (1.0 + 0.5 * (u + v));
  }
  return s;
}

torch::Tensor quantize_8bit(const torch::Tensor& x) { return torch::round(x.clamp(0.0, 1.0) * 255.0) / 255.0; }

double frame_psnr(const torch::Tensor& a, const torch::Tensor& b) {
  const double mse = (a.to(torch::kFloat64) - b.to(torch::kFloat64)).square().mean().item<double>();
  return mse <= 0.0 ? 100.0 : 10.0 * std::log10(1.0 / mse);
}

std::string shell_quote(const std::string& s) {
  std::string out = "'";
  for (char ch : s) out += ch == '\'' ? std::string("'\\''") : std::string(1, ch);
  return out + "'";
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void run_tool(const std::string& command, const fs::path& err_file, const std::string& stage) {
  const int rc = std::system((command + " 2> " + shell_quote(err_file.string())).c_str());
  if (rc != 0) {
    throw ExternalToolError("codec " + stage + " failed (exit status " + std::to_string(rc) +
                            "): " + slurp(err_file));
  }
}

}  // namespace

void DegradationRanges::validate() const {
  check_range(sigma, "sigma");
  check_range(scale, "scale");
  check_range(noise, "noise");
  check_range(crf, "crf");
  if (sigma.lo < 0 || scale.lo < 1 || noise.lo < 0 || crf.lo < 0 || crf.hi > 51) {
    throw ConfigError("degradation ranges outside their domains (sigma >= 0, r >= 1, delta >= 0, crf in [0, 51])");
  }
}

void to_json(nlohmann::json& j, const DegradationRanges& r) {
  auto pair = [](const Range& x) { return nlohmann::json::array({x.lo, x.hi}); };
  j = nlohmann::json{{"sigma", pair(r.sigma)}, {"scale", pair(r.scale)}, {"noise", pair(r.noise)}, {"crf", pair(r.crf)}};
}

void from_json(const nlohmann::json& j, DegradationRanges& r) {
  auto get = [&](const char* key, Range& out) {
    if (!j.contains(key)) return;
    const auto v = j.at(key).get<std::vector<double>>();
    if (v.size() != 2) throw ConfigError(std::string("degradation range '") + key + "' needs [lo, hi]");
    out = {v[0], v[1]};
  };
  get("sigma", r.sigma);
  get("scale", r.scale);
  get("noise", r.noise);
  get("crf", r.crf);
}

void to_json(nlohmann::json& j, const DegradationParams& p) {
  j = nlohmann::json{{"sigma", p.sigma}, {"scale", p.scale}, {"noise", p.noise}, {"crf", p.crf}, {"seed", p.seed}};
}

void from_json(const nlohmann::json& j, DegradationParams& p) {
  p.sigma = j.at("sigma").get<double>();
  p.scale = j.at("scale").get<double>();
  p.noise = j.at("noise").get<double>();
  p.crf = j.at("crf").get<int>();
  p.seed = j.value("seed", uint64_t{0});
}

DegradationParams sample_params(std::mt19937_64& rng, const DegradationRanges& ranges, bool noise_free) {
  ranges.validate();
  DegradationParams p;
  p.sigma = draw(rng, ranges.sigma);
  p.scale = draw(rng, ranges.scale);
  const double noise = draw(rng, ranges.noise);
  p.noise = noise_free ? 0.0 : noise;
  const auto lo = static_cast<int>(std::ceil(ranges.crf.lo));
  const auto hi = static_cast<int>(std::floor(ranges.crf.hi));
  p.crf = std::min(hi, lo + static_cast<int>(unit_draw(rng) * (hi - lo + 1)));
  p.seed = rng();
  return p;
}

torch::Tensor gaussian_kernel1d(double sigma) {
  if (sigma <= 0.0) return torch::ones({1});
  const auto radius = static_cast<int64_t>(std::ceil(3.0 * sigma));
  auto x = torch::arange(-radius, radius + 1, torch::kFloat64);
  auto k = torch::exp(-x.square() / (2.0 * sigma * sigma));
  return (k / k.sum()).to(torch::kFloat32);
}

torch::Tensor gaussian_blur(const torch::Tensor& frames, double sigma) {
  auto k = gaussian_kernel1d(sigma).to(frames.dtype());
  const int64_t r = (k.numel() - 1) / 2;
  if (r == 0) return frames.clone();
  const int64_t c = frames.size(1);
  auto kh = k.view({1, 1, 1, -1}).expand({c, 1, 1, k.numel()}).contiguous();
  auto kv = k.view({1, 1, -1, 1}).expand({c, 1, k.numel(), 1}).contiguous();
  auto y = F::pad(frames, F::PadFuncOptions({r, r, 0, 0}).mode(torch::kReplicate));
  y = F::conv2d(y, kh, F::Conv2dFuncOptions().groups(c));
  y = F::pad(y, F::PadFuncOptions({0, 0, r, r}).mode(torch::kReplicate));
  return F::conv2d(y, kv, F::Conv2dFuncOptions().groups(c));
}

torch::Tensor resize_bicubic(const torch::Tensor& frames, int64_t height, int64_t width) {
  if (frames.size(2) == height && frames.size(3) == width) return frames.clone();
  return F::interpolate(frames, F::InterpolateFuncOptions()
                                    .size(std::vector<int64_t>{height, width})
                                    .mode(torch::kBicubic)
                                    .align_corners(false));
}

std::pair<int64_t, int64_t> low_resolution(int64_t height, int64_t width, double scale) {
  auto even = [](double v) { return std::max<int64_t>(2, 2 * static_cast<int64_t>(std::llround(v / 2.0))); };
  return {even(height / scale), even(width / scale)};
}

torch::Tensor add_noise(const torch::Tensor& frames, double noise, uint64_t seed) {
  if (noise <= 0.0) return frames.clone();
  auto gen = at::make_generator<at::CPUGeneratorImpl>(seed);
  auto n = torch::randn(frames.sizes(), gen, frames.options());
  return (frames + n * (noise / 255.0)).clamp(0.0, 1.0);
}

torch::Tensor proxy_codec(const torch::Tensor& frames, int crf) {
  const int64_t n = frames.size(0), c = frames.size(1), h = frames.size(2), w = frames.size(3);
  const int64_t ph = (8 - h % 8) % 8, pw = (8 - w % 8) % 8;
  auto x = F::pad(frames.to(torch::kFloat32), F::PadFuncOptions({0, pw, 0, ph}).mode(torch::kReplicate));
  const int64_t bh = (h + ph) / 8, bw = (w + pw) / 8;
  auto blocks = x.view({n, c, bh, 8, bw, 8}).permute({0, 1, 2, 4, 3, 5});
  const auto d = dct_matrix();
  const auto step = quant_steps(crf);
  auto coef = torch::matmul(torch::matmul(d, blocks), d.t());
  coef = torch::round(coef / step) * step;
  auto rec = torch::matmul(torch::matmul(d.t(), coef), d);
  rec = rec.permute({0, 1, 2, 4, 3, 5}).reshape({n, c, bh * 8, bw * 8});
  return quantize_8bit(rec.slice(2, 0, h).slice(3, 0, w)).to(frames.dtype());
}

torch::Tensor external_codec(const torch::Tensor& frames, int crf, double frame_rate, const CodecOptions& options) {
  std::string binary = options.binary;
  if (binary.empty()) {
    if (const char* env = std::getenv(kCodecEnvVar)) binary = env;
  }
  if (binary.empty()) {
    throw ExternalToolError(std::string("external codec requested but no binary configured (set ") + kCodecEnvVar + ")");
  }
  const int64_t n = frames.size(0), h = frames.size(2), w = frames.size(3);
  std::mt19937_64 name_rng(std::random_device{}());
  const fs::path dir = fs::temp_directory_path() / ("vfe-codec-" + std::to_string(name_rng()));
  fs::create_directories(dir);
  struct Cleanup {
    fs::path p;
    ~Cleanup() {
      std::error_code ec;
      fs::remove_all(p, ec);
    }
  } cleanup{dir};

  auto bytes = (frames.clamp(0.0, 1.0) * 255.0).round().to(torch::kUInt8).permute({0, 2, 3, 1}).contiguous();
  {
    std::ofstream out(dir / "in.rgb", std::ios::binary);
    out.write(reinterpret_cast<const char*>(bytes.data_ptr<uint8_t>()), bytes.numel());
  }
  std::ostringstream enc;
  enc << shell_quote(binary) << " -y -loglevel error -f rawvideo -pix_fmt rgb24 -s " << w << "x" << h << " -r "
      << frame_rate << " -i " << shell_quote((dir / "in.rgb").string()) << " -c:v " << options.codec << " -crf "
      << crf << " -pix_fmt yuv420p " << shell_quote((dir / "enc.mp4").string());
  run_tool(enc.str(), dir / "err.txt", "encode");
  std::ostringstream dec;
  dec << shell_quote(binary) << " -y -loglevel error -i " << shell_quote((dir / "enc.mp4").string())
      << " -f rawvideo -pix_fmt rgb24 " << shell_quote((dir / "out.rgb").string());
  run_tool(dec.str(), dir / "err.txt", "decode");

  const std::string raw = slurp(dir / "out.rgb");
  if (static_cast<int64_t>(raw.size()) != n * h * w * 3) {
    throw ExternalToolError("codec returned " + std::to_string(raw.size()) + " bytes, expected " +
                            std::to_string(n * h * w * 3));
  }
  auto decoded = torch::from_blob(const_cast<char*>(raw.data()), {n, h, w, 3}, torch::kUInt8).clone();
  return (decoded.permute({0, 3, 1, 2}).to(frames.dtype()) / 255.0).contiguous();
}

DegradeResult degrade_video(const VideoTensor& hq, const DegradationParams& params, const CodecOptions& codec) {
  if (params.sigma < 0 || params.scale < 1 || params.noise < 0) throw ConfigError("invalid degradation parameters");
  const int64_t height = hq.height(), width = hq.width();
  const auto [lh, lw] = low_resolution(height, width, params.scale);
  auto x = hq.frames.permute({0, 3, 1, 2}).contiguous();
  x = gaussian_blur(x, params.sigma);
  x = resize_bicubic(x, lh, lw).clamp(0.0, 1.0);
  x = add_noise(x, params.noise, params.seed);
  const bool proxy = codec.mode == CodecMode::proxy;
  x = proxy ? proxy_codec(x, params.crf) : external_codec(x, params.crf, hq.frame_rate, codec);
  x = resize_bicubic(x, height, width).clamp(0.0, 1.0);
  DegradeResult r;
  r.video = VideoTensor{x.permute({0, 2, 3, 1}).contiguous(), hq.frame_rate};
  r.params = params;
  r.codec_proxy = proxy;
  r.low_height = lh;
  r.low_width = lw;
  return r;
}

// ---------------------------------------------------------------------------

void FlickerSpec::validate() const {
  if (probability < 0.0 || probability > 1.0) throw ConfigError("flicker probability must lie in [0, 1]");
  check_range(gain, "gain");
  check_range(bias, "bias");
  check_range(psnr_db, "psnr_db");
  if (warp_grid < 2) throw ConfigError("flicker warp_grid must be >= 2");
}

FlickerResult brightness_flicker(const VideoTensor& video, const FlickerSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  auto out = video.frames.clone();
  FlickerResult r;
  for (int64_t t = 0; t < video.num_frames(); ++t) {
    const bool pick = unit_draw(rng) < spec.probability;
    r.selected.push_back(pick);
    if (!pick) continue;
    const double gain = draw(rng, spec.gain);
    const double bias = draw(rng, spec.bias);
    out[t] = (video.frames[t] * gain + bias).clamp(0.0, 1.0);
  }
  r.video = VideoTensor{out, video.frame_rate};
  return r;
}

FlickerResult pixel_flicker(const VideoTensor& video, const FlickerSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  auto out = video.frames.clone();
  FlickerResult r;
  r.proxy = true;
  const int64_t h = video.height(), w = video.width();
  for (int64_t t = 0; t < video.num_frames(); ++t) {
    const bool pick = unit_draw(rng) < spec.probability;
    r.selected.push_back(pick);
    if (!pick) continue;
    const uint64_t frame_seed = rng();
    const double target = draw(rng, spec.psnr_db);
    auto gen = at::make_generator<at::CPUGeneratorImpl>(frame_seed);
    auto src = video.frames[t].permute({2, 0, 1}).unsqueeze(0);  // [1, 3, H, W]

    // Smooth displacement field in pixels, converted to normalised grid offsets.
    auto coarse = torch::rand({1, 2, spec.warp_grid, spec.warp_grid}, gen, torch::kFloat32) * 2.0 - 1.0;
    auto field = F::interpolate(coarse, F::InterpolateFuncOptions()
                                            .size(std::vector<int64_t>{h, w})
                                            .mode(torch::kBicubic)
                                            .align_corners(true)) *
                 spec.warp_pixels;
    auto ys = torch::linspace(-1.0, 1.0, h).view({h, 1}).expand({h, w});
    auto xs = torch::linspace(-1.0, 1.0, w).view({1, w}).expand({h, w});
    auto grid = torch::stack({xs + field[0][0] * (2.0 / w), ys + field[0][1] * (2.0 / h)}, -1).unsqueeze(0);
    auto warped = F::grid_sample(src, grid, F::GridSampleFuncOptions()
                                               .mode(torch::kBilinear)
                                               .padding_mode(torch::kBorder)
                                               .align_corners(true));
    auto texture = torch::randn(src.sizes(), gen, torch::kFloat32) * 0.02;
    auto delta = (warped - src) + texture;

    // Scale the perturbation so the frame lands at the drawn PSNR; error is monotone in the scale.
    auto apply = [&](double a) { return (src + delta * a).clamp(0.0, 1.0); };
    double lo = 0.0, hi = 1.0;
    while (frame_psnr(apply(hi), src) > target && hi < 1e4) hi *= 2.0;
    for (int i = 0; i < 50; ++i) {
      const double mid = 0.5 * (lo + hi);
      (frame_psnr(apply(mid), src) > target ? lo : hi) = mid;
    }
    out[t] = apply(hi).squeeze(0).permute({1, 2, 0});
  }
  r.video = VideoTensor{out, video.frame_rate};
  return r;
}

FlickerResult apply_flicker(const VideoTensor& video, const FlickerSpec& spec) {
  return spec.kind == FlickerKind::brightness ? brightness_flicker(video, spec) : pixel_flicker(video, spec);
}

}  // namespace vfe
