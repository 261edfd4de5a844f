#include <gtest/gtest.h>
#include <vfe/degrade.hpp>
#include <vfe/synthetic.hpp>

#include <cmath>
#include <cstdlib>

using namespace vfe;

namespace {

double psnr_db(const torch::Tensor& a, const torch::Tensor& b) {
  const double mse = (a.to(torch::kFloat64) - b.to(torch::kFloat64)).square().mean().item<double>();
  return 10.0 * std::log10(1.0 / mse);
}

}  // namespace

TEST(Sampling, DrawsStayInRanges) {
  std::mt19937_64 rng(9);
  DegradationRanges ranges;
  for (int i = 0; i < 1000; ++i) {
    auto p = sample_params(rng, ranges);
    EXPECT_GE(p.sigma, 2.0);
    EXPECT_LE(p.sigma, 5.0);
    EXPECT_GE(p.scale, 2.0);
    EXPECT_LE(p.scale, 4.0);
    EXPECT_GE(p.noise, 0.0);
    EXPECT_LE(p.noise, 5.0);
    EXPECT_GE(p.crf, 18);
    EXPECT_LE(p.crf, 32);
  }
}

TEST(Sampling, NoiseFreeForcesZeroNoise) {
  std::mt19937_64 rng(10);
  for (int i = 0; i < 1000; ++i) EXPECT_EQ(sample_params(rng, {}, true).noise, 0.0);
}

TEST(Sampling, InvertedRangeIsConfigError) {
  std::mt19937_64 rng(1);
  DegradationRanges r;
  r.sigma = {5.0, 2.0};
  EXPECT_THROW(sample_params(rng, r), ConfigError);
}

TEST(Kernel, LengthAndNormalisation) {
  for (double sigma : {0.3, 1.0, 2.0, 2.5, 5.0}) {
    auto k = gaussian_kernel1d(sigma);
    EXPECT_EQ(k.numel(), 2 * static_cast<int64_t>(std::ceil(3 * sigma)) + 1) << sigma;
    EXPECT_NEAR(k.sum().item<double>(), 1.0, 1e-6);
    const int64_t mid = k.numel() / 2;
    EXPECT_EQ(k.argmax().item<int64_t>(), mid);
    EXPECT_TRUE(torch::allclose(k, k.flip(0)));
  }
  EXPECT_EQ(gaussian_kernel1d(0.0).numel(), 1);
}

TEST(Blur, PreservesConstantFrames) {
  auto x = torch::full({1, 3, 12, 10}, 0.37);
  EXPECT_TRUE(torch::allclose(gaussian_blur(x, 3.0), x, 0, 1e-6));
}

TEST(LowResolution, RoundsToEvenSizes) {
  EXPECT_EQ(low_resolution(512, 512, 4.0), (std::pair<int64_t, int64_t>{128, 128}));
  EXPECT_EQ(low_resolution(64, 64, 3.0), (std::pair<int64_t, int64_t>{22, 22}));
  EXPECT_EQ(low_resolution(64, 48, 2.5), (std::pair<int64_t, int64_t>{26, 20}));
  EXPECT_EQ(low_resolution(4, 4, 4.0), (std::pair<int64_t, int64_t>{2, 2}));
}

TEST(Degrade, ConstantClipIsNearlyFixed) {
  std::mt19937_64 rng(4);
  auto clip = constant_clip(4, 32, 32, 0.25, 0.5, 0.75);
  for (int i = 0; i < 5; ++i) {
    auto p = sample_params(rng, {}, true);
    auto r = degrade_video(clip, p);
    EXPECT_EQ(r.video.frames.sizes(), clip.frames.sizes());
    EXPECT_LE((r.video.frames - clip.frames).abs().max().item<double>(), 1.0 / 255.0 + 1e-6);
    EXPECT_TRUE(r.codec_proxy);
  }
}

TEST(Degrade, DeterministicForFixedParams) {
  std::mt19937_64 rng(5);
  auto p = sample_params(rng, {});
  auto clip = synth_clip(3, {2, 32});
  EXPECT_TRUE(torch::equal(degrade_video(clip, p).video.frames, degrade_video(clip, p).video.frames));
}

TEST(Degrade, InvalidParamsRejected) {
  DegradationParams p;
  p.scale = 0.5;
  EXPECT_THROW(degrade_video(synth_clip(1, {2, 16}), p), ConfigError);
}

TEST(Degrade, ExternalCodecWithoutBinaryFails) {
  ::unsetenv(kCodecEnvVar);
  CodecOptions opts;
  opts.mode = CodecMode::external;
  DegradationParams p;
  p.scale = 2.0;
  EXPECT_THROW(degrade_video(synth_clip(1, {2, 16}), p, opts), ExternalToolError);
}

TEST(Degrade, FailingExternalCodecIsExternalToolError) {
  CodecOptions opts;
  opts.mode = CodecMode::external;
  opts.binary = "false";
  EXPECT_THROW(external_codec(torch::rand({1, 3, 8, 8}), 23, 24.0, opts), ExternalToolError);
}

TEST(ProxyCodec, HigherCrfLosesMoreDetail) {
  auto x = synth_clip(6, {1, 64}).frames.permute({0, 3, 1, 2}).contiguous();
  const double fine = psnr_db(proxy_codec(x, 18), x);
  const double coarse = psnr_db(proxy_codec(x, 40), x);
  EXPECT_GT(fine, coarse);
  auto q = proxy_codec(x, 23) * 255.0;
  EXPECT_TRUE(torch::allclose(q, q.round(), 0, 1e-3));
}

TEST(Noise, ZeroNoiseIsIdentityAndSeeded) {
  auto x = torch::rand({1, 3, 8, 8});
  EXPECT_TRUE(torch::equal(add_noise(x, 0.0, 1), x));
  EXPECT_TRUE(torch::equal(add_noise(x, 3.0, 7), add_noise(x, 3.0, 7)));
  EXPECT_FALSE(torch::equal(add_noise(x, 3.0, 7), add_noise(x, 3.0, 8)));
}

TEST(Flicker, BrightnessSelectedFramesOnly) {
  auto clip = synth_clip(8, {40, 16});
  FlickerSpec spec;
  spec.seed = 2;
  auto r = brightness_flicker(clip, spec);
  ASSERT_EQ(r.selected.size(), 40u);
  EXPECT_FALSE(r.proxy);
  int changed = 0;
  for (int64_t t = 0; t < 40; ++t) {
    const bool same = torch::equal(r.video.frames[t], clip.frames[t]);
    if (!r.selected[t]) EXPECT_TRUE(same) << t;
    changed += r.selected[t];
  }
  EXPECT_GT(changed, 0);
  EXPECT_LT(changed, 40);
}

TEST(Flicker, PixelFramesLandInPsnrBand) {
  auto clip = synth_clip(9, {12, 32});
  FlickerSpec spec;
  spec.kind = FlickerKind::pixel;
  spec.probability = 0.5;
  spec.seed = 4;
  auto r = apply_flicker(clip, spec);
  EXPECT_TRUE(r.proxy);
  int picked = 0;
  for (int64_t t = 0; t < 12; ++t) {
    if (!r.selected[t]) {
      EXPECT_TRUE(torch::equal(r.video.frames[t], clip.frames[t]));
      continue;
    }
    ++picked;
    const double db = psnr_db(r.video.frames[t], clip.frames[t]);
    EXPECT_GE(db, 25.0 - 0.05) << t;
    EXPECT_LE(db, 35.0 + 0.05) << t;
  }
  EXPECT_GT(picked, 0);
}

TEST(Flicker, InvalidProbabilityRejected) {
  FlickerSpec spec;
  spec.probability = 1.5;
  EXPECT_THROW(brightness_flicker(synth_clip(1, {2, 8}), spec), ConfigError);
}
