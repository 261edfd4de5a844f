#include <gtest/gtest.h>
#include <vfe/evalkit.hpp>
#include <vfe/synthetic.hpp>

#include <cmath>
#include <vector>

using namespace vfe;

namespace {

// Direct windowed sums, valid mode, unit data range.
double ssim_loop(const torch::Tensor& a, const torch::Tensor& b, int win = 11, double sigma = 1.5) {
  const int64_t h = a.size(0), w = a.size(1);
  auto pa = a.to(torch::kFloat64).contiguous(), pb = b.to(torch::kFloat64).contiguous();
  const double* x = pa.data_ptr<double>();
  const double* y = pb.data_ptr<double>();
  std::vector<double> g(win);
  double gs = 0;
  for (int i = 0; i < win; ++i) {
    const double d = i - (win - 1) / 2.0;
    g[i] = std::exp(-d * d / (2 * sigma * sigma));
    gs += g[i];
  }
  for (auto& v : g) v /= gs;
  const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  double total = 0;
  int64_t count = 0;
  for (int64_t r = 0; r + win <= h; ++r) {
    for (int64_t c = 0; c + win <= w; ++c) {
      double mx = 0, my = 0, xx = 0, yy = 0, xy = 0;
      for (int i = 0; i < win; ++i) {
        for (int j = 0; j < win; ++j) {
          const double wt = g[i] * g[j];
          const double u = x[(r + i) * w + c + j], v = y[(r + i) * w + c + j];
          mx += wt * u;
          my += wt * v;
          xx += wt * u * u;
          yy += wt * v * v;
          xy += wt * u * v;
        }
      }
      const double vx = xx - mx * mx, vy = yy - my * my, cov = xy - mx * my;
      total += ((2 * mx * my + c1) * (2 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
      ++count;
    }
  }
  return total / static_cast<double>(count);
}

class MeanEmbedding : public EmbeddingClient {
 public:
  torch::Tensor embed(const torch::Tensor& frame) override { return frame.mean({0, 1}); }
};

}  // namespace

TEST(Psnr, MatchesMseOracleAndCaps) {
  auto a = synth_clip(1, {3, 16});
  auto b = VideoTensor::from_tensor(a.frames + 0.01 * torch::randn_like(a.frames));
  const double mse = (a.frames.to(torch::kFloat64) - b.frames.to(torch::kFloat64)).square().mean().item<double>();
  EXPECT_NEAR(psnr(a, b), 10.0 * std::log10(1.0 / mse), 1e-9);
  EXPECT_EQ(psnr(a, a), kPsnrCap);
  EXPECT_THROW(psnr(a, synth_clip(1, {2, 16})), ShapeError);
}

TEST(Ssim, PlaneMatchesLoopOracle) {
  torch::manual_seed(3);
  auto a = torch::rand({20, 23});
  auto b = (a + 0.1 * torch::randn({20, 23})).clamp(0, 1);
  EXPECT_NEAR(ssim_plane(a, b), ssim_loop(a, b), 1e-9);
  auto smooth = torch::linspace(0, 1, 23).view({1, 23}).expand({20, 23}).contiguous();
  EXPECT_NEAR(ssim_plane(smooth, a), ssim_loop(smooth, a), 1e-9);
}

TEST(Ssim, IdentityIsOneAndSymmetric) {
  auto a = synth_clip(2, {2, 32}), b = synth_clip(3, {2, 32});
  EXPECT_NEAR(ssim(a, a), 1.0, 1e-12);
  EXPECT_NEAR(ssim(a, b), ssim(b, a), 1e-12);
  EXPECT_LT(ssim(a, b), 1.0);
}

TEST(Ssim, TooSmallForWindowIsShapeError) {
  EXPECT_THROW(ssim_plane(torch::rand({8, 8}), torch::rand({8, 8})), ShapeError);
}

TEST(FaceCons, CosineToFirstFrame) {
  MeanEmbedding emb;
  EXPECT_FALSE(face_cons(synth_clip(1, {2, 8}), nullptr));
  auto c = constant_clip(3, 4, 4, 0.2, 0.4, 0.6);
  EXPECT_NEAR(*face_cons(c, &emb), 1.0, 1e-12);
  auto frames = torch::zeros({2, 2, 2, 3});
  frames[0].select(2, 0).fill_(1.0);
  frames[1].select(2, 1).fill_(1.0);
  EXPECT_NEAR(*face_cons(VideoTensor::from_tensor(frames), &emb), 0.0, 1e-12);
}

TEST(TemporalProfile, ColumnOverTime) {
  auto clip = synth_clip(4, {5, 16});
  auto p = temporal_profile(clip, 7);
  EXPECT_EQ(p.sizes(), (std::vector<int64_t>{16, 5, 3}));
  for (int64_t t = 0; t < 5; ++t) EXPECT_TRUE(torch::equal(p.select(1, t), clip.frames[t].select(1, 7)));
  EXPECT_THROW(temporal_profile(clip, 16), ShapeError);
  EXPECT_THROW(temporal_profile(clip, -1), ShapeError);
}

TEST(Utilization, FractionOfItemsUsed) {
  auto s = torch::tensor({0, 0, 1, 3}, torch::kLong).view({1, 2, 2});
  auto t = torch::tensor({2, 2, 2, 2}, torch::kLong).view({1, 2, 2});
  auto r = codebook_report(CodeIndexGrid{s}, CodeIndexGrid{t, CodebookKind::temporal}, 8, 4);
  EXPECT_DOUBLE_EQ(r.spatial, 3.0 / 8.0);
  EXPECT_DOUBLE_EQ(r.temporal, 1.0 / 4.0);
  EXPECT_EQ(r.spatial_histogram[0].item<int64_t>(), 2);
  UtilizationAccumulator acc(8, 4);
  acc.add(CodeIndexGrid{s}, CodeIndexGrid{t});
  acc.add(CodeIndexGrid{s + 4}, CodeIndexGrid{t - 2});
  EXPECT_DOUBLE_EQ(acc.report().spatial, 6.0 / 8.0);
  EXPECT_DOUBLE_EQ(acc.report().temporal, 2.0 / 4.0);
}

TEST(ExternalMetric, ParsesLastLine) {
  CommandMetricClient ok("fake", "sh -c 'echo noise; echo 0.42' _");
  auto clip = synth_clip(5, {2, 8});
  EXPECT_DOUBLE_EQ(ok.evaluate(clip, clip), 0.42);
  CommandMetricClient args("count", "sh -c 'ls \"$1\" | wc -l' _");
  EXPECT_DOUBLE_EQ(args.evaluate(clip, clip), 3.0);  // two frames plus metadata
}

TEST(ExternalMetric, FailuresAreExternalToolErrors) {
  auto clip = synth_clip(5, {2, 8});
  CommandMetricClient failing("bad", "false");
  EXPECT_THROW(failing.evaluate(clip, clip), ExternalToolError);
  CommandMetricClient silent("quiet", "true");
  EXPECT_THROW(silent.evaluate(clip, clip), ExternalToolError);
}

TEST(Report, PairAndAggregate) {
  auto a = synth_clip(6, {2, 16}), b = synth_clip(7, {2, 16});
  auto same = evaluate_pair("same", a, a);
  EXPECT_TRUE(same.psnr_capped);
  EXPECT_NEAR(same.ssim, 1.0, 1e-12);
  auto diff = evaluate_pair("diff", b, a, nullptr, {std::make_shared<CommandMetricClient>("ext", "echo 2")});
  EXPECT_EQ(diff.external.at("ext"), 2.0);
  auto agg = aggregate({same, diff});
  EXPECT_EQ(agg.at("clips"), 2);
  EXPECT_NEAR(agg.at("mean_psnr").get<double>(), (same.psnr + diff.psnr) / 2, 1e-12);
  EXPECT_NEAR(agg.at("mean_ext").get<double>(), 2.0, 1e-12);
  EXPECT_FALSE(agg.contains("mean_psnr_capped"));
}
