#include <gtest/gtest.h>
#include <vfe/stquant.hpp>

#include <cmath>
#include <random>

using namespace vfe;

namespace {

Codebook book(const torch::Tensor& items, CodebookKind kind = CodebookKind::spatial) { return {items, kind}; }

// Loop oracle for attention along time at one location: values [T, D].
torch::Tensor attention_oracle(const torch::Tensor& v) {
  const int64_t t = v.size(0), d = v.size(1);
  auto out = torch::zeros_like(v);
  for (int64_t i = 0; i < t; ++i) {
    std::vector<double> scores(t);
    double mx = -1e300;
    for (int64_t j = 0; j < t; ++j) {
      scores[j] = (v[i] * v[j]).sum().item<double>() / std::sqrt(static_cast<double>(d));
      mx = std::max(mx, scores[j]);
    }
    double z = 0;
    for (auto& s : scores) z += (s = std::exp(s - mx));
    for (int64_t j = 0; j < t; ++j) out[i] += v[j] * (scores[j] / z);
  }
  return out;
}

}  // namespace

TEST(TemporalAttention, SingleFrameIsIdentity) {
  auto z = torch::randn({1, 3, 4, 5});
  EXPECT_TRUE(torch::allclose(temporal_attention(LatentGrid{z}).values, z));
}

TEST(TemporalAttention, ConstantOverTimeIsUnchanged) {
  auto z = torch::randn({1, 3, 3, 6}).expand({5, 3, 3, 6}).contiguous();
  EXPECT_TRUE(torch::allclose(temporal_attention(LatentGrid{z}).values, z, 1e-6, 1e-6));
}

TEST(TemporalAttention, MatchesLoopOracle) {
  auto z = torch::randn({4, 2, 3, 5}, torch::kFloat64);
  auto out = temporal_attention(LatentGrid{z}).values;
  for (int64_t y = 0; y < 2; ++y) {
    for (int64_t x = 0; x < 3; ++x) {
      auto want = attention_oracle(z.select(1, y).select(1, x));
      EXPECT_TRUE(torch::allclose(out.select(1, y).select(1, x), want, 1e-10, 1e-12));
    }
  }
}

TEST(TemporalAttention, OutputStaysInsideTheTimeHull) {
  auto z = torch::randn({6, 4, 4, 1});
  auto out = temporal_attention(LatentGrid{z}).values;
  auto lo = std::get<0>(z.min(0)), hi = std::get<0>(z.max(0));
  EXPECT_TRUE((out >= lo - 1e-6).all().item<bool>());
  EXPECT_TRUE((out <= hi + 1e-6).all().item<bool>());
}

TEST(MotionResidual, FirstFrameZeroAndDifferences) {
  auto z = torch::randn({4, 2, 2, 3});
  auto r = motion_residual(LatentGrid{z}, 1).values;
  EXPECT_TRUE(torch::equal(r[0], torch::zeros_like(r[0])));
  for (int64_t t = 1; t < 4; ++t) EXPECT_TRUE(torch::equal(r[t], z[t] - z[t - 1]));
  auto r2 = motion_residual(LatentGrid{z}, 2).values;
  EXPECT_TRUE(torch::equal(r2[1], z[1] - z[0]));
  EXPECT_TRUE(torch::equal(r2[3], z[3] - z[1]));
  EXPECT_THROW(motion_residual(LatentGrid{z}, 0), ConfigError);
}

TEST(MotionResidual, StaticLatentGivesExactZero) {
  auto z = torch::randn({1, 3, 3, 4}).expand({6, 3, 3, 4}).contiguous();
  EXPECT_TRUE(torch::equal(motion_residual(LatentGrid{z}).values, torch::zeros_like(z)));
}

TEST(Split, BranchesAreLatentAndAttentionPlusResidual) {
  auto z = LatentGrid{torch::randn({3, 2, 2, 4})};
  auto s = split_latents(z);
  EXPECT_TRUE(torch::equal(s.spatial.values, z.values));
  EXPECT_TRUE(torch::equal(s.temporal.values, temporal_attention(z).values + motion_residual(z).values));
}

TEST(NearestNeighbour, TiesGoToLowestIndex) {
  auto items = torch::tensor({1.0f, -1.0f, 1.0f}).view({3, 1});
  auto z = torch::zeros({1, 1, 1, 1});
  EXPECT_EQ(nn_quantize(LatentGrid{z}, book(items)).indices.indices.item<int64_t>(), 0);
  auto dup = torch::tensor({5.0f, 2.0f, 2.0f}).view({3, 1});
  auto z2 = torch::full({1, 1, 1, 1}, 2.0f);
  EXPECT_EQ(nn_quantize(LatentGrid{z2}, book(dup)).indices.indices.item<int64_t>(), 1);
}

TEST(NearestNeighbour, ValuesAreSelectedItemsAndBatchMatchesSingles) {
  auto items = torch::randn({9, 3});
  auto z = torch::randn({2, 2, 3, 3, 3});
  auto q = nn_quantize(LatentGrid{z}, book(items));
  EXPECT_EQ(q.indices.indices.sizes(), (std::vector<int64_t>{2, 2, 3, 3}));
  EXPECT_TRUE(torch::equal(q.values.values, items.index_select(0, q.indices.indices.flatten()).view(z.sizes())));
  for (int64_t b = 0; b < 2; ++b) {
    auto single = nn_quantize(LatentGrid{z[b]}, book(items));
    EXPECT_TRUE(torch::equal(single.indices.indices, q.indices.indices[b]));
  }
}

TEST(NearestNeighbour, GradientReachesCodebook) {
  auto items = torch::randn({4, 2}).requires_grad_(true);
  auto q = nn_quantize(LatentGrid{torch::randn({1, 2, 2, 2})}, book(items));
  q.values.values.sum().backward();
  EXPECT_GT(items.grad().abs().sum().item<float>(), 0.0f);
}

TEST(NearestNeighbour, ShapeErrors) {
  EXPECT_THROW(nn_quantize(LatentGrid{torch::randn({1, 2, 2, 3})}, book(torch::randn({4, 2}))), ShapeError);
  EXPECT_THROW(nn_quantize(LatentGrid{torch::randn({2, 2, 3})}, book(torch::randn({4, 3}))), ShapeError);
}

TEST(StLookup, FusesBothBranches) {
  auto cs = torch::randn({8, 4}), ct = torch::randn({6, 4});
  auto z = LatentGrid{torch::randn({3, 2, 2, 4})};
  auto r = st_lookup(z, book(cs), book(ct, CodebookKind::temporal));
  auto want = cs.index_select(0, r.spatial_indices.indices.flatten()) +
              ct.index_select(0, r.temporal_indices.indices.flatten());
  EXPECT_TRUE(torch::allclose(r.z_q.values, want.view(z.values.sizes())));
  EXPECT_EQ(r.temporal_indices.kind, CodebookKind::temporal);
}

TEST(StraightThrough, ForwardIsBitwiseAndBackwardIsIdentity) {
  auto z_h = torch::randn({2, 2, 2, 3}).requires_grad_(true);
  auto z_q = torch::randn({2, 2, 2, 3});
  auto out = straight_through(LatentGrid{z_h}, LatentGrid{z_q});
  EXPECT_TRUE(torch::equal(out.values, z_q));
  auto upstream = torch::randn({2, 2, 2, 3});
  (out.values * upstream).sum().backward();
  EXPECT_TRUE(torch::equal(z_h.grad(), upstream));
}

TEST(MarginalPrior, PosteriorSumsToOneAndKlNonNegative) {
  std::mt19937 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    torch::manual_seed(trial);
    const int64_t n = 2 + trial % 7;
    auto r = marginal_prior_kl(LatentGrid{torch::randn({2, 2, 3, 4}, torch::kFloat64)},
                               book(torch::randn({n, 4}, torch::kFloat64)));
    EXPECT_NEAR(r.posterior.sum().item<double>(), 1.0, 1e-12);
    EXPECT_GE(r.kl_value(), -1e-12);
    EXPECT_LE(r.kl_value(), std::log(static_cast<double>(n)) + 1e-12);
  }
}

TEST(MarginalPrior, MatchesIndependentOracle) {
  torch::manual_seed(5);
  auto z = torch::randn({1, 2, 3, 3}, torch::kFloat64);
  auto items = torch::randn({5, 3}, torch::kFloat64);
  auto flat = z.view({-1, 3});
  std::vector<double> p(5, 0.0);
  for (int64_t i = 0; i < flat.size(0); ++i) {
    std::vector<double> s(5);
    double total = 0;
    for (int64_t j = 0; j < 5; ++j) {
      double d2 = 0;
      for (int64_t k = 0; k < 3; ++k) {
        const double diff = flat[i][k].item<double>() - items[j][k].item<double>();
        d2 += diff * diff;
      }
      total += s[j] = 1.0 / std::max(std::sqrt(d2), 1e-8);
    }
    for (int64_t j = 0; j < 5; ++j) p[j] += s[j] / total / static_cast<double>(flat.size(0));
  }
  double kl = 0;
  for (double v : p) kl += v * std::log(v * 5);
  auto r = marginal_prior_kl(LatentGrid{z}, book(items));
  EXPECT_NEAR(r.kl_value(), kl, 1e-10);
  for (int64_t j = 0; j < 5; ++j) EXPECT_NEAR(r.posterior[j].item<double>(), p[j], 1e-12);
}

TEST(MarginalPrior, GradientIsFiniteWhenLatentSitsOnItem) {
  auto items = torch::randn({4, 3}).requires_grad_(true);
  auto z = items.detach()[1].clone().view({1, 1, 1, 3}).requires_grad_(true);
  auto r = marginal_prior_kl(LatentGrid{z}, book(items));
  r.kl.backward();
  EXPECT_TRUE(torch::isfinite(z.grad()).all().item<bool>());
  EXPECT_TRUE(torch::isfinite(items.grad()).all().item<bool>());
}

TEST(MarginalPrior, ReducingKlSpreadsPosterior) {
  torch::manual_seed(9);
  auto items = torch::randn({8, 2}).requires_grad_(true);
  auto z = (torch::randn({1, 4, 4, 2}) * 0.1 + 2.0);
  torch::optim::SGD opt({items}, 0.05);
  const double before = marginal_prior_kl(LatentGrid{z}, book(items)).kl_value();
  for (int i = 0; i < 50; ++i) {
    opt.zero_grad();
    marginal_prior_kl(LatentGrid{z}, book(items)).kl.backward();
    opt.step();
  }
  EXPECT_LT(marginal_prior_kl(LatentGrid{z}, book(items)).kl_value(), before);
}

TEST(HardCountPrior, ExtremesAndUniform) {
  EXPECT_NEAR(hard_count_prior_kl(CodeIndexGrid{torch::zeros({2, 2, 2}, torch::kLong)}, 8), std::log(8.0), 1e-12);
  EXPECT_NEAR(hard_count_prior_kl(CodeIndexGrid{torch::arange(8).view({2, 2, 2})}, 8), 0.0, 1e-12);
}

TEST(CodeLoss, OracleAndGradientRouting) {
  auto z_h = torch::randn({2, 2, 2, 3}).requires_grad_(true);
  auto z_q = torch::randn({2, 2, 2, 3}).requires_grad_(true);
  auto loss = code_loss(LatentGrid{z_h}, LatentGrid{z_q}, 0.25);
  const double mse = (z_h - z_q).square().mean().item<double>();
  EXPECT_NEAR(loss.item<double>(), 1.25 * mse, 1e-6);
  loss.backward();
  // Codebook term pulls z_q with weight 1, commitment pulls z_h with weight beta.
  auto diff = (z_q - z_h).detach();
  const double n = static_cast<double>(diff.numel());
  EXPECT_TRUE(torch::allclose(z_q.grad(), 2.0 * diff / n, 1e-5, 1e-7));
  EXPECT_TRUE(torch::allclose(z_h.grad(), -0.25 * 2.0 * diff / n, 1e-5, 1e-7));
  EXPECT_THROW(code_loss(LatentGrid{z_h}, LatentGrid{z_q}, -1.0), ConfigError);
}

TEST(Utilization, CountsDistinctItems) {
  auto idx = torch::tensor({0, 0, 3, 3, 5}, torch::kLong).view({1, 1, 5});
  EXPECT_DOUBLE_EQ(utilization(CodeIndexGrid{idx}, 10), 0.3);
  EXPECT_THROW(utilization(CodeIndexGrid{idx}, 4), DataError);
}

TEST(Codebooks, ParameterNamesAndShapes) {
  SpatialTemporalCodebooks cb(16, 8, 4);
  auto params = cb->named_parameters();
  ASSERT_TRUE(params.contains("spatial"));
  ASSERT_TRUE(params.contains("temporal"));
  EXPECT_EQ(cb->spatial().items.sizes(), (std::vector<int64_t>{16, 4}));
  EXPECT_EQ(cb->temporal().items.sizes(), (std::vector<int64_t>{8, 4}));
  EXPECT_LE(cb->spatial().items.abs().max().item<float>(), 1.0f / 16.0f);
}
