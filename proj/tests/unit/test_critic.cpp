#include <gtest/gtest.h>
#include <vfe/critic.hpp>
#include <vfe/synthetic.hpp>

#include <cmath>

using namespace vfe;

namespace {

std::shared_ptr<FeatureExtractor> fallback() {
  ExtractorConfig c;
  return make_feature_extractor(c);
}

}  // namespace

TEST(Extractor, OneFeatureStackPerFrame) {
  auto ex = fallback();
  auto stack = extract_features(synth_clip(1, {24, 32}), *ex);
  EXPECT_EQ(stack.num_frames(), 24);
  ASSERT_EQ(stack.scales.size(), ex->channels().size());
  for (size_t k = 0; k < stack.scales.size(); ++k) EXPECT_EQ(stack.scales[k].size(1), ex->channels()[k]);
  // Patch embedding then stride 2 per later scale.
  EXPECT_EQ(stack.scales[0].size(2), 32 / ex->patch_size());
  EXPECT_EQ(stack.scales[1].size(2), 32 / ex->patch_size() / 2);
}

TEST(Extractor, MissingWeightsWithoutFallbackIsConfigError) {
  ExtractorConfig c;
  c.allow_fallback = false;
  EXPECT_THROW(make_feature_extractor(c), ConfigError);
  c.weights_path = "/nonexistent/extractor.pt";
  EXPECT_THROW(make_feature_extractor(c), ConfigError);
}

TEST(Extractor, FallbackIsSeedDeterministic) {
  ExtractorConfig c;
  auto a = make_feature_extractor(c), b = make_feature_extractor(c);
  EXPECT_EQ(a->checksum(), b->checksum());
  c.seed += 1;
  EXPECT_NE(make_feature_extractor(c)->checksum(), a->checksum());
}

TEST(Critic, FrozenExtractorSurvivesHeadTraining) {
  auto ex = fallback();
  HeadEnsemble heads(ex->channels(), 8);
  const double before = ex->checksum();
  torch::optim::Adam opt(heads->parameters(), 1e-2);
  auto real = torch::rand({2, 3, 16, 16}), fake = torch::rand({2, 3, 16, 16}).requires_grad_(true);
  for (int i = 0; i < 5; ++i) {
    opt.zero_grad();
    auto l = adversarial_losses_frames(real, fake, *ex, heads);
    (l.discriminator + l.generator).backward();
    opt.step();
  }
  EXPECT_EQ(ex->checksum(), before);
}

TEST(Critic, ScoreIsNegatedSumOfHeadMeans) {
  auto ex = fallback();
  HeadEnsemble heads(ex->channels(), 8);
  auto frames = torch::rand({3, 3, 32, 32});
  auto feats = ex->extract(frames);
  double want = 0;
  for (int64_t k = 0; k < heads->size(); ++k) want -= heads->head(k)->forward(feats[k]).mean().item<double>();
  EXPECT_NEAR(discriminate_frames(frames, *ex, heads).item<double>(), want, 1e-5);
}

TEST(Critic, ZeroHeadsGiveChanceLosses) {
  auto ex = fallback();
  HeadEnsemble heads(ex->channels(), 8);
  heads->zero_();
  auto clip = synth_clip(2, {2, 16});
  auto l = adversarial_losses(clip, synth_clip(3, {2, 16}), *ex, heads);
  EXPECT_NEAR(l.generator.item<double>(), std::log(2.0), 1e-6);
  EXPECT_NEAR(l.discriminator.item<double>(), 2 * std::log(2.0), 1e-6);
  EXPECT_NEAR(l.real_score, 0.5, 1e-9);
}

TEST(Critic, GeneratorGradientMatchesFiniteDifferences) {
  torch::manual_seed(1);
  auto ex = fallback();
  HeadEnsemble heads(ex->channels(), 8);
  auto real = torch::rand({2, 3, 16, 16});
  auto fake = torch::rand({2, 3, 16, 16}).requires_grad_(true);
  auto g = torch::autograd::grad({adversarial_losses_frames(real, fake, *ex, heads).generator}, {fake})[0];
  torch::NoGradGuard no_grad;
  for (int trial = 0; trial < 3; ++trial) {
    auto dir = torch::randn_like(fake);
    dir /= dir.norm();
    const double h = 1e-2;
    const double lp = adversarial_losses_frames(real, fake + h * dir, *ex, heads).generator.item<double>();
    const double lm = adversarial_losses_frames(real, fake - h * dir, *ex, heads).generator.item<double>();
    const double fd = (lp - lm) / (2 * h), an = (g * dir).sum().item<double>();
    EXPECT_NEAR(an, fd, 1e-2 * std::max(std::abs(fd), 1e-3)) << "trial " << trial;
  }
}

TEST(Critic, DiscriminatorLossDoesNotReachFake) {
  auto ex = fallback();
  HeadEnsemble heads(ex->channels(), 8);
  auto fake = torch::rand({1, 3, 16, 16}).requires_grad_(true);
  auto l = adversarial_losses_frames(torch::rand({1, 3, 16, 16}), fake, *ex, heads);
  l.discriminator.backward();
  EXPECT_FALSE(fake.grad().defined());
}

TEST(Critic, NonFiniteScoresRaiseTrainingError) {
  auto ex = fallback();
  HeadEnsemble heads(ex->channels(), 8);
  auto bad = torch::full({1, 3, 16, 16}, std::nanf(""));
  EXPECT_THROW(adversarial_losses_frames(torch::rand({1, 3, 16, 16}), bad, *ex, heads), TrainingError);
}

TEST(Critic, HeadCountMustMatchScales) {
  auto ex = fallback();
  HeadEnsemble heads(std::vector<int64_t>{16, 32}, 8);
  EXPECT_THROW(discriminate_frames(torch::rand({1, 3, 16, 16}), *ex, heads), ConfigError);
}

TEST(Perceptual, ZeroOnIdenticalInputsAndPositiveOtherwise) {
  auto ex = fallback();
  auto x = torch::rand({2, 3, 16, 16});
  EXPECT_EQ(perceptual_loss(x, x, *ex).item<float>(), 0.0f);
  EXPECT_GT(perceptual_loss(x, torch::rand({2, 3, 16, 16}), *ex).item<float>(), 0.0f);
}

TEST(FramesOf, FoldsTimeIntoBatch) {
  auto clips = torch::rand({2, 3, 4, 5, 6});
  auto f = frames_of(clips);
  EXPECT_EQ(f.sizes(), (std::vector<int64_t>{8, 3, 5, 6}));
  EXPECT_TRUE(torch::equal(f[5], clips[1].select(1, 1)));
}
