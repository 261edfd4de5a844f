#include <gtest/gtest.h>
#include <vfe/synthetic.hpp>
#include <vfe/training.hpp>

#include <filesystem>

#include "support/toy.hpp"

using namespace vfe;
namespace fs = std::filesystem;

namespace {

const SynthOptions kSmall{4, 32};

std::vector<VideoTensor> corpus(int n) { return synth_corpus(n, 17, kSmall); }

double checksum(const TensorMap& m) {
  double s = 0;
  for (const auto& [k, v] : m) s += v.to(torch::kFloat64).abs().sum().item<double>();
  return s;
}

bool same_tensors(const TensorMap& a, const TensorMap& b) {
  if (a.size() != b.size()) return false;
  for (const auto& [k, v] : a) {
    auto it = b.find(k);
    if (it == b.end() || !torch::equal(v, it->second)) return false;
  }
  return true;
}

fs::path temp_path(const std::string& name) {
  return fs::temp_directory_path() /
         ("vfe-train-" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()) + "-" + name);
}

}  // namespace

TEST(Stage1, TotalIsWeightedSumOfTerms) {
  Stage1Model model(fixtures::toy_model(), 1);
  auto clips = stack_clips(corpus(2));
  LossWeights w;
  for (bool adv : {false, true}) {
    auto t = stage1_terms(model, clips, w, adv);
    const double want = t.l1.item<double>() + t.perceptual.item<double>() + t.code.item<double>() +
                        t.kl_spatial.item<double>() + t.kl_temporal.item<double>() +
                        w.lambda_adv * t.adversarial.item<double>();
    EXPECT_NEAR(t.total.item<double>(), want, 1e-5 * std::max(1.0, want)) << adv;
    EXPECT_EQ(t.discriminator.defined(), adv);
  }
}

TEST(Stage1, AblationTogglesZeroTheirTerms) {
  Stage1Model model(fixtures::toy_model(), 2);
  LossWeights w;
  w.kl = false;
  w.perceptual = false;
  w.adversarial = false;
  auto t = stage1_terms(model, stack_clips(corpus(1)), w, true);
  EXPECT_EQ(t.kl_spatial.item<double>(), 0.0);
  EXPECT_EQ(t.perceptual.item<double>(), 0.0);
  EXPECT_EQ(t.adversarial.item<double>(), 0.0);
  EXPECT_NEAR(t.total.item<double>(), t.l1.item<double>() + t.code.item<double>(), 1e-6);
}

TEST(Stage1, PriorTermScalesWithCellsAndMovesOnlyCodebooks) {
  Stage1Model model(fixtures::toy_model(), 3);
  LossWeights w;
  w.adversarial = false;
  auto t = stage1_terms(model, stack_clips(corpus(1)), w, false);
  const auto& split = t.lookup.split;
  const double spatial = marginal_prior_kl(split.spatial, model.codebooks->spatial()).kl_value();
  const double temporal = marginal_prior_kl(split.temporal, model.codebooks->temporal()).kl_value();
  EXPECT_NEAR(t.kl_spatial.item<double>(), spatial * static_cast<double>(split.spatial.cells()), 1e-6);
  EXPECT_NEAR(t.kl_temporal.item<double>(), temporal * static_cast<double>(split.temporal.cells()), 1e-6);

  auto encoder_params = model.encoder->parameters();
  auto codebook_params = model.codebooks->parameters();
  auto grads = torch::autograd::grad({t.kl_spatial + t.kl_temporal}, encoder_params, {}, true, false, true);
  for (const auto& g : grads) EXPECT_FALSE(g.defined() && g.abs().sum().item<double>() > 0);
  auto cb = torch::autograd::grad({t.kl_spatial + t.kl_temporal}, codebook_params, {}, false, false, true);
  double mass = 0;
  for (const auto& g : cb) mass += g.defined() ? g.abs().sum().item<double>() : 0.0;
  EXPECT_GT(mass, 0.0);
}

TEST(Stage1, TrainingIsSeedDeterministic) {
  Stage1Config cfg;
  cfg.iterations = 3;
  cfg.adv_warmup = 1;
  cfg.seed = 4;
  auto data = corpus(3);
  Stage1Model a(fixtures::toy_model(), 5), b(fixtures::toy_model(), 5);
  std::vector<nlohmann::json> logged;
  auto ra = train_stage1(a, data, cfg, {}, [&](const nlohmann::json& j) { logged.push_back(j); });
  auto rb = train_stage1(b, data, cfg, {});
  ASSERT_EQ(ra.size(), 3u);
  for (size_t i = 0; i < ra.size(); ++i) EXPECT_EQ(ra[i].total, rb[i].total) << i;
  EXPECT_TRUE(same_tensors(a.tensors(), b.tensors()));
  EXPECT_FALSE(ra[0].adversarial_active);
  EXPECT_TRUE(ra[2].adversarial_active);
  EXPECT_FALSE(logged.empty());
}

TEST(Stage1, CheckpointRoundTrip) {
  Stage1Model model(fixtures::toy_model(), 6);
  const auto path = temp_path("s1.pt");
  save_stage1(path.string(), model, 12);
  auto back = load_stage1(path.string());
  EXPECT_TRUE(same_tensors(back->tensors(), model.tensors()));
  EXPECT_EQ(load_checkpoint(path.string()).manifest.at("iteration"), 12);
  auto expected = fixtures::toy_model();
  EXPECT_NO_THROW(load_stage1(path.string(), &expected));
  expected.backbone = fixtures::toy_backbone(16);
  EXPECT_THROW(load_stage1(path.string(), &expected), ConfigError);
  fs::remove(path);
}

TEST(Phases, SwitchAtFortyPercent) {
  EXPECT_EQ(phase_switch(1000, 0.4), 400);
  EXPECT_EQ(phase_switch(7, 0.4), 2);
  EXPECT_EQ(incremental_phase(399, 400), Phase::noise_free);
  EXPECT_EQ(incremental_phase(400, 400), Phase::full);
  EXPECT_EQ(to_string(Phase::noise_free), "noise_free");
}

TEST(Stage2, LqEncoderStartsAsTeacherCopy) {
  Stage1Model teacher(fixtures::toy_model(), 7);
  Stage2Model student(teacher, {1, 2, 2}, {4, 32, 32}, 1);
  auto t = teacher.encoder->named_parameters();
  for (const auto& p : student.lq_encoder->named_parameters()) {
    EXPECT_TRUE(torch::equal(p.value(), t[p.key()])) << p.key();
    EXPECT_NE(p.value().data_ptr(), t[p.key()].data_ptr()) << p.key();
  }
  EXPECT_EQ(student.spatial_lookup->config().codebook_size, 64);
  EXPECT_EQ(student.spatial_lookup->config().grid, (std::array<int64_t, 3>{2, 4, 4}));
}

TEST(Stage2, TeacherFrozenWhileStudentLearns) {
  Stage1Model teacher(fixtures::toy_model(), 8);
  Stage2Model student(teacher, {1, 2, 2}, {4, 32, 32}, 2);
  const auto teacher_before = teacher.tensors();
  const double teacher_sum = checksum(teacher_before);
  const double student_sum = checksum(student.tensors());
  Stage2Config cfg;
  cfg.iterations = 4;
  cfg.lr = 1e-3;
  Stage2Trainer trainer(teacher, student, cfg, {});
  for (const auto& p : teacher.encoder->parameters()) EXPECT_FALSE(p.requires_grad());
  for (const auto& p : teacher.decoder->parameters()) EXPECT_FALSE(p.requires_grad());
  auto data = corpus(2);
  for (int i = 0; i < 3; ++i) trainer.step({data[i % 2]});
  EXPECT_EQ(checksum(teacher.tensors()), teacher_sum);
  EXPECT_TRUE(same_tensors(teacher.tensors(), teacher_before));
  EXPECT_NE(checksum(student.tensors()), student_sum);
}

TEST(Stage2, TotalCombinesFeatureAndCrossEntropy) {
  Stage1Model teacher(fixtures::toy_model(), 9);
  Stage2Model student(teacher, {1, 2, 2}, {4, 32, 32}, 3);
  auto hq = stack_clips(corpus(1));
  LossWeights w;
  w.lambda_ce = 0.7;
  auto t = stage2_terms(teacher, student, hq, hq, w);
  EXPECT_NEAR(t.total.item<double>(),
              t.feature.item<double>() + 0.7 * (t.ce_spatial.item<double>() + t.ce_temporal.item<double>()), 1e-5);
  w.lambda_ce = 0.0;
  auto f = stage2_terms(teacher, student, hq, hq, w);
  EXPECT_NEAR(f.total.item<double>(), f.feature.item<double>(), 1e-9);
  EXPECT_GE(t.accuracy_spatial, 0.0);
  EXPECT_LE(t.accuracy_spatial, 1.0);
}

TEST(Stage2, NoiseFreePhaseAndIdentityDegradation) {
  Stage1Model teacher(fixtures::toy_model(), 10);
  Stage2Model student(teacher, {1, 2, 2}, {4, 32, 32}, 4);
  Stage2Config cfg;
  cfg.identity_degradation = true;
  Stage2Trainer identity(teacher, student, cfg, {});
  auto clip = corpus(1)[0];
  EXPECT_TRUE(torch::equal(identity.degrade_for_training(clip, Phase::full).frames, clip.frames));
  cfg.identity_degradation = false;
  cfg.seed = 3;
  Stage2Trainer a(teacher, student, cfg, {}), b(teacher, student, cfg, {});
  auto lq = a.degrade_for_training(clip, Phase::noise_free);
  EXPECT_EQ(lq.frames.sizes(), clip.frames.sizes());
  EXPECT_FALSE(torch::equal(lq.frames, clip.frames));
  EXPECT_TRUE(torch::equal(b.degrade_for_training(clip, Phase::noise_free).frames, lq.frames));
}

TEST(Enhance, DeterministicAndShapeChecked) {
  Stage1Model teacher(fixtures::toy_model(), 11);
  Stage2Model student(teacher, {1, 2, 2}, {4, 32, 32}, 5);
  auto clip = corpus(1)[0];
  auto a = enhance(teacher, student, clip), b = enhance(teacher, student, clip);
  EXPECT_EQ(a.frames.sizes(), clip.frames.sizes());
  EXPECT_TRUE(torch::equal(a.frames, b.frames));
  EXPECT_THROW(enhance(teacher, student, synth_clip(1, {4, 64})), ShapeError);
  EXPECT_THROW(enhance(teacher, student, synth_clip(1, {8, 32})), ShapeError);
  EXPECT_THROW(enhance(teacher, student, synth_clip(1, {3, 32})), ShapeError);
}

TEST(Stage2, CheckpointRoundTrip) {
  Stage1Model teacher(fixtures::toy_model(), 12);
  Stage2Model student(teacher, {1, 2, 2}, {4, 32, 32}, 6);
  const auto path = temp_path("s2.pt");
  save_stage2(path.string(), student, 5);
  auto back = load_stage2(path.string(), teacher);
  EXPECT_TRUE(same_tensors(back->tensors(), student.tensors()));
  EXPECT_EQ(back->video_shape(), student.video_shape());
  auto clip = corpus(1)[0];
  EXPECT_TRUE(torch::equal(enhance(teacher, *back, clip).frames, enhance(teacher, student, clip).frames));
  auto other = fixtures::toy_model(32);
  Stage1Model wrong(other, 1);
  EXPECT_THROW(load_stage2(path.string(), wrong), DataError);
  fs::remove(path);
}

TEST(Stage1, UtilizationOverCorpusInUnitRange) {
  Stage1Model model(fixtures::toy_model(), 13);
  auto r = corpus_utilization(model, corpus(3));
  EXPECT_GT(r.spatial, 0.0);
  EXPECT_LE(r.spatial, 1.0);
  EXPECT_EQ(r.spatial_histogram.sum().item<int64_t>(), 3 * 2 * 4 * 4);
}
