#include <gtest/gtest.h>
#include <vfe/checkpoint.hpp>
#include <vfe/config.hpp>
#include <vfe/dataset.hpp>
#include <vfe/synthetic.hpp>

#include <filesystem>
#include <fstream>

using namespace vfe;
namespace fs = std::filesystem;

namespace {

class TempDir {
 public:
  TempDir() {
    path_ = fs::temp_directory_path() / ("vfe-test-" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()) +
                                         "-" + ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

}  // namespace

TEST(Png, RoundTripIsEightBitQuantization) {
  TempDir dir;
  auto frame = torch::rand({9, 13, 3});
  write_png(dir.path() / "f.png", frame);
  auto back = read_png(dir.path() / "f.png");
  EXPECT_EQ(back.sizes(), frame.sizes());
  EXPECT_TRUE(torch::allclose(back, quantize_8bit(frame), 0, 1e-6));
  EXPECT_THROW(read_png(dir.path() / "missing.png"), DataError);
}

TEST(VideoDir, RoundTripWithMeta) {
  TempDir dir;
  auto clip = synth_clip(1, {3, 16});
  write_video_dir(dir.path() / "v", clip, "synthetic", {{"flicker", "brightness"}});
  EXPECT_TRUE(fs::exists(dir.path() / "v" / "000002.png"));
  VideoMeta meta;
  auto back = read_video_dir(dir.path() / "v", &meta);
  EXPECT_TRUE(torch::allclose(back.frames, quantize_8bit(clip.frames), 0, 1e-6));
  EXPECT_EQ(meta.frames, 3);
  EXPECT_EQ(meta.provenance, "synthetic");
  EXPECT_EQ(meta.extra.at("flicker"), "brightness");
  EXPECT_EQ(list_videos(dir.path()), std::vector<std::string>{"v"});
  EXPECT_NO_THROW(validate_layout(dir.path()));
}

TEST(VideoDir, NumberingGapIsDataError) {
  TempDir dir;
  write_video_dir(dir.path() / "v", synth_clip(2, {3, 8}));
  fs::remove(dir.path() / "v" / "000001.png");
  EXPECT_THROW(read_video_dir(dir.path() / "v"), DataError);
}

TEST(VideoDir, MixedResolutionIsDataError) {
  TempDir dir;
  write_video_dir(dir.path() / "v", synth_clip(3, {2, 8}));
  write_png(dir.path() / "v" / "000001.png", torch::rand({4, 4, 3}));
  EXPECT_THROW(read_video_dir(dir.path() / "v"), DataError);
}

TEST(VideoDir, FrameNames) {
  EXPECT_EQ(frame_name(0), "000000.png");
  EXPECT_EQ(frame_name(123), "000123.png");
}

TEST(Chunks, DropShortTail) {
  auto clip = synth_clip(4, {10, 8});
  auto chunks = chunk_clips(clip, 4);
  ASSERT_EQ(chunks.size(), 2u);
  EXPECT_TRUE(torch::equal(chunks[1].frames, clip.frames.slice(0, 4, 8)));
}

TEST(Config, DefaultsMatchProductionModel) {
  auto c = parse_config({{"version", kConfigVersion}});
  EXPECT_EQ(c.model.backbone.latent_dim, 256);
  EXPECT_EQ(c.model.spatial_codes, 1024);
  EXPECT_EQ(c.model.temporal_codes, 1024);
  EXPECT_EQ(c.data.clip_frames, 24);
  EXPECT_EQ(c.data.resolution, 512);
  EXPECT_DOUBLE_EQ(c.loss.beta, 0.25);
  EXPECT_DOUBLE_EQ(c.stage2.noise_free_fraction, 0.4);
}

TEST(Config, MissingVersionAndUnknownKeys) {
  EXPECT_THROW(parse_config(nlohmann::json::object()), ConfigError);
  EXPECT_THROW(parse_config({{"version", kConfigVersion + 1}}), ConfigError);
  try {
    parse_config({{"version", kConfigVersion}, {"stage1", {{"iterations", 5}, {"learning_rate", 1}}}});
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("stage1.learning_rate"), std::string::npos) << e.what();
  }
  EXPECT_THROW(parse_config({{"version", kConfigVersion}, {"stage1", {{"iterations", "many"}}}}), ConfigError);
}

TEST(Config, OverridesAndHashStability) {
  nlohmann::json j = {{"version", kConfigVersion}, {"seed", 9}, {"stage1", {{"iterations", 5}}}};
  auto a = parse_config(j), b = parse_config(j);
  EXPECT_EQ(a.stage1.iterations, 5);
  EXPECT_EQ(config_hash(a), config_hash(b));
  b.seed = 10;
  EXPECT_NE(config_hash(a), config_hash(b));
  nlohmann::json dumped = a;
  EXPECT_EQ(config_hash(parse_config(dumped)), config_hash(a));
}

TEST(Config, LoadFromFile) {
  TempDir dir;
  {
    std::ofstream out(dir.path() / "run.json");
    out << R"({"version": 1, "data": {"clip_frames": 8}})";
  }
  EXPECT_EQ(load_config((dir.path() / "run.json").string()).data.clip_frames, 8);
  EXPECT_THROW(load_config((dir.path() / "missing.json").string()), ConfigError);
}

TEST(Hash, FnvReferenceVectors) {
  EXPECT_EQ(hex64(fnv1a64("")), "cbf29ce484222325");
  EXPECT_EQ(hex64(fnv1a64("a")), "af63dc4c8601ec8c");
  EXPECT_EQ(hex64(fnv1a64("foobar")), "85944171f73967e8");
}

TEST(Checkpoint, RoundTripAndErrors) {
  TempDir dir;
  const auto path = (dir.path() / "ck.pt").string();
  Checkpoint ck;
  ck.manifest = {{"stage", "I"}, {"iteration", 3}};
  ck.tensors["w"] = torch::arange(6).view({2, 3}).to(torch::kFloat32);
  save_checkpoint(path, ck);
  auto back = load_checkpoint(path);
  EXPECT_EQ(back.manifest.at("iteration"), 3);
  EXPECT_TRUE(torch::equal(back.tensors.at("w"), ck.tensors.at("w")));
  EXPECT_EQ(file_hash(path).size(), 16u);
  EXPECT_THROW(load_checkpoint((dir.path() / "none.pt").string()), DataError);
  {
    std::ofstream out(dir.path() / "junk.pt");
    out << "not a checkpoint";
  }
  EXPECT_THROW(load_checkpoint((dir.path() / "junk.pt").string()), DataError);
}

TEST(Checkpoint, RestoreRejectsMissingAndMisshapen) {
  torch::nn::Linear a(3, 2), b(3, 2), c(4, 2);
  TensorMap m;
  collect_tensors(m, "lin", *a);
  EXPECT_TRUE(m.count("lin.weight"));
  restore_tensors(m, "lin", *b);
  EXPECT_TRUE(torch::equal(a->weight, b->weight));
  EXPECT_THROW(restore_tensors(m, "lin", *c), DataError);
  EXPECT_THROW(restore_tensors(m, "other", *b), DataError);
}
