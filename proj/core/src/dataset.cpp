#include "vfe/dataset.hpp"

#include <png.h>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <regex>

namespace vfe {

namespace fs = std::filesystem;

torch::Tensor read_png(const fs::path& path) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str())) {
    throw DataError("cannot read PNG " + path.string() + ": " + image.message);
  }
  image.format = PNG_FORMAT_RGB;
  auto buffer = torch::empty({static_cast<int64_t>(image.height), static_cast<int64_t>(image.width), 3}, torch::kUInt8);
  if (!png_image_finish_read(&image, nullptr, buffer.data_ptr(), 0, nullptr)) {
    std::string msg = image.message;
    png_image_free(&image);
    throw DataError("cannot decode PNG " + path.string() + ": " + msg);
  }
  return buffer.to(torch::kFloat32) / 255.0f;
}

torch::Tensor quantize_8bit(const torch::Tensor& frames) {
  return (frames.clamp(0.0, 1.0) * 255.0).round() / 255.0;
}

void write_png(const fs::path& path, const torch::Tensor& frame) {
  if (frame.dim() != 3 || frame.size(2) != 3) throw ShapeError("write_png expects [H, W, 3], got " + c10::str(frame.sizes()));
  auto bytes = (frame.detach().to(torch::kFloat32).clamp(0.0, 1.0) * 255.0f).round().to(torch::kUInt8).contiguous();
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(frame.size(1));
  image.height = static_cast<png_uint_32>(frame.size(0));
  image.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&image, path.c_str(), 0, bytes.data_ptr(), 0, nullptr)) {
    throw DataError("cannot write PNG " + path.string() + ": " + image.message);
  }
}

void to_json(nlohmann::json& j, const VideoMeta& m) {
  j = m.extra.is_object() ? m.extra : nlohmann::json::object();
  j["height"] = m.height;
  j["width"] = m.width;
  j["frames"] = m.frames;
  j["frame_rate"] = m.frame_rate;
  j["provenance"] = m.provenance;
}

void from_json(const nlohmann::json& j, VideoMeta& m) {
  m.height = j.at("height").get<int64_t>();
  m.width = j.at("width").get<int64_t>();
  m.frames = j.at("frames").get<int64_t>();
  m.frame_rate = j.value("frame_rate", 24.0);
  m.provenance = j.value("provenance", std::string());
  m.extra = nlohmann::json::object();
  for (const auto& [k, v] : j.items()) {
    if (k != "height" && k != "width" && k != "frames" && k != "frame_rate" && k != "provenance") m.extra[k] = v;
  }
}

std::string frame_name(int64_t index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%06lld.png", static_cast<long long>(index));
  return buf;
}

namespace {

std::vector<int64_t> frame_numbers(const fs::path& dir) {
  static const std::regex pattern(R"((\d{6})\.png)");
  std::vector<int64_t> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    std::smatch m;
    const auto name = e.path().filename().string();
    if (e.is_regular_file() && std::regex_match(name, m, pattern)) out.push_back(std::stoll(m[1]));
  }
  std::sort(out.begin(), out.end());
  return out;
}

VideoMeta scan(const fs::path& dir, bool decode_first) {
  if (!fs::is_directory(dir)) throw DataError("video directory not found: " + dir.string());
  const auto numbers = frame_numbers(dir);
  if (numbers.empty()) throw DataError(dir.filename().string() + ": no frames");
  for (size_t i = 0; i < numbers.size(); ++i) {
    if (numbers[i] != static_cast<int64_t>(i)) {
      throw DataError(dir.filename().string() + ": frame numbering not contiguous at " + frame_name(static_cast<int64_t>(i)));
    }
  }
  VideoMeta meta;
  const auto meta_path = dir / "meta.json";
  if (fs::exists(meta_path)) {
    std::ifstream in(meta_path);
    try {
      meta = nlohmann::json::parse(in).get<VideoMeta>();
    } catch (const nlohmann::json::exception& e) {
      throw DataError(dir.filename().string() + ": malformed meta.json: " + e.what());
    }
    if (meta.frames != static_cast<int64_t>(numbers.size())) {
      throw DataError(dir.filename().string() + ": meta.json lists " + std::to_string(meta.frames) + " frames, found " +
                      std::to_string(numbers.size()));
    }
  } else {
    meta.frames = static_cast<int64_t>(numbers.size());
  }
  if (decode_first) {
    auto first = read_png(dir / frame_name(0));
    if (meta.height != 0 && (meta.height != first.size(0) || meta.width != first.size(1))) {
      throw DataError(dir.filename().string() + ": meta.json resolution disagrees with frames");
    }
    meta.height = first.size(0);
    meta.width = first.size(1);
  }
  return meta;
}

}  // namespace

VideoTensor read_video_dir(const fs::path& dir, VideoMeta* meta_out) {
  auto meta = scan(dir, false);
  std::vector<torch::Tensor> frames;
  frames.reserve(static_cast<size_t>(meta.frames));
  for (int64_t t = 0; t < meta.frames; ++t) {
    auto f = read_png(dir / frame_name(t));
    if (!frames.empty() && f.sizes() != frames.front().sizes()) {
      throw DataError(dir.filename().string() + ": frame " + frame_name(t) + " has a different resolution");
    }
    frames.push_back(f);
  }
  if (meta.height != 0 && (meta.height != frames[0].size(0) || meta.width != frames[0].size(1))) {
    throw DataError(dir.filename().string() + ": meta.json resolution disagrees with frames");
  }
  meta.height = frames[0].size(0);
  meta.width = frames[0].size(1);
  if (meta_out) *meta_out = meta;
  return VideoTensor{torch::stack(frames), meta.frame_rate};
}

void write_video_dir(const fs::path& dir, const VideoTensor& video, const std::string& provenance,
                     const nlohmann::json& extra) {
  fs::create_directories(dir);
  for (int64_t t = 0; t < video.num_frames(); ++t) write_png(dir / frame_name(t), video.frames[t]);
  VideoMeta meta{video.height(), video.width(), video.num_frames(), video.frame_rate, provenance, extra};
  std::ofstream out(dir / "meta.json");
  out << nlohmann::json(meta).dump(2) << '\n';
  if (!out) throw DataError("cannot write " + (dir / "meta.json").string());
}

std::vector<std::string> list_videos(const fs::path& root) {
  if (!fs::is_directory(root)) throw DataError("dataset root not found: " + root.string());
  std::vector<std::string> out;
  for (const auto& e : fs::directory_iterator(root)) {
    if (e.is_directory()) out.push_back(e.path().filename().string());
  }
  std::sort(out.begin(), out.end());
  return out;
}

void validate_layout(const fs::path& root) {
  const auto videos = list_videos(root);
  if (videos.empty()) throw DataError("dataset root " + root.string() + " holds no videos");
  for (const auto& v : videos) scan(root / v, true);
}

std::vector<VideoTensor> chunk_clips(const VideoTensor& video, int64_t length) {
  if (length <= 0) throw ConfigError("clip length must be positive");
  std::vector<VideoTensor> out;
  for (int64_t s = 0; s + length <= video.num_frames(); s += length) {
    out.push_back(VideoTensor{video.frames.slice(0, s, s + length), video.frame_rate});
  }
  return out;
}

}  // namespace vfe
