#pragma once

// Canonical on-disk layout:
//   root/<video>/000000.png, 000001.png, ...   8-bit RGB, numbered from 0
//   root/<video>/meta.json                     {"height","width","frames","frame_rate","provenance",...}

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "vfe/types.hpp"

namespace vfe {

// [H, W, 3] float in [0, 1] <-> 8-bit RGB PNG.
torch::Tensor read_png(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const torch::Tensor& frame);

// Rounds to the nearest 8-bit level, as a PNG round trip does.
torch::Tensor quantize_8bit(const torch::Tensor& frames);

struct VideoMeta {
  int64_t height = 0, width = 0, frames = 0;
  double frame_rate = 24.0;
  std::string provenance;
  nlohmann::json extra = nlohmann::json::object();  // e.g. "degradation", "flicker"
};

void to_json(nlohmann::json& j, const VideoMeta& m);
void from_json(const nlohmann::json& j, VideoMeta& m);

std::string frame_name(int64_t index);

// Throws DataError on gaps in numbering, mixed resolutions or a meta mismatch.
VideoTensor read_video_dir(const std::filesystem::path& dir, VideoMeta* meta = nullptr);
void write_video_dir(const std::filesystem::path& dir, const VideoTensor& video, const std::string& provenance = "",
                     const nlohmann::json& extra = nlohmann::json::object());

// Sorted names of the video subdirectories of root.
std::vector<std::string> list_videos(const std::filesystem::path& root);

// Checks every video directory without decoding pixels beyond the first frame.
void validate_layout(const std::filesystem::path& root);

// Consecutive non-overlapping windows of `length` frames; a short tail is dropped.
std::vector<VideoTensor> chunk_clips(const VideoTensor& video, int64_t length);

}  // namespace vfe
