#pragma once

// Training-data curation: face-proportion cropping (A), side-face filtering
// (B), text filtering (C) and motion-intensity scoring. Detectors are
// external; they enter through the provider interfaces below.

#include <nlohmann/json.hpp>

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "vfe/types.hpp"

namespace vfe {

struct FaceBox {
  double x = 0, y = 0, w = 0, h = 0;  // top-left corner and extent, pixels
  double area() const { return w * h; }
};

struct FaceGeometry {
  double x1 = 0, y1 = 0;  // left eye outer corner
  double x2 = 0, y2 = 0;  // right eye outer corner
  double x0 = 0, y0 = 0;  // nose tip
};

struct TextRegion {
  double confidence = 0.0;
};

class FaceBoxProvider {
 public:
  virtual ~FaceBoxProvider() = default;
  virtual std::vector<FaceBox> detect(int64_t frame_index, const torch::Tensor& frame) = 0;
};

class LandmarkProvider {
 public:
  virtual ~LandmarkProvider() = default;
  virtual std::optional<FaceGeometry> landmarks(int64_t frame_index, const torch::Tensor& frame) = 0;
};

class OcrClient {
 public:
  virtual ~OcrClient() = default;
  // May throw; the filter then reports the video as unverified.
  virtual std::vector<TextRegion> detect(int64_t frame_index, const torch::Tensor& frame) = 0;
};

// Built-in OCR stand-in: never reports text.
class StubOcrClient : public OcrClient {
 public:
  std::vector<TextRegion> detect(int64_t, const torch::Tensor&) override { return {}; }
};

// Detector outputs recorded per frame in a JSON fixture:
// {"boxes": [[{"x","y","w","h"}], ...], "landmarks": [{"x0","y0","x1","y1","x2","y2"} | null, ...],
//  "text": [[{"confidence"}], ...]}
// Frames past the end of a list have no detections.
class RecordedDetections : public FaceBoxProvider, public LandmarkProvider {
 public:
  explicit RecordedDetections(const nlohmann::json& fixture);
  static RecordedDetections load(const std::string& path);

  std::vector<FaceBox> detect(int64_t frame_index, const torch::Tensor& frame) override;
  std::optional<FaceGeometry> landmarks(int64_t frame_index, const torch::Tensor& frame) override;
  const std::vector<std::vector<TextRegion>>& text() const { return text_; }

 private:
  std::vector<std::vector<FaceBox>> boxes_;
  std::vector<std::optional<FaceGeometry>> landmarks_;
  std::vector<std::vector<TextRegion>> text_;
};

class RecordedOcrClient : public OcrClient {
 public:
  explicit RecordedOcrClient(std::vector<std::vector<TextRegion>> regions) : regions_(std::move(regions)) {}
  std::vector<TextRegion> detect(int64_t frame_index, const torch::Tensor& frame) override;

 private:
  std::vector<std::vector<TextRegion>> regions_;
};

struct CropWindow {
  int64_t x = 0, y = 0, side = 0;
};

struct CropOptions {
  double margin = 0.2;       // fraction of the box size added around it
  int64_t target_size = 0;   // 0 keeps the window size
};

struct CropResult {
  VideoTensor video;
  CropWindow window;
  int64_t reference_frame = 0;
  double face_proportion = 0.0;  // face area / frame area at the reference frame
};

// One square window, anchored on the frame with the largest face proportion,
// applied to every frame. Throws DataError when no frame has a face.
CropResult face_crop(const VideoTensor& video, const std::vector<std::vector<FaceBox>>& boxes,
                     const CropOptions& options = {});

enum class Orientation { frontal, side };

struct SideRatio {
  std::optional<double> alpha;  // absent when x2 == x0
  Orientation verdict = Orientation::frontal;
  bool prescreened = false;     // eyes on the same side of the nose
};

inline constexpr double kSideRatioLow = 0.4;
inline constexpr double kSideRatioHigh = 2.5;

SideRatio side_ratio(const FaceGeometry& g);

// Fraction of pixels whose grayscale change between adjacent frames exceeds the threshold.
double motion_intensity(const VideoTensor& video, double threshold = 10.0 / 255.0);

enum class TextVerdict { accept, reject, unverified };

struct TextFilterOptions {
  double confidence = 0.5;
  int64_t stride = 1;
};

TextVerdict text_filter(const VideoTensor& video, OcrClient& client, const TextFilterOptions& options = {});

std::string_view to_string(Orientation o);
std::string_view to_string(TextVerdict v);

struct CurationOptions {
  CropOptions crop;
  TextFilterOptions text;
  double motion_threshold = 10.0 / 255.0;
  std::optional<double> min_motion;
  // A video is side-face dominated when more than this fraction of its landmarked frames are side faces.
  double side_fraction = 0.5;
};

struct CurationReport {
  std::string video_id;
  bool has_face = false;
  double face_proportion = 0.0;
  std::optional<CropWindow> window;
  Orientation orientation = Orientation::frontal;
  std::optional<double> alpha;  // median over landmarked frames
  double side_frames = 0.0;     // fraction of landmarked frames judged side
  double motion = 0.0;
  TextVerdict text = TextVerdict::accept;
  bool passed_a = false, passed_b = false, passed_c = false, passed_motion = false;
  bool kept() const { return passed_a && passed_b && passed_c && passed_motion; }
};

void to_json(nlohmann::json& j, const CurationReport& r);

struct CuratedVideo {
  CurationReport report;
  std::optional<VideoTensor> cropped;
};

CuratedVideo curate_video(const std::string& video_id, const VideoTensor& video, FaceBoxProvider& boxes,
                          LandmarkProvider& landmarks, OcrClient& ocr, const CurationOptions& options = {});

struct SurvivorCounts {
  int64_t input = 0, after_a = 0, after_b = 0, after_c = 0, after_motion = 0;
};

SurvivorCounts survivor_counts(const std::vector<CurationReport>& reports);

}  // namespace vfe
