#include "vfe/curator.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

namespace vfe {

namespace {

namespace F = torch::nn::functional;

FaceBox box_from_json(const nlohmann::json& j) {
  return {j.at("x").get<double>(), j.at("y").get<double>(), j.at("w").get<double>(), j.at("h").get<double>()};
}

torch::Tensor grayscale(const torch::Tensor& frames) {
  auto f = frames.to(torch::kFloat64);
  return f.select(-1, 0) * 0.299 + f.select(-1, 1) * 0.587 + f.select(-1, 2) * 0.114;
}

}  // namespace

RecordedDetections::RecordedDetections(const nlohmann::json& fixture) {
  for (const auto& frame : fixture.value("boxes", nlohmann::json::array())) {
    std::vector<FaceBox> boxes;
    for (const auto& b : frame) boxes.push_back(box_from_json(b));
    boxes_.push_back(std::move(boxes));
  }
  for (const auto& lm : fixture.value("landmarks", nlohmann::json::array())) {
    if (lm.is_null()) {
      landmarks_.emplace_back();
      continue;
    }
    landmarks_.push_back(FaceGeometry{lm.at("x1").get<double>(), lm.at("y1").get<double>(), lm.at("x2").get<double>(),
                                      lm.at("y2").get<double>(), lm.at("x0").get<double>(), lm.at("y0").get<double>()});
  }
  for (const auto& frame : fixture.value("text", nlohmann::json::array())) {
    std::vector<TextRegion> regions;
    for (const auto& r : frame) regions.push_back({r.at("confidence").get<double>()});
    text_.push_back(std::move(regions));
  }
}

RecordedDetections RecordedDetections::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open detection fixture " + path);
  try {
    return RecordedDetections(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed detection fixture " + path + ": " + e.what());
  }
}

std::vector<FaceBox> RecordedDetections::detect(int64_t frame_index, const torch::Tensor&) {
  if (frame_index < 0 || frame_index >= static_cast<int64_t>(boxes_.size())) return {};
  return boxes_[frame_index];
}

std::optional<FaceGeometry> RecordedDetections::landmarks(int64_t frame_index, const torch::Tensor&) {
  if (frame_index < 0 || frame_index >= static_cast<int64_t>(landmarks_.size())) return std::nullopt;
  return landmarks_[frame_index];
}

std::vector<TextRegion> RecordedOcrClient::detect(int64_t frame_index, const torch::Tensor&) {
  if (frame_index < 0 || frame_index >= static_cast<int64_t>(regions_.size())) return {};
  return regions_[frame_index];
}

CropResult face_crop(const VideoTensor& video, const std::vector<std::vector<FaceBox>>& boxes,
                     const CropOptions& options) {
  const int64_t height = video.height(), width = video.width();
  const double frame_area = static_cast<double>(height * width);
  int64_t best_frame = -1;
  FaceBox best;
  double best_ratio = 0.0;
  for (size_t t = 0; t < boxes.size() && static_cast<int64_t>(t) < video.num_frames(); ++t) {
    for (const auto& b : boxes[t]) {
      const double ratio = b.area() / frame_area;
      if (b.area() > 0 && ratio > best_ratio) {
        best_ratio = ratio;
        best = b;
        best_frame = static_cast<int64_t>(t);
      }
    }
  }
  if (best_frame < 0) throw DataError("no face detected in any frame");

  const int64_t limit = std::min(height, width);
  const auto side = std::clamp<int64_t>(std::llround(std::max(best.w, best.h) * (1.0 + options.margin)), 1, limit);
  const double cx = best.x + best.w / 2.0, cy = best.y + best.h / 2.0;
  const auto x0 = std::clamp<int64_t>(std::llround(cx - side / 2.0), 0, width - side);
  const auto y0 = std::clamp<int64_t>(std::llround(cy - side / 2.0), 0, height - side);

  auto crop = video.frames.slice(1, y0, y0 + side).slice(2, x0, x0 + side);
  if (options.target_size > 0 && options.target_size != side) {
    auto chw = crop.permute({0, 3, 1, 2});
    chw = F::interpolate(chw, F::InterpolateFuncOptions()
                                  .size(std::vector<int64_t>{options.target_size, options.target_size})
                                  .mode(torch::kBicubic)
                                  .align_corners(false)
                                  .antialias(true));
    crop = chw.permute({0, 2, 3, 1}).clamp(0.0, 1.0);
  }
  CropResult r;
  r.video = VideoTensor{crop.contiguous(), video.frame_rate};
  r.window = {x0, y0, side};
  r.reference_frame = best_frame;
  r.face_proportion = best_ratio;
  return r;
}

SideRatio side_ratio(const FaceGeometry& g) {
  SideRatio r;
  const double right = std::abs(g.x2 - g.x0);
  if (right > 0.0) r.alpha = std::abs(g.x1 - g.x0) / right;
  if (g.x1 > g.x0 || g.x2 < g.x0) {
    r.prescreened = true;
    r.verdict = Orientation::side;
    return r;
  }
  if (!r.alpha) {
    r.verdict = Orientation::side;
    return r;
  }
  r.verdict = (*r.alpha < kSideRatioLow || *r.alpha > kSideRatioHigh) ? Orientation::side : Orientation::frontal;
  return r;
}

double motion_intensity(const VideoTensor& video, double threshold) {
  const int64_t t = video.num_frames();
  if (t < 2) return 0.0;
  auto g = grayscale(video.frames);
  auto diff = (g.slice(0, 1) - g.slice(0, 0, t - 1)).abs();
  const double changed = (diff > threshold).sum().item<double>();
  return changed / static_cast<double>((t - 1) * video.height() * video.width());
}

TextVerdict text_filter(const VideoTensor& video, OcrClient& client, const TextFilterOptions& options) {
  const int64_t stride = std::max<int64_t>(1, options.stride);
  for (int64_t t = 0; t < video.num_frames(); t += stride) {
    std::vector<TextRegion> regions;
    try {
      regions = client.detect(t, video.frames[t]);
    } catch (const std::exception&) {
      return TextVerdict::unverified;
    }
    for (const auto& r : regions) {
      if (r.confidence >= options.confidence) return TextVerdict::reject;
    }
  }
  return TextVerdict::accept;
}

std::string_view to_string(Orientation o) { return o == Orientation::frontal ? "frontal" : "side"; }

std::string_view to_string(TextVerdict v) {
  switch (v) {
    case TextVerdict::accept:
      return "accept";
    case TextVerdict::reject:
      return "reject";
    case TextVerdict::unverified:
      return "unverified";
  }
  return "?";
}

void to_json(nlohmann::json& j, const CurationReport& r) {
  j = nlohmann::json{{"video", r.video_id},
                     {"has_face", r.has_face},
                     {"face_proportion", r.face_proportion},
                     {"orientation", to_string(r.orientation)},
                     {"alpha", r.alpha ? nlohmann::json(*r.alpha) : nlohmann::json(nullptr)},
                     {"side_frames", r.side_frames},
                     {"motion_intensity", r.motion},
                     {"text", to_string(r.text)},
                     {"stages", {{"A", r.passed_a}, {"B", r.passed_b}, {"C", r.passed_c}, {"motion", r.passed_motion}}},
                     {"kept", r.kept()}};
  if (r.window) j["crop"] = {{"x", r.window->x}, {"y", r.window->y}, {"side", r.window->side}};
}

CuratedVideo curate_video(const std::string& video_id, const VideoTensor& video, FaceBoxProvider& boxes,
                          LandmarkProvider& landmarks, OcrClient& ocr, const CurationOptions& options) {
  CuratedVideo out;
  auto& rep = out.report;
  rep.video_id = video_id;

  std::vector<std::vector<FaceBox>> per_frame;
  for (int64_t t = 0; t < video.num_frames(); ++t) per_frame.push_back(boxes.detect(t, video.frames[t]));
  CropResult crop;
  try {
    crop = face_crop(video, per_frame, options.crop);
  } catch (const DataError&) {
    return out;
  }
  rep.has_face = true;
  rep.passed_a = true;
  rep.face_proportion = crop.face_proportion;
  rep.window = crop.window;

  std::vector<double> alphas;
  int64_t landmarked = 0, side = 0;
  for (int64_t t = 0; t < video.num_frames(); ++t) {
    auto g = landmarks.landmarks(t, video.frames[t]);
    if (!g) continue;
    ++landmarked;
    const auto s = side_ratio(*g);
    if (s.verdict == Orientation::side) ++side;
    if (s.alpha) alphas.push_back(*s.alpha);
  }
  if (!alphas.empty()) {
    std::sort(alphas.begin(), alphas.end());
    rep.alpha = alphas[alphas.size() / 2];
  }
  rep.side_frames = landmarked ? static_cast<double>(side) / static_cast<double>(landmarked) : 0.0;
  rep.orientation = rep.side_frames > options.side_fraction ? Orientation::side : Orientation::frontal;
  rep.passed_b = rep.orientation == Orientation::frontal;

  rep.motion = motion_intensity(crop.video, options.motion_threshold);
  if (rep.passed_b) {
    rep.text = text_filter(crop.video, ocr, options.text);
    rep.passed_c = rep.text != TextVerdict::reject;
  }
  rep.passed_motion = !options.min_motion || rep.motion >= *options.min_motion;
  out.cropped = std::move(crop.video);
  return out;
}

SurvivorCounts survivor_counts(const std::vector<CurationReport>& reports) {
  SurvivorCounts c;
  for (const auto& r : reports) {
    ++c.input;
    if (!r.passed_a) continue;
    ++c.after_a;
    if (!r.passed_b) continue;
    ++c.after_b;
    if (!r.passed_c) continue;
    ++c.after_c;
    if (r.passed_motion) ++c.after_motion;
  }
  return c;
}

}  // namespace vfe
