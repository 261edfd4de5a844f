#pragma once

// Quality and consistency metrics.
//
// PSNR and SSIM are computed on [0, 1] floats before any 8-bit quantization.
// Metrics that need large pretrained networks (LPIPS, FVD, IDS, AKD,
// Flow-Score) are not built in; they plug in through ExternalMetricClient.

#include <nlohmann/json.hpp>

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "vfe/types.hpp"

namespace vfe {

inline constexpr double kPsnrCap = 100.0;

double psnr(const VideoTensor& a, const VideoTensor& b);

struct SsimOptions {
  int64_t window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
};

// Mean over frames of luma SSIM with a Gaussian window, valid region only.
double ssim(const VideoTensor& a, const VideoTensor& b, const SsimOptions& options = {});
// Single luma plane [H, W] in [0, 1].
double ssim_plane(const torch::Tensor& a, const torch::Tensor& b, const SsimOptions& options = {});

class EmbeddingClient {
 public:
  virtual ~EmbeddingClient() = default;
  virtual torch::Tensor embed(const torch::Tensor& frame) = 0;  // [H, W, 3] -> [E]
};

// Mean cosine similarity between the first frame's embedding and every later one.
std::optional<double> face_cons(const VideoTensor& video, EmbeddingClient* client);

// Pixel (y, t) of the profile is pixel (t, y, column) of the video; layout [H, T, 3].
torch::Tensor temporal_profile(const VideoTensor& video, int64_t column);

struct CodebookReport {
  double spatial = 0.0, temporal = 0.0;
  torch::Tensor spatial_histogram, temporal_histogram;  // int64 counts
};

// Accumulates index histograms over a corpus.
class UtilizationAccumulator {
 public:
  UtilizationAccumulator(int64_t spatial_size, int64_t temporal_size);
  void add(const CodeIndexGrid& spatial, const CodeIndexGrid& temporal);
  CodebookReport report() const;

 private:
  torch::Tensor spatial_, temporal_;
};

CodebookReport codebook_report(const CodeIndexGrid& spatial, const CodeIndexGrid& temporal, int64_t spatial_size,
                               int64_t temporal_size);

class ExternalMetricClient {
 public:
  virtual ~ExternalMetricClient() = default;
  virtual std::string name() const = 0;
  virtual double evaluate(const VideoTensor& restored, const VideoTensor& reference) = 0;
};

// Runs `<command> <restored_dir> <reference_dir>` on PNG dumps of both clips
// and parses the last line of stdout as the metric value.
class CommandMetricClient : public ExternalMetricClient {
 public:
  CommandMetricClient(std::string name, std::string command);
  std::string name() const override { return name_; }
  double evaluate(const VideoTensor& restored, const VideoTensor& reference) override;

 private:
  std::string name_, command_;
};

struct MetricReport {
  std::string clip;
  double psnr = 0.0;
  bool psnr_capped = false;
  double ssim = 0.0;
  std::optional<double> spatial_utilization, temporal_utilization;
  std::optional<double> face_cons;
  std::map<std::string, double> external;
};

void to_json(nlohmann::json& j, const MetricReport& r);

MetricReport evaluate_pair(const std::string& clip, const VideoTensor& restored, const VideoTensor& reference,
                           EmbeddingClient* embedder = nullptr,
                           const std::vector<std::shared_ptr<ExternalMetricClient>>& external = {});

// Mean of each numeric field across reports.
nlohmann::json aggregate(const std::vector<MetricReport>& reports);

}  // namespace vfe
