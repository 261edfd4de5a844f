#include "vfe/evalkit.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <memory>
#include <random>
#include <sstream>

#include "vfe/dataset.hpp"

namespace vfe {

namespace {

namespace F = torch::nn::functional;
namespace fs = std::filesystem;

void check_same(const VideoTensor& a, const VideoTensor& b, const char* what) {
  if (a.frames.sizes() != b.frames.sizes()) {
    throw ShapeError(std::string(what) + ": shape mismatch " + c10::str(a.frames.sizes()) + " vs " +
                     c10::str(b.frames.sizes()));
  }
}

torch::Tensor luma(const torch::Tensor& frames) {
  auto f = frames.to(torch::kFloat64);
  return f.select(-1, 0) * 0.299 + f.select(-1, 1) * 0.587 + f.select(-1, 2) * 0.114;
}

// Valid-mode separable Gaussian filter of [N, 1, H, W].
torch::Tensor gaussian_valid(const torch::Tensor& x, const torch::Tensor& k) {
  auto y = F::conv2d(x, k.view({1, 1, 1, -1}));
  return F::conv2d(y, k.view({1, 1, -1, 1}));
}

}  // namespace

double psnr(const VideoTensor& a, const VideoTensor& b) {
  check_same(a, b, "psnr");
  const double mse = (a.frames.to(torch::kFloat64) - b.frames.to(torch::kFloat64)).square().mean().item<double>();
  if (mse <= 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

double ssim_plane(const torch::Tensor& a, const torch::Tensor& b, const SsimOptions& o) {
  if (a.sizes() != b.sizes() || a.dim() != 2) throw ShapeError("ssim_plane: expects equal [H, W] planes");
  if (a.size(0) < o.window || a.size(1) < o.window) throw ShapeError("ssim: frame smaller than the window");
  const int64_t r = o.window / 2;
  auto coords = torch::arange(-r, o.window - r, torch::kFloat64);
  auto k = torch::exp(-coords.square() / (2.0 * o.sigma * o.sigma));
  k = k / k.sum();
  auto x = a.to(torch::kFloat64).view({1, 1, a.size(0), a.size(1)});
  auto y = b.to(torch::kFloat64).view({1, 1, b.size(0), b.size(1)});
  const double c1 = (o.k1 * 1.0) * (o.k1 * 1.0), c2 = (o.k2 * 1.0) * (o.k2 * 1.0);
  auto mx = gaussian_valid(x, k), my = gaussian_valid(y, k);
  auto sxx = gaussian_valid(x * x, k) - mx * mx;
  auto syy = gaussian_valid(y * y, k) - my * my;
  auto sxy = gaussian_valid(x * y, k) - mx * my;
  auto map = ((2 * mx * my + c1) * (2 * sxy + c2)) / ((mx * mx + my * my + c1) * (sxx + syy + c2));
  return map.mean().item<double>();
}

double ssim(const VideoTensor& a, const VideoTensor& b, const SsimOptions& options) {
  check_same(a, b, "ssim");
  auto ya = luma(a.frames), yb = luma(b.frames);
  double total = 0.0;
  for (int64_t t = 0; t < a.num_frames(); ++t) total += ssim_plane(ya[t], yb[t], options);
  return total / static_cast<double>(a.num_frames());
}

std::optional<double> face_cons(const VideoTensor& video, EmbeddingClient* client) {
  if (client == nullptr) return std::nullopt;
  if (video.num_frames() < 2) return 1.0;
  auto first = client->embed(video.frames[0]).to(torch::kFloat64).flatten();
  double total = 0.0;
  for (int64_t t = 1; t < video.num_frames(); ++t) {
    auto e = client->embed(video.frames[t]).to(torch::kFloat64).flatten();
    total += F::cosine_similarity(first.unsqueeze(0), e.unsqueeze(0), F::CosineSimilarityFuncOptions().dim(1).eps(1e-12))
                 .item<double>();
  }
  return total / static_cast<double>(video.num_frames() - 1);
}

torch::Tensor temporal_profile(const VideoTensor& video, int64_t column) {
  if (column < 0 || column >= video.width()) {
    throw ShapeError("temporal_profile: column " + std::to_string(column) + " outside [0, " +
                     std::to_string(video.width()) + ")");
  }
  // [T, H, 3] -> [H, T, 3]
  return video.frames.select(2, column).transpose(0, 1).contiguous();
}

UtilizationAccumulator::UtilizationAccumulator(int64_t spatial_size, int64_t temporal_size)
    : spatial_(torch::zeros({spatial_size}, torch::kLong)), temporal_(torch::zeros({temporal_size}, torch::kLong)) {}

void UtilizationAccumulator::add(const CodeIndexGrid& spatial, const CodeIndexGrid& temporal) {
  auto add_one = [](torch::Tensor& hist, const CodeIndexGrid& g) {
    auto flat = g.indices.flatten().to(torch::kLong);
    if (flat.numel() == 0) return;
    if (flat.min().item<int64_t>() < 0 || flat.max().item<int64_t>() >= hist.size(0)) {
      throw DataError("codebook_report: index outside [0, N)");
    }
    hist += torch::bincount(flat, {}, hist.size(0));
  };
  add_one(spatial_, spatial);
  add_one(temporal_, temporal);
}

CodebookReport UtilizationAccumulator::report() const {
  auto frac = [](const torch::Tensor& h) { return (h > 0).sum().item<double>() / static_cast<double>(h.size(0)); };
  return {frac(spatial_), frac(temporal_), spatial_.clone(), temporal_.clone()};
}

CodebookReport codebook_report(const CodeIndexGrid& spatial, const CodeIndexGrid& temporal, int64_t spatial_size,
                               int64_t temporal_size) {
  UtilizationAccumulator acc(spatial_size, temporal_size);
  acc.add(spatial, temporal);
  return acc.report();
}

CommandMetricClient::CommandMetricClient(std::string name, std::string command)
    : name_(std::move(name)), command_(std::move(command)) {}

double CommandMetricClient::evaluate(const VideoTensor& restored, const VideoTensor& reference) {
  std::mt19937_64 rng(std::random_device{}());
  const fs::path dir = fs::temp_directory_path() / ("vfe-metric-" + std::to_string(rng()));
  struct Cleanup {
    fs::path p;
    ~Cleanup() {
      std::error_code ec;
      fs::remove_all(p, ec);
    }
  } cleanup{dir};
  write_video_dir(dir / "restored", restored);
  write_video_dir(dir / "reference", reference);
  const std::string cmd = command_ + " '" + (dir / "restored").string() + "' '" + (dir / "reference").string() + "'";
  std::unique_ptr<FILE, int (*)(FILE*)> pipe(popen(cmd.c_str(), "r"), pclose);
  if (!pipe) throw ExternalToolError("cannot start metric client '" + name_ + "'");
  std::string out, last;
  char buf[256];
  while (fgets(buf, sizeof(buf), pipe.get()) != nullptr) out += buf;
  const int rc = pclose(pipe.release());
  if (rc != 0) throw ExternalToolError("metric client '" + name_ + "' exited with status " + std::to_string(rc));
  std::istringstream lines(out);
  for (std::string line; std::getline(lines, line);) {
    if (!line.empty()) last = line;
  }
  try {
    return std::stod(last);
  } catch (const std::exception&) {
    throw ExternalToolError("metric client '" + name_ + "' printed no numeric result");
  }
}

void to_json(nlohmann::json& j, const MetricReport& r) {
  j = nlohmann::json{{"clip", r.clip}, {"psnr", r.psnr}, {"psnr_capped", r.psnr_capped}, {"ssim", r.ssim}};
  if (r.spatial_utilization) j["spatial_utilization"] = *r.spatial_utilization;
  if (r.temporal_utilization) j["temporal_utilization"] = *r.temporal_utilization;
  if (r.face_cons) j["face_cons"] = *r.face_cons;
  for (const auto& [k, v] : r.external) j[k] = v;
}

MetricReport evaluate_pair(const std::string& clip, const VideoTensor& restored, const VideoTensor& reference,
                           EmbeddingClient* embedder,
                           const std::vector<std::shared_ptr<ExternalMetricClient>>& external) {
  MetricReport r;
  r.clip = clip;
  r.psnr = psnr(restored, reference);
  r.psnr_capped = r.psnr >= kPsnrCap;
  r.ssim = ssim(restored, reference);
  r.face_cons = face_cons(restored, embedder);
  for (const auto& c : external) r.external[c->name()] = c->evaluate(restored, reference);
  return r;
}

nlohmann::json aggregate(const std::vector<MetricReport>& reports) {
  std::map<std::string, std::pair<double, int64_t>> sums;
  for (const auto& r : reports) {
    nlohmann::json j = r;
    for (const auto& [k, v] : j.items()) {
      if (v.is_number()) {
        auto& s = sums[k];
        s.first += v.get<double>();
        ++s.second;
      }
    }
  }
  nlohmann::json out{{"clips", reports.size()}};
  for (const auto& [k, s] : sums) out["mean_" + k] = s.first / static_cast<double>(s.second);
  return out;
}

}  // namespace vfe
