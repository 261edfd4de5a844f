#include "vfe/stquant.hpp"

#include <algorithm>
#include <cmath>

namespace vfe {

namespace {

int64_t time_axis(const LatentGrid& z) { return z.values.dim() - 4; }

void check_same_shape(const LatentGrid& a, const LatentGrid& b, std::string_view what) {
  if (a.values.sizes() != b.values.sizes()) {
    throw ShapeError(std::string(what) + ": shape mismatch " + c10::str(a.values.sizes()) + " vs " +
                     c10::str(b.values.sizes()));
  }
}

void check_dims_match(const LatentGrid& z, const Codebook& c, std::string_view what) {
  check_latent(z, what);
  check_codebook(c);
  if (z.dim() != c.dim()) {
    throw ShapeError(std::string(what) + ": latent D = " + std::to_string(z.dim()) + " but codebook D = " +
                     std::to_string(c.dim()));
  }
}

struct StraightThroughFn : public torch::autograd::Function<StraightThroughFn> {
  static torch::Tensor forward(torch::autograd::AutogradContext*, const torch::Tensor& /*z_h*/,
                               const torch::Tensor& z_q) {
    return z_q.detach().clone();
  }
  static torch::autograd::variable_list backward(torch::autograd::AutogradContext*,
                                                 torch::autograd::variable_list grads) {
    return {grads[0], torch::Tensor()};
  }
};

}  // namespace

LatentGrid temporal_attention(const LatentGrid& z) {
  check_latent(z, "temporal_attention");
  const int64_t t_ax = time_axis(z);
  // [.., t, h, w, D] -> [.., h, w, t, D]
  auto x = z.values.movedim(t_ax, -2);
  const double scale = 1.0 / std::sqrt(static_cast<double>(z.dim()));
  auto attn = torch::softmax(torch::matmul(x, x.transpose(-1, -2)) * scale, -1);
  return {torch::matmul(attn, x).movedim(-2, t_ax)};
}

LatentGrid motion_residual(const LatentGrid& z, int64_t window) {
  check_latent(z, "motion_residual");
  if (window < 1) throw ConfigError("motion_residual: window must be >= 1");
  const int64_t t_ax = time_axis(z);
  const int64_t t = z.values.size(t_ax);
  auto ref = torch::arange(t, torch::kLong).sub(window).clamp_min(0);
  return {z.values - z.values.index_select(t_ax, ref)};
}

SplitLatents split_latents(const LatentGrid& z, int64_t window) {
  auto ta = temporal_attention(z);
  auto res = motion_residual(z, window);
  return {z, LatentGrid{ta.values + res.values}};
}

Quantized nn_quantize(const LatentGrid& latents, const Codebook& codebook) {
  check_dims_match(latents, codebook, "nn_quantize");
  const int64_t d = latents.dim();
  const int64_t n = codebook.size();
  torch::Tensor idx;
  {
    torch::NoGradGuard no_grad;
    // Direct squared differences accumulated in double, so exact ties stay exact.
    auto flat = latents.values.reshape({-1, d}).to(torch::kFloat64);
    auto items = codebook.items.detach().to(torch::kFloat64);
    const int64_t m = flat.size(0);
    const int64_t chunk = std::max<int64_t>(1, (int64_t{1} << 22) / std::max<int64_t>(1, n * d));
    std::vector<torch::Tensor> parts;
    for (int64_t start = 0; start < m; start += chunk) {
      auto rows = flat.slice(0, start, std::min(m, start + chunk));
      auto dist = (rows.unsqueeze(1) - items.unsqueeze(0)).square().sum(-1);
      parts.push_back(dist.argmin(1));
    }
    idx = parts.empty() ? torch::empty({0}, torch::kLong) : torch::cat(parts);
  }
  auto grid_shape = latents.values.sizes().vec();
  grid_shape.pop_back();
  auto values = codebook.items.index_select(0, idx).view(latents.values.sizes());
  return {CodeIndexGrid{idx.view(grid_shape), codebook.kind}, LatentGrid{values}};
}

LookupResult st_lookup(const LatentGrid& z_h, const Codebook& spatial, const Codebook& temporal, int64_t window) {
  auto split = split_latents(z_h, window);
  auto qs = nn_quantize(split.spatial, spatial);
  auto qt = nn_quantize(split.temporal, temporal);
  return {LatentGrid{qs.values.values + qt.values.values}, qs.indices, qt.indices, std::move(split)};
}

LatentGrid straight_through(const LatentGrid& z_h, const LatentGrid& z_q) {
  check_same_shape(z_h, z_q, "straight_through");
  return {StraightThroughFn::apply(z_h.values, z_q.values)};
}

torch::Tensor kl_to_uniform(const torch::Tensor& posterior) {
  const double n = static_cast<double>(posterior.numel());
  return torch::xlogy(posterior, posterior * n).sum();
}

RegularizerReport marginal_prior_kl(const LatentGrid& latents, const Codebook& codebook, double distance_floor) {
  check_dims_match(latents, codebook, "marginal_prior_kl");
  auto flat = latents.values.reshape({-1, latents.dim()});
  // compute_mode 2: direct differences rather than the matmul expansion.
  auto dist = torch::cdist(flat, codebook.items, 2.0, 2).clamp_min(distance_floor);
  auto sim = dist.reciprocal();
  auto rows = sim / sim.sum(1, true);
  auto posterior = rows.mean(0);
  RegularizerReport r;
  r.kl = kl_to_uniform(posterior);
  r.posterior = posterior;
  const double floor = 0.1 / static_cast<double>(codebook.size());
  r.utilization = (posterior.detach() > floor).to(torch::kFloat64).mean().item<double>();
  return r;
}

double hard_count_prior_kl(const CodeIndexGrid& indices, int64_t num_items) {
  auto flat = indices.indices.flatten();
  if (flat.numel() == 0) return 0.0;
  auto counts = torch::bincount(flat, {}, num_items).to(torch::kFloat64);
  return kl_to_uniform(counts / static_cast<double>(flat.numel())).item<double>();
}

torch::Tensor code_loss(const LatentGrid& z_h, const LatentGrid& z_q, double beta) {
  check_same_shape(z_h, z_q, "code_loss");
  if (beta < 0) throw ConfigError("code_loss: beta must be non-negative");
  auto codebook_term = torch::mse_loss(z_q.values, z_h.values.detach());
  auto commitment = torch::mse_loss(z_h.values, z_q.values.detach());
  return codebook_term + beta * commitment;
}

double utilization(const CodeIndexGrid& indices, int64_t num_items) {
  if (num_items < 1) throw ConfigError("utilization: N must be positive");
  auto flat = indices.indices.flatten();
  if (flat.numel() == 0) return 0.0;
  if (flat.min().item<int64_t>() < 0 || flat.max().item<int64_t>() >= num_items) {
    throw DataError("utilization: index outside [0, N)");
  }
  auto counts = torch::bincount(flat, {}, num_items);
  return (counts > 0).sum().item<double>() / static_cast<double>(num_items);
}

SpatialTemporalCodebooksImpl::SpatialTemporalCodebooksImpl(int64_t spatial_size, int64_t temporal_size,
                                                           int64_t dim) {
  if (spatial_size < 2 || temporal_size < 2) throw ConfigError("codebooks need at least two items");
  const double bs = 1.0 / static_cast<double>(spatial_size);
  const double bt = 1.0 / static_cast<double>(temporal_size);
  spatial_ = register_parameter("spatial", torch::empty({spatial_size, dim}).uniform_(-bs, bs));
  temporal_ = register_parameter("temporal", torch::empty({temporal_size, dim}).uniform_(-bt, bt));
}

}  // namespace vfe
