#pragma once

// Spatial-temporal codebooks and the quantization path.
//
// The spatial branch quantizes the encoder latent as-is. The temporal branch
// quantizes temporal attention plus a motion residual of the same latent.
// The two retrieved codes are fused by element-wise addition.
//
// All ops accept [t, h, w, D] latents or a batched [B, t, h, w, D] variant.

#include <torch/torch.h>

#include <cstdint>

#include "vfe/types.hpp"

namespace vfe {

inline constexpr double kDistanceFloor = 1e-8;

// Dot-product attention along time, independently at every spatial location.
// Scores are scaled by 1/sqrt(D); no learned projections.
LatentGrid temporal_attention(const LatentGrid& z);

// out[tau] = z[tau] - z[max(tau - window, 0)].
LatentGrid motion_residual(const LatentGrid& z, int64_t window = 1);

struct SplitLatents {
  LatentGrid spatial;
  LatentGrid temporal;
};

// spatial = z, temporal = temporal_attention(z) + motion_residual(z, window).
SplitLatents split_latents(const LatentGrid& z, int64_t window = 1);

struct Quantized {
  CodeIndexGrid indices;
  LatentGrid values;  // differentiable w.r.t. the codebook items
};

// Euclidean nearest neighbour; ties go to the lowest index.
Quantized nn_quantize(const LatentGrid& latents, const Codebook& codebook);

struct LookupResult {
  LatentGrid z_q;  // fused: spatial item + temporal item
  CodeIndexGrid spatial_indices;
  CodeIndexGrid temporal_indices;
  SplitLatents split;
};

LookupResult st_lookup(const LatentGrid& z_h, const Codebook& spatial, const Codebook& temporal,
                       int64_t window = 1);

// Forward value is z_q (bitwise); backward routes the incoming gradient to z_h unchanged.
LatentGrid straight_through(const LatentGrid& z_h, const LatentGrid& z_q);

struct RegularizerReport {
  torch::Tensor posterior;  // [N], sums to 1
  torch::Tensor kl;         // scalar, differentiable
  double utilization = 0.0;

  double kl_value() const { return kl.item<double>(); }
};

// KL(posterior || uniform) where the posterior is the per-item mean of
// row-normalised reciprocal distances between latents and codebook items.
RegularizerReport marginal_prior_kl(const LatentGrid& latents, const Codebook& codebook,
                                    double distance_floor = kDistanceFloor);

// KL of a probability vector against the uniform distribution over its length.
torch::Tensor kl_to_uniform(const torch::Tensor& posterior);

// Reference regularizer: KL of the hard retrieval histogram against uniform. Not differentiable.
double hard_count_prior_kl(const CodeIndexGrid& indices, int64_t num_items);

// mean(sg(z_h) - z_q)^2 + beta * mean(z_h - sg(z_q))^2
torch::Tensor code_loss(const LatentGrid& z_h, const LatentGrid& z_q, double beta = 0.25);

// Fraction of [0, N) that appears at least once.
double utilization(const CodeIndexGrid& indices, int64_t num_items);

// Owns the two learnable codebooks ("spatial" and "temporal" parameters).
class SpatialTemporalCodebooksImpl : public torch::nn::Module {
 public:
  SpatialTemporalCodebooksImpl(int64_t spatial_size, int64_t temporal_size, int64_t dim);

  Codebook spatial() const { return {spatial_, CodebookKind::spatial}; }
  Codebook temporal() const { return {temporal_, CodebookKind::temporal}; }

 private:
  torch::Tensor spatial_, temporal_;
};
TORCH_MODULE(SpatialTemporalCodebooks);

}  // namespace vfe
