#pragma once

// Code-lookup transformers: classify every latent cell of a degraded clip
// into an index of a frozen codebook. Cells are flattened t-major, then h,
// then w; the same order is used to unflatten predictions.

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include <array>
#include <cstdint>

#include "vfe/types.hpp"

namespace vfe {

struct LookupConfig {
  int64_t layers = 6;
  int64_t heads = 8;
  int64_t dim = 256;
  int64_t codebook_size = 1024;
  int64_t ff_mult = 4;
  // Latent grid (t, h, w) at the training resolution; fixes the sequence length.
  std::array<int64_t, 3> grid{12, 64, 64};

  int64_t sequence_length() const { return grid[0] * grid[1] * grid[2]; }
  void validate() const;
};

void to_json(nlohmann::json& j, const LookupConfig& c);
void from_json(const nlohmann::json& j, LookupConfig& c);

class LookupBlockImpl : public torch::nn::Module {
 public:
  LookupBlockImpl(int64_t dim, int64_t heads, int64_t ff_mult);
  torch::Tensor forward(const torch::Tensor& x);  // [B, L, D]

 private:
  int64_t heads_;
  torch::nn::LayerNorm norm1_{nullptr}, norm2_{nullptr};
  torch::nn::Linear qkv_{nullptr}, proj_{nullptr}, fc1_{nullptr}, fc2_{nullptr};
};
TORCH_MODULE(LookupBlock);

class LookupTransformerImpl : public torch::nn::Module {
 public:
  LookupTransformerImpl(LookupConfig config, CodebookKind kind);

  // [B, L, D] tokens -> [B, L, N] logits.
  torch::Tensor forward(const torch::Tensor& tokens);

  const LookupConfig& config() const { return config_; }
  CodebookKind kind() const { return kind_; }
  torch::nn::Linear classifier() const { return head_; }

 private:
  LookupConfig config_;
  CodebookKind kind_;
  torch::Tensor position_;
  torch::nn::Sequential blocks_{nullptr};
  torch::nn::LayerNorm norm_{nullptr};
  torch::nn::Linear head_{nullptr};
};
TORCH_MODULE(LookupTransformer);

struct CodePrediction {
  torch::Tensor logits;  // [L, N] or [B, L, N]
  CodeIndexGrid indices;
};

// Throws ShapeError if the latent grid differs from the trained sequence length.
CodePrediction predict_codes(const LatentGrid& branch, LookupTransformer& model);

// Mean cross-entropy of softmax(logits) against ground-truth indices.
torch::Tensor cross_entropy_codes(const torch::Tensor& logits, const CodeIndexGrid& gt);

// z_q[cell] = C_S[I_S[cell]] + C_T[I_T[cell]]; throws DataError naming an out-of-range cell.
LatentGrid assemble_quantized(const CodeIndexGrid& spatial_indices, const CodeIndexGrid& temporal_indices,
                              const Codebook& spatial, const Codebook& temporal);

// mean(z_l - sg(z_q))^2
torch::Tensor stage2_code_loss(const LatentGrid& z_l, const LatentGrid& z_q);

}  // namespace vfe
