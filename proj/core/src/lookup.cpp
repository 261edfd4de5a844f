#include "vfe/lookup.hpp"

#include <cmath>

namespace vfe {

void LookupConfig::validate() const {
  if (layers < 1 || heads < 1 || dim < 1 || codebook_size < 2 || ff_mult < 1) {
    throw ConfigError("lookup: layers, heads, dim, ff_mult must be positive and codebook_size >= 2");
  }
  if (dim % heads != 0) throw ConfigError("lookup: dim must be divisible by heads");
  for (auto g : grid) {
    if (g < 1) throw ConfigError("lookup: grid extents must be positive");
  }
}

void to_json(nlohmann::json& j, const LookupConfig& c) {
  j = nlohmann::json{{"layers", c.layers}, {"heads", c.heads},     {"dim", c.dim},
                     {"codebook_size", c.codebook_size}, {"ff_mult", c.ff_mult}, {"grid", c.grid}};
}

void from_json(const nlohmann::json& j, LookupConfig& c) {
  c.layers = j.value("layers", c.layers);
  c.heads = j.value("heads", c.heads);
  c.dim = j.value("dim", c.dim);
  c.codebook_size = j.value("codebook_size", c.codebook_size);
  c.ff_mult = j.value("ff_mult", c.ff_mult);
  if (j.contains("grid")) c.grid = j.at("grid").get<std::array<int64_t, 3>>();
}

LookupBlockImpl::LookupBlockImpl(int64_t dim, int64_t heads, int64_t ff_mult) : heads_(heads) {
  norm1_ = register_module("norm1", torch::nn::LayerNorm(torch::nn::LayerNormOptions({dim})));
  qkv_ = register_module("qkv", torch::nn::Linear(dim, 3 * dim));
  proj_ = register_module("proj", torch::nn::Linear(dim, dim));
  norm2_ = register_module("norm2", torch::nn::LayerNorm(torch::nn::LayerNormOptions({dim})));
  fc1_ = register_module("fc1", torch::nn::Linear(dim, ff_mult * dim));
  fc2_ = register_module("fc2", torch::nn::Linear(ff_mult * dim, dim));
}

torch::Tensor LookupBlockImpl::forward(const torch::Tensor& x) {
  const auto b = x.size(0), l = x.size(1), d = x.size(2);
  const auto hd = d / heads_;
  auto qkv = qkv_->forward(norm1_->forward(x)).view({b, l, 3, heads_, hd}).permute({2, 0, 3, 1, 4});
  auto q = qkv[0], k = qkv[1], v = qkv[2];
  auto attn = torch::softmax(torch::matmul(q, k.transpose(-1, -2)) / std::sqrt(static_cast<double>(hd)), -1);
  auto mixed = torch::matmul(attn, v).permute({0, 2, 1, 3}).reshape({b, l, d});
  auto h = x + proj_->forward(mixed);
  return h + fc2_->forward(torch::gelu(fc1_->forward(norm2_->forward(h))));
}

LookupTransformerImpl::LookupTransformerImpl(LookupConfig config, CodebookKind kind)
    : config_(std::move(config)), kind_(kind) {
  config_.validate();
  position_ = register_parameter("position", torch::randn({config_.sequence_length(), config_.dim}) * 0.02);
  blocks_ = torch::nn::Sequential();
  for (int64_t i = 0; i < config_.layers; ++i) blocks_->push_back(LookupBlock(config_.dim, config_.heads, config_.ff_mult));
  register_module("blocks", blocks_);
  norm_ = register_module("norm", torch::nn::LayerNorm(torch::nn::LayerNormOptions({config_.dim})));
  head_ = register_module("head", torch::nn::Linear(config_.dim, config_.codebook_size));
}

torch::Tensor LookupTransformerImpl::forward(const torch::Tensor& tokens) {
  if (tokens.dim() != 3 || tokens.size(1) != config_.sequence_length() || tokens.size(2) != config_.dim) {
    throw ShapeError("lookup transformer expects [B, " + std::to_string(config_.sequence_length()) + ", " +
                     std::to_string(config_.dim) + "] tokens, got " + c10::str(tokens.sizes()));
  }
  auto h = blocks_->forward(tokens + position_.unsqueeze(0));
  return head_->forward(norm_->forward(h));
}

CodePrediction predict_codes(const LatentGrid& branch, LookupTransformer& model) {
  check_latent(branch, "predict_codes");
  const auto& cfg = model->config();
  auto z = branch.batched() ? branch.values : branch.values.unsqueeze(0);
  const int64_t len = z.size(1) * z.size(2) * z.size(3);
  if (len != cfg.sequence_length() || z.size(4) != cfg.dim) {
    throw ShapeError("predict_codes: latent grid " + c10::str(z.sizes().slice(1)) + " does not match the trained grid (" +
                     std::to_string(cfg.grid[0]) + ", " + std::to_string(cfg.grid[1]) + ", " +
                     std::to_string(cfg.grid[2]) + ", " + std::to_string(cfg.dim) +
                     "); learnable position embeddings require the training resolution");
  }
  auto logits = model->forward(z.reshape({z.size(0), len, z.size(4)}));
  auto idx = logits.argmax(-1).view({z.size(0), z.size(1), z.size(2), z.size(3)});
  if (!branch.batched()) {
    logits = logits.squeeze(0);
    idx = idx.squeeze(0);
  }
  return {logits, CodeIndexGrid{idx, model->kind()}};
}

torch::Tensor cross_entropy_codes(const torch::Tensor& logits, const CodeIndexGrid& gt) {
  const int64_t n = logits.size(-1);
  auto flat_gt = gt.indices.flatten();
  if (flat_gt.numel() != logits.numel() / n) throw ShapeError("cross_entropy_codes: logits/target cell count mismatch");
  if (flat_gt.numel() > 0 && (flat_gt.min().item<int64_t>() < 0 || flat_gt.max().item<int64_t>() >= n)) {
    throw DataError("cross_entropy_codes: target index outside [0, N)");
  }
  return torch::nn::functional::cross_entropy(logits.reshape({-1, n}), flat_gt);
}

namespace {

void check_indices(const CodeIndexGrid& grid, int64_t n, std::string_view what) {
  auto bad = grid.indices.lt(0).logical_or(grid.indices.ge(n));
  if (!bad.any().item<bool>()) return;
  auto pos = bad.nonzero()[0];
  std::string cell;
  auto value = grid.indices;
  for (int64_t i = 0; i < pos.numel(); ++i) {
    const int64_t p = pos[i].item<int64_t>();
    cell += (i ? ", " : "") + std::to_string(p);
    value = value[p];
  }
  throw DataError(std::string(what) + " index " + std::to_string(value.item<int64_t>()) + " at cell (" + cell +
                  ") is outside [0, " + std::to_string(n) + ")");
}

}  // namespace

LatentGrid assemble_quantized(const CodeIndexGrid& spatial_indices, const CodeIndexGrid& temporal_indices,
                              const Codebook& spatial, const Codebook& temporal) {
  check_codebook(spatial);
  check_codebook(temporal);
  if (spatial_indices.indices.sizes() != temporal_indices.indices.sizes()) {
    throw ShapeError("assemble_quantized: index grids differ in shape");
  }
  if (spatial.dim() != temporal.dim()) throw ShapeError("assemble_quantized: codebook dimensions differ");
  check_indices(spatial_indices, spatial.size(), "spatial");
  check_indices(temporal_indices, temporal.size(), "temporal");
  auto shape = spatial_indices.indices.sizes().vec();
  shape.push_back(spatial.dim());
  auto zs = spatial.items.index_select(0, spatial_indices.indices.flatten());
  auto zt = temporal.items.index_select(0, temporal_indices.indices.flatten());
  return {(zs + zt).view(shape)};
}

torch::Tensor stage2_code_loss(const LatentGrid& z_l, const LatentGrid& z_q) {
  if (z_l.values.sizes() != z_q.values.sizes()) throw ShapeError("stage2_code_loss: shape mismatch");
  return torch::mse_loss(z_l.values, z_q.values.detach());
}

}  // namespace vfe
