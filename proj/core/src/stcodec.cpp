#include "vfe/stcodec.hpp"

#include <cmath>

namespace vfe {

namespace {

namespace F = torch::nn::functional;

// At most 32 groups, at least 4 channels per group.
int64_t group_count(int64_t channels) {
  for (int64_t g : {32, 16, 8, 4, 2}) {
    if (channels % g == 0 && channels / g >= 4) return g;
  }
  return 1;
}

torch::nn::GroupNorm make_norm(int64_t channels) {
  return torch::nn::GroupNorm(torch::nn::GroupNormOptions(group_count(channels), channels).eps(1e-6));
}

torch::nn::Conv3d pointwise(int64_t in, int64_t out) {
  return torch::nn::Conv3d(torch::nn::Conv3dOptions(in, out, 1));
}

bool is_power_of_two(int64_t v) { return v > 0 && (v & (v - 1)) == 0; }

std::string block_name(BlockKind k) {
  switch (k) {
    case BlockKind::residual:
      return "residual";
    case BlockKind::downsample:
      return "downsample";
    case BlockKind::attention:
      return "attention";
  }
  return "?";
}

BlockKind block_kind(const std::string& s) {
  if (s == "residual") return BlockKind::residual;
  if (s == "downsample") return BlockKind::downsample;
  if (s == "attention") return BlockKind::attention;
  throw ConfigError("unknown block kind '" + s + "'");
}

}  // namespace

BackboneConfig BackboneConfig::standard(int64_t latent_dim, std::vector<int64_t> widths, int64_t stem_channels) {
  if (widths.size() != 3) throw ConfigError("standard layout expects three stage widths");
  BackboneConfig c;
  c.latent_dim = latent_dim;
  c.stem_channels = stem_channels;
  int64_t prev = stem_channels;
  for (size_t i = 0; i < widths.size(); ++i) {
    c.blocks.push_back({BlockKind::residual, prev});
    c.blocks.push_back({BlockKind::downsample, widths[i], 2, i == 1 ? 2 : 1});
    prev = widths[i];
  }
  c.blocks.push_back({BlockKind::residual, prev});
  c.blocks.push_back({BlockKind::attention});
  return c;
}

void BackboneConfig::validate() const {
  if (latent_dim < 1) throw ConfigError("latent_dim must be positive");
  if (stem_channels < 1) throw ConfigError("stem_channels must be positive");
  int64_t s = 1, t = 1;
  for (size_t i = 0; i < blocks.size(); ++i) {
    const auto& b = blocks[i];
    const std::string where = "block " + std::to_string(i) + " (" + block_name(b.kind) + ")";
    if (b.kind != BlockKind::attention && b.channels < 1) throw ConfigError(where + ": channels must be positive");
    if (b.kind == BlockKind::downsample) {
      if (b.temporal_stride > 1 && b.spatial_stride == 1) {
        throw ConfigError(where + ": temporal-only sampling is not supported");
      }
      if (b.spatial_stride < 2 || b.temporal_stride < 1) throw ConfigError(where + ": invalid strides");
      if (b.spatial_stride != 2 || b.temporal_stride > 2) {
        throw ConfigError(where + ": strides are limited to spatial 2 and temporal 1 or 2");
      }
      s *= b.spatial_stride;
      t *= b.temporal_stride;
    } else if (b.spatial_stride != 1 || b.temporal_stride != 1) {
      throw ConfigError(where + ": only downsample blocks may carry strides");
    }
  }
  if (s != spatial_ratio || t != temporal_ratio) {
    throw ConfigError("block layout yields ratios (" + std::to_string(s) + ", " + std::to_string(t) +
                      ") but config declares (" + std::to_string(spatial_ratio) + ", " +
                      std::to_string(temporal_ratio) + ")");
  }
  if (!is_power_of_two(spatial_ratio) || !is_power_of_two(temporal_ratio)) {
    throw ConfigError("ratios must be powers of two");
  }
}

void to_json(nlohmann::json& j, const BackboneConfig& c) {
  nlohmann::json blocks = nlohmann::json::array();
  for (const auto& b : c.blocks) {
    nlohmann::json jb{{"kind", block_name(b.kind)}};
    if (b.kind != BlockKind::attention) jb["channels"] = b.channels;
    if (b.kind == BlockKind::downsample) {
      jb["spatial_stride"] = b.spatial_stride;
      jb["temporal_stride"] = b.temporal_stride;
    }
    blocks.push_back(jb);
  }
  j = nlohmann::json{{"spatial_ratio", c.spatial_ratio}, {"temporal_ratio", c.temporal_ratio},
                     {"latent_dim", c.latent_dim},       {"stem_channels", c.stem_channels},
                     {"blocks", blocks}};
}

void from_json(const nlohmann::json& j, BackboneConfig& c) {
  for (const auto& [key, _] : j.items()) {
    static const std::vector<std::string> allowed{"spatial_ratio", "temporal_ratio", "latent_dim", "stem_channels",
                                                  "blocks", "widths"};
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
      throw ConfigError("backbone: unknown key '" + key + "'");
    }
  }
  const int64_t d = j.value("latent_dim", int64_t{256});
  const int64_t stem = j.value("stem_channels", int64_t{64});
  if (j.contains("blocks")) {
    c = BackboneConfig{};
    c.latent_dim = d;
    c.stem_channels = stem;
    for (const auto& jb : j.at("blocks")) {
      BlockSpec b;
      b.kind = block_kind(jb.at("kind").get<std::string>());
      b.channels = jb.value("channels", int64_t{0});
      b.spatial_stride = jb.value("spatial_stride", int64_t{1});
      b.temporal_stride = jb.value("temporal_stride", int64_t{1});
      c.blocks.push_back(b);
    }
  } else {
    c = BackboneConfig::standard(d, j.value("widths", std::vector<int64_t>{128, 256, 256}), stem);
  }
  c.spatial_ratio = j.value("spatial_ratio", int64_t{8});
  c.temporal_ratio = j.value("temporal_ratio", int64_t{2});
}

// ---------------------------------------------------------------------------

ReplicateConv3dImpl::ReplicateConv3dImpl(int64_t in, int64_t out, int64_t kernel, std::vector<int64_t> stride)
    : pad_((kernel - 1) / 2) {
  conv_ = register_module("conv", torch::nn::Conv3d(torch::nn::Conv3dOptions(in, out, kernel).stride(stride)));
}

torch::Tensor ReplicateConv3dImpl::forward(const torch::Tensor& x) {
  if (pad_ == 0) return conv_->forward(x);
  return conv_->forward(F::pad(x, F::PadFuncOptions({pad_, pad_, pad_, pad_, pad_, pad_}).mode(torch::kReplicate)));
}

ResidualBlock3dImpl::ResidualBlock3dImpl(int64_t in, int64_t out) {
  norm1_ = register_module("norm1", make_norm(in));
  conv1_ = register_module("conv1", ReplicateConv3d(in, out, 3));
  norm2_ = register_module("norm2", make_norm(out));
  conv2_ = register_module("conv2", ReplicateConv3d(out, out, 3));
  if (in != out) skip_ = register_module("skip", pointwise(in, out));
}

torch::Tensor ResidualBlock3dImpl::forward(const torch::Tensor& x) {
  auto h = conv1_->forward(torch::silu(norm1_->forward(x)));
  h = conv2_->forward(torch::silu(norm2_->forward(h)));
  return (skip_ ? skip_->forward(x) : x) + h;
}

ConvAttention3dImpl::ConvAttention3dImpl(int64_t channels) {
  norm_ = register_module("norm", make_norm(channels));
  q_ = register_module("q", pointwise(channels, channels));
  k_ = register_module("k", pointwise(channels, channels));
  v_ = register_module("v", pointwise(channels, channels));
  proj_ = register_module("proj", pointwise(channels, channels));
}

torch::Tensor ConvAttention3dImpl::forward(const torch::Tensor& x) {
  const auto b = x.size(0), c = x.size(1), t = x.size(2), h = x.size(3), w = x.size(4);
  auto n = norm_->forward(x);
  // [B, C, T, H, W] -> [B*T, H*W, C]
  auto flat = [&](const torch::Tensor& y) { return y.permute({0, 2, 3, 4, 1}).reshape({b * t, h * w, c}); };
  auto q = flat(q_->forward(n));
  auto k = flat(k_->forward(n));
  auto v = flat(v_->forward(n));
  auto attn = torch::softmax(torch::bmm(q, k.transpose(1, 2)) / std::sqrt(static_cast<double>(c)), -1);
  auto out = torch::bmm(attn, v).reshape({b, t, h, w, c}).permute({0, 4, 1, 2, 3});
  return x + proj_->forward(out);
}

Upsample3dImpl::Upsample3dImpl(int64_t in, int64_t out, int64_t spatial_stride, int64_t temporal_stride)
    : spatial_stride_(spatial_stride), temporal_stride_(temporal_stride) {
  conv_ = register_module("conv", ReplicateConv3d(in, out, 3));
}

torch::Tensor Upsample3dImpl::forward(const torch::Tensor& x) {
  auto y = x;
  if (temporal_stride_ > 1) y = y.repeat_interleave(temporal_stride_, 2);
  if (spatial_stride_ > 1) y = y.repeat_interleave(spatial_stride_, 3).repeat_interleave(spatial_stride_, 4);
  return conv_->forward(y);
}

Encoder3dImpl::Encoder3dImpl(BackboneConfig config, BackboneRole role) : config_(std::move(config)), role_(role) {
  config_.validate();
  stem_ = register_module("stem", ReplicateConv3d(3, config_.stem_channels, 3));
  body_ = torch::nn::Sequential();
  int64_t ch = config_.stem_channels;
  for (const auto& b : config_.blocks) {
    switch (b.kind) {
      case BlockKind::residual:
        body_->push_back(ResidualBlock3d(ch, b.channels));
        ch = b.channels;
        break;
      case BlockKind::downsample:
        body_->push_back(ReplicateConv3d(ch, b.channels, 3, std::vector<int64_t>{b.temporal_stride, b.spatial_stride,
                                                                                  b.spatial_stride}));
        ch = b.channels;
        break;
      case BlockKind::attention:
        body_->push_back(ConvAttention3d(ch));
        break;
    }
  }
  register_module("body", body_);
  norm_out_ = register_module("norm_out", make_norm(ch));
  to_latent_ = register_module("to_latent", pointwise(ch, config_.latent_dim));
}

torch::Tensor Encoder3dImpl::forward(const torch::Tensor& x) {
  auto h = stem_->forward(x * 2.0 - 1.0);
  h = body_->forward(h);
  h = to_latent_->forward(torch::silu(norm_out_->forward(h)));
  return to_channels_last(h);
}

Decoder3dImpl::Decoder3dImpl(BackboneConfig config) : config_(std::move(config)) {
  config_.validate();
  // Walk the encoder layout to learn each block's input width, then mirror it.
  std::vector<int64_t> in_ch;
  int64_t ch = config_.stem_channels;
  for (const auto& b : config_.blocks) {
    in_ch.push_back(ch);
    if (b.kind != BlockKind::attention) ch = b.channels;
  }
  from_latent_ = register_module("from_latent", pointwise(config_.latent_dim, ch));
  body_ = torch::nn::Sequential();
  for (size_t i = config_.blocks.size(); i-- > 0;) {
    const auto& b = config_.blocks[i];
    switch (b.kind) {
      case BlockKind::residual:
        body_->push_back(ResidualBlock3d(ch, in_ch[i]));
        break;
      case BlockKind::downsample:
        body_->push_back(Upsample3d(ch, in_ch[i], b.spatial_stride, b.temporal_stride));
        break;
      case BlockKind::attention:
        body_->push_back(ConvAttention3d(ch));
        break;
    }
    ch = in_ch[i];
  }
  register_module("body", body_);
  norm_out_ = register_module("norm_out", make_norm(ch));
  to_rgb_ = register_module("to_rgb", ReplicateConv3d(ch, 3, 3));
}

torch::Tensor Decoder3dImpl::forward(const torch::Tensor& z) {
  auto h = from_latent_->forward(to_channels_first(z));
  h = body_->forward(h);
  h = to_rgb_->forward(torch::silu(norm_out_->forward(h)));
  return (h + 1.0) * 0.5;
}

Encoder3d build_encoder(const BackboneConfig& config, BackboneRole role) {
  if (role == BackboneRole::decoder) throw ConfigError("build_encoder called with decoder role");
  return Encoder3d(config, role);
}

Decoder3d build_decoder(const BackboneConfig& config) { return Decoder3d(config); }

int64_t parameter_count(const torch::nn::Module& m) {
  int64_t n = 0;
  for (const auto& p : m.parameters()) n += p.numel();
  return n;
}

void check_divisible(const BackboneConfig& config, int64_t frames, int64_t height, int64_t width) {
  auto check = [](const char* axis, int64_t v, int64_t ratio) {
    if (v < 1 || v % ratio != 0) {
      throw ShapeError(std::string("axis ") + axis + " = " + std::to_string(v) + " is not divisible by ratio " +
                       std::to_string(ratio));
    }
  };
  check("T", frames, config.temporal_ratio);
  check("H", height, config.spatial_ratio);
  check("W", width, config.spatial_ratio);
}

LatentGrid encode(Encoder3d& encoder, const VideoTensor& video) {
  const auto& f = video.frames;
  if (f.dim() != 4 || f.size(3) != 3) throw ShapeError("encode: video must have layout [T, H, W, 3]");
  check_divisible(encoder->config(), f.size(0), f.size(1), f.size(2));
  auto z = encoder->forward(to_channels_first(f.unsqueeze(0)));
  return LatentGrid{z.squeeze(0)};
}

VideoTensor decode(Decoder3d& decoder, const LatentGrid& z_q) {
  check_latent(z_q, "decode");
  if (z_q.dim() != decoder->config().latent_dim) {
    throw ShapeError("decode: latent dimension " + std::to_string(z_q.dim()) + " does not match decoder D = " +
                     std::to_string(decoder->config().latent_dim));
  }
  if (z_q.batched()) throw ShapeError("decode: expects a single [t, h, w, D] latent");
  auto x = to_channels_last(decoder->forward(z_q.values.unsqueeze(0))).clamp(0.0, 1.0);
  return VideoTensor{x.squeeze(0)};
}

}  // namespace vfe
