#pragma once

// Checkpoint container: one pickled dictionary of named tensors plus a JSON
// manifest stored as a byte tensor under kManifestKey. Writes are atomic.

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include <cstdint>
#include <map>
#include <string>

#include "vfe/types.hpp"

namespace vfe {

inline constexpr int kCheckpointVersion = 1;
inline constexpr const char* kManifestKey = "__manifest__";

using TensorMap = std::map<std::string, torch::Tensor>;

struct Checkpoint {
  nlohmann::json manifest;
  TensorMap tensors;
};

void save_checkpoint(const std::string& path, const Checkpoint& checkpoint);
// Throws DataError when the file is missing or malformed, ConfigError on a version mismatch.
Checkpoint load_checkpoint(const std::string& path);

// Parameters and buffers of `module`, keys prefixed with "<prefix>.".
void collect_tensors(TensorMap& out, const std::string& prefix, const torch::nn::Module& module);
// Copies every "<prefix>.*" tensor into `module`; missing or mis-shaped entries throw DataError.
void restore_tensors(const TensorMap& in, const std::string& prefix, torch::nn::Module& module);

// FNV-1a over raw bytes; used for config and checkpoint hashes in run manifests.
uint64_t fnv1a64(std::string_view bytes);
std::string hex64(uint64_t value);
std::string file_hash(const std::string& path);

}  // namespace vfe
