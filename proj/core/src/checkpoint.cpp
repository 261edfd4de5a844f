#include "vfe/checkpoint.hpp"

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>

namespace vfe {

namespace fs = std::filesystem;

void save_checkpoint(const std::string& path, const Checkpoint& checkpoint) {
  c10::Dict<std::string, torch::Tensor> dict;
  for (const auto& [name, t] : checkpoint.tensors) dict.insert(name, t.detach().cpu().contiguous());
  nlohmann::json manifest = checkpoint.manifest;
  manifest["version"] = kCheckpointVersion;
  const std::string text = manifest.dump();
  auto bytes = torch::empty({static_cast<int64_t>(text.size())}, torch::kUInt8);
  std::memcpy(bytes.data_ptr(), text.data(), text.size());
  dict.insert(kManifestKey, bytes);
  const auto data = torch::pickle_save(c10::IValue(dict));

  const fs::path target(path);
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  const fs::path tmp = target.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write checkpoint " + tmp.string());
    out.write(data.data(), static_cast<std::streamsize>(data.size()));
    if (!out) throw DataError("short write on checkpoint " + tmp.string());
  }
  fs::rename(tmp, target);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("checkpoint not found: " + path);
  std::vector<char> data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  c10::IValue value;
  try {
    value = torch::pickle_load(data);
  } catch (const c10::Error& e) {
    throw DataError("malformed checkpoint " + path + ": " + e.what_without_backtrace());
  }
  if (!value.isGenericDict()) throw DataError("malformed checkpoint " + path + ": not a dictionary");
  Checkpoint ck;
  bool have_manifest = false;
  for (const auto& entry : value.toGenericDict()) {
    const auto key = entry.key().toStringRef();
    auto t = entry.value().toTensor();
    if (key == kManifestKey) {
      std::string text(static_cast<const char*>(t.data_ptr()), static_cast<size_t>(t.numel()));
      try {
        ck.manifest = nlohmann::json::parse(text);
      } catch (const nlohmann::json::exception& e) {
        throw DataError("checkpoint " + path + ": unreadable manifest: " + e.what());
      }
      have_manifest = true;
    } else {
      ck.tensors.emplace(key, t);
    }
  }
  if (!have_manifest) throw DataError("checkpoint " + path + " has no manifest");
  if (ck.manifest.value("version", 0) != kCheckpointVersion) {
    throw ConfigError("checkpoint " + path + ": manifest version " + ck.manifest.value("version", nlohmann::json(0)).dump() +
                      " is not supported (expected " + std::to_string(kCheckpointVersion) + ")");
  }
  return ck;
}

void collect_tensors(TensorMap& out, const std::string& prefix, const torch::nn::Module& module) {
  for (const auto& p : module.named_parameters(true)) out[prefix + "." + p.key()] = p.value().detach().clone();
  for (const auto& b : module.named_buffers(true)) out[prefix + "." + b.key()] = b.value().detach().clone();
}

void restore_tensors(const TensorMap& in, const std::string& prefix, torch::nn::Module& module) {
  torch::NoGradGuard no_grad;
  auto copy = [&](const std::string& name, torch::Tensor& dst) {
    const auto key = prefix + "." + name;
    auto it = in.find(key);
    if (it == in.end()) throw DataError("checkpoint is missing tensor '" + key + "'");
    if (it->second.sizes() != dst.sizes()) {
      throw DataError("checkpoint tensor '" + key + "' has shape " + c10::str(it->second.sizes()) + ", model expects " +
                      c10::str(dst.sizes()));
    }
    dst.copy_(it->second);
  };
  for (auto& p : module.named_parameters(true)) copy(p.key(), p.value());
  for (auto& b : module.named_buffers(true)) copy(b.key(), b.value());
}

uint64_t fnv1a64(std::string_view bytes) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(uint64_t value) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(value));
  return buf;
}

std::string file_hash(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot hash missing file " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return hex64(fnv1a64(ss.str()));
}

}  // namespace vfe
