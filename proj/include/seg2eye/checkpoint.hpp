#pragma once

#include <json.hpp>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "seg2eye/models.hpp"
#include "seg2eye/params.hpp"
#include "seg2eye/tensor.hpp"

namespace seg2eye {

// Binary checkpoint: u64 little-endian header length, JSON header
// (format_version, kind, step, config, manifest with names/shapes/offsets),
// then raw little-endian float32 payloads in manifest order.

inline constexpr int kCheckpointFormatVersion = 1;

struct CheckpointError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct CheckpointVersionError : CheckpointError {
  using CheckpointError::CheckpointError;
};
struct CheckpointKindError : CheckpointError {
  using CheckpointError::CheckpointError;
};
struct CheckpointFormatError : CheckpointError {
  using CheckpointError::CheckpointError;
};

struct Checkpoint {
  std::string kind;  // segmenter | refiner | gan
  long step = 0;
  nlohmann::json config;  // model config keys
  nlohmann::json extra;   // optimizer counters, train config
  std::vector<std::pair<std::string, Tensor<float>>> tensors;

  const Tensor<float>* find(const std::string& name) const {
    for (auto& [n, t] : tensors)
      if (n == name) return &t;
    return nullptr;
  }
};

void save_checkpoint_file(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint_file(const std::string& path);

nlohmann::json model_config_to_json(const nn::ModelConfig& cfg);
nn::ModelConfig model_config_from_json(const nlohmann::json& j);

// Snapshot parameter values plus spectral state into named tensors.
void snapshot_store(const nn::ParamStore<float>& store, Checkpoint& ckpt);
// Restore in place; throws CheckpointFormatError on missing names or shape
// mismatches.
void restore_store(nn::ParamStore<float>& store, const Checkpoint& ckpt);

// Model loaders that validate the checkpoint kind.
SegmenterModel load_segmenter(const std::string& path, Checkpoint* out_ckpt = nullptr);
RefinerModel load_refiner(const std::string& path, Checkpoint* out_ckpt = nullptr);
GanModel load_gan(const std::string& path, Checkpoint* out_ckpt = nullptr);

// FNV-1a hash of a file's bytes, as 16 hex digits. Used to key the
// pseudo-label cache by segmenter checkpoint.
std::string file_hash_hex(const std::string& path);

}  // namespace seg2eye
