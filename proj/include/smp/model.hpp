#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "smp/losses.hpp"

// Plain convolutional backbone with three heads: keypoint heatmaps A, box
// heatmaps B and keypoint vector fields D, all on one output grid.
namespace smp::model {

struct ModelConfig {
  std::int64_t in_channels = 1;
  std::int64_t parts = 3;
  /// Output stride; each factor of 2 is one stride-2 backbone layer.
  std::int64_t stride = 4;
  /// Total backbone conv layers, including the downsampling ones.
  std::int64_t backbone_depth = 4;
  std::int64_t backbone_width = 16;
  std::int64_t head_width = 16;
  /// Initial sigmoid(B), set through the final box-head bias.
  Real box_prior = 0.01;
  std::int64_t param_budget = 200000;

  std::int64_t downsampling_layers() const;
  /// Throws std::invalid_argument on an invalid combination.
  void validate() const;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

struct NamedTensor {
  std::string name;
  Tensor value;
};

struct ModelParams {
  ModelConfig config;
  std::uint64_t seed = 0;
  std::vector<NamedTensor> tensors;

  std::vector<Tensor> trainable() const;
  std::int64_t count() const;
  const Tensor& at(const std::string& name) const;
};

/// Fan-in scaled uniform init, deterministic in seed. Head output layers use a
/// 100x smaller range; the box head bias starts at -log((1 - prior) / prior).
ModelParams init(const ModelConfig& config, std::uint64_t seed);

/// frames [N,H_I,W_I,C] -> A, B [N,H,W,K] and D [N,H,W,K,2] with H = H_I/stride.
BranchOutputs forward(const ModelParams& params, const Tensor& frames);

/// Binary checkpoint: "SMPCKPT1", u64 header length, JSON header (config, seed,
/// iteration, extra metadata, tensor names and shapes), then every tensor's
/// values as little-endian IEEE-754 doubles in header order.
struct Checkpoint {
  ModelParams params;
  std::int64_t iteration = 0;
  nlohmann::json metadata = nlohmann::json::object();
};

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace smp::model
