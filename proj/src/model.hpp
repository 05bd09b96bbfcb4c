#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "attention.hpp"
#include "layers.hpp"
#include "tensor.hpp"

namespace attenlab {

struct StageSpec {
  int convs = 1;     // 3x3 conv blocks before the stage's 2x2 pool
  int channels = 16;
};

struct ModelConfig {
  int input_size = 64;
  std::vector<StageSpec> stages{{1, 16}, {1, 32}, {1, 64}};
  bool position_attention = true;
  bool channel_attention = true;
  int head1 = 256;
  int head2 = 64;
  int classes = 4;
  int gate_reduction = 4;
  uint64_t seed = 42;
};

// "hienet-mini" (64px, 3 stages) or "hienet-full" (224px, VGG-16 stages).
ModelConfig preset_config(const std::string& name);

// JSON round trip; parse accepts a "preset" key as the base plus overrides.
std::string config_to_json(const ModelConfig& config);
ModelConfig config_from_json(const std::string& json_text);
uint64_t config_hash(const ModelConfig& config);

struct ConvBlock {
  ConvParams conv;
  BatchNormParams bn;
};

struct Model {
  ModelConfig config;
  std::vector<std::vector<ConvBlock>> stages;
  std::optional<PositionAttentionParams> position;
  std::optional<ChannelAttentionParams> channel;
  DenseParams fc1, fc2, fc3;
};

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

// Deterministic seeded initialization; throws ConfigError on inconsistent
// configurations (pool underflow, attention on a sub-2-position map, ...).
Model build_model(const ModelConfig& config);

// Trainable parameters in a fixed order (the optimizer contract).
std::vector<NamedTensor> trainable_parameters(Model& model);
// Trainables plus batch-norm running buffers; the checkpoint contents.
std::vector<NamedTensor> state_tensors(Model& model);

struct ForwardResult {
  Tensor probs;       // (n, classes)
  Tensor logits;      // (n, classes)
  Tensor input;       // the graph leaf fed to the backbone
  Tensor backbone;    // backbone output map
  Tensor pos_map;     // defined when position attention is on
  Tensor chan_map;    // defined when channel attention is on
  Tensor fused_map;   // channel concat feeding the head
  Tensor fused_gap;   // gap(fused_map); the saliency weighting hook
};

// batch must be (n, input_size, input_size, 3). Train mode updates BN running
// stats; infer mode leaves the model untouched.
ForwardResult forward(Model& model, const Tensor& batch, Mode mode);

// HIEN1 container: magic, one-line JSON manifest, little-endian binary32
// blob. Loading rebuilds from the embedded config and fails on any mismatch.
void save_checkpoint(Model& model, const std::string& path);
Model load_checkpoint(const std::string& path);

}  // namespace attenlab
