#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "metaseg/autodiff/ops.hpp"

namespace metaseg::embed {

using ad::Mode;
using ad::Tape;
using ad::Tensor;
using ad::Var;

enum class Setting { one_way, k_way };

struct EmbedConfig {
  std::array<int, 5> block_channels{64, 128, 256, 512, 512};
  int convs_per_block = 3;
  std::vector<int> dilations_block3{1, 2, 4};
  std::vector<int> dilations_block4{8, 16, 32};
  int input_channels = 3;
  bool gc_branch_enabled = true;
  Setting setting = Setting::k_way;

  static EmbedConfig preset(Setting setting);
  // Every block with the same width; used for micro-nets in gradient checks.
  static EmbedConfig uniform(int channels, Setting setting = Setting::k_way);

  void validate() const;
  int local_channels() const { return block_channels[3]; }
  int global_channels() const { return gc_branch_enabled ? block_channels[4] : 0; }
  int feature_channels() const { return local_channels() + global_channels(); }

  friend bool operator==(const EmbedConfig&, const EmbedConfig&) = default;
};

// Indices into EmbeddingParams::entries for one conv -> BN -> LeakyReLU unit.
struct ConvUnit {
  std::size_t weight, bias, gamma, beta, running_mean, running_var;
  int dilation = 1;
};

struct ResidualBlock {
  std::vector<ConvUnit> units;
  // 1x1 projection on the skip path when in/out widths differ.
  std::optional<std::size_t> proj_weight, proj_bias;
};

template <typename T>
struct ParamEntry {
  std::string name;
  Tensor<T> value;
  bool trainable = true;
};

template <typename T>
struct EmbeddingParams {
  EmbedConfig config;
  // Stable enumeration order: blocks 1..5, units in order, then projection.
  std::vector<ParamEntry<T>> entries;
  // Block 5 is empty when the global branch is disabled.
  std::array<ResidualBlock, 5> blocks;

  std::vector<std::size_t> trainable_indices() const;
  std::vector<Tensor<T>*> trainable_tensors();
  const ParamEntry<T>* find(const std::string& name) const;
};

// He-normal kernels, zero biases, gamma = 1, beta = 0, running stats (0, 1).
template <typename T>
EmbeddingParams<T> build_embedding(const EmbedConfig& config, std::uint64_t seed);

// Trainable scalars, running statistics excluded.
template <typename T>
std::size_t count_params(const EmbeddingParams<T>& params);

// Tape leaves for the trainable entries; indexed like EmbeddingParams::entries
// (invalid Var for non-trainable entries).
template <typename T>
struct EmbeddingVars {
  std::vector<Var<T>> by_entry;
};

template <typename T>
EmbeddingVars<T> bind_params(Tape<T>& tape, const EmbeddingParams<T>& params);

// Gradients for trainable entries, in trainable_indices() order.
template <typename T>
std::vector<Tensor<T>> collect_grads(const Tape<T>& tape, const EmbeddingParams<T>& params,
                                     const EmbeddingVars<T>& vars);

template <typename T>
struct PixelFeatures {
  Var<T> features;  // (n_images * h * w) x c
  std::size_t n_images = 0;
  std::size_t height = 0;
  std::size_t width = 0;

  std::size_t pixels_per_image() const { return height * width; }
};

// Batch statistics of every BN unit visited by a train-mode forward, keyed by
// the running_mean entry index.
template <typename T>
struct RunningStatUpdates {
  std::vector<std::pair<std::size_t, ad::BatchStats<T>>> items;
};

// images: N x C x H x W with H, W divisible by 4. Local branch at stride 4,
// global branch pooled and replicated, concatenated, l2-normalized per
// channel, flattened image-major.
template <typename T>
PixelFeatures<T> embed_forward(Tape<T>& tape, const EmbeddingParams<T>& params, const EmbeddingVars<T>& vars,
                               const Tensor<T>& images, Mode mode, RunningStatUpdates<T>* updates = nullptr);

// Momentum update of running statistics from a train-mode forward.
template <typename T>
void apply_running_stats(EmbeddingParams<T>& params, const RunningStatUpdates<T>& updates,
                         double momentum = ad::kBatchNormMomentum);

}  // namespace metaseg::embed
