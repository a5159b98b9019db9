#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "metaseg/autodiff/adam.hpp"
#include "metaseg/common/config_text.hpp"
#include "metaseg/embed/embedding.hpp"
#include "metaseg/episodes/sampler.hpp"
#include "metaseg/ridge/heads.hpp"
#include "metaseg/trainer/checkpoint.hpp"

namespace metaseg::trainer {

using ad::Tape;
using ad::Tensor;
using ad::Var;

enum class Precision { f32, f64 };
enum class LossResolution { feature, full };

std::string to_string(Precision p);
Precision parse_precision(const std::string& text);
std::string to_string(LossResolution r);
LossResolution parse_loss_resolution(const std::string& text);

struct TrainConfig {
  int K = 2;
  int N = 5;
  int Q = 2;
  int episodes_per_epoch = 200;
  int epochs = 20;
  double lr = 1e-3;
  std::uint64_t seed = 1;
  Precision precision = Precision::f32;
  ridge::HeadKind head = ridge::HeadKind::ridge;
  bool augment = true;
  LossResolution loss_resolution = LossResolution::feature;
  int meta_batch = 1;
  double clip_norm = 0.0;  // global gradient-norm clip, 0 = off
  int eval_every = 0;      // epochs between novel-split evaluations, 0 = off
  int eval_tasks = 50;
  int workers = 1;
  std::size_t support_cap = 0;  // max support pixels for the base learner, 0 = all
  double convstep_lr = 1e-3;
  embed::EmbedConfig embed;

  void validate() const;
  // [train] and [embed] sections; from_text(to_text()) round-trips.
  std::string to_text() const;
  // Consumes the train.* and embed.* keys it knows.
  void apply(ConfigTable& table);
  static TrainConfig from_text(const std::string& text);

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

template <typename T>
struct Model {
  embed::EmbeddingParams<T> embed;
  ridge::RidgeHead<T> head;
  ridge::HeadKind kind = ridge::HeadKind::ridge;

  // Embedding trainables, then log_lambda, alpha, beta for the ridge head.
  std::vector<Tensor<T>*> trainable();
  std::vector<std::string> trainable_names() const;
};

template <typename T>
Model<T> init_model(const TrainConfig& config);

// An episode with its labels at feature resolution (stride 4) and, for the
// query, at full resolution.
struct PreparedEpisode {
  episodes::Episode episode;
  std::vector<int> support_labels;
  std::vector<int> query_labels;
  std::vector<int> query_labels_full;
};

inline constexpr std::size_t kOutputStride = 4;

PreparedEpisode prepare_episode(const episodes::SegDataset& dataset, episodes::Split split, int K, int N, int Q,
                                std::uint64_t seed, bool augment);

struct HeadOptions {
  std::size_t support_cap = 0;
  double convstep_lr = 1e-3;
};

template <typename T>
struct ModelVars {
  embed::EmbeddingVars<T> embed;
  ridge::RidgeHeadVars<T> head;  // bound only for the ridge head
};

template <typename T>
ModelVars<T> bind_model(Tape<T>& tape, const Model<T>& model);

// Query logits at feature resolution, one row per query feature pixel and
// K + 1 columns. Support and query go through the embedding as one batch.
template <typename T>
Var<T> episode_logits(Tape<T>& tape, const Model<T>& model, const ModelVars<T>& vars, const PreparedEpisode& prepared,
                      ad::Mode mode, const HeadOptions& options, embed::RunningStatUpdates<T>* updates = nullptr);

// Mean pixel cross-entropy over every query pixel of the episode.
template <typename T>
Var<T> meta_loss(const Var<T>& logits, std::span<const int> labels);

template <typename T>
struct EpisodeResult {
  double loss = 0;
  std::vector<Tensor<T>> grads;  // Model::trainable() order
  embed::RunningStatUpdates<T> stats;
};

template <typename T>
EpisodeResult<T> train_episode(const Model<T>& model, const PreparedEpisode& prepared, const TrainConfig& config,
                               ad::Mode mode = ad::Mode::train);

template <typename T>
struct TrainState {
  TrainConfig config;
  Model<T> model;
  ad::AdamState<T> adam;
  std::uint64_t epoch = 0;  // completed epochs
};

template <typename T>
TrainState<T> init_state(const TrainConfig& config);

template <typename T>
Checkpoint to_checkpoint(const TrainState<T>& state);
template <typename T>
TrainState<T> state_from_checkpoint(const Checkpoint& checkpoint);

// Seed of episode `index` in epoch `epoch` (0-based).
std::uint64_t episode_seed(std::uint64_t train_seed, std::uint64_t epoch, std::uint64_t index);

struct EpochLog {
  int epoch = 0;  // 1-based
  double mean_loss = 0;
  double eval_miou = -1;  // negative when not evaluated this epoch
  double seconds = 0;
};

template <typename T>
using EpochCallback = std::function<void(const EpochLog&, const TrainState<T>&)>;

// Runs epochs until state.epoch reaches config.epochs (or stop_after more
// epochs were done when stop_after > 0). Episodes of an epoch are prepared
// on `workers` threads and consumed in seed order, so results do not depend
// on the worker count.
template <typename T>
std::vector<EpochLog> meta_train(const episodes::SegDataset& dataset, TrainState<T>& state,
                                 const EpochCallback<T>& on_epoch = {}, int stop_after = 0);

}  // namespace metaseg::trainer
