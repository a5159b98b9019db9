#include "metaseg/trainer/trainer.hpp"

#include <chrono>
#include <cmath>
#include <numeric>
#include <sstream>

#include "metaseg/common/error.hpp"
#include "metaseg/common/parallel.hpp"
#include "metaseg/common/rng.hpp"
#include "metaseg/episodes/augment.hpp"
#include "metaseg/eval/evaluate.hpp"

namespace metaseg::trainer {

namespace {

// Seed streams hanging off the training seed.
constexpr std::uint64_t kInitStream = 1;
constexpr std::uint64_t kEpisodeStream = 2;
constexpr std::uint64_t kEvalStream = 3;

std::string int_list(const auto& values) {
  std::string s = "[";
  for (std::size_t i = 0; i < values.size(); ++i) s += (i ? ", " : "") + std::to_string(values[i]);
  return s + "]";
}

int checked_int(std::int64_t v, const char* key) {
  if (v < -1000000000 || v > 1000000000) throw ValidationError(std::string("config value out of range for ") + key);
  return static_cast<int>(v);
}

}  // namespace

std::string to_string(Precision p) { return p == Precision::f32 ? "f32" : "f64"; }

Precision parse_precision(const std::string& text) {
  if (text == "f32") return Precision::f32;
  if (text == "f64") return Precision::f64;
  throw ValidationError("unknown precision '" + text + "' (expected f32 or f64)");
}

std::string to_string(LossResolution r) { return r == LossResolution::feature ? "feature" : "full"; }

LossResolution parse_loss_resolution(const std::string& text) {
  if (text == "feature") return LossResolution::feature;
  if (text == "full") return LossResolution::full;
  throw ValidationError("unknown loss_resolution '" + text + "' (expected feature or full)");
}

void TrainConfig::validate() const {
  if (K < 1 || N < 1 || Q < 1) throw ValidationError("train: way, shot and query must be >= 1");
  if (episodes_per_epoch < 1) throw ValidationError("train: episodes_per_epoch must be >= 1");
  if (epochs < 0) throw ValidationError("train: epochs must be >= 0");
  if (!(lr > 0) || !std::isfinite(lr)) throw ValidationError("train: lr must be positive");
  if (meta_batch < 1) throw ValidationError("train: meta_batch must be >= 1");
  if (clip_norm < 0) throw ValidationError("train: clip_norm must be >= 0");
  if (eval_every < 0 || eval_tasks < 1) throw ValidationError("train: eval_every >= 0 and eval_tasks >= 1 required");
  if (workers < 1) throw ValidationError("train: workers must be >= 1");
  if (!(convstep_lr > 0)) throw ValidationError("train: convstep_lr must be positive");
  embed.validate();
}

std::string TrainConfig::to_text() const {
  std::ostringstream o;
  o << "[train]\n"
    << "way = " << K << "\nshot = " << N << "\nquery = " << Q << "\nepisodes_per_epoch = " << episodes_per_epoch
    << "\nepochs = " << epochs << "\nlr = " << format_double(lr) << "\nseed = " << seed
    << "\nprecision = " << quote(to_string(precision)) << "\nhead = " << quote(ridge::to_string(head))
    << "\naugment = " << (augment ? "true" : "false") << "\nloss_resolution = " << quote(to_string(loss_resolution))
    << "\nmeta_batch = " << meta_batch << "\nclip_norm = " << format_double(clip_norm)
    << "\neval_every = " << eval_every << "\neval_tasks = " << eval_tasks << "\nworkers = " << workers
    << "\nsupport_cap = " << support_cap << "\nconvstep_lr = " << format_double(convstep_lr) << "\n\n";
  o << "[embed]\n"
    << "block_channels = " << int_list(embed.block_channels) << "\nconvs_per_block = " << embed.convs_per_block
    << "\ndilations_block3 = " << int_list(embed.dilations_block3)
    << "\ndilations_block4 = " << int_list(embed.dilations_block4) << "\ninput_channels = " << embed.input_channels
    << "\ngc_branch = " << (embed.gc_branch_enabled ? "true" : "false")
    << "\nsetting = " << quote(embed.setting == embed::Setting::k_way ? "k_way" : "one_way") << "\n";
  return o.str();
}

void TrainConfig::apply(ConfigTable& t) {
  if (auto v = t.take_int("train.way")) K = checked_int(*v, "way");
  if (auto v = t.take_int("train.shot")) N = checked_int(*v, "shot");
  if (auto v = t.take_int("train.query")) Q = checked_int(*v, "query");
  if (auto v = t.take_int("train.episodes_per_epoch")) episodes_per_epoch = checked_int(*v, "episodes_per_epoch");
  if (auto v = t.take_int("train.epochs")) epochs = checked_int(*v, "epochs");
  if (auto v = t.take_double("train.lr")) lr = *v;
  if (auto v = t.take_u64("train.seed")) seed = *v;
  if (auto v = t.take_string("train.precision")) precision = parse_precision(*v);
  if (auto v = t.take_string("train.head")) head = ridge::parse_head_kind(*v);
  if (auto v = t.take_bool("train.augment")) augment = *v;
  if (auto v = t.take_string("train.loss_resolution")) loss_resolution = parse_loss_resolution(*v);
  if (auto v = t.take_int("train.meta_batch")) meta_batch = checked_int(*v, "meta_batch");
  if (auto v = t.take_double("train.clip_norm")) clip_norm = *v;
  if (auto v = t.take_int("train.eval_every")) eval_every = checked_int(*v, "eval_every");
  if (auto v = t.take_int("train.eval_tasks")) eval_tasks = checked_int(*v, "eval_tasks");
  if (auto v = t.take_int("train.workers")) workers = checked_int(*v, "workers");
  if (auto v = t.take_u64("train.support_cap")) support_cap = *v;
  if (auto v = t.take_double("train.convstep_lr")) convstep_lr = *v;

  if (auto v = t.take_string("embed.setting")) {
    if (*v != "k_way" && *v != "one_way") throw ValidationError("embed.setting must be \"k_way\" or \"one_way\"");
    // the preset supplies dilations; explicit lists below still win
    const auto keep_channels = embed.block_channels;
    const auto keep_gc = embed.gc_branch_enabled;
    embed = embed::EmbedConfig::preset(*v == "k_way" ? embed::Setting::k_way : embed::Setting::one_way);
    embed.block_channels = keep_channels;
    embed.gc_branch_enabled = keep_gc;
  }
  if (auto v = t.take_int_list("embed.block_channels")) {
    if (v->size() != 5) throw ValidationError("embed.block_channels needs 5 entries");
    for (std::size_t i = 0; i < 5; ++i) embed.block_channels[i] = checked_int((*v)[i], "block_channels");
  }
  if (auto v = t.take_int("embed.convs_per_block")) embed.convs_per_block = checked_int(*v, "convs_per_block");
  auto take_dil = [&](const char* key, std::vector<int>& out) {
    if (auto v = t.take_int_list(key)) {
      out.clear();
      for (const auto d : *v) out.push_back(checked_int(d, key));
    }
  };
  take_dil("embed.dilations_block3", embed.dilations_block3);
  take_dil("embed.dilations_block4", embed.dilations_block4);
  if (auto v = t.take_int("embed.input_channels")) embed.input_channels = checked_int(*v, "input_channels");
  if (auto v = t.take_bool("embed.gc_branch")) embed.gc_branch_enabled = *v;
}

TrainConfig TrainConfig::from_text(const std::string& text) {
  ConfigTable table = ConfigTable::parse(text, "<config echo>");
  TrainConfig c;
  c.apply(table);
  table.reject_unknown();
  c.validate();
  return c;
}

template <typename T>
std::vector<Tensor<T>*> Model<T>::trainable() {
  std::vector<Tensor<T>*> out = embed.trainable_tensors();
  if (kind == ridge::HeadKind::ridge) {
    for (Tensor<T>* t : head.tensors()) out.push_back(t);
  }
  return out;
}

template <typename T>
std::vector<std::string> Model<T>::trainable_names() const {
  std::vector<std::string> out;
  for (const std::size_t i : embed.trainable_indices()) out.push_back(embed.entries[i].name);
  if (kind == ridge::HeadKind::ridge) {
    for (const char* n : ridge::RidgeHead<T>::kNames) out.emplace_back(n);
  }
  return out;
}

template <typename T>
Model<T> init_model(const TrainConfig& config) {
  config.validate();
  Model<T> m;
  m.embed = embed::build_embedding<T>(config.embed, derive_seed(config.seed, kInitStream));
  m.kind = config.head;
  return m;
}

PreparedEpisode prepare_episode(const episodes::SegDataset& dataset, episodes::Split split, int K, int N, int Q,
                                std::uint64_t seed, bool augment) {
  PreparedEpisode p;
  p.episode = episodes::sample_episode(dataset, split, K, N, Q, seed);
  if (augment) episodes::augment_episode(p.episode, derive_seed(seed, 0xa0));
  p.support_labels = episodes::downsample_labels(p.episode.support, kOutputStride);
  p.query_labels = episodes::downsample_labels(p.episode.query, kOutputStride);
  p.query_labels_full = episodes::concat_labels(p.episode.query);
  return p;
}

template <typename T>
ModelVars<T> bind_model(Tape<T>& tape, const Model<T>& model) {
  ModelVars<T> v;
  v.embed = embed::bind_params(tape, model.embed);
  if (model.kind == ridge::HeadKind::ridge) v.head = ridge::bind_head(tape, model.head);
  return v;
}

template <typename T>
Var<T> episode_logits(Tape<T>& tape, const Model<T>& model, const ModelVars<T>& vars, const PreparedEpisode& prepared,
                      ad::Mode mode, const HeadOptions& options, embed::RunningStatUpdates<T>* updates) {
  const episodes::Episode& ep = prepared.episode;
  std::vector<episodes::Sample> batch = ep.support;
  batch.insert(batch.end(), ep.query.begin(), ep.query.end());
  const Tensor<T> images = episodes::images_tensor<T>(batch);
  const embed::PixelFeatures<T> f = embed::embed_forward(tape, model.embed, vars.embed, images, mode, updates);

  const std::size_t hw = f.pixels_per_image();
  const std::size_t n_support = ep.support.size() * hw;
  const std::size_t n_total = batch.size() * hw;
  if (prepared.support_labels.size() != n_support || prepared.query_labels.size() != n_total - n_support) {
    throw ShapeError("episode_logits: label maps do not match the feature resolution");
  }
  std::vector<std::size_t> support_rows(n_support), query_rows(n_total - n_support);
  std::iota(support_rows.begin(), support_rows.end(), std::size_t{0});
  std::iota(query_rows.begin(), query_rows.end(), n_support);
  Var<T> xs = ad::select_rows(f.features, std::span<const std::size_t>(support_rows));
  const Var<T> xq = ad::select_rows(f.features, std::span<const std::size_t>(query_rows));

  const auto num_classes = static_cast<std::size_t>(ep.K + 1);
  std::vector<int> labels = prepared.support_labels;
  if (options.support_cap > 0 && options.support_cap < labels.size()) {
    const auto keep = ridge::subsample_support(labels, num_classes, options.support_cap, derive_seed(ep.seed, 0xc0));
    xs = ad::select_rows(xs, std::span<const std::size_t>(keep));
    std::vector<int> kept;
    for (const std::size_t i : keep) kept.push_back(labels[i]);
    labels = std::move(kept);
  }

  switch (model.kind) {
    case ridge::HeadKind::ridge: {
      const Tensor<T> y = ridge::make_targets(labels, num_classes).template onehot<T>();
      const Var<T> lambda = ad::exp(vars.head.log_lambda);
      const Var<T> w = ridge::ridge_fit(xs, y, lambda);
      return ridge::ridge_predict(xq, w, vars.head.alpha, vars.head.beta);
    }
    case ridge::HeadKind::prototype:
      return ridge::prototype_predict(xs, std::span<const int>(labels), num_classes, xq);
    case ridge::HeadKind::convstep: {
      const Tensor<T> y = ridge::make_targets(labels, num_classes).template onehot<T>();
      return ridge::convstep_predict(xs, y, xq, options.convstep_lr);
    }
  }
  throw ValidationError("episode_logits: unknown head");
}

template <typename T>
Var<T> meta_loss(const Var<T>& logits, std::span<const int> labels) {
  if (logits.shape().size() != 2 || logits.shape()[0] != labels.size()) {
    throw ShapeError("meta_loss: " + std::to_string(labels.size()) + " labels for logits of shape " +
                     ad::to_string(logits.shape()));
  }
  return ad::softmax_cross_entropy(logits, labels);
}

template <typename T>
EpisodeResult<T> train_episode(const Model<T>& model, const PreparedEpisode& prepared, const TrainConfig& config,
                               ad::Mode mode) {
  Tape<T> tape;
  const ModelVars<T> vars = bind_model(tape, model);
  EpisodeResult<T> out;
  const HeadOptions options{config.support_cap, config.convstep_lr};
  Var<T> logits = episode_logits(tape, model, vars, prepared, mode, options, &out.stats);

  Var<T> loss;
  if (config.loss_resolution == LossResolution::feature) {
    loss = meta_loss(logits, std::span<const int>(prepared.query_labels));
  } else {
    const auto& q = prepared.episode.query;
    const std::size_t H = q.front().height, W = q.front().width;
    const std::size_t h = H / kOutputStride, w = W / kOutputStride;
    Var<T> maps = ad::from_pixel_matrix(logits, q.size(), h, w);
    maps = ad::bilinear_upsample(maps, static_cast<int>(H), static_cast<int>(W));
    loss = meta_loss(ad::to_pixel_matrix(maps), std::span<const int>(prepared.query_labels_full));
  }
  tape.backward(loss);
  out.loss = static_cast<double>(loss.value().item());
  out.grads = embed::collect_grads(tape, model.embed, vars.embed);
  if (model.kind == ridge::HeadKind::ridge) {
    out.grads.push_back(tape.grad(vars.head.log_lambda));
    out.grads.push_back(tape.grad(vars.head.alpha));
    out.grads.push_back(tape.grad(vars.head.beta));
  }
  return out;
}

template <typename T>
TrainState<T> init_state(const TrainConfig& config) {
  TrainState<T> s;
  s.config = config;
  s.model = init_model<T>(config);
  s.adam.hyper.lr = config.lr;
  return s;
}

template <typename T>
Checkpoint to_checkpoint(const TrainState<T>& state) {
  Checkpoint c;
  c.config_echo = state.config.to_text();
  for (const auto& e : state.model.embed.entries) c.put(e.name, e.value);
  const auto head = state.model.head.tensors();
  for (std::size_t i = 0; i < 3; ++i) c.put(ridge::RidgeHead<T>::kNames[i], *head[i]);
  const auto names = state.model.trainable_names();
  c.put_u64("adam.step", state.adam.step);
  if (!state.adam.first_moment.empty()) {
    for (std::size_t i = 0; i < names.size(); ++i) {
      c.put("adam.m." + names[i], state.adam.first_moment.at(i));
      c.put("adam.v." + names[i], state.adam.second_moment.at(i));
    }
  }
  c.put_u64("train.epoch", state.epoch);
  c.put_u64("train.seed", state.config.seed);
  return c;
}

template <typename T>
TrainState<T> state_from_checkpoint(const Checkpoint& checkpoint) {
  TrainState<T> s = init_state<T>(TrainConfig::from_text(checkpoint.config_echo));
  auto restore = [&](const std::string& name, Tensor<T>& into) {
    Tensor<T> v = checkpoint.get<T>(name);
    if (v.shape() != into.shape()) {
      throw FormatError("checkpoint tensor '" + name + "' has shape " + ad::to_string(v.shape()) + ", expected " +
                        ad::to_string(into.shape()));
    }
    into = std::move(v);
  };
  for (auto& e : s.model.embed.entries) restore(e.name, e.value);
  const auto head = s.model.head.tensors();
  for (std::size_t i = 0; i < 3; ++i) restore(ridge::RidgeHead<T>::kNames[i], *head[i]);
  s.adam.step = checkpoint.get_u64("adam.step");
  if (checkpoint.find("adam.m." + s.model.trainable_names().front())) {
    for (const auto& name : s.model.trainable_names()) {
      s.adam.first_moment.push_back(checkpoint.get<T>("adam.m." + name));
      s.adam.second_moment.push_back(checkpoint.get<T>("adam.v." + name));
    }
  }
  s.epoch = checkpoint.get_u64("train.epoch");
  if (checkpoint.get_u64("train.seed") != s.config.seed) throw FormatError("checkpoint seed disagrees with its config");
  return s;
}

std::uint64_t episode_seed(std::uint64_t train_seed, std::uint64_t epoch, std::uint64_t index) {
  return derive_seed(derive_seed(derive_seed(train_seed, kEpisodeStream), epoch), index);
}

namespace {

template <typename T>
void check_finite(const std::vector<Tensor<T>>& grads, const std::vector<std::string>& names, int epoch,
                  int episode) {
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (!grads[i].all_finite()) {
      throw NumericalError("non-finite gradient for " + names[i] + " at epoch " + std::to_string(epoch) +
                           ", episode " + std::to_string(episode));
    }
  }
}

template <typename T>
void clip_global_norm(std::vector<Tensor<T>>& grads, double max_norm) {
  double sq = 0;
  for (const auto& g : grads)
    for (const T v : g.data()) sq += static_cast<double>(v) * static_cast<double>(v);
  const double norm = std::sqrt(sq);
  if (norm <= max_norm) return;
  const double f = max_norm / norm;
  for (auto& g : grads)
    for (T& v : g.data()) v = static_cast<T>(v * f);
}

}  // namespace

template <typename T>
std::vector<EpochLog> meta_train(const episodes::SegDataset& dataset, TrainState<T>& state,
                                 const EpochCallback<T>& on_epoch, int stop_after) {
  const TrainConfig& cfg = state.config;
  cfg.validate();
  if (cfg.head != state.model.kind) throw ValidationError("meta_train: model head differs from config head");
  state.adam.hyper.lr = cfg.lr;
  const auto names = state.model.trainable_names();
  std::vector<EpochLog> logs;
  int done = 0;
  while (state.epoch < static_cast<std::uint64_t>(cfg.epochs) && (stop_after <= 0 || done < stop_after)) {
    const auto start = std::chrono::steady_clock::now();
    const int epoch = static_cast<int>(state.epoch);
    const auto n = static_cast<std::size_t>(cfg.episodes_per_epoch);

    std::vector<PreparedEpisode> prepared(n);
    parallel_for(n, cfg.workers, [&](std::size_t i) {
      prepared[i] = prepare_episode(dataset, episodes::Split::train, cfg.K, cfg.N, cfg.Q,
                                    episode_seed(cfg.seed, state.epoch, i), cfg.augment);
    });

    double loss_sum = 0;
    std::vector<Tensor<T>> accum;
    int in_batch = 0;
    for (std::size_t i = 0; i < n; ++i) {
      EpisodeResult<T> r = train_episode(state.model, prepared[i], cfg, ad::Mode::train);
      check_finite(r.grads, names, epoch + 1, static_cast<int>(i));
      if (!std::isfinite(r.loss)) throw NumericalError("non-finite loss at epoch " + std::to_string(epoch + 1));
      embed::apply_running_stats(state.model.embed, r.stats);
      loss_sum += r.loss;
      if (accum.empty()) {
        accum = std::move(r.grads);
      } else {
        for (std::size_t g = 0; g < accum.size(); ++g)
          for (std::size_t j = 0; j < accum[g].size(); ++j) accum[g][j] += r.grads[g][j];
      }
      ++in_batch;
      if (in_batch == cfg.meta_batch || i + 1 == n) {
        if (in_batch > 1) {
          for (auto& g : accum)
            for (T& v : g.data()) v /= static_cast<T>(in_batch);
        }
        if (cfg.clip_norm > 0) clip_global_norm(accum, cfg.clip_norm);
        auto params = state.model.trainable();
        ad::adam_step<T>(std::span<Tensor<T>* const>(params), std::span<const Tensor<T>>(accum), state.adam);
        if (!(state.model.head.lambda() > T{0})) throw NumericalError("lambda left the positive range");
        accum.clear();
        in_batch = 0;
      }
    }
    ++state.epoch;
    ++done;

    EpochLog log;
    log.epoch = static_cast<int>(state.epoch);
    log.mean_loss = loss_sum / static_cast<double>(n);
    if (cfg.eval_every > 0 && state.epoch % static_cast<std::uint64_t>(cfg.eval_every) == 0) {
      const auto report = eval::evaluate(state.model, HeadOptions{cfg.support_cap, cfg.convstep_lr}, dataset,
                                         episodes::Split::novel, cfg.K, cfg.N, cfg.Q, cfg.eval_tasks,
                                         derive_seed(cfg.seed, kEvalStream), cfg.workers);
      log.eval_miou = report.mean;
    }
    log.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    logs.push_back(log);
    if (on_epoch) on_epoch(log, state);
  }
  return logs;
}

#define METASEG_INSTANTIATE_TRAINER(T)                                                                          \
  template struct Model<T>;                                                                                     \
  template Model<T> init_model<T>(const TrainConfig&);                                                          \
  template ModelVars<T> bind_model(Tape<T>&, const Model<T>&);                                                  \
  template Var<T> episode_logits(Tape<T>&, const Model<T>&, const ModelVars<T>&, const PreparedEpisode&,       \
                                 ad::Mode, const HeadOptions&, embed::RunningStatUpdates<T>*);                  \
  template Var<T> meta_loss(const Var<T>&, std::span<const int>);                                               \
  template EpisodeResult<T> train_episode(const Model<T>&, const PreparedEpisode&, const TrainConfig&, ad::Mode); \
  template TrainState<T> init_state<T>(const TrainConfig&);                                                     \
  template Checkpoint to_checkpoint(const TrainState<T>&);                                                      \
  template TrainState<T> state_from_checkpoint<T>(const Checkpoint&);                                           \
  template std::vector<EpochLog> meta_train(const episodes::SegDataset&, TrainState<T>&, const EpochCallback<T>&, \
                                            int);

METASEG_INSTANTIATE_TRAINER(float)
METASEG_INSTANTIATE_TRAINER(double)

}  // namespace metaseg::trainer
