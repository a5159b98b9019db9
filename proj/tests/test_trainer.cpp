#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "metaseg/common/error.hpp"
#include "metaseg/common/rng.hpp"
#include "metaseg/episodes/synth.hpp"
#include "metaseg/trainer/trainer.hpp"
#include "metaseg/verify/battery.hpp"

using namespace metaseg;
using namespace metaseg::trainer;
namespace fs = std::filesystem;

namespace {

episodes::SegDataset small_dataset() {
  episodes::SynthConfig c;
  c.num_classes = 5;
  c.images_per_class = 6;
  c.image_size = 16;
  c.min_radius = 3;
  c.max_radius = 5;
  c.max_objects = 2;
  c.mixed_prob = 0.0;
  c.clutter = 1;
  return episodes::split_classes(episodes::gen_synthetic(c), std::vector<int>{5});
}

TrainConfig small_config() {
  TrainConfig c;
  c.K = 2;
  c.N = 2;
  c.Q = 1;
  c.epochs = 3;
  c.episodes_per_epoch = 3;
  c.seed = 21;
  c.precision = Precision::f64;
  c.embed = embed::EmbedConfig::uniform(4);
  return c;
}

}  // namespace

TEST(TrainConfig, TextRoundTrip) {
  TrainConfig c = small_config();
  c.head = ridge::HeadKind::convstep;
  c.loss_resolution = LossResolution::full;
  c.clip_norm = 2.5;
  c.lr = 3e-4;
  c.embed.gc_branch_enabled = false;
  EXPECT_EQ(TrainConfig::from_text(c.to_text()), c);
  EXPECT_EQ(TrainConfig::from_text(TrainConfig{}.to_text()), TrainConfig{});
}

TEST(TrainConfig, Validation) {
  TrainConfig c;
  c.K = 0;
  EXPECT_THROW(c.validate(), ValidationError);
  c = TrainConfig{};
  c.lr = -1;
  EXPECT_THROW(c.validate(), ValidationError);
  EXPECT_THROW(TrainConfig::from_text("[train]\nwya = 2\n"), ValidationError);
  EXPECT_THROW(TrainConfig::from_text("[train]\nprecision = \"f16\"\n"), ValidationError);
  EXPECT_EQ(TrainConfig::from_text("[train]\nway = 1\n").K, 1);
}

TEST(MetaLoss, UniformSaturatedAndPooled) {
  ad::Tape<double> tape;
  const std::vector<int> labels{0, 1, 2, 1};
  EXPECT_NEAR(meta_loss(tape.constant(ad::Tensor<double>(ad::Shape{4, 3}, 0.0)), std::span<const int>(labels))
                  .value()
                  .item(),
              std::log(3.0), 1e-12);
  ad::Tensor<double> sat(ad::Shape{4, 3}, 0.0);
  for (std::size_t r = 0; r < 4; ++r) sat[r * 3 + static_cast<std::size_t>(labels[r])] = 40.0;
  EXPECT_LT(meta_loss(tape.constant(sat), std::span<const int>(labels)).value().item(), 1e-8);
  // two equal-size episodes pooled = mean of their losses
  Rng rng(3);
  ad::Tensor<double> a(ad::Shape{2, 3}), b(ad::Shape{2, 3}), ab(ad::Shape{4, 3});
  for (std::size_t i = 0; i < 6; ++i) ab[i] = a[i] = rng.normal();
  for (std::size_t i = 0; i < 6; ++i) ab[6 + i] = b[i] = rng.normal();
  const std::vector<int> la{0, 1}, lb{2, 1};  // labels = la ++ lb
  const double la_loss = meta_loss(tape.constant(a), std::span<const int>(la)).value().item();
  const double lb_loss = meta_loss(tape.constant(b), std::span<const int>(lb)).value().item();
  EXPECT_NEAR(meta_loss(tape.constant(ab), std::span<const int>(labels)).value().item(), 0.5 * (la_loss + lb_loss),
              1e-12);
  EXPECT_THROW(meta_loss(tape.constant(a), std::span<const int>(labels)), ShapeError);
}

TEST(TrainEpisode, PipelineGradientMatchesFiniteDifferences) {
  const auto r = verify::check_pipeline_gradient(4, 3);
  EXPECT_TRUE(r.passed) << r.detail;
}

TEST(TrainEpisode, DeterministicAndFinite) {
  const auto data = small_dataset();
  const TrainConfig cfg = small_config();
  const Model<double> model = init_model<double>(cfg);
  const PreparedEpisode ep = prepare_episode(data, episodes::Split::train, 2, 2, 1, 5, true);
  const auto a = train_episode(model, ep, cfg);
  const auto b = train_episode(model, ep, cfg);
  EXPECT_EQ(a.loss, b.loss);
  ASSERT_EQ(a.grads.size(), b.grads.size());
  for (std::size_t i = 0; i < a.grads.size(); ++i) {
    EXPECT_EQ(a.grads[i], b.grads[i]);
    for (const double g : a.grads[i].data()) ASSERT_TRUE(std::isfinite(g));
  }
  // the three head scalars are the last trainables and all move the loss
  const std::size_t n = a.grads.size();
  for (std::size_t i = n - 3; i < n; ++i) EXPECT_NE(a.grads[i].item(), 0.0);
}

TEST(TrainEpisode, PrototypeHeadHasNoHeadScalars) {
  TrainConfig cfg = small_config();
  cfg.head = ridge::HeadKind::prototype;
  Model<double> model = init_model<double>(cfg);
  const std::size_t embed_tensors = model.embed.trainable_indices().size();
  EXPECT_EQ(model.trainable().size(), embed_tensors);
  const PreparedEpisode ep = prepare_episode(small_dataset(), episodes::Split::train, 2, 2, 1, 6, false);
  EXPECT_EQ(train_episode(model, ep, cfg).grads.size(), embed_tensors);
}

TEST(TrainEpisode, FullResolutionLossRuns) {
  TrainConfig cfg = small_config();
  cfg.loss_resolution = LossResolution::full;
  const Model<double> model = init_model<double>(cfg);
  const PreparedEpisode ep = prepare_episode(small_dataset(), episodes::Split::train, 2, 2, 1, 7, false);
  const auto r = train_episode(model, ep, cfg);
  EXPECT_TRUE(std::isfinite(r.loss));
  EXPECT_GT(r.loss, 0.0);
}

TEST(MetaTrain, SmokeOnTwoImages) {
  auto full = small_dataset();
  episodes::SegDataset two;
  two.class_names = full.class_names;
  for (const auto& r : full.records) {
    if (r.present == std::vector<int>{1} && two.records.size() < 2) two.records.push_back(r);
  }
  ASSERT_EQ(two.records.size(), 2u);
  two.split.train = {1};
  TrainConfig cfg = small_config();
  cfg.K = 1;
  cfg.N = 1;
  cfg.Q = 1;
  cfg.epochs = 1;
  cfg.episodes_per_epoch = 1;
  auto state = init_state<double>(cfg);
  int calls = 0;
  const auto logs = meta_train<double>(two, state, [&](const EpochLog& log, const TrainState<double>& s) {
    ++calls;
    EXPECT_TRUE(std::isfinite(log.mean_loss));
    EXPECT_GT(s.model.head.lambda(), 0.0);
  });
  EXPECT_EQ(calls, 1);
  ASSERT_EQ(logs.size(), 1u);
  EXPECT_EQ(state.epoch, 1u);
  EXPECT_EQ(state.adam.step, 1u);
  const fs::path path = fs::temp_directory_path() / "metaseg_test_smoke.ckpt";
  save_checkpoint(path, to_checkpoint(state));
  EXPECT_TRUE(fs::exists(path));
  fs::remove(path);
}

TEST(MetaTrain, DeterministicAndResumable) {
  const auto data = small_dataset();
  const TrainConfig cfg = small_config();
  auto full = init_state<double>(cfg);
  const auto logs_full = meta_train<double>(data, full);
  auto again = init_state<double>(cfg);
  const auto logs_again = meta_train<double>(data, again);
  ASSERT_EQ(logs_full.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(logs_full[i].mean_loss, logs_again[i].mean_loss);

  auto partial = init_state<double>(cfg);
  meta_train<double>(data, partial, {}, 1);
  EXPECT_EQ(partial.epoch, 1u);
  auto resumed = state_from_checkpoint<double>(deserialize(serialize(to_checkpoint(partial))));
  const auto logs_rest = meta_train<double>(data, resumed);
  ASSERT_EQ(logs_rest.size(), 2u);
  EXPECT_EQ(logs_rest[0].mean_loss, logs_full[1].mean_loss);
  EXPECT_EQ(logs_rest[1].mean_loss, logs_full[2].mean_loss);
  EXPECT_EQ(serialize(to_checkpoint(resumed)), serialize(to_checkpoint(full)));
}

TEST(MetaTrain, WorkerCountDoesNotChangeResults) {
  const auto data = small_dataset();
  TrainConfig cfg = small_config();
  cfg.epochs = 1;
  auto one = init_state<double>(cfg);
  meta_train<double>(data, one);
  cfg.workers = 3;
  auto three = init_state<double>(cfg);
  meta_train<double>(data, three);
  EXPECT_EQ(to_checkpoint(one).tensors, to_checkpoint(three).tensors);  // the config echo differs
}

TEST(MetaTrain, SinglePrecisionRuns) {
  TrainConfig cfg = small_config();
  cfg.precision = Precision::f32;
  cfg.epochs = 1;
  cfg.meta_batch = 2;
  cfg.clip_norm = 1.0;
  auto state = init_state<float>(cfg);
  const auto logs = meta_train<float>(small_dataset(), state);
  EXPECT_TRUE(std::isfinite(logs.at(0).mean_loss));
}

TEST(Checkpoint, SaveLoadSaveIsByteIdentical) {
  auto state = init_state<float>(small_config());
  meta_train<float>(small_dataset(), state, {}, 1);
  const fs::path a = fs::temp_directory_path() / "metaseg_test_a.ckpt";
  const fs::path b = fs::temp_directory_path() / "metaseg_test_b.ckpt";
  save_checkpoint(a, to_checkpoint(state));
  save_checkpoint(b, to_checkpoint(state_from_checkpoint<float>(load_checkpoint(a))));
  const auto bytes_a = serialize(load_checkpoint(a)), bytes_b = serialize(load_checkpoint(b));
  EXPECT_EQ(bytes_a, bytes_b);
  EXPECT_EQ(fs::file_size(a), fs::file_size(b));
  fs::remove(a);
  fs::remove(b);
}

TEST(Checkpoint, ValuesSurviveExactly) {
  Checkpoint c;
  c.config_echo = "[train]\nway = 2\n";
  ad::Tensor<double> t(ad::Shape{2, 3}, std::vector<double>{1.0 / 3, -0.0, 1e-300, 5, 6, 7});
  c.put("x", t);
  c.put("y", ad::Tensor<float>::scalar(0.1f));
  c.put_u64("n", 0xfedcba9876543210ull);
  const Checkpoint back = deserialize(serialize(c));
  EXPECT_EQ(back, c);
  EXPECT_EQ(back.get<double>("x"), t);
  EXPECT_EQ(back.get<double>("y").item(), static_cast<double>(0.1f));
  EXPECT_EQ(back.get_u64("n"), 0xfedcba9876543210ull);
  EXPECT_THROW(back.at("missing"), FormatError);
}

TEST(Checkpoint, CorruptionIsDetected) {
  Checkpoint c;
  c.put("x", ad::Tensor<double>(ad::Shape{16}, 2.0));
  std::vector<std::uint8_t> bytes = serialize(c);
  auto message = [](const std::vector<std::uint8_t>& b) -> std::string {
    try {
      deserialize(b);
    } catch (const FormatError& e) {
      return e.what();
    }
    return "";
  };
  std::vector<std::uint8_t> flipped = bytes;
  flipped[bytes.size() - 20] ^= 0x01;
  EXPECT_NE(message(flipped).find("checksum"), std::string::npos) << message(flipped);
  std::vector<std::uint8_t> versioned = bytes;
  versioned[4] = 7;
  EXPECT_NE(message(versioned).find("version"), std::string::npos) << message(versioned);
  std::vector<std::uint8_t> magic = bytes;
  magic[0] = 'X';
  EXPECT_FALSE(message(magic).empty());
  std::vector<std::uint8_t> truncated(bytes.begin(), bytes.begin() + 30);
  EXPECT_FALSE(message(truncated).empty());
  EXPECT_THROW(load_checkpoint(fs::temp_directory_path() / "metaseg_no_such.ckpt"), IoError);
}

TEST(Checkpoint, ShapeMismatchIsRejected) {
  auto state = init_state<double>(small_config());
  Checkpoint c = to_checkpoint(state);
  TrainConfig other = small_config();
  other.embed = embed::EmbedConfig::uniform(6);
  Checkpoint wrong = to_checkpoint(init_state<double>(other));
  wrong.config_echo = c.config_echo;
  EXPECT_THROW(state_from_checkpoint<double>(wrong), FormatError);
}
