#include "metaseg/cli/commands.hpp"

#include <CLI11.hpp>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "metaseg/cli/config.hpp"
#include "metaseg/common/error.hpp"
#include "metaseg/episodes/dataset_io.hpp"
#include "metaseg/eval/evaluate.hpp"
#include "metaseg/verify/battery.hpp"

namespace metaseg::cli {

namespace fs = std::filesystem;

namespace {

// Flags shared by every command; unset optionals leave the config alone.
struct CommonFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string precision;
  std::string head;
  bool no_gc_branch = false;
  std::string shots;
  std::optional<int> workers;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--config", f.config, "TOML-style config file");
  cmd->add_option("--seed", f.seed, "seed override for this command");
  cmd->add_option("--out", f.out, "output directory");
  cmd->add_option("--precision", f.precision, "f32 or f64");
  cmd->add_option("--head", f.head, "ridge, prototype or convstep");
  cmd->add_flag("--no-gc-branch", f.no_gc_branch, "disable the global context branch");
  cmd->add_option("--shots", f.shots, "comma-separated shot counts for a sweep");
  cmd->add_option("--workers", f.workers, "worker threads");
}

std::optional<std::uint64_t> env_seed() {
  const char* s = std::getenv("METASEG_SEED");
  if (!s || !*s) return std::nullopt;
  char* end = nullptr;
  const unsigned long long v = std::strtoull(s, &end, 10);
  if (*end != '\0') throw ValidationError(std::string("METASEG_SEED is not an unsigned integer: ") + s);
  return v;
}

enum class SeedTarget { data, train, eval };

RunConfig resolve(const CommonFlags& f, SeedTarget target) {
  RunConfig c = RunConfig::load(f.config);
  if (!f.out.empty()) c.out_dir = f.out;
  if (!f.precision.empty()) c.train.precision = trainer::parse_precision(f.precision);
  if (!f.head.empty()) c.train.head = ridge::parse_head_kind(f.head);
  if (f.no_gc_branch) c.train.embed.gc_branch_enabled = false;
  if (!f.shots.empty()) c.eval.shots = parse_int_list(f.shots);
  if (f.workers) c.train.workers = *f.workers;
  std::optional<std::uint64_t> seed = f.seed;
  if (auto env = env_seed()) seed = env;  // environment wins over everything
  if (seed) {
    switch (target) {
      case SeedTarget::data: c.data.seed = *seed; break;
      case SeedTarget::train: c.train.seed = *seed; break;
      case SeedTarget::eval: c.eval.seed = *seed; break;
    }
  }
  c.validate();
  return c;
}

void echo(const char* command, const RunConfig& c) {
  std::cerr << "# metaseg " << command << ": resolved configuration\n" << c.to_text() << "# end of configuration\n";
}

episodes::SegDataset acquire_dataset(const RunConfig& c) {
  episodes::SegDataset ds;
  if (!c.dataset_dir.empty()) {
    ds = episodes::load_dataset_dir(c.dataset_dir);
    if (ds.split.train.empty() && ds.split.novel.empty()) ds = episodes::split_classes(std::move(ds), c.novel_classes);
  } else {
    ds = episodes::split_classes(episodes::gen_synthetic(c.data), c.novel_classes);
  }
  std::cerr << "dataset: " << ds.records.size() << " images, " << ds.split.train.size() << " train / "
            << ds.split.novel.size() << " novel classes, checksum " << episodes::checksum_hex(ds.checksum()) << "\n";
  return ds;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed for " + path.string());
}

int cmd_gendata(const CommonFlags& f) {
  RunConfig c = resolve(f, SeedTarget::data);
  echo("gendata", c);
  const episodes::SegDataset ds = episodes::split_classes(episodes::gen_synthetic(c.data), c.novel_classes);
  episodes::write_dataset_dir(ds, c.out_dir);
  std::cerr << "wrote " << ds.records.size() << " images to " << c.out_dir << "\n";
  std::cout << "checksum " << episodes::checksum_hex(ds.checksum()) << "\n";
  return 0;
}

template <typename T>
int train_with(RunConfig c, const std::string& resume) {
  const episodes::SegDataset ds = acquire_dataset(c);
  trainer::TrainState<T> state;
  if (!resume.empty()) {
    state = trainer::state_from_checkpoint<T>(trainer::load_checkpoint(resume));
    state.config.epochs = c.train.epochs;
    state.config.workers = c.train.workers;
    std::cerr << "resuming from " << resume << " after epoch " << state.epoch << "\n";
  } else {
    state = trainer::init_state<T>(c.train);
  }
  const fs::path out = c.out_dir;
  fs::create_directories(out);
  const fs::path metrics = out / "metrics.csv";
  if (resume.empty() || !fs::exists(metrics)) write_text(metrics, "epoch,mean_loss,eval_miou\n");
  std::cerr << "embedding: " << embed::count_params(state.model.embed) << " trainable parameters\n";

  trainer::meta_train<T>(ds, state, [&](const trainer::EpochLog& log, const trainer::TrainState<T>& s) {
    char name[32];
    std::snprintf(name, sizeof name, "epoch_%03d.ckpt", log.epoch);
    const trainer::Checkpoint ckpt = trainer::to_checkpoint(s);
    trainer::save_checkpoint(out / name, ckpt);
    trainer::save_checkpoint(out / "last.ckpt", ckpt);
    std::ofstream m(metrics, std::ios::app);
    char line[128];
    if (log.eval_miou >= 0) {
      std::snprintf(line, sizeof line, "%d,%.6f,%.6f\n", log.epoch, log.mean_loss, log.eval_miou);
    } else {
      std::snprintf(line, sizeof line, "%d,%.6f,\n", log.epoch, log.mean_loss);
    }
    m << line;
    std::fprintf(stderr, "epoch %d/%d  loss %.4f  %s%.1fs  lambda %.4g\n", log.epoch, s.config.epochs,
                 log.mean_loss, log.eval_miou >= 0 ? ("novel mIoU " + std::to_string(log.eval_miou) + "  ").c_str() : "",
                 log.seconds, static_cast<double>(s.model.head.lambda()));
  });
  std::cerr << "checkpoints in " << out.string() << "\n";
  return 0;
}

int cmd_train(const CommonFlags& f, const std::string& dataset, const std::string& resume) {
  RunConfig c = resolve(f, SeedTarget::train);
  if (!dataset.empty()) c.dataset_dir = dataset;
  echo("train", c);
  return c.train.precision == trainer::Precision::f32 ? train_with<float>(c, resume) : train_with<double>(c, resume);
}

template <typename T>
int eval_with(const RunConfig& c, const trainer::TrainState<T>& state) {
  const episodes::SegDataset ds = acquire_dataset(c);
  const trainer::HeadOptions options{state.config.support_cap, state.config.convstep_lr};
  const int workers = c.train.workers;
  std::string csv;
  if (c.eval.shots.empty()) {
    const eval::EvalReport r = eval::evaluate(state.model, options, ds, episodes::Split::novel, c.eval.K, c.eval.N,
                                              c.eval.Q, c.eval.tasks, c.eval.seed, workers);
    std::cout << eval::format_report(r);
    csv = eval::report_csv(r);
  } else {
    const auto rows = eval::shot_sweep(state.model, options, ds, c.eval.K, c.eval.shots, c.eval.Q, c.eval.tasks,
                                       c.eval.seed, workers);
    std::cout << eval::format_sweep(rows);
    csv = eval::sweep_csv(rows);
  }
  std::string csv_path = c.eval.csv;
  if (csv_path.empty() && !c.out_dir.empty() && c.out_dir != "run") csv_path = (fs::path(c.out_dir) / "eval.csv").string();
  if (!csv_path.empty()) {
    write_text(csv_path, csv);
    std::cerr << "per-task results in " << csv_path << "\n";
  }
  return 0;
}

struct EvalFlags {
  std::string checkpoint, dataset, csv;
  std::optional<int> way, shot, query, tasks;
  bool untrained = false;
};

int cmd_eval(const CommonFlags& f, const EvalFlags& e) {
  RunConfig c = resolve(f, SeedTarget::eval);
  if (!e.checkpoint.empty()) c.checkpoint = e.checkpoint;
  if (!e.dataset.empty()) c.dataset_dir = e.dataset;
  if (!e.csv.empty()) c.eval.csv = e.csv;
  if (e.way) c.eval.K = *e.way;
  if (e.shot) c.eval.N = *e.shot;
  if (e.query) c.eval.Q = *e.query;
  if (e.tasks) c.eval.tasks = *e.tasks;
  c.validate();
  echo("eval", c);
  if (e.untrained) {
    std::cerr << "evaluating a freshly initialized embedding (seed " << c.train.seed << ")\n";
    if (c.train.precision == trainer::Precision::f32) return eval_with(c, trainer::init_state<float>(c.train));
    return eval_with(c, trainer::init_state<double>(c.train));
  }
  if (c.checkpoint.empty()) throw ValidationError("eval needs --checkpoint (or paths.checkpoint)");
  const trainer::Checkpoint ckpt = trainer::load_checkpoint(c.checkpoint);
  const trainer::TrainConfig stored = trainer::TrainConfig::from_text(ckpt.config_echo);
  if (stored.precision == trainer::Precision::f32) return eval_with(c, trainer::state_from_checkpoint<float>(ckpt));
  return eval_with(c, trainer::state_from_checkpoint<double>(ckpt));
}

int cmd_verify(const CommonFlags& f, std::size_t sampler_episodes, bool inject_fault) {
  verify::BatteryOptions options;
  options.seed = f.seed.value_or(0);
  if (auto env = env_seed()) options.seed = *env;
  options.sampler_episodes = sampler_episodes;
  options.inject_gradient_fault = inject_fault;
  if (!f.out.empty()) options.scratch_dir = f.out;
  std::cerr << "# metaseg verify: seed " << options.seed << ", " << sampler_episodes << " sampler episodes"
            << (inject_fault ? ", gradient fault injected" : "") << "\n";
  const verify::BatteryReport report = verify::run_battery(options);
  std::cout << report.format();
  return report.passed() ? 0 : 2;
}

}  // namespace

int exit_code_for(const std::exception& error) {
  if (dynamic_cast<const ValidationError*>(&error)) return 1;
  return 2;
}

int run(int argc, const char* const* argv) {
  CLI::App app{"Few-shot semantic segmentation with a differentiable ridge-regression base learner"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all");

  CommonFlags gendata_flags, train_flags, eval_flags, verify_flags;
  auto* gendata = app.add_subcommand("gendata", "write the synthetic dataset as PPM/PGM files");
  add_common(gendata, gendata_flags);

  auto* train = app.add_subcommand("train", "episodic meta-training");
  add_common(train, train_flags);
  std::string train_dataset, resume;
  train->add_option("--dataset", train_dataset, "dataset directory (default: generate from [data])");
  train->add_option("--resume", resume, "continue from a checkpoint");

  auto* ev = app.add_subcommand("eval", "task-averaged mIoU on novel classes");
  add_common(ev, eval_flags);
  EvalFlags e;
  ev->add_option("--checkpoint", e.checkpoint, "trained checkpoint");
  ev->add_option("--dataset", e.dataset, "dataset directory (default: generate from [data])");
  ev->add_option("--csv", e.csv, "per-task CSV output path");
  ev->add_option("--way", e.way, "classes per task");
  ev->add_option("--shot", e.shot, "support images per class");
  ev->add_option("--query", e.query, "query images per class");
  ev->add_option("--tasks", e.tasks, "number of tasks");
  ev->add_flag("--untrained", e.untrained, "evaluate a freshly initialized embedding instead of a checkpoint");

  auto* verify = app.add_subcommand("verify", "run the f64 verification battery");
  add_common(verify, verify_flags);
  std::size_t sampler_episodes = 10000;
  bool inject_fault = false;
  verify->add_option("--sampler-episodes", sampler_episodes, "episodes for the sampler invariant scan");
  verify->add_flag("--inject-gradient-fault", inject_fault)->group("");  // test fixture, hidden

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? 0 : 1;
  }
  try {
    if (*gendata) return cmd_gendata(gendata_flags);
    if (*train) return cmd_train(train_flags, train_dataset, resume);
    if (*ev) return cmd_eval(eval_flags, e);
    if (*verify) return cmd_verify(verify_flags, sampler_episodes, inject_fault);
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << "\n";
    return exit_code_for(err);
  }
  return 1;
}

}  // namespace metaseg::cli
