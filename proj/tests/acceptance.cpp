// End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
// exits nonzero if any criterion fails.

#include <CLI11.hpp>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "metaseg/episodes/synth.hpp"
#include "metaseg/eval/evaluate.hpp"
#include "metaseg/trainer/trainer.hpp"
#include "metaseg/verify/battery.hpp"

using namespace metaseg;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

constexpr const char* kPinnedChecksum = "3a02b61f";
constexpr int kEvalTasks = 200;
constexpr std::uint64_t kEvalSeed = 7;

double since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

struct Line {
  int id;
  std::string title;
  bool passed;
  std::string detail;
};

std::vector<Line> lines;

void report(int id, const std::string& title, bool passed, const std::string& detail) {
  lines.push_back({id, title, passed, detail});
  std::fprintf(stderr, "%s [%d] %s: %s\n", passed ? "PASS" : "FAIL", id, title.c_str(), detail.c_str());
}

const verify::CheckResult* find_check(const verify::BatteryReport& r, const std::string& prefix) {
  for (const auto& c : r.checks) {
    if (c.name.rfind(prefix, 0) == 0) return &c;
  }
  return nullptr;
}

// Reduced-width embedding that keeps the paper topology (five blocks,
// dilations, global branch) and fits the CPU budget.
trainer::TrainConfig base_config() {
  trainer::TrainConfig c;
  c.K = 2;
  c.N = 5;
  c.Q = 2;
  c.epochs = 20;
  c.episodes_per_epoch = 200;
  c.seed = 1;
  c.precision = trainer::Precision::f32;
  c.embed.block_channels = {16, 32, 64, 64, 64};
  return c;
}

struct RunResult {
  trainer::TrainState<float> state;
  std::vector<trainer::EpochLog> logs;
  double seconds = 0;
};

RunResult train_run(const std::string& label, const trainer::TrainConfig& cfg, const episodes::SegDataset& ds,
                    const fs::path& dir, bool reuse) {
  RunResult out;
  const fs::path last = dir / (label + ".ckpt");
  if (reuse && fs::exists(last)) {
    out.state = trainer::state_from_checkpoint<float>(trainer::load_checkpoint(last));
    if (out.state.config == cfg && out.state.epoch == static_cast<std::uint64_t>(cfg.epochs)) {
      std::cerr << label << ": reusing " << last.string() << "\n";
      return out;
    }
  }
  out.state = trainer::init_state<float>(cfg);
  const auto start = Clock::now();
  out.logs = trainer::meta_train<float>(ds, out.state, [&](const trainer::EpochLog& log, const auto& s) {
    std::fprintf(stderr, "%s epoch %2d  loss %.4f  %.1fs  lambda %.3g\n", label.c_str(), log.epoch, log.mean_loss,
                 log.seconds, static_cast<double>(s.model.head.lambda()));
  });
  out.seconds = since(start);
  trainer::save_checkpoint(last, trainer::to_checkpoint(out.state));
  return out;
}

eval::EvalReport evaluate(const trainer::TrainState<float>& s, const episodes::SegDataset& ds, int shots) {
  const trainer::HeadOptions options{s.config.support_cap, s.config.convstep_lr};
  return eval::evaluate(s.model, options, ds, episodes::Split::novel, 2, shots, 2, kEvalTasks, kEvalSeed);
}

double mean_loss(const std::vector<trainer::EpochLog>& logs, std::size_t from, std::size_t to) {
  double s = 0;
  for (std::size_t i = from; i < to; ++i) s += logs.at(i).mean_loss;
  return s / static_cast<double>(to - from);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"metaseg acceptance run"};
  fs::path work = fs::temp_directory_path() / "metaseg_acceptance";
  bool reuse = false;
  app.add_option("--work-dir", work, "directory for checkpoints and scratch files");
  app.add_flag("--reuse", reuse, "reuse finished training checkpoints found in the work directory");
  CLI11_PARSE(app, argc, argv);
  fs::create_directories(work);
  const auto total_start = Clock::now();

  try {
    // 1, 2, 6: the verification battery
    verify::BatteryOptions bo;
    bo.scratch_dir = work / "verify";
    const auto vstart = Clock::now();
    const verify::BatteryReport battery = verify::run_battery(bo);
    const double vsec = since(vstart);
    std::cerr << battery.format();
    {
      bool ok = vsec <= 600;
      std::size_t ops = 0, failed = 0;
      std::string pipeline;
      for (const auto& c : battery.checks) {
        if (c.name.rfind("grad ", 0) != 0) continue;
        ++ops;
        if (!c.passed) ++failed;
        if (c.name.rfind("grad episode pipeline", 0) == 0) pipeline += "; " + c.name.substr(5) + " " + c.detail;
      }
      ok = ok && failed == 0 && ops > 0;
      report(1, "gradient correctness", ok,
             std::to_string(ops - failed) + "/" + std::to_string(ops) + " f64 gradient checks within rtol 1e-4" +
                 pipeline + "; battery " + fmt("%.0f", vsec) + "s (limit 600s)");
    }
    {
      const auto* gd = find_check(battery, "ridge closed form vs gradient-descent oracle");
      const auto* wood = find_check(battery, "ridge primal vs Woodbury form");
      const bool ok = gd && wood && gd->passed && wood->passed && bo.ridge_combos >= 50;
      report(2, "closed-form fidelity", ok,
             (gd ? gd->detail : std::string("missing")) + " (limit 1e-6); Woodbury " +
                 (wood ? wood->detail : std::string("missing")) + " (limit 1e-8)");
    }

    const episodes::SegDataset ds =
        episodes::split_classes(episodes::gen_synthetic(episodes::SynthConfig{}), episodes::kDefaultNovelClasses);
    const std::string checksum = episodes::checksum_hex(ds.checksum());
    std::cerr << "dataset checksum " << checksum << "\n";
    {
      const auto* s = find_check(battery, "sampler invariants");
      const bool ok = s && s->passed && bo.sampler_episodes >= 10000;
      report(6, "protocol invariants", ok, s ? s->detail : std::string("missing"));
    }

    // 7: parameter count of the paper preset
    {
      const std::size_t n = embed::count_params(embed::build_embedding<float>(embed::EmbedConfig{}, 1));
      const bool ok = n >= 10'500'000 && n <= 15'700'000;
      report(7, "parameter count", ok, std::to_string(n) + " trainable parameters (band [10.5M, 15.7M], reported 13.1M)");
    }

    // 3, 4, 5: training runs
    trainer::TrainConfig main_cfg = base_config();
    trainer::TrainConfig nogc_cfg = base_config();
    nogc_cfg.embed.gc_branch_enabled = false;
    trainer::TrainConfig conv_cfg = nogc_cfg;
    conv_cfg.head = ridge::HeadKind::convstep;

    const RunResult main_run = train_run("ridge_gc", main_cfg, ds, work, reuse);
    const eval::EvalReport trained5 = evaluate(main_run.state, ds, 5);
    const eval::EvalReport trained1 = evaluate(main_run.state, ds, 1);
    const eval::EvalReport control = evaluate(trainer::init_state<float>(main_cfg), ds, 5);
    {
      const double ratio = trained5.mean / std::max(control.mean, 1e-12);
      const bool reached = trained5.mean >= 0.50;
      const bool ratio_ok = ratio >= 3.0;
      const bool budget = main_run.seconds <= 45 * 60;
      std::string detail = "dataset " + checksum + (checksum == kPinnedChecksum ? " (pinned)" : " (NOT the pinned set)") +
                           "; 2-way 5-shot mIoU " + fmt("%.4f", trained5.mean) + " (>= 0.50 " +
                           (reached ? "met" : "missed") + "); untrained control " + fmt("%.4f", control.mean) +
                           ", ratio " + fmt("%.2f", ratio) + "x (>= 3x " + (ratio_ok ? "met" : "missed") + ")";
      if (!main_run.logs.empty()) {
        detail += "; training " + fmt("%.0f", main_run.seconds) + "s (limit 2700s)";
        if (main_run.logs.size() >= 20) {
          detail += ", loss epochs 1-5 " + fmt("%.4f", mean_loss(main_run.logs, 0, 5)) + " vs 16-20 " +
                    fmt("%.4f", mean_loss(main_run.logs, 15, 20));
        }
      }
      report(3, "desk-scale learning", reached && ratio_ok && budget && checksum == kPinnedChecksum, detail);
    }
    {
      const double gap = trained5.mean - trained1.mean;
      report(4, "shot monotonicity", gap >= 0.02,
             "5-shot " + fmt("%.4f", trained5.mean) + " vs 1-shot " + fmt("%.4f", trained1.mean) + ", gap " +
                 fmt("%+.4f", gap) + " (need >= +0.02)");
    }

    const RunResult nogc_run = train_run("ridge_nogc", nogc_cfg, ds, work, reuse);
    const RunResult conv_run = train_run("convstep_nogc", conv_cfg, ds, work, reuse);
    {
      const double ridge_nogc = evaluate(nogc_run.state, ds, 5).mean;
      const double conv_nogc = evaluate(conv_run.state, ds, 5).mean;
      const double head_gap = ridge_nogc - conv_nogc;
      const double gc_gap = trained5.mean - ridge_nogc;
      report(5, "ablation ordering", head_gap >= 0.02 && gc_gap >= 0.0,
             "GC off: ridge " + fmt("%.4f", ridge_nogc) + " vs one-step conv " + fmt("%.4f", conv_nogc) + " (margin " +
                 fmt("%+.4f", head_gap) + ", need >= +0.02); ridge GC on " + fmt("%.4f", trained5.mean) + " vs off " +
                 fmt("%.4f", ridge_nogc) + " (margin " + fmt("%+.4f", gc_gap) + ", need >= 0)");
    }

    // 8: persistence on the trained checkpoint and a short resumed run
    {
      const fs::path a = work / "persist_a.ckpt", b = work / "persist_b.ckpt";
      trainer::save_checkpoint(a, trainer::to_checkpoint(main_run.state));
      trainer::save_checkpoint(b, trainer::to_checkpoint(trainer::state_from_checkpoint<float>(trainer::load_checkpoint(a))));
      const bool bytes_same = trainer::serialize(trainer::load_checkpoint(a)) ==
                                  trainer::serialize(trainer::load_checkpoint(b)) &&
                              fs::file_size(a) == fs::file_size(b);

      trainer::TrainConfig short_cfg = base_config();
      short_cfg.epochs = 3;
      short_cfg.episodes_per_epoch = 10;
      auto straight = trainer::init_state<float>(short_cfg);
      const auto straight_logs = trainer::meta_train<float>(ds, straight);
      auto first = trainer::init_state<float>(short_cfg);
      trainer::meta_train<float>(ds, first, {}, 1);
      const fs::path mid = work / "persist_mid.ckpt";
      trainer::save_checkpoint(mid, trainer::to_checkpoint(first));
      auto resumed = trainer::state_from_checkpoint<float>(trainer::load_checkpoint(mid));
      const auto resumed_logs = trainer::meta_train<float>(ds, resumed);
      bool same = resumed_logs.size() == 2 &&
                  trainer::serialize(trainer::to_checkpoint(resumed)) ==
                      trainer::serialize(trainer::to_checkpoint(straight));
      for (std::size_t i = 0; same && i < resumed_logs.size(); ++i) {
        same = resumed_logs[i].mean_loss == straight_logs[i + 1].mean_loss;
      }
      report(8, "persistence", bytes_same && same,
             std::string("save-load-save ") + (bytes_same ? "byte-identical" : "differs") + " (" +
                 std::to_string(fs::file_size(a)) + " bytes); resume after epoch 1 of 3 " +
                 (same ? "bit-identical to the uninterrupted run" : "diverges"));
    }
  } catch (const std::exception& e) {
    std::printf("FAIL acceptance aborted: %s\n", e.what());
    return 2;
  }

  std::sort(lines.begin(), lines.end(), [](const Line& a, const Line& b) { return a.id < b.id; });
  int failed = 0;
  for (const auto& l : lines) {
    std::printf("%s [%d] %s: %s\n", l.passed ? "PASS" : "FAIL", l.id, l.title.c_str(), l.detail.c_str());
    failed += l.passed ? 0 : 1;
  }
  std::printf("%d/%zu criteria passed in %.0fs\n", static_cast<int>(lines.size()) - failed, lines.size(),
              since(total_start));
  return failed == 0 ? 0 : 1;
}
