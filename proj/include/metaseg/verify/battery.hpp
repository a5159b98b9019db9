#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "metaseg/episodes/dataset.hpp"

namespace metaseg::verify {

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
  double seconds = 0;
};

struct BatteryOptions {
  std::uint64_t seed = 0;
  std::size_t sampler_episodes = 10000;
  int ridge_combos = 60;
  // Swaps the leaky-ReLU backward for a wrong one; the battery must fail.
  bool inject_gradient_fault = false;
  std::filesystem::path scratch_dir;  // empty = system temp directory
};

struct BatteryReport {
  std::vector<CheckResult> checks;

  bool passed() const;
  std::string format() const;
};

// f64 central-difference checks of every differentiable op (rtol 1e-4).
std::vector<CheckResult> check_op_gradients(std::uint64_t seed, bool inject_fault = false);

// d(meta loss)/d{embedding, log lambda, alpha, beta} through the whole
// episode pipeline on a micro-net (uniform width `channels`, 8x8 images).
CheckResult check_pipeline_gradient(int channels, std::uint64_t seed);

// Closed form against the gradient-descent oracle (<= 1e-6) and primal
// against Woodbury (<= 1e-8) over `combos` seeded (n, c, lambda) cases.
std::vector<CheckResult> check_ridge_closed_form(int combos, std::uint64_t seed);

// One-step head against its formula, prototype head against hand values.
std::vector<CheckResult> check_ablation_heads(std::uint64_t seed);

// Cardinalities, label range, split contamination and reproducibility over
// `episodes` sampled episodes, half from each split.
CheckResult check_sampler_invariants(const episodes::SegDataset& dataset, std::size_t episodes, std::uint64_t seed);

// save -> load -> save byte identity, corruption and version detection.
CheckResult check_checkpoint_roundtrip(const std::filesystem::path& dir, std::uint64_t seed);

BatteryReport run_battery(const BatteryOptions& options);

}  // namespace metaseg::verify
