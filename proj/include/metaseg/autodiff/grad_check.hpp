#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "metaseg/autodiff/tape.hpp"

namespace metaseg::ad {

struct GradCheckOptions {
  double rtol = 1e-4;
  double h = 1e-4;
  // Absolute differences up to this pass regardless of magnitude.
  double atol = 1e-8;
  // Tensors with more elements than this are checked on a seeded subset.
  std::size_t full_check_limit = 4096;
  std::size_t subset_size = 64;
  std::uint64_t seed = 0;
};

struct InputCheck {
  std::size_t coords_checked = 0;
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  bool passed = true;
};

struct GradCheckReport {
  std::vector<InputCheck> inputs;
  bool passed = true;

  double worst_rel_error() const;
  std::string summary() const;
};

// Builds a scalar on the given tape from leaf variables for the inputs.
using TapeFunction = std::function<Var<double>(Tape<double>&, std::span<const Var<double>>)>;

// Compares reverse-mode gradients against central differences. The relative
// error of a coordinate is |analytic - numeric| / max(|analytic|, |numeric|,
// 1e-3 * max |numeric| over the input, atol / rtol).
GradCheckReport grad_check(const TapeFunction& fn, std::span<const Tensor<double>> inputs,
                           const GradCheckOptions& options = {});

}  // namespace metaseg::ad
