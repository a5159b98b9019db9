#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "metaseg/autodiff/tensor.hpp"

namespace metaseg::ad {

struct AdamHyper {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename T>
struct AdamState {
  AdamHyper hyper;
  std::uint64_t step = 0;
  // One moment buffer per parameter, same order and shape; empty until the
  // first step.
  std::vector<Tensor<T>> first_moment;
  std::vector<Tensor<T>> second_moment;
};

// Bias-corrected Adam update applied to every parameter in place.
template <typename T>
void adam_step(std::span<Tensor<T>* const> params, std::span<const Tensor<T>> grads, AdamState<T>& state);

extern template void adam_step(std::span<Tensor<float>* const>, std::span<const Tensor<float>>,
                               AdamState<float>&);
extern template void adam_step(std::span<Tensor<double>* const>, std::span<const Tensor<double>>,
                               AdamState<double>&);

}  // namespace metaseg::ad
