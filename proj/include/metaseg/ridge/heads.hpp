#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "metaseg/autodiff/ops.hpp"

namespace metaseg::ridge {

using ad::Tape;
using ad::Tensor;
using ad::Var;

enum class HeadKind { ridge, prototype, convstep };
enum class SolveForm { automatic, primal, dual };

std::string to_string(HeadKind kind);
HeadKind parse_head_kind(const std::string& text);

// Learnable scalars of the base learner: lambda = exp(log_lambda) and the
// output adjustment logits = alpha * X'W + beta.
template <typename T>
struct RidgeHead {
  Tensor<T> log_lambda = Tensor<T>::scalar(T{0});
  Tensor<T> alpha = Tensor<T>::scalar(T{1});
  Tensor<T> beta = Tensor<T>::scalar(T{0});

  T lambda() const;
  std::array<Tensor<T>*, 3> tensors() { return {&log_lambda, &alpha, &beta}; }
  std::array<const Tensor<T>*, 3> tensors() const { return {&log_lambda, &alpha, &beta}; }
  static constexpr std::array<const char*, 3> kNames{"head.log_lambda", "head.alpha", "head.beta"};
};

template <typename T>
struct RidgeHeadVars {
  Var<T> log_lambda, alpha, beta;
};

template <typename T>
RidgeHeadVars<T> bind_head(Tape<T>& tape, const RidgeHead<T>& head);

// Per-pixel episode-local labels 0..K (0 = background) and their one-hot form.
struct EpisodeTargets {
  std::vector<int> labels;
  std::size_t num_classes = 0;

  template <typename T>
  Tensor<T> onehot() const;
};

EpisodeTargets make_targets(std::span<const int> labels, std::size_t num_classes);

// Closed-form multi-output ridge regression
//   W = argmin ||X W - Y||^2 + lambda ||W||^2
// primal (X^T X + lambda I)^{-1} X^T Y when n >= c, otherwise the Woodbury
// form X^T (X X^T + lambda I)^{-1} Y.
template <typename T>
Var<T> ridge_fit(const Var<T>& x, const Tensor<T>& y, const Var<T>& lambda, SolveForm form = SolveForm::automatic);

template <typename T>
Var<T> ridge_predict(const Var<T>& x_query, const Var<T>& w, const Var<T>& alpha, const Var<T>& beta);

// logit(q, k) = -||x_q - mean of class-k support pixels||^2.
template <typename T>
Var<T> prototype_predict(const Var<T>& x_support, std::span<const int> labels, std::size_t num_classes,
                         const Var<T>& x_query);

// A zero-initialized c x m linear head after one Adam step (t = 1) on the
// mean support squared loss (1/n)||X W - Y||^2, applied to the query pixels.
template <typename T>
Var<T> convstep_predict(const Var<T>& x_support, const Tensor<T>& y, const Var<T>& x_query, double step_lr = 1e-3,
                        double adam_eps = 1e-8);

// Uniform per-class row subsample with at most `cap` rows in total (cap 0 =
// keep everything). Classes keep at least one row each.
std::vector<std::size_t> subsample_support(std::span<const int> labels, std::size_t num_classes, std::size_t cap,
                                           std::uint64_t seed);

}  // namespace metaseg::ridge
