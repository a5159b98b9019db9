#include "metaseg/ridge/heads.hpp"

#include <algorithm>
#include <cmath>

#include "metaseg/common/rng.hpp"

namespace metaseg::ridge {

std::string to_string(HeadKind kind) {
  switch (kind) {
    case HeadKind::ridge: return "ridge";
    case HeadKind::prototype: return "prototype";
    case HeadKind::convstep: return "convstep";
  }
  return "?";
}

HeadKind parse_head_kind(const std::string& text) {
  if (text == "ridge") return HeadKind::ridge;
  if (text == "prototype") return HeadKind::prototype;
  if (text == "convstep") return HeadKind::convstep;
  throw ValidationError("unknown head '" + text + "' (expected ridge, prototype or convstep)");
}

template <typename T>
T RidgeHead<T>::lambda() const {
  return static_cast<T>(std::exp(static_cast<double>(log_lambda.item())));
}

template <typename T>
RidgeHeadVars<T> bind_head(Tape<T>& tape, const RidgeHead<T>& head) {
  return {tape.leaf(head.log_lambda), tape.leaf(head.alpha), tape.leaf(head.beta)};
}

EpisodeTargets make_targets(std::span<const int> labels, std::size_t num_classes) {
  if (num_classes == 0) throw ValidationError("targets need at least one class");
  for (const int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= num_classes) {
      throw ValidationError("label " + std::to_string(y) + " outside [0, " + std::to_string(num_classes) + ")");
    }
  }
  return EpisodeTargets{std::vector<int>(labels.begin(), labels.end()), num_classes};
}

template <typename T>
Tensor<T> EpisodeTargets::onehot() const {
  Tensor<T> y(ad::Shape{labels.size(), num_classes});
  for (std::size_t i = 0; i < labels.size(); ++i) y[i * num_classes + static_cast<std::size_t>(labels[i])] = T{1};
  return y;
}

template <typename T>
Var<T> ridge_fit(const Var<T>& x, const Tensor<T>& y, const Var<T>& lambda, SolveForm form) {
  if (x.shape().size() != 2 || y.rank() != 2) throw ShapeError("ridge_fit: X and Y must be matrices");
  const std::size_t n = x.shape()[0], c = x.shape()[1];
  if (n == 0) throw ShapeError("ridge_fit: no support pixels");
  if (y.dim(0) != n) {
    throw ShapeError("ridge_fit: X has " + std::to_string(n) + " rows, Y has " + std::to_string(y.dim(0)));
  }
  if (!(lambda.value().item() > T{0})) throw ValidationError("ridge_fit: lambda must be positive");

  Tape<T>& tape = x.tape();
  Var<T> targets = tape.constant(y);
  Var<T> xt = ad::transpose(x);
  const bool primal = form == SolveForm::primal || (form == SolveForm::automatic && n >= c);
  if (primal) {
    Var<T> gram = ad::add_diag(ad::matmul(xt, x), lambda);
    return ad::spd_solve(gram, ad::matmul(xt, targets));
  }
  Var<T> kernel = ad::add_diag(ad::matmul(x, xt), lambda);
  return ad::matmul(xt, ad::spd_solve(kernel, targets));
}

template <typename T>
Var<T> ridge_predict(const Var<T>& x_query, const Var<T>& w, const Var<T>& alpha, const Var<T>& beta) {
  return ad::add_scalar(ad::mul_scalar(ad::matmul(x_query, w), alpha), beta);
}

template <typename T>
Var<T> prototype_predict(const Var<T>& x_support, std::span<const int> labels, std::size_t num_classes,
                         const Var<T>& x_query) {
  if (x_support.shape().size() != 2) throw ShapeError("prototype_predict: support features must be a matrix");
  const std::size_t n = x_support.shape()[0];
  if (labels.size() != n) throw ShapeError("prototype_predict: label count does not match support rows");
  std::vector<std::size_t> counts(num_classes, 0);
  for (const int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= num_classes) {
      throw ValidationError("prototype_predict: label " + std::to_string(y) + " out of range");
    }
    ++counts[static_cast<std::size_t>(y)];
  }
  for (std::size_t k = 0; k < num_classes; ++k) {
    if (counts[k] == 0) throw ValidationError("prototype_predict: class " + std::to_string(k) + " has no support pixels");
  }
  // averaging matrix: row k holds 1/count_k at the class-k pixels
  Tensor<T> avg(ad::Shape{num_classes, n});
  for (std::size_t i = 0; i < n; ++i) {
    const auto k = static_cast<std::size_t>(labels[i]);
    avg[k * n + i] = static_cast<T>(1.0 / static_cast<double>(counts[k]));
  }
  Var<T> prototypes = ad::matmul(x_support.tape().constant(std::move(avg)), x_support);
  return ad::neg_sq_distance(x_query, prototypes);
}

template <typename T>
Var<T> convstep_predict(const Var<T>& x_support, const Tensor<T>& y, const Var<T>& x_query, double step_lr,
                        double adam_eps) {
  if (x_support.shape().size() != 2 || y.rank() != 2 || y.dim(0) != x_support.shape()[0]) {
    throw ShapeError("convstep_predict: support features and targets disagree");
  }
  const auto n = static_cast<double>(x_support.shape()[0]);
  // gradient of (1/n)||XW - Y||^2 at W = 0
  Var<T> grad = ad::scale(ad::matmul(ad::transpose(x_support), x_support.tape().constant(y)), -2.0 / n);
  // Adam at t = 1: bias-corrected moments are g and g^2
  Var<T> w = ad::scale(ad::adam_first_direction(grad, adam_eps), -step_lr);
  return ad::matmul(x_query, w);
}

std::vector<std::size_t> subsample_support(std::span<const int> labels, std::size_t num_classes, std::size_t cap,
                                           std::uint64_t seed) {
  std::vector<std::size_t> all(labels.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  if (cap == 0 || cap >= labels.size()) return all;

  std::vector<std::vector<std::size_t>> by_class(num_classes);
  for (std::size_t i = 0; i < labels.size(); ++i) by_class.at(static_cast<std::size_t>(labels[i])).push_back(i);
  std::size_t present = 0;
  for (const auto& rows : by_class) present += rows.empty() ? 0 : 1;
  const std::size_t per_class = std::max<std::size_t>(1, cap / std::max<std::size_t>(present, 1));

  Rng rng(seed);
  std::vector<std::size_t> keep;
  for (auto& rows : by_class) {
    rng.shuffle(std::span<std::size_t>(rows));
    const std::size_t take = std::min(per_class, rows.size());
    keep.insert(keep.end(), rows.begin(), rows.begin() + static_cast<std::ptrdiff_t>(take));
  }
  std::sort(keep.begin(), keep.end());
  return keep;
}

#define METASEG_INSTANTIATE_RIDGE(T)                                                                        \
  template struct RidgeHead<T>;                                                                             \
  template RidgeHeadVars<T> bind_head(Tape<T>&, const RidgeHead<T>&);                                       \
  template Tensor<T> EpisodeTargets::onehot<T>() const;                                                     \
  template Var<T> ridge_fit(const Var<T>&, const Tensor<T>&, const Var<T>&, SolveForm);                     \
  template Var<T> ridge_predict(const Var<T>&, const Var<T>&, const Var<T>&, const Var<T>&);                \
  template Var<T> prototype_predict(const Var<T>&, std::span<const int>, std::size_t, const Var<T>&);       \
  template Var<T> convstep_predict(const Var<T>&, const Tensor<T>&, const Var<T>&, double, double);

METASEG_INSTANTIATE_RIDGE(float)
METASEG_INSTANTIATE_RIDGE(double)

}  // namespace metaseg::ridge
