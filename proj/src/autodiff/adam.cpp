#include "metaseg/autodiff/adam.hpp"

#include <cmath>

namespace metaseg::ad {

template <typename T>
void adam_step(std::span<Tensor<T>* const> params, std::span<const Tensor<T>> grads, AdamState<T>& state) {
  if (params.size() != grads.size()) {
    throw ShapeError("adam_step: " + std::to_string(params.size()) + " parameters but " +
                     std::to_string(grads.size()) + " gradients");
  }
  if (state.first_moment.empty() && state.step == 0) {
    for (const Tensor<T>* p : params) {
      state.first_moment.emplace_back(p->shape());
      state.second_moment.emplace_back(p->shape());
    }
  }
  if (state.first_moment.size() != params.size() || state.second_moment.size() != params.size()) {
    throw ShapeError("adam_step: optimizer state holds " + std::to_string(state.first_moment.size()) +
                     " buffers for " + std::to_string(params.size()) + " parameters");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i]->shape() != grads[i].shape() || state.first_moment[i].shape() != grads[i].shape() ||
        state.second_moment[i].shape() != grads[i].shape()) {
      throw ShapeError("adam_step: shape mismatch at parameter " + std::to_string(i) + " (" +
                       to_string(params[i]->shape()) + " vs grad " + to_string(grads[i].shape()) + ")");
    }
  }

  state.step += 1;
  const AdamHyper& h = state.hyper;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(h.beta1, t);
  const double c2 = 1.0 - std::pow(h.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor<T>& p = *params[i];
    Tensor<T>& m = state.first_moment[i];
    Tensor<T>& v = state.second_moment[i];
    const Tensor<T>& g = grads[i];
    for (std::size_t j = 0; j < p.size(); ++j) {
      const double gj = g[j];
      const double mj = h.beta1 * m[j] + (1.0 - h.beta1) * gj;
      const double vj = h.beta2 * v[j] + (1.0 - h.beta2) * gj * gj;
      m[j] = static_cast<T>(mj);
      v[j] = static_cast<T>(vj);
      p[j] = static_cast<T>(p[j] - h.lr * (mj / c1) / (std::sqrt(vj / c2) + h.eps));
    }
  }
}

template void adam_step(std::span<Tensor<float>* const>, std::span<const Tensor<float>>, AdamState<float>&);
template void adam_step(std::span<Tensor<double>* const>, std::span<const Tensor<double>>, AdamState<double>&);

}  // namespace metaseg::ad
