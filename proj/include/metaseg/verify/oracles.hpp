#pragma once

#include <cstdint>

#include "metaseg/autodiff/tensor.hpp"
#include "metaseg/common/rng.hpp"

// Reference computations written with plain loops. They share no code with
// the library implementations they are compared against.
namespace metaseg::verify {

using ad::Tensor;

Tensor<double> random_tensor(const ad::Shape& shape, Rng& rng, double scale = 1.0);

// Direct cross-correlation with zero padding; bias may be null.
Tensor<double> naive_conv2d(const Tensor<double>& input, const Tensor<double>& kernel, const Tensor<double>* bias,
                            int stride, int padding, int dilation);

// A k x k kernel spread onto the ((k-1)d + 1)^2 grid it samples at dilation d.
Tensor<double> zero_inflate(const Tensor<double>& kernel, int dilation);

struct GdResult {
  Tensor<double> w;
  std::size_t steps = 0;
  double grad_inf = 0;  // final gradient infinity norm
};

// Gradient descent on ||X W - Y||^2 + lambda ||W||^2 from W = 0. lr <= 0
// picks 1 / L from the spectral bound L = 2 (||X||_F^2 + lambda). Stops
// after max_steps or once the gradient infinity norm drops below tol.
GdResult ridge_gd_oracle(const Tensor<double>& x, const Tensor<double>& y, double lambda, std::size_t max_steps,
                         double lr = -1.0, double tol = 0.0);

// One Adam step at t = 1 from W = 0 on (1/n) ||X W - Y||^2, applied to Xq.
Tensor<double> convstep_oracle(const Tensor<double>& x, const Tensor<double>& y, const Tensor<double>& xq, double lr,
                               double eps);

double max_abs_diff(const Tensor<double>& a, const Tensor<double>& b);

}  // namespace metaseg::verify
