#include "metaseg/verify/oracles.hpp"

#include <algorithm>
#include <cmath>

#include "metaseg/common/error.hpp"

namespace metaseg::verify {

Tensor<double> random_tensor(const ad::Shape& shape, Rng& rng, double scale) {
  Tensor<double> t(shape);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = scale * rng.normal();
  return t;
}

Tensor<double> naive_conv2d(const Tensor<double>& input, const Tensor<double>& kernel, const Tensor<double>* bias,
                            int stride, int padding, int dilation) {
  const auto& is = input.shape();
  const auto& ks = kernel.shape();
  const long N = static_cast<long>(is[0]), C = static_cast<long>(is[1]), H = static_cast<long>(is[2]),
             W = static_cast<long>(is[3]);
  const long O = static_cast<long>(ks[0]), kh = static_cast<long>(ks[2]), kw = static_cast<long>(ks[3]);
  if (static_cast<long>(ks[1]) != C) throw ShapeError("naive_conv2d: channel mismatch");
  const long OH = (H + 2 * padding - dilation * (kh - 1) - 1) / stride + 1;
  const long OW = (W + 2 * padding - dilation * (kw - 1) - 1) / stride + 1;
  Tensor<double> out(ad::Shape{is[0], ks[0], static_cast<std::size_t>(OH), static_cast<std::size_t>(OW)});
  for (long n = 0; n < N; ++n)
    for (long o = 0; o < O; ++o)
      for (long y = 0; y < OH; ++y)
        for (long x = 0; x < OW; ++x) {
          double acc = bias ? (*bias)[static_cast<std::size_t>(o)] : 0.0;
          for (long c = 0; c < C; ++c)
            for (long i = 0; i < kh; ++i)
              for (long j = 0; j < kw; ++j) {
                const long sy = y * stride - padding + i * dilation;
                const long sx = x * stride - padding + j * dilation;
                if (sy < 0 || sy >= H || sx < 0 || sx >= W) continue;
                acc += input[static_cast<std::size_t>(((n * C + c) * H + sy) * W + sx)] *
                       kernel[static_cast<std::size_t>(((o * C + c) * kh + i) * kw + j)];
              }
          out[static_cast<std::size_t>(((n * O + o) * OH + y) * OW + x)] = acc;
        }
  return out;
}

Tensor<double> zero_inflate(const Tensor<double>& kernel, int dilation) {
  const auto& s = kernel.shape();
  const std::size_t k = s[2], d = static_cast<std::size_t>(dilation), K = (k - 1) * d + 1;
  Tensor<double> out(ad::Shape{s[0], s[1], K, K});
  for (std::size_t oc = 0; oc < s[0] * s[1]; ++oc)
    for (std::size_t i = 0; i < k; ++i)
      for (std::size_t j = 0; j < k; ++j) out[(oc * K + i * d) * K + j * d] = kernel[(oc * k + i) * k + j];
  return out;
}

GdResult ridge_gd_oracle(const Tensor<double>& x, const Tensor<double>& y, double lambda, std::size_t max_steps,
                         double lr, double tol) {
  const std::size_t n = x.shape()[0], c = x.shape()[1], m = y.shape()[1];
  if (lr <= 0) {
    double fro = 0;
    for (const double v : x.data()) fro += v * v;
    lr = 1.0 / (2.0 * (fro + lambda));
  }
  // precompute X^T X and X^T Y; the gradient is 2 (X^T X W - X^T Y + lambda W)
  std::vector<double> xtx(c * c, 0.0), xty(c * m, 0.0);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t i = 0; i < c; ++i) {
      for (std::size_t j = 0; j < c; ++j) xtx[i * c + j] += x[r * c + i] * x[r * c + j];
      for (std::size_t j = 0; j < m; ++j) xty[i * m + j] += x[r * c + i] * y[r * m + j];
    }
  GdResult res;
  res.w = Tensor<double>(ad::Shape{c, m});
  std::vector<double> g(c * m);
  for (res.steps = 0; res.steps < max_steps; ++res.steps) {
    res.grad_inf = 0;
    for (std::size_t i = 0; i < c; ++i)
      for (std::size_t j = 0; j < m; ++j) {
        double acc = -xty[i * m + j] + lambda * res.w[i * m + j];
        for (std::size_t k = 0; k < c; ++k) acc += xtx[i * c + k] * res.w[k * m + j];
        g[i * m + j] = 2.0 * acc;
        res.grad_inf = std::max(res.grad_inf, std::abs(g[i * m + j]));
      }
    if (res.grad_inf <= tol) break;
    for (std::size_t i = 0; i < c * m; ++i) res.w[i] -= lr * g[i];
  }
  return res;
}

Tensor<double> convstep_oracle(const Tensor<double>& x, const Tensor<double>& y, const Tensor<double>& xq, double lr,
                               double eps) {
  const std::size_t n = x.shape()[0], c = x.shape()[1], m = y.shape()[1], q = xq.shape()[0];
  // at W = 0 the gradient of (1/n)||XW - Y||^2 is -(2/n) X^T Y; Adam's first
  // step with bias correction is -lr * g / (|g| + eps)
  Tensor<double> w(ad::Shape{c, m});
  for (std::size_t i = 0; i < c; ++i)
    for (std::size_t j = 0; j < m; ++j) {
      double g = 0;
      for (std::size_t r = 0; r < n; ++r) g += x[r * c + i] * y[r * m + j];
      g *= -2.0 / static_cast<double>(n);
      w[i * m + j] = -lr * g / (std::abs(g) + eps);
    }
  Tensor<double> out(ad::Shape{q, m});
  for (std::size_t r = 0; r < q; ++r)
    for (std::size_t j = 0; j < m; ++j)
      for (std::size_t i = 0; i < c; ++i) out[r * m + j] += xq[r * c + i] * w[i * m + j];
  return out;
}

double max_abs_diff(const Tensor<double>& a, const Tensor<double>& b) {
  if (a.shape() != b.shape()) throw ShapeError("max_abs_diff: shape mismatch");
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace metaseg::verify
