#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "metaseg/autodiff/tape.hpp"

namespace metaseg::ad {

struct Conv2dOptions {
  int stride = 1;
  int padding = 0;
  int dilation = 1;
};

enum class PoolMode { max2x2, global_avg };
enum class Mode { train, eval };

inline constexpr double kBatchNormEps = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;

// Per-channel statistics of one train-mode batch norm call.
template <typename T>
struct BatchStats {
  std::vector<T> mean;
  std::vector<T> var_unbiased;
};

// ---- convolution / pooling / resampling (NCHW) ----------------------------

// Cross-correlation with zero padding. kernel is O x I x k x k, bias is O or
// an invalid Var for no bias.
template <typename T>
Var<T> conv2d(const Var<T>& input, const Var<T>& kernel, const Var<T>& bias,
              const Conv2dOptions& options);

// max2x2 pads odd extents on the right/bottom with -inf; ties route the
// gradient to the first index in row-major window order.
template <typename T>
Var<T> pool2d(const Var<T>& input, PoolMode mode);

template <typename T>
Var<T> replicate_upsample(const Var<T>& global_feat, int target_h, int target_w);

// Half-pixel (align_corners = false) bilinear resize.
template <typename T>
Var<T> bilinear_upsample(const Var<T>& input, int target_h, int target_w);

// train mode normalizes over (N, H, W) and, when stats is non-null, reports
// the batch statistics for the caller's running-average update. eval mode
// normalizes with the provided running statistics.
template <typename T>
Var<T> batchnorm2d(const Var<T>& input, const Var<T>& gamma, const Var<T>& beta,
                   const Tensor<T>& running_mean, const Tensor<T>& running_var, Mode mode,
                   BatchStats<T>* stats = nullptr);

template <typename T>
Var<T> leaky_relu(const Var<T>& input, double slope = 0.1);

// Divides each (n, c) map by sqrt(sum of squares + eps).
template <typename T>
Var<T> l2_normalize_channels(const Var<T>& input, double eps = 1e-8);

template <typename T>
Var<T> concat_channels(const Var<T>& a, const Var<T>& b);

// N x C x H x W -> (N*H*W) x C, rows image-major then row-major pixels.
template <typename T>
Var<T> to_pixel_matrix(const Var<T>& input);

// Inverse of to_pixel_matrix.
template <typename T>
Var<T> from_pixel_matrix(const Var<T>& matrix, std::size_t n, std::size_t h, std::size_t w);

// ---- elementwise / reductions ---------------------------------------------

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b);
template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b);
template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b);
template <typename T>
Var<T> scale(const Var<T>& a, double factor);
template <typename T>
Var<T> exp(const Var<T>& a);
// a * s and a + s for a one-element s broadcast to every entry.
template <typename T>
Var<T> mul_scalar(const Var<T>& a, const Var<T>& s);
template <typename T>
Var<T> add_scalar(const Var<T>& a, const Var<T>& s);
template <typename T>
Var<T> sum(const Var<T>& a);
template <typename T>
Var<T> mean(const Var<T>& a);

// g / (|g| + eps): the parameter displacement direction of a first Adam step.
template <typename T>
Var<T> adam_first_direction(const Var<T>& g, double eps);

// ---- linear algebra -------------------------------------------------------

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b);
template <typename T>
Var<T> transpose(const Var<T>& a);
// A + s * I for square A and one-element s.
template <typename T>
Var<T> add_diag(const Var<T>& a, const Var<T>& s);
template <typename T>
Var<T> select_rows(const Var<T>& a, std::span<const std::size_t> rows);

// A^{-1} B through a Cholesky factor of A (lower triangle is read). Backward:
// grad_B = A^{-1} G, grad_A = -sym(grad_B X^T).
template <typename T>
Var<T> spd_solve(const Var<T>& a, const Var<T>& b);

// -||q_i - p_k||^2 for every query row i and prototype row k.
template <typename T>
Var<T> neg_sq_distance(const Var<T>& queries, const Var<T>& prototypes);

// Mean over rows of -log softmax(logits)[label], max-subtracted.
template <typename T>
Var<T> softmax_cross_entropy(const Var<T>& logits, std::span<const int> labels);

// Non-differentiable helpers shared with evaluation.
template <typename T>
std::vector<T> softmax_rows(const Tensor<T>& logits);

// Lower Cholesky factor (row-major); throws NumericalError naming the pivot.
template <typename T>
std::vector<T> cholesky_lower(std::span<const T> a, std::size_t m);

}  // namespace metaseg::ad
