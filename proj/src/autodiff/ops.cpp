#include "metaseg/autodiff/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>

namespace metaseg::ad {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

using Acc = double;

void require(bool ok, const std::string& what) {
  if (!ok) throw ShapeError(what);
}

void require_rank(const Shape& s, std::size_t rank, const char* op) {
  if (s.size() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                     to_string(s));
  }
}

void require_same_shape(const Shape& a, const Shape& b, const char* op) {
  if (a != b) throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a) + " vs " + to_string(b));
}

void require_scalar(const Shape& s, const char* op) {
  if (numel(s) != 1) throw ShapeError(std::string(op) + ": expected one-element tensor, got " + to_string(s));
}

struct ConvGeometry {
  std::size_t n, c, h, w, o, k, ho, wo;
  int stride, padding, dilation;
};

// Unrolls one image (C x H x W) into (C*k*k) x (Ho*Wo) patch columns.
template <typename T>
void im2col(const T* img, const ConvGeometry& g, T* cols) {
  const std::ptrdiff_t H = g.h, W = g.w;
  for (std::size_t c = 0; c < g.c; ++c) {
    for (std::size_t ki = 0; ki < g.k; ++ki) {
      for (std::size_t kj = 0; kj < g.k; ++kj) {
        T* row = cols + ((c * g.k + ki) * g.k + kj) * g.ho * g.wo;
        for (std::size_t oh = 0; oh < g.ho; ++oh) {
          const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh) * g.stride - g.padding +
                                    static_cast<std::ptrdiff_t>(ki) * g.dilation;
          T* dst = row + oh * g.wo;
          if (ih < 0 || ih >= H) {
            std::fill(dst, dst + g.wo, T{0});
            continue;
          }
          const T* src = img + (c * g.h + static_cast<std::size_t>(ih)) * g.w;
          for (std::size_t ow = 0; ow < g.wo; ++ow) {
            const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow) * g.stride - g.padding +
                                      static_cast<std::ptrdiff_t>(kj) * g.dilation;
            dst[ow] = (iw < 0 || iw >= W) ? T{0} : src[iw];
          }
        }
      }
    }
  }
}

template <typename T>
void col2im(const T* cols, const ConvGeometry& g, T* img) {
  const std::ptrdiff_t H = g.h, W = g.w;
  for (std::size_t c = 0; c < g.c; ++c) {
    for (std::size_t ki = 0; ki < g.k; ++ki) {
      for (std::size_t kj = 0; kj < g.k; ++kj) {
        const T* row = cols + ((c * g.k + ki) * g.k + kj) * g.ho * g.wo;
        for (std::size_t oh = 0; oh < g.ho; ++oh) {
          const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh) * g.stride - g.padding +
                                    static_cast<std::ptrdiff_t>(ki) * g.dilation;
          if (ih < 0 || ih >= H) continue;
          const T* src = row + oh * g.wo;
          T* dst = img + (c * g.h + static_cast<std::size_t>(ih)) * g.w;
          for (std::size_t ow = 0; ow < g.wo; ++ow) {
            const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow) * g.stride - g.padding +
                                      static_cast<std::ptrdiff_t>(kj) * g.dilation;
            if (iw >= 0 && iw < W) dst[iw] += src[ow];
          }
        }
      }
    }
  }
}

bool is_pointwise(const ConvGeometry& g) { return g.k == 1 && g.stride == 1 && g.padding == 0; }

// Solves L L^T X = B in place; L row-major m x m, B row-major m x k.
void cholesky_solve_inplace(const std::vector<double>& L, std::size_t m, std::vector<double>& B,
                            std::size_t k) {
  for (std::size_t col = 0; col < k; ++col) {
    for (std::size_t i = 0; i < m; ++i) {
      double s = B[i * k + col];
      for (std::size_t j = 0; j < i; ++j) s -= L[i * m + j] * B[j * k + col];
      B[i * k + col] = s / L[i * m + i];
    }
    for (std::size_t i = m; i-- > 0;) {
      double s = B[i * k + col];
      for (std::size_t j = i + 1; j < m; ++j) s -= L[j * m + i] * B[j * k + col];
      B[i * k + col] = s / L[i * m + i];
    }
  }
}

}  // namespace

// ---- convolution ----------------------------------------------------------

template <typename T>
Var<T> conv2d(const Var<T>& input, const Var<T>& kernel, const Var<T>& bias,
              const Conv2dOptions& options) {
  const Shape& xs = input.shape();
  const Shape& ks = kernel.shape();
  require_rank(xs, 4, "conv2d input");
  require_rank(ks, 4, "conv2d kernel");
  if (options.stride <= 0 || options.dilation <= 0) {
    throw ShapeError("conv2d: stride and dilation must be positive");
  }
  if (options.padding < 0) throw ShapeError("conv2d: negative padding");
  require(ks[2] == ks[3], "conv2d: kernel must be square");
  if (ks[1] != xs[1]) {
    throw ShapeError("conv2d: kernel expects " + std::to_string(ks[1]) + " input channels, input has " +
                     std::to_string(xs[1]));
  }
  if (bias.valid()) {
    require(bias.shape() == Shape{ks[0]}, "conv2d: bias shape " + to_string(bias.shape()));
  }
  ConvGeometry g{xs[0], xs[1], xs[2], xs[3], ks[0], ks[2], 0, 0,
                 options.stride, options.padding, options.dilation};
  const std::ptrdiff_t span = static_cast<std::ptrdiff_t>(options.dilation) * (static_cast<std::ptrdiff_t>(g.k) - 1) + 1;
  const std::ptrdiff_t hp = static_cast<std::ptrdiff_t>(g.h) + 2 * options.padding - span;
  const std::ptrdiff_t wp = static_cast<std::ptrdiff_t>(g.w) + 2 * options.padding - span;
  if (hp < 0 || wp < 0) throw ShapeError("conv2d: kernel larger than padded input");
  g.ho = static_cast<std::size_t>(hp / options.stride + 1);
  g.wo = static_cast<std::size_t>(wp / options.stride + 1);

  const std::size_t patch = g.c * g.k * g.k;
  const std::size_t opix = g.ho * g.wo;
  const Tensor<T>& x = input.value();
  const Tensor<T>& wt = kernel.value();
  Tensor<T> out(Shape{g.n, g.o, g.ho, g.wo});
  std::vector<T> cols(is_pointwise(g) ? 0 : patch * opix);
  ConstMatMap<T> wmat(wt.data().data(), g.o, patch);
  for (std::size_t n = 0; n < g.n; ++n) {
    const T* img = x.data().data() + n * g.c * g.h * g.w;
    const T* colp = img;
    if (!is_pointwise(g)) {
      im2col(img, g, cols.data());
      colp = cols.data();
    }
    MatMap<T> o(out.data().data() + n * g.o * opix, g.o, opix);
    o.noalias() = wmat * ConstMatMap<T>(colp, patch, opix);
    if (bias.valid()) {
      const auto& b = bias.value();
      for (std::size_t oc = 0; oc < g.o; ++oc) o.row(oc).array() += b[oc];
    }
  }

  const NodeId xid = input.id(), kid = kernel.id();
  const bool has_bias = bias.valid();
  const NodeId bid = has_bias ? bias.id() : 0;
  std::vector<Var<T>> inputs{input, kernel};
  if (has_bias) inputs.push_back(bias);
  return input.tape().record(
      std::move(out), std::span<const Var<T>>(inputs),
      [g, xid, kid, bid, has_bias, patch, opix](Tape<T>& tape, std::span<const T> up) {
        const Tensor<T>& xv = tape.value(xid);
        const Tensor<T>& wv = tape.value(kid);
        const bool need_x = tape.requires_grad(xid);
        const bool need_w = tape.requires_grad(kid);
        const bool need_b = has_bias && tape.requires_grad(bid);
        std::vector<T> gx(need_x ? xv.size() : 0, T{0});
        std::vector<T> gw(need_w ? wv.size() : 0, T{0});
        std::vector<T> gb(need_b ? g.o : 0, T{0});
        std::vector<T> cols(is_pointwise(g) ? 0 : patch * opix);
        std::vector<T> gcols(need_x && !is_pointwise(g) ? patch * opix : 0);
        ConstMatMap<T> wmat(wv.data().data(), g.o, patch);
        for (std::size_t n = 0; n < g.n; ++n) {
          ConstMatMap<T> gout(up.data() + n * g.o * opix, g.o, opix);
          const T* img = xv.data().data() + n * g.c * g.h * g.w;
          if (need_w) {
            const T* colp = img;
            if (!is_pointwise(g)) {
              im2col(img, g, cols.data());
              colp = cols.data();
            }
            MatMap<T>(gw.data(), g.o, patch).noalias() +=
                gout * ConstMatMap<T>(colp, patch, opix).transpose();
          }
          if (need_x) {
            T* gimg = gx.data() + n * g.c * g.h * g.w;
            if (is_pointwise(g)) {
              MatMap<T>(gimg, patch, opix).noalias() += wmat.transpose() * gout;
            } else {
              MatMap<T>(gcols.data(), patch, opix).noalias() = wmat.transpose() * gout;
              col2im(gcols.data(), g, gimg);
            }
          }
          if (need_b) {
            for (std::size_t oc = 0; oc < g.o; ++oc) {
              Acc s = 0;
              const T* row = up.data() + (n * g.o + oc) * opix;
              for (std::size_t p = 0; p < opix; ++p) s += row[p];
              gb[oc] += static_cast<T>(s);
            }
          }
        }
        if (need_x) tape.accumulate(xid, gx);
        if (need_w) tape.accumulate(kid, gw);
        if (need_b) tape.accumulate(bid, gb);
      });
}

// ---- pooling / resampling -------------------------------------------------

template <typename T>
Var<T> pool2d(const Var<T>& input, PoolMode mode) {
  const Shape& xs = input.shape();
  require_rank(xs, 4, "pool2d");
  const std::size_t N = xs[0], C = xs[1], H = xs[2], W = xs[3];
  if (H == 0 || W == 0) throw ShapeError("pool2d: empty spatial extent");
  const Tensor<T>& x = input.value();
  const NodeId xid = input.id();

  if (mode == PoolMode::global_avg) {
    Tensor<T> out(Shape{N, C, 1, 1});
    const std::size_t hw = H * W;
    for (std::size_t nc = 0; nc < N * C; ++nc) {
      Acc s = 0;
      for (std::size_t p = 0; p < hw; ++p) s += x[nc * hw + p];
      out[nc] = static_cast<T>(s / static_cast<Acc>(hw));
    }
    return input.tape().record(std::move(out), {input}, [xid, N, C, hw](Tape<T>& tape, std::span<const T> up) {
      std::vector<T> gx(N * C * hw);
      for (std::size_t nc = 0; nc < N * C; ++nc) {
        const T v = static_cast<T>(up[nc] / static_cast<Acc>(hw));
        std::fill(gx.begin() + nc * hw, gx.begin() + (nc + 1) * hw, v);
      }
      tape.accumulate(xid, gx);
    });
  }

  const std::size_t Ho = (H + 1) / 2, Wo = (W + 1) / 2;
  Tensor<T> out(Shape{N, C, Ho, Wo});
  auto argmax = std::make_shared<std::vector<std::uint32_t>>(out.size());
  for (std::size_t nc = 0; nc < N * C; ++nc) {
    const T* plane = x.data().data() + nc * H * W;
    for (std::size_t oh = 0; oh < Ho; ++oh) {
      for (std::size_t ow = 0; ow < Wo; ++ow) {
        T best = -std::numeric_limits<T>::infinity();
        std::size_t best_idx = (2 * oh) * W + 2 * ow;
        for (std::size_t di = 0; di < 2; ++di) {
          for (std::size_t dj = 0; dj < 2; ++dj) {
            const std::size_t ih = 2 * oh + di, iw = 2 * ow + dj;
            if (ih >= H || iw >= W) continue;  // -inf padding
            const T v = plane[ih * W + iw];
            if (v > best) {
              best = v;
              best_idx = ih * W + iw;
            }
          }
        }
        const std::size_t o = (nc * Ho + oh) * Wo + ow;
        out[o] = best;
        (*argmax)[o] = static_cast<std::uint32_t>(nc * H * W + best_idx);
      }
    }
  }
  const std::size_t in_size = x.size();
  return input.tape().record(std::move(out), {input}, [xid, argmax, in_size](Tape<T>& tape, std::span<const T> up) {
    std::vector<T> gx(in_size, T{0});
    for (std::size_t o = 0; o < up.size(); ++o) gx[(*argmax)[o]] += up[o];
    tape.accumulate(xid, gx);
  });
}

template <typename T>
Var<T> replicate_upsample(const Var<T>& global_feat, int target_h, int target_w) {
  const Shape& xs = global_feat.shape();
  require_rank(xs, 4, "replicate_upsample");
  require(xs[2] == 1 && xs[3] == 1, "replicate_upsample: input spatial extent must be 1x1, got " + to_string(xs));
  if (target_h <= 0 || target_w <= 0) throw ShapeError("replicate_upsample: non-positive target extent");
  const std::size_t NC = xs[0] * xs[1];
  const std::size_t hw = static_cast<std::size_t>(target_h) * static_cast<std::size_t>(target_w);
  Tensor<T> out(Shape{xs[0], xs[1], static_cast<std::size_t>(target_h), static_cast<std::size_t>(target_w)});
  const Tensor<T>& x = global_feat.value();
  for (std::size_t nc = 0; nc < NC; ++nc) {
    std::fill(out.storage().begin() + nc * hw, out.storage().begin() + (nc + 1) * hw, x[nc]);
  }
  const NodeId xid = global_feat.id();
  return global_feat.tape().record(std::move(out), {global_feat}, [xid, NC, hw](Tape<T>& tape, std::span<const T> up) {
    std::vector<T> gx(NC);
    for (std::size_t nc = 0; nc < NC; ++nc) {
      Acc s = 0;
      for (std::size_t p = 0; p < hw; ++p) s += up[nc * hw + p];
      gx[nc] = static_cast<T>(s);
    }
    tape.accumulate(xid, gx);
  });
}

namespace {

struct LinearTaps {
  std::vector<std::size_t> lo, hi;
  std::vector<double> frac;
};

LinearTaps half_pixel_taps(std::size_t in, std::size_t out) {
  LinearTaps t;
  t.lo.resize(out);
  t.hi.resize(out);
  t.frac.resize(out);
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (std::size_t i = 0; i < out; ++i) {
    double src = (static_cast<double>(i) + 0.5) * scale - 0.5;
    if (src < 0) src = 0;
    std::size_t lo = static_cast<std::size_t>(std::floor(src));
    if (lo > in - 1) lo = in - 1;
    t.lo[i] = lo;
    t.hi[i] = std::min(lo + 1, in - 1);
    t.frac[i] = src - static_cast<double>(lo);
  }
  return t;
}

}  // namespace

template <typename T>
Var<T> bilinear_upsample(const Var<T>& input, int target_h, int target_w) {
  const Shape& xs = input.shape();
  require_rank(xs, 4, "bilinear_upsample");
  if (target_h <= 0 || target_w <= 0) throw ShapeError("bilinear_upsample: non-positive target extent");
  const std::size_t N = xs[0], C = xs[1], H = xs[2], W = xs[3];
  if (H == 0 || W == 0) throw ShapeError("bilinear_upsample: empty input");
  const std::size_t Ho = static_cast<std::size_t>(target_h), Wo = static_cast<std::size_t>(target_w);
  auto ty = std::make_shared<LinearTaps>(half_pixel_taps(H, Ho));
  auto tx = std::make_shared<LinearTaps>(half_pixel_taps(W, Wo));
  const Tensor<T>& x = input.value();
  Tensor<T> out(Shape{N, C, Ho, Wo});
  for (std::size_t nc = 0; nc < N * C; ++nc) {
    const T* p = x.data().data() + nc * H * W;
    for (std::size_t i = 0; i < Ho; ++i) {
      const double fy = ty->frac[i];
      const T* r0 = p + ty->lo[i] * W;
      const T* r1 = p + ty->hi[i] * W;
      for (std::size_t j = 0; j < Wo; ++j) {
        const double fx = tx->frac[j];
        const double top = (1 - fx) * r0[tx->lo[j]] + fx * r0[tx->hi[j]];
        const double bot = (1 - fx) * r1[tx->lo[j]] + fx * r1[tx->hi[j]];
        out[(nc * Ho + i) * Wo + j] = static_cast<T>((1 - fy) * top + fy * bot);
      }
    }
  }
  const NodeId xid = input.id();
  return input.tape().record(std::move(out), {input}, [=](Tape<T>& tape, std::span<const T> up) {
    std::vector<T> gx(N * C * H * W, T{0});
    for (std::size_t nc = 0; nc < N * C; ++nc) {
      T* p = gx.data() + nc * H * W;
      for (std::size_t i = 0; i < Ho; ++i) {
        const double fy = ty->frac[i];
        T* r0 = p + ty->lo[i] * W;
        T* r1 = p + ty->hi[i] * W;
        for (std::size_t j = 0; j < Wo; ++j) {
          const double fx = tx->frac[j];
          const double g = up[(nc * Ho + i) * Wo + j];
          r0[tx->lo[j]] += static_cast<T>((1 - fy) * (1 - fx) * g);
          r0[tx->hi[j]] += static_cast<T>((1 - fy) * fx * g);
          r1[tx->lo[j]] += static_cast<T>(fy * (1 - fx) * g);
          r1[tx->hi[j]] += static_cast<T>(fy * fx * g);
        }
      }
    }
    tape.accumulate(xid, gx);
  });
}

// ---- normalization / activation -------------------------------------------

template <typename T>
Var<T> batchnorm2d(const Var<T>& input, const Var<T>& gamma, const Var<T>& beta,
                   const Tensor<T>& running_mean, const Tensor<T>& running_var, Mode mode,
                   BatchStats<T>* stats) {
  const Shape& xs = input.shape();
  require_rank(xs, 4, "batchnorm2d");
  const std::size_t N = xs[0], C = xs[1], HW = xs[2] * xs[3];
  for (const Shape* s : {&gamma.shape(), &beta.shape(), &running_mean.shape(), &running_var.shape()}) {
    if (*s != Shape{C}) {
      throw ShapeError("batchnorm2d: channel count " + std::to_string(C) + " vs parameter shape " + to_string(*s));
    }
  }
  const std::size_t M = N * HW;
  const Tensor<T>& x = input.value();
  const Tensor<T>& gm = gamma.value();
  const Tensor<T>& bt = beta.value();

  auto mean = std::make_shared<std::vector<double>>(C);
  auto invstd = std::make_shared<std::vector<double>>(C);
  if (mode == Mode::train) {
    if (M <= 1) throw ShapeError("batchnorm2d: train mode needs more than one element per channel");
    if (stats) {
      stats->mean.assign(C, T{0});
      stats->var_unbiased.assign(C, T{0});
    }
    for (std::size_t c = 0; c < C; ++c) {
      Acc s = 0;
      for (std::size_t n = 0; n < N; ++n) {
        const T* p = x.data().data() + (n * C + c) * HW;
        for (std::size_t i = 0; i < HW; ++i) s += p[i];
      }
      const double mu = s / static_cast<double>(M);
      Acc ss = 0;
      for (std::size_t n = 0; n < N; ++n) {
        const T* p = x.data().data() + (n * C + c) * HW;
        for (std::size_t i = 0; i < HW; ++i) {
          const double d = p[i] - mu;
          ss += d * d;
        }
      }
      const double var = ss / static_cast<double>(M);
      (*mean)[c] = mu;
      (*invstd)[c] = 1.0 / std::sqrt(var + kBatchNormEps);
      if (stats) {
        stats->mean[c] = static_cast<T>(mu);
        stats->var_unbiased[c] = static_cast<T>(ss / static_cast<double>(M - 1));
      }
    }
  } else {
    for (std::size_t c = 0; c < C; ++c) {
      (*mean)[c] = running_mean[c];
      (*invstd)[c] = 1.0 / std::sqrt(static_cast<double>(running_var[c]) + kBatchNormEps);
    }
  }

  Tensor<T> out(xs);
  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t c = 0; c < C; ++c) {
      const std::size_t off = (n * C + c) * HW;
      const double mu = (*mean)[c], is = (*invstd)[c];
      const double a = gm[c] * is;
      for (std::size_t i = 0; i < HW; ++i) {
        out[off + i] = static_cast<T>(a * (x[off + i] - mu) + bt[c]);
      }
    }
  }

  const NodeId xid = input.id(), gid = gamma.id(), bid = beta.id();
  const bool train = mode == Mode::train;
  return input.tape().record(
      std::move(out), {input, gamma, beta},
      [=](Tape<T>& tape, std::span<const T> up) {
        const Tensor<T>& xv = tape.value(xid);
        const Tensor<T>& gv = tape.value(gid);
        std::vector<T> gx(tape.requires_grad(xid) ? xv.size() : 0);
        std::vector<T> ggamma(C), gbeta(C);
        for (std::size_t c = 0; c < C; ++c) {
          const double mu = (*mean)[c], is = (*invstd)[c];
          Acc sum_g = 0, sum_gx = 0;
          for (std::size_t n = 0; n < N; ++n) {
            const std::size_t off = (n * C + c) * HW;
            for (std::size_t i = 0; i < HW; ++i) {
              const double xhat = (xv[off + i] - mu) * is;
              sum_g += up[off + i];
              sum_gx += up[off + i] * xhat;
            }
          }
          ggamma[c] = static_cast<T>(sum_gx);
          gbeta[c] = static_cast<T>(sum_g);
          if (gx.empty()) continue;
          const double gscale = gv[c] * is;
          for (std::size_t n = 0; n < N; ++n) {
            const std::size_t off = (n * C + c) * HW;
            for (std::size_t i = 0; i < HW; ++i) {
              if (train) {
                const double xhat = (xv[off + i] - mu) * is;
                gx[off + i] = static_cast<T>(gscale / static_cast<double>(M) *
                                             (static_cast<double>(M) * up[off + i] - sum_g - xhat * sum_gx));
              } else {
                gx[off + i] = static_cast<T>(gscale * up[off + i]);
              }
            }
          }
        }
        if (!gx.empty()) tape.accumulate(xid, gx);
        tape.accumulate(gid, ggamma);
        tape.accumulate(bid, gbeta);
      });
}

template <typename T>
Var<T> leaky_relu(const Var<T>& input, double slope) {
  const Tensor<T>& x = input.value();
  Tensor<T> out(x.shape());
  const T s = static_cast<T>(slope);
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] < T{0} ? s * x[i] : x[i];
  const NodeId xid = input.id();
  return input.tape().record(std::move(out), {input}, [xid, s](Tape<T>& tape, std::span<const T> up) {
    const Tensor<T>& xv = tape.value(xid);
    std::vector<T> gx(up.size());
    // the kink at exactly 0 takes slope 1
    for (std::size_t i = 0; i < up.size(); ++i) gx[i] = xv[i] < T{0} ? s * up[i] : up[i];
    tape.accumulate(xid, gx);
  });
}

template <typename T>
Var<T> l2_normalize_channels(const Var<T>& input, double eps) {
  const Shape& xs = input.shape();
  require_rank(xs, 4, "l2_normalize_channels");
  const std::size_t NC = xs[0] * xs[1], HW = xs[2] * xs[3];
  const Tensor<T>& x = input.value();
  auto inv_norm = std::make_shared<std::vector<double>>(NC);
  Tensor<T> out(xs);
  for (std::size_t nc = 0; nc < NC; ++nc) {
    Acc ss = 0;
    for (std::size_t i = 0; i < HW; ++i) ss += static_cast<double>(x[nc * HW + i]) * x[nc * HW + i];
    const double r = 1.0 / std::sqrt(ss + eps);
    (*inv_norm)[nc] = r;
    for (std::size_t i = 0; i < HW; ++i) out[nc * HW + i] = static_cast<T>(x[nc * HW + i] * r);
  }
  const NodeId xid = input.id();
  return input.tape().record(std::move(out), {input}, [xid, inv_norm, NC, HW](Tape<T>& tape, std::span<const T> up) {
    const Tensor<T>& xv = tape.value(xid);
    std::vector<T> gx(NC * HW);
    for (std::size_t nc = 0; nc < NC; ++nc) {
      const double r = (*inv_norm)[nc];
      Acc dot = 0;
      for (std::size_t i = 0; i < HW; ++i) dot += static_cast<double>(up[nc * HW + i]) * xv[nc * HW + i];
      const double r3 = r * r * r;
      for (std::size_t i = 0; i < HW; ++i) {
        gx[nc * HW + i] = static_cast<T>(up[nc * HW + i] * r - xv[nc * HW + i] * dot * r3);
      }
    }
    tape.accumulate(xid, gx);
  });
}

template <typename T>
Var<T> concat_channels(const Var<T>& a, const Var<T>& b) {
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  require_rank(as, 4, "concat_channels");
  require_rank(bs, 4, "concat_channels");
  require(as[0] == bs[0] && as[2] == bs[2] && as[3] == bs[3],
          "concat_channels: incompatible shapes " + to_string(as) + " and " + to_string(bs));
  const std::size_t N = as[0], Ca = as[1], Cb = bs[1], HW = as[2] * as[3];
  Tensor<T> out(Shape{N, Ca + Cb, as[2], as[3]});
  const Tensor<T>& av = a.value();
  const Tensor<T>& bv = b.value();
  for (std::size_t n = 0; n < N; ++n) {
    std::copy_n(av.data().data() + n * Ca * HW, Ca * HW, out.data().data() + n * (Ca + Cb) * HW);
    std::copy_n(bv.data().data() + n * Cb * HW, Cb * HW, out.data().data() + (n * (Ca + Cb) + Ca) * HW);
  }
  const NodeId aid = a.id(), bid = b.id();
  return a.tape().record(std::move(out), {a, b}, [=](Tape<T>& tape, std::span<const T> up) {
    std::vector<T> ga(N * Ca * HW), gb(N * Cb * HW);
    for (std::size_t n = 0; n < N; ++n) {
      std::copy_n(up.data() + n * (Ca + Cb) * HW, Ca * HW, ga.data() + n * Ca * HW);
      std::copy_n(up.data() + (n * (Ca + Cb) + Ca) * HW, Cb * HW, gb.data() + n * Cb * HW);
    }
    tape.accumulate(aid, ga);
    tape.accumulate(bid, gb);
  });
}

namespace {

template <typename T>
void nchw_to_rows(const T* src, T* dst, std::size_t N, std::size_t C, std::size_t HW) {
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t p = 0; p < HW; ++p) dst[(n * HW + p) * C + c] = src[(n * C + c) * HW + p];
}

template <typename T>
void rows_to_nchw(const T* src, T* dst, std::size_t N, std::size_t C, std::size_t HW) {
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t p = 0; p < HW; ++p) dst[(n * C + c) * HW + p] = src[(n * HW + p) * C + c];
}

}  // namespace

template <typename T>
Var<T> to_pixel_matrix(const Var<T>& input) {
  const Shape& xs = input.shape();
  require_rank(xs, 4, "to_pixel_matrix");
  const std::size_t N = xs[0], C = xs[1], HW = xs[2] * xs[3];
  Tensor<T> out(Shape{N * HW, C});
  nchw_to_rows(input.value().data().data(), out.data().data(), N, C, HW);
  const NodeId xid = input.id();
  return input.tape().record(std::move(out), {input}, [=](Tape<T>& tape, std::span<const T> up) {
    std::vector<T> gx(N * C * HW);
    rows_to_nchw(up.data(), gx.data(), N, C, HW);
    tape.accumulate(xid, gx);
  });
}

template <typename T>
Var<T> from_pixel_matrix(const Var<T>& matrix, std::size_t n, std::size_t h, std::size_t w) {
  const Shape& ms = matrix.shape();
  require_rank(ms, 2, "from_pixel_matrix");
  require(ms[0] == n * h * w, "from_pixel_matrix: row count " + std::to_string(ms[0]) + " != n*h*w");
  const std::size_t C = ms[1], HW = h * w;
  Tensor<T> out(Shape{n, C, h, w});
  rows_to_nchw(matrix.value().data().data(), out.data().data(), n, C, HW);
  const NodeId mid = matrix.id();
  return matrix.tape().record(std::move(out), {matrix}, [=](Tape<T>& tape, std::span<const T> up) {
    std::vector<T> gm(n * HW * C);
    nchw_to_rows(up.data(), gm.data(), n, C, HW);
    tape.accumulate(mid, gm);
  });
}

// ---- elementwise / reductions ---------------------------------------------

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a.shape(), b.shape(), "add");
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] + b.value()[i];
  const NodeId aid = a.id(), bid = b.id();
  return a.tape().record(std::move(out), {a, b}, [aid, bid](Tape<T>& tape, std::span<const T> up) {
    tape.accumulate(aid, up);
    tape.accumulate(bid, up);
  });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a.shape(), b.shape(), "sub");
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] - b.value()[i];
  const NodeId aid = a.id(), bid = b.id();
  return a.tape().record(std::move(out), {a, b}, [aid, bid](Tape<T>& tape, std::span<const T> up) {
    tape.accumulate(aid, up);
    std::vector<T> neg(up.begin(), up.end());
    for (auto& v : neg) v = -v;
    tape.accumulate(bid, neg);
  });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a.shape(), b.shape(), "mul");
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * b.value()[i];
  const NodeId aid = a.id(), bid = b.id();
  return a.tape().record(std::move(out), {a, b}, [aid, bid](Tape<T>& tape, std::span<const T> up) {
    const Tensor<T>& av = tape.value(aid);
    const Tensor<T>& bv = tape.value(bid);
    std::vector<T> ga(up.size()), gb(up.size());
    for (std::size_t i = 0; i < up.size(); ++i) {
      ga[i] = up[i] * bv[i];
      gb[i] = up[i] * av[i];
    }
    tape.accumulate(aid, ga);
    tape.accumulate(bid, gb);
  });
}

template <typename T>
Var<T> scale(const Var<T>& a, double factor) {
  Tensor<T> out(a.shape());
  const T f = static_cast<T>(factor);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * f;
  const NodeId aid = a.id();
  return a.tape().record(std::move(out), {a}, [aid, f](Tape<T>& tape, std::span<const T> up) {
    std::vector<T> ga(up.begin(), up.end());
    for (auto& v : ga) v *= f;
    tape.accumulate(aid, ga);
  });
}

template <typename T>
Var<T> exp(const Var<T>& a) {
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(a.value()[i]);
  const NodeId aid = a.id();
  auto saved = std::make_shared<std::vector<T>>(out.data().begin(), out.data().end());
  return a.tape().record(std::move(out), {a}, [aid, saved](Tape<T>& tape, std::span<const T> up) {
    std::vector<T> ga(up.size());
    for (std::size_t i = 0; i < up.size(); ++i) ga[i] = up[i] * (*saved)[i];
    tape.accumulate(aid, ga);
  });
}

template <typename T>
Var<T> mul_scalar(const Var<T>& a, const Var<T>& s) {
  require_scalar(s.shape(), "mul_scalar");
  const T sv = s.value()[0];
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * sv;
  const NodeId aid = a.id(), sid = s.id();
  return a.tape().record(std::move(out), {a, s}, [aid, sid](Tape<T>& tape, std::span<const T> up) {
    const Tensor<T>& av = tape.value(aid);
    const T sv = tape.value(sid)[0];
    if (tape.requires_grad(aid)) {
      std::vector<T> ga(up.size());
      for (std::size_t i = 0; i < up.size(); ++i) ga[i] = up[i] * sv;
      tape.accumulate(aid, ga);
    }
    Acc gs = 0;
    for (std::size_t i = 0; i < up.size(); ++i) gs += static_cast<double>(up[i]) * av[i];
    const T g = static_cast<T>(gs);
    tape.accumulate(sid, std::span<const T>(&g, 1));
  });
}

template <typename T>
Var<T> add_scalar(const Var<T>& a, const Var<T>& s) {
  require_scalar(s.shape(), "add_scalar");
  const T sv = s.value()[0];
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] + sv;
  const NodeId aid = a.id(), sid = s.id();
  return a.tape().record(std::move(out), {a, s}, [aid, sid](Tape<T>& tape, std::span<const T> up) {
    tape.accumulate(aid, up);
    Acc gs = 0;
    for (const T v : up) gs += v;
    const T g = static_cast<T>(gs);
    tape.accumulate(sid, std::span<const T>(&g, 1));
  });
}

template <typename T>
Var<T> sum(const Var<T>& a) {
  Acc s = 0;
  for (const T v : a.value().data()) s += v;
  const NodeId aid = a.id();
  const std::size_t n = a.value().size();
  return a.tape().record(Tensor<T>::scalar(static_cast<T>(s)), {a}, [aid, n](Tape<T>& tape, std::span<const T> up) {
    std::vector<T> ga(n, up[0]);
    tape.accumulate(aid, ga);
  });
}

template <typename T>
Var<T> mean(const Var<T>& a) {
  const std::size_t n = a.value().size();
  if (n == 0) throw ShapeError("mean of empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(n));
}

template <typename T>
Var<T> adam_first_direction(const Var<T>& g, double eps) {
  Tensor<T> out(g.shape());
  const Tensor<T>& gv = g.value();
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = static_cast<T>(gv[i] / (std::abs(static_cast<double>(gv[i])) + eps));
  }
  const NodeId gid = g.id();
  return g.tape().record(std::move(out), {g}, [gid, eps](Tape<T>& tape, std::span<const T> up) {
    const Tensor<T>& gv = tape.value(gid);
    std::vector<T> gg(up.size());
    for (std::size_t i = 0; i < up.size(); ++i) {
      const double d = std::abs(static_cast<double>(gv[i])) + eps;
      gg[i] = static_cast<T>(up[i] * eps / (d * d));
    }
    tape.accumulate(gid, gg);
  });
}

// ---- linear algebra -------------------------------------------------------

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  require_rank(as, 2, "matmul");
  require_rank(bs, 2, "matmul");
  if (as[1] != bs[0]) throw ShapeError("matmul: inner dimensions " + to_string(as) + " x " + to_string(bs));
  const std::size_t m = as[0], k = as[1], n = bs[1];
  Tensor<T> out(Shape{m, n});
  MatMap<T>(out.data().data(), m, n).noalias() =
      ConstMatMap<T>(a.value().data().data(), m, k) * ConstMatMap<T>(b.value().data().data(), k, n);
  const NodeId aid = a.id(), bid = b.id();
  return a.tape().record(std::move(out), {a, b}, [=](Tape<T>& tape, std::span<const T> up) {
    ConstMatMap<T> g(up.data(), m, n);
    if (tape.requires_grad(aid)) {
      std::vector<T> ga(m * k);
      MatMap<T>(ga.data(), m, k).noalias() = g * ConstMatMap<T>(tape.value(bid).data().data(), k, n).transpose();
      tape.accumulate(aid, ga);
    }
    if (tape.requires_grad(bid)) {
      std::vector<T> gb(k * n);
      MatMap<T>(gb.data(), k, n).noalias() = ConstMatMap<T>(tape.value(aid).data().data(), m, k).transpose() * g;
      tape.accumulate(bid, gb);
    }
  });
}

template <typename T>
Var<T> transpose(const Var<T>& a) {
  const Shape& as = a.shape();
  require_rank(as, 2, "transpose");
  const std::size_t m = as[0], n = as[1];
  Tensor<T> out(Shape{n, m});
  MatMap<T>(out.data().data(), n, m) = ConstMatMap<T>(a.value().data().data(), m, n).transpose();
  const NodeId aid = a.id();
  return a.tape().record(std::move(out), {a}, [=](Tape<T>& tape, std::span<const T> up) {
    std::vector<T> ga(m * n);
    MatMap<T>(ga.data(), m, n) = ConstMatMap<T>(up.data(), n, m).transpose();
    tape.accumulate(aid, ga);
  });
}

template <typename T>
Var<T> add_diag(const Var<T>& a, const Var<T>& s) {
  const Shape& as = a.shape();
  require_rank(as, 2, "add_diag");
  require(as[0] == as[1], "add_diag: matrix must be square, got " + to_string(as));
  require_scalar(s.shape(), "add_diag");
  const std::size_t m = as[0];
  Tensor<T> out = a.value();
  const T sv = s.value()[0];
  for (std::size_t i = 0; i < m; ++i) out[i * m + i] += sv;
  const NodeId aid = a.id(), sid = s.id();
  return a.tape().record(std::move(out), {a, s}, [aid, sid, m](Tape<T>& tape, std::span<const T> up) {
    tape.accumulate(aid, up);
    Acc tr = 0;
    for (std::size_t i = 0; i < m; ++i) tr += up[i * m + i];
    const T g = static_cast<T>(tr);
    tape.accumulate(sid, std::span<const T>(&g, 1));
  });
}

template <typename T>
Var<T> select_rows(const Var<T>& a, std::span<const std::size_t> rows) {
  const Shape& as = a.shape();
  require_rank(as, 2, "select_rows");
  const std::size_t n = as[0], c = as[1];
  auto idx = std::make_shared<std::vector<std::size_t>>(rows.begin(), rows.end());
  Tensor<T> out(Shape{idx->size(), c});
  for (std::size_t r = 0; r < idx->size(); ++r) {
    if ((*idx)[r] >= n) throw ShapeError("select_rows: row index out of range");
    std::copy_n(a.value().data().data() + (*idx)[r] * c, c, out.data().data() + r * c);
  }
  const NodeId aid = a.id();
  return a.tape().record(std::move(out), {a}, [aid, idx, n, c](Tape<T>& tape, std::span<const T> up) {
    std::vector<T> ga(n * c, T{0});
    for (std::size_t r = 0; r < idx->size(); ++r)
      for (std::size_t j = 0; j < c; ++j) ga[(*idx)[r] * c + j] += up[r * c + j];
    tape.accumulate(aid, ga);
  });
}

template <typename T>
std::vector<T> cholesky_lower(std::span<const T> a, std::size_t m) {
  if (a.size() != m * m) throw ShapeError("cholesky_lower: size mismatch");
  std::vector<T> L(m * m, T{0});
  for (std::size_t j = 0; j < m; ++j) {
    double d = a[j * m + j];
    for (std::size_t k = 0; k < j; ++k) d -= static_cast<double>(L[j * m + k]) * L[j * m + k];
    if (!(d > 0.0) || !std::isfinite(d)) {
      throw NumericalError("Cholesky factorization failed at pivot " + std::to_string(j) + " of " +
                           std::to_string(m) + " (value " + std::to_string(d) +
                           "); matrix is not positive definite, increase lambda");
    }
    const double ljj = std::sqrt(d);
    L[j * m + j] = static_cast<T>(ljj);
    for (std::size_t i = j + 1; i < m; ++i) {
      double s = a[i * m + j];
      for (std::size_t k = 0; k < j; ++k) s -= static_cast<double>(L[i * m + k]) * L[j * m + k];
      L[i * m + j] = static_cast<T>(s / ljj);
    }
  }
  return L;
}

template <typename T>
Var<T> spd_solve(const Var<T>& a, const Var<T>& b) {
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  require_rank(as, 2, "spd_solve");
  require_rank(bs, 2, "spd_solve");
  require(as[0] == as[1], "spd_solve: A must be square, got " + to_string(as));
  require(bs[0] == as[0], "spd_solve: B rows " + std::to_string(bs[0]) + " != A order " + std::to_string(as[0]));
  const std::size_t m = as[0], k = bs[1];
  // factor and solve in double regardless of T
  std::vector<double> ad(a.value().data().begin(), a.value().data().end());
  auto L = std::make_shared<std::vector<double>>(cholesky_lower<double>(ad, m));
  std::vector<double> x(b.value().data().begin(), b.value().data().end());
  cholesky_solve_inplace(*L, m, x, k);
  auto solution = std::make_shared<std::vector<double>>(x);
  Tensor<T> out(Shape{m, k}, std::vector<T>(x.begin(), x.end()));
  const NodeId aid = a.id(), bid = b.id();
  return a.tape().record(std::move(out), {a, b}, [=](Tape<T>& tape, std::span<const T> up) {
    std::vector<double> gb(up.begin(), up.end());
    cholesky_solve_inplace(*L, m, gb, k);
    if (tape.requires_grad(bid)) {
      tape.accumulate(bid, std::vector<T>(gb.begin(), gb.end()));
    }
    if (tape.requires_grad(aid)) {
      Eigen::Map<const RowMat<double>> gbm(gb.data(), m, k);
      Eigen::Map<const RowMat<double>> xm(solution->data(), m, k);
      RowMat<double> outer = gbm * xm.transpose();
      RowMat<double> ga = -0.5 * (outer + outer.transpose());
      std::vector<T> gat(m * m);
      for (std::size_t i = 0; i < m * m; ++i) gat[i] = static_cast<T>(ga.data()[i]);
      tape.accumulate(aid, gat);
    }
  });
}

template <typename T>
Var<T> neg_sq_distance(const Var<T>& queries, const Var<T>& prototypes) {
  const Shape& qs = queries.shape();
  const Shape& ps = prototypes.shape();
  require_rank(qs, 2, "neg_sq_distance");
  require_rank(ps, 2, "neg_sq_distance");
  require(qs[1] == ps[1], "neg_sq_distance: feature width mismatch");
  const std::size_t n = qs[0], m = ps[0], c = qs[1];
  const Tensor<T>& q = queries.value();
  const Tensor<T>& p = prototypes.value();
  Tensor<T> out(Shape{n, m});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < m; ++k) {
      Acc d = 0;
      for (std::size_t j = 0; j < c; ++j) {
        const double diff = static_cast<double>(q[i * c + j]) - p[k * c + j];
        d += diff * diff;
      }
      out[i * m + k] = static_cast<T>(-d);
    }
  }
  const NodeId qid = queries.id(), pid = prototypes.id();
  return queries.tape().record(std::move(out), {queries, prototypes}, [=](Tape<T>& tape, std::span<const T> up) {
    const Tensor<T>& qv = tape.value(qid);
    const Tensor<T>& pv = tape.value(pid);
    std::vector<T> gq(n * c, T{0}), gp(m * c, T{0});
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t k = 0; k < m; ++k) {
        const double g = up[i * m + k];
        if (g == 0.0) continue;
        for (std::size_t j = 0; j < c; ++j) {
          const double diff = static_cast<double>(qv[i * c + j]) - pv[k * c + j];
          gq[i * c + j] += static_cast<T>(-2.0 * g * diff);
          gp[k * c + j] += static_cast<T>(2.0 * g * diff);
        }
      }
    }
    tape.accumulate(qid, gq);
    tape.accumulate(pid, gp);
  });
}

template <typename T>
std::vector<T> softmax_rows(const Tensor<T>& logits) {
  require_rank(logits.shape(), 2, "softmax_rows");
  const std::size_t P = logits.dim(0), C = logits.dim(1);
  std::vector<T> out(P * C);
  for (std::size_t p = 0; p < P; ++p) {
    const T* row = logits.data().data() + p * C;
    const double mx = *std::max_element(row, row + C);
    Acc z = 0;
    for (std::size_t c = 0; c < C; ++c) z += std::exp(row[c] - mx);
    for (std::size_t c = 0; c < C; ++c) out[p * C + c] = static_cast<T>(std::exp(row[c] - mx) / z);
  }
  return out;
}

template <typename T>
Var<T> softmax_cross_entropy(const Var<T>& logits, std::span<const int> labels) {
  const Shape& ls = logits.shape();
  require_rank(ls, 2, "softmax_cross_entropy");
  const std::size_t P = ls[0], C = ls[1];
  if (P == 0) throw ShapeError("softmax_cross_entropy: no rows");
  if (labels.size() != P) {
    throw ShapeError("softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(P) + " rows");
  }
  for (const int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= C) {
      throw ValidationError("softmax_cross_entropy: label " + std::to_string(y) + " outside [0, " +
                            std::to_string(C) + ")");
    }
  }
  const Tensor<T>& x = logits.value();
  auto probs = std::make_shared<std::vector<double>>(P * C);
  Acc loss = 0;
  for (std::size_t p = 0; p < P; ++p) {
    const T* row = x.data().data() + p * C;
    const double mx = *std::max_element(row, row + C);
    Acc z = 0;
    for (std::size_t c = 0; c < C; ++c) z += std::exp(row[c] - mx);
    const double log_z = std::log(z) + mx;
    loss += log_z - row[labels[p]];
    for (std::size_t c = 0; c < C; ++c) (*probs)[p * C + c] = std::exp(row[c] - log_z);
  }
  auto lab = std::make_shared<std::vector<int>>(labels.begin(), labels.end());
  const NodeId xid = logits.id();
  return logits.tape().record(
      Tensor<T>::scalar(static_cast<T>(loss / static_cast<double>(P))), {logits},
      [=](Tape<T>& tape, std::span<const T> up) {
        const double scale = up[0] / static_cast<double>(P);
        std::vector<T> gx(P * C);
        for (std::size_t p = 0; p < P; ++p) {
          for (std::size_t c = 0; c < C; ++c) {
            const double onehot = static_cast<int>(c) == (*lab)[p] ? 1.0 : 0.0;
            gx[p * C + c] = static_cast<T>(((*probs)[p * C + c] - onehot) * scale);
          }
        }
        tape.accumulate(xid, gx);
      });
}

#define METASEG_INSTANTIATE_OPS(T)                                                                   \
  template Var<T> conv2d(const Var<T>&, const Var<T>&, const Var<T>&, const Conv2dOptions&);       \
  template Var<T> pool2d(const Var<T>&, PoolMode);                                                 \
  template Var<T> replicate_upsample(const Var<T>&, int, int);                                     \
  template Var<T> bilinear_upsample(const Var<T>&, int, int);                                      \
  template Var<T> batchnorm2d(const Var<T>&, const Var<T>&, const Var<T>&, const Tensor<T>&,       \
                              const Tensor<T>&, Mode, BatchStats<T>*);                             \
  template Var<T> leaky_relu(const Var<T>&, double);                                               \
  template Var<T> l2_normalize_channels(const Var<T>&, double);                                    \
  template Var<T> concat_channels(const Var<T>&, const Var<T>&);                                   \
  template Var<T> to_pixel_matrix(const Var<T>&);                                                  \
  template Var<T> from_pixel_matrix(const Var<T>&, std::size_t, std::size_t, std::size_t);         \
  template Var<T> add(const Var<T>&, const Var<T>&);                                               \
  template Var<T> sub(const Var<T>&, const Var<T>&);                                               \
  template Var<T> mul(const Var<T>&, const Var<T>&);                                               \
  template Var<T> scale(const Var<T>&, double);                                                    \
  template Var<T> exp(const Var<T>&);                                                              \
  template Var<T> mul_scalar(const Var<T>&, const Var<T>&);                                        \
  template Var<T> add_scalar(const Var<T>&, const Var<T>&);                                        \
  template Var<T> sum(const Var<T>&);                                                              \
  template Var<T> mean(const Var<T>&);                                                             \
  template Var<T> adam_first_direction(const Var<T>&, double);                                     \
  template Var<T> matmul(const Var<T>&, const Var<T>&);                                            \
  template Var<T> transpose(const Var<T>&);                                                        \
  template Var<T> add_diag(const Var<T>&, const Var<T>&);                                          \
  template Var<T> select_rows(const Var<T>&, std::span<const std::size_t>);                        \
  template Var<T> spd_solve(const Var<T>&, const Var<T>&);                                         \
  template Var<T> neg_sq_distance(const Var<T>&, const Var<T>&);                                   \
  template Var<T> softmax_cross_entropy(const Var<T>&, std::span<const int>);                      \
  template std::vector<T> softmax_rows(const Tensor<T>&);                                          \
  template std::vector<T> cholesky_lower(std::span<const T>, std::size_t);

METASEG_INSTANTIATE_OPS(float)
METASEG_INSTANTIATE_OPS(double)

}  // namespace metaseg::ad
