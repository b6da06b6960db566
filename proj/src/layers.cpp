// SPDX-License-Identifier: Apache-2.0
#include "sfl/layers.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace sfl {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMatrix>;
using MutMap = Eigen::Map<RowMatrix>;

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

[[noreturn]] void shape_error(const LayerKind& layer, const Dims& expected, const Dims& got) {
  throw ShapeError(describe(layer) + ": expected " + to_string(expected) + ", got " + to_string(got));
}

std::size_t conv_out(std::size_t in, std::size_t kernel, std::size_t stride) {
  const std::size_t pad = kernel / 2;
  return (in + 2 * pad - kernel) / stride + 1;
}

// Unfolds one sample [C, H, W] into [C*k*k, Ho*Wo].
void im2col(const double* x, std::size_t c_in, std::size_t h, std::size_t w, std::size_t k, std::size_t stride,
            std::size_t ho, std::size_t wo, std::size_t ld, double* cols) {
  const auto pad = static_cast<std::ptrdiff_t>(k / 2);
  for (std::size_t c = 0; c < c_in; ++c) {
    const double* xc = x + c * h * w;
    for (std::size_t ki = 0; ki < k; ++ki) {
      for (std::size_t kj = 0; kj < k; ++kj) {
        double* row = cols + ((c * k + ki) * k + kj) * ld;
        for (std::size_t oh = 0; oh < ho; ++oh) {
          const auto ih = static_cast<std::ptrdiff_t>(oh * stride + ki) - pad;
          double* out = row + oh * wo;
          if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(h)) {
            for (std::size_t ow = 0; ow < wo; ++ow) out[ow] = 0.0;
            continue;
          }
          const double* xr = xc + static_cast<std::size_t>(ih) * w;
          for (std::size_t ow = 0; ow < wo; ++ow) {
            const auto iw = static_cast<std::ptrdiff_t>(ow * stride + kj) - pad;
            out[ow] = (iw < 0 || iw >= static_cast<std::ptrdiff_t>(w)) ? 0.0 : xr[iw];
          }
        }
      }
    }
  }
}

void col2im_add(const double* cols, std::size_t c_in, std::size_t h, std::size_t w, std::size_t k,
                std::size_t stride, std::size_t ho, std::size_t wo, std::size_t ld, double* dx) {
  const auto pad = static_cast<std::ptrdiff_t>(k / 2);
  for (std::size_t c = 0; c < c_in; ++c) {
    double* dxc = dx + c * h * w;
    for (std::size_t ki = 0; ki < k; ++ki) {
      for (std::size_t kj = 0; kj < k; ++kj) {
        const double* row = cols + ((c * k + ki) * k + kj) * ld;
        for (std::size_t oh = 0; oh < ho; ++oh) {
          const auto ih = static_cast<std::ptrdiff_t>(oh * stride + ki) - pad;
          if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(h)) continue;
          double* dr = dxc + static_cast<std::size_t>(ih) * w;
          for (std::size_t ow = 0; ow < wo; ++ow) {
            const auto iw = static_cast<std::ptrdiff_t>(ow * stride + kj) - pad;
            if (iw >= 0 && iw < static_cast<std::ptrdiff_t>(w)) dr[iw] += row[oh * wo + ow];
          }
        }
      }
    }
  }
}

void require_rank(const Tensor& t, std::size_t rank, const char* what) {
  if (t.rank() != rank)
    throw ShapeError(std::string(what) + ": expected rank " + std::to_string(rank) + ", got dims " +
                     to_string(t.dims()));
}

}  // namespace

std::string describe(const LayerKind& layer) {
  std::ostringstream os;
  std::visit(Overloaded{
                 [&](const Conv2d& c) {
                   os << "Conv2d(" << c.in_channels << "->" << c.out_channels << ", k=" << c.kernel
                      << ", s=" << c.stride << ")";
                 },
                 [&](const BatchNorm& b) { os << "BatchNorm(" << b.channels << ")"; },
                 [&](const MaxPool&) { os << "MaxPool(3, s=2)"; },
                 [&](const GlobalAvgPool&) { os << "GlobalAvgPool"; },
                 [&](const Linear& l) { os << "Linear(" << l.in_features << "->" << l.out_features << ")"; },
                 [&](const ReLU&) { os << "ReLU"; },
             },
             layer);
  return os.str();
}

Dims output_dims(const LayerKind& layer, const Dims& in) {
  return std::visit(
      Overloaded{
          [&](const Conv2d& c) -> Dims {
            if (in.size() != 4 || in[1] != c.in_channels)
              shape_error(layer, {in.empty() ? 1 : in[0], c.in_channels, in.size() > 2 ? in[2] : 1,
                                  in.size() > 3 ? in[3] : 1},
                          in);
            if (in[2] + 2 * (c.kernel / 2) < c.kernel || in[3] + 2 * (c.kernel / 2) < c.kernel)
              shape_error(layer, {in[0], c.in_channels, c.kernel, c.kernel}, in);
            return {in[0], c.out_channels, conv_out(in[2], c.kernel, c.stride), conv_out(in[3], c.kernel, c.stride)};
          },
          [&](const BatchNorm& b) -> Dims {
            if ((in.size() != 4 && in.size() != 2) || in[1] != b.channels)
              shape_error(layer, {in.empty() ? 1 : in[0], b.channels}, in);
            return in;
          },
          [&](const MaxPool&) -> Dims {
            if (in.size() != 4) shape_error(layer, {1, 1, 1, 1}, in);
            return {in[0], in[1], (in[2] - 1) / 2 + 1, (in[3] - 1) / 2 + 1};
          },
          [&](const GlobalAvgPool&) -> Dims {
            if (in.size() != 4) shape_error(layer, {1, 1, 1, 1}, in);
            return {in[0], in[1]};
          },
          [&](const Linear& l) -> Dims {
            if (in.size() != 2 || in[1] != l.in_features)
              shape_error(layer, {in.empty() ? 1 : in[0], l.in_features}, in);
            return {in[0], l.out_features};
          },
          [&](const ReLU&) -> Dims { return in; },
      },
      layer);
}

std::vector<Dims> parameter_dims(const LayerKind& layer) {
  return std::visit(Overloaded{
                        [](const Conv2d& c) -> std::vector<Dims> {
                          return {{c.out_channels, c.in_channels, c.kernel, c.kernel}};
                        },
                        [](const BatchNorm& b) -> std::vector<Dims> { return {{b.channels}, {b.channels}}; },
                        [](const Linear& l) -> std::vector<Dims> {
                          return {{l.out_features, l.in_features}, {l.out_features}};
                        },
                        [](const auto&) -> std::vector<Dims> { return {}; },
                    },
                    layer);
}

BatchNormStats BatchNormStats::fresh(std::size_t channels) {
  return {Tensor({channels}, 0.0), Tensor({channels}, 1.0)};
}

Tensor forward(const LayerKind& layer, std::span<const Tensor> params, const Tensor& input, Mode mode,
               BatchNormStats* stats) {
  (void)output_dims(layer, input.dims());
  const auto expected = parameter_dims(layer);
  if (params.size() != expected.size())
    throw ShapeError(describe(layer) + ": expected " + std::to_string(expected.size()) + " parameter tensors, got " +
                     std::to_string(params.size()));
  for (std::size_t i = 0; i < expected.size(); ++i)
    if (params[i].dims() != expected[i]) shape_error(layer, expected[i], params[i].dims());

  return std::visit(Overloaded{
                        [&](const Conv2d& c) { return conv2d_forward(input, params[0], c.stride); },
                        [&](const BatchNorm&) {
                          if (!stats) throw UsageError("BatchNorm forward requires running statistics");
                          return batch_norm_forward(input, params[0], params[1], *stats, mode, nullptr);
                        },
                        [&](const MaxPool&) { return max_pool_forward(input, nullptr); },
                        [&](const GlobalAvgPool&) { return global_avg_pool_forward(input); },
                        [&](const Linear&) { return linear_forward(input, params[0], params[1]); },
                        [&](const ReLU&) { return relu_forward(input); },
                    },
                    layer);
}

// Per-sample im2col followed by a GEMM; the column buffer stays cache-resident.
Tensor conv2d_forward(const Tensor& x, const Tensor& w, std::size_t stride) {
  require_rank(x, 4, "conv2d input");
  require_rank(w, 4, "conv2d weight");
  const std::size_t n = x.dim(0), c_in = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const std::size_t c_out = w.dim(0), k = w.dim(2);
  if (w.dim(1) != c_in || w.dim(3) != k)
    throw ShapeError("conv2d: weight " + to_string(w.dims()) + " incompatible with input " + to_string(x.dims()));
  const std::size_t ho = conv_out(h, k, stride), wo = conv_out(wd, k, stride);
  const std::size_t plane = ho * wo;
  const auto patch = static_cast<Eigen::Index>(c_in * k * k);
  const auto co = static_cast<Eigen::Index>(c_out), pl = static_cast<Eigen::Index>(plane);

  Tensor y({n, c_out, ho, wo});
  RowMatrix cols(patch, pl);
  const ConstMap wm(w.data().data(), co, patch);
  for (std::size_t s = 0; s < n; ++s) {
    im2col(x.data().data() + s * c_in * h * wd, c_in, h, wd, k, stride, ho, wo, plane, cols.data());
    MutMap(y.data().data() + s * c_out * plane, co, pl).noalias() = wm * cols;
  }
  return y;
}

Conv2dGrads conv2d_backward(const Tensor& x, const Tensor& w, std::size_t stride, const Tensor& dy,
                            bool need_dx) {
  const std::size_t n = x.dim(0), c_in = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const std::size_t c_out = w.dim(0), k = w.dim(2);
  const std::size_t ho = conv_out(h, k, stride), wo = conv_out(wd, k, stride);
  if (dy.dims() != Dims{n, c_out, ho, wo})
    throw ShapeError("conv2d backward: upstream " + to_string(dy.dims()) + " vs expected " +
                     to_string({n, c_out, ho, wo}));
  const std::size_t plane = ho * wo;
  const auto patch = static_cast<Eigen::Index>(c_in * k * k);
  const auto co = static_cast<Eigen::Index>(c_out), pl = static_cast<Eigen::Index>(plane);

  Conv2dGrads g{need_dx ? Tensor(x.dims()) : Tensor(), Tensor(w.dims())};
  RowMatrix cols(patch, pl), dcols(need_dx ? patch : 0, pl);
  const ConstMap wm(w.data().data(), co, patch);
  MutMap dwm(g.dw.data().data(), co, patch);
  for (std::size_t s = 0; s < n; ++s) {
    const ConstMap dym(dy.data().data() + s * c_out * plane, co, pl);
    im2col(x.data().data() + s * c_in * h * wd, c_in, h, wd, k, stride, ho, wo, plane, cols.data());
    dwm.noalias() += dym * cols.transpose();
    if (!need_dx) continue;
    dcols.noalias() = wm.transpose() * dym;
    col2im_add(dcols.data(), c_in, h, wd, k, stride, ho, wo, plane, g.dx.data().data() + s * c_in * h * wd);
  }
  return g;
}

Tensor batch_norm_forward(const Tensor& x, const Tensor& gamma, const Tensor& beta, BatchNormStats& stats,
                          Mode mode, BatchNormCache* cache) {
  if (x.rank() != 4 && x.rank() != 2) throw ShapeError("batch_norm: input rank must be 2 or 4, got " + to_string(x.dims()));
  const std::size_t n = x.dim(0), c = x.dim(1);
  const std::size_t plane = x.rank() == 4 ? x.dim(2) * x.dim(3) : 1;
  if (gamma.dims() != Dims{c} || beta.dims() != Dims{c} || stats.mean.dims() != Dims{c} ||
      stats.var.dims() != Dims{c})
    throw ShapeError("batch_norm: parameter dims do not match " + std::to_string(c) + " channels");
  const double count = static_cast<double>(n * plane);

  Tensor y(x.dims());
  Tensor xhat(x.dims());
  std::vector<double> inv_std(c);
  const double* xp = x.data().data();
  for (std::size_t ch = 0; ch < c; ++ch) {
    double mean = 0.0, var = 0.0;
    if (mode == Mode::train) {
      for (std::size_t s = 0; s < n; ++s) {
        const double* row = xp + (s * c + ch) * plane;
        for (std::size_t p = 0; p < plane; ++p) mean += row[p];
      }
      mean /= count;
      for (std::size_t s = 0; s < n; ++s) {
        const double* row = xp + (s * c + ch) * plane;
        for (std::size_t p = 0; p < plane; ++p) var += (row[p] - mean) * (row[p] - mean);
      }
      const double unbiased = count > 1 ? var / (count - 1.0) : var;
      var /= count;
      stats.mean[ch] = (1.0 - kBatchNormMomentum) * stats.mean[ch] + kBatchNormMomentum * mean;
      stats.var[ch] = (1.0 - kBatchNormMomentum) * stats.var[ch] + kBatchNormMomentum * unbiased;
    } else {
      mean = stats.mean[ch];
      var = stats.var[ch];
    }
    const double is = 1.0 / std::sqrt(var + kBatchNormEpsilon);
    inv_std[ch] = is;
    for (std::size_t s = 0; s < n; ++s) {
      const std::size_t off = (s * c + ch) * plane;
      for (std::size_t p = 0; p < plane; ++p) {
        const double xh = (xp[off + p] - mean) * is;
        xhat[off + p] = xh;
        y[off + p] = gamma[ch] * xh + beta[ch];
      }
    }
  }
  if (cache) *cache = BatchNormCache{std::move(xhat), std::move(inv_std), mode};
  return y;
}

BatchNormGrads batch_norm_backward(const Tensor& gamma, const BatchNormCache& cache, const Tensor& dy) {
  const Tensor& xhat = cache.xhat;
  if (!dy.same_shape(xhat))
    throw ShapeError("batch_norm backward: upstream " + to_string(dy.dims()) + " vs " + to_string(xhat.dims()));
  const std::size_t n = xhat.dim(0), c = xhat.dim(1);
  const std::size_t plane = xhat.rank() == 4 ? xhat.dim(2) * xhat.dim(3) : 1;
  const double count = static_cast<double>(n * plane);

  BatchNormGrads g{Tensor(xhat.dims()), Tensor({c}), Tensor({c})};
  for (std::size_t ch = 0; ch < c; ++ch) {
    double sum_dy = 0.0, sum_dy_xhat = 0.0;
    for (std::size_t s = 0; s < n; ++s) {
      const std::size_t off = (s * c + ch) * plane;
      for (std::size_t p = 0; p < plane; ++p) {
        sum_dy += dy[off + p];
        sum_dy_xhat += dy[off + p] * xhat[off + p];
      }
    }
    g.dbeta[ch] = sum_dy;
    g.dgamma[ch] = sum_dy_xhat;
    const double scale = gamma[ch] * cache.inv_std[ch];
    for (std::size_t s = 0; s < n; ++s) {
      const std::size_t off = (s * c + ch) * plane;
      for (std::size_t p = 0; p < plane; ++p) {
        if (cache.mode == Mode::train)
          g.dx[off + p] = scale * (dy[off + p] - sum_dy / count - xhat[off + p] * sum_dy_xhat / count);
        else
          g.dx[off + p] = scale * dy[off + p];
      }
    }
  }
  return g;
}

Tensor max_pool_forward(const Tensor& x, std::vector<std::size_t>* argmax) {
  require_rank(x, 4, "max_pool input");
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t ho = (h - 1) / 2 + 1, wo = (w - 1) / 2 + 1;
  Tensor y({n, c, ho, wo});
  if (argmax) argmax->assign(y.numel(), 0);
  std::size_t out = 0;
  for (std::size_t s = 0; s < n; ++s) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const std::size_t base = (s * c + ch) * h * w;
      for (std::size_t oh = 0; oh < ho; ++oh) {
        for (std::size_t ow = 0; ow < wo; ++ow, ++out) {
          double best = -std::numeric_limits<double>::infinity();
          std::size_t best_idx = base;
          bool found = false;
          // Window rows/cols visited in increasing flat order; strict '>'
          // keeps the lowest index among ties.
          for (std::size_t ki = 0; ki < 3; ++ki) {
            const auto ih = static_cast<std::ptrdiff_t>(oh * 2 + ki) - 1;
            if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(h)) continue;
            for (std::size_t kj = 0; kj < 3; ++kj) {
              const auto iw = static_cast<std::ptrdiff_t>(ow * 2 + kj) - 1;
              if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(w)) continue;
              const std::size_t idx = base + static_cast<std::size_t>(ih) * w + static_cast<std::size_t>(iw);
              if (!found || x[idx] > best) {
                best = x[idx];
                best_idx = idx;
                found = true;
              }
            }
          }
          y[out] = best;
          if (argmax) (*argmax)[out] = best_idx;
        }
      }
    }
  }
  return y;
}

Tensor max_pool_backward(const Dims& input_dims, const std::vector<std::size_t>& argmax, const Tensor& dy) {
  if (argmax.size() != dy.numel()) throw ShapeError("max_pool backward: upstream size mismatch");
  Tensor dx(input_dims);
  for (std::size_t i = 0; i < argmax.size(); ++i) dx[argmax[i]] += dy[i];
  return dx;
}

Tensor global_avg_pool_forward(const Tensor& x) {
  require_rank(x, 4, "global_avg_pool input");
  const std::size_t n = x.dim(0), c = x.dim(1), plane = x.dim(2) * x.dim(3);
  Tensor y({n, c});
  for (std::size_t i = 0; i < n * c; ++i) {
    double acc = 0.0;
    for (std::size_t p = 0; p < plane; ++p) acc += x[i * plane + p];
    y[i] = acc / static_cast<double>(plane);
  }
  return y;
}

Tensor global_avg_pool_backward(const Dims& input_dims, const Tensor& dy) {
  Tensor dx(input_dims);
  const std::size_t plane = input_dims[2] * input_dims[3];
  if (dy.numel() * plane != dx.numel()) throw ShapeError("global_avg_pool backward: upstream size mismatch");
  const double inv = 1.0 / static_cast<double>(plane);
  for (std::size_t i = 0; i < dy.numel(); ++i)
    for (std::size_t p = 0; p < plane; ++p) dx[i * plane + p] = dy[i] * inv;
  return dx;
}

Tensor linear_forward(const Tensor& x, const Tensor& w, const Tensor& b) {
  require_rank(x, 2, "linear input");
  const std::size_t n = x.dim(0), in = x.dim(1), out = w.dim(0);
  if (w.dims() != Dims{out, in} || b.dims() != Dims{out})
    throw ShapeError("linear: weight " + to_string(w.dims()) + " / bias " + to_string(b.dims()) +
                     " incompatible with input " + to_string(x.dims()));
  Tensor y({n, out});
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t o = 0; o < out; ++o) {
      double acc = b[o];
      for (std::size_t i = 0; i < in; ++i) acc += x[s * in + i] * w[o * in + i];
      y[s * out + o] = acc;
    }
  return y;
}

LinearGrads linear_backward(const Tensor& x, const Tensor& w, const Tensor& dy) {
  const std::size_t n = x.dim(0), in = x.dim(1), out = w.dim(0);
  if (dy.dims() != Dims{n, out}) throw ShapeError("linear backward: upstream " + to_string(dy.dims()));
  LinearGrads g{Tensor(x.dims()), Tensor(w.dims()), Tensor({out})};
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t o = 0; o < out; ++o) {
      const double d = dy[s * out + o];
      g.db[o] += d;
      for (std::size_t i = 0; i < in; ++i) {
        g.dw[o * in + i] += d * x[s * in + i];
        g.dx[s * in + i] += d * w[o * in + i];
      }
    }
  return g;
}

Tensor relu_forward(const Tensor& x) {
  Tensor y(x.dims());
  for (std::size_t i = 0; i < x.numel(); ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
  return y;
}

Tensor relu_backward(const Tensor& y, const Tensor& dy) {
  Tensor dx(y.dims());
  for (std::size_t i = 0; i < y.numel(); ++i) dx[i] = y[i] > 0.0 ? dy[i] : 0.0;
  return dx;
}

}  // namespace sfl
