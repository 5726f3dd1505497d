#include "gnnmapf/layers.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>

#include "gnnmapf/error.hpp"

namespace gnnmapf::nn {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

ConstMapMat as_matrix(const Tensor& t, std::size_t rows, std::size_t cols) {
  return ConstMapMat(t.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

MapMat as_matrix(Tensor& t, std::size_t rows, std::size_t cols) {
  return MapMat(t.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

struct ImageDims {
  std::size_t batch, channels, height, width;
  std::size_t plane() const { return height * width; }
};

ImageDims image_dims(const Tensor& x, const char* what) {
  if (x.rank() == 4) return {x.dim(0), x.dim(1), x.dim(2), x.dim(3)};
  if (x.rank() == 3) return {1, x.dim(0), x.dim(1), x.dim(2)};
  throw ShapeMismatch(std::string(what) + ": expected a rank-3 or rank-4 image, got " +
                      shape_string(x.shape()));
}

Shape image_shape(const Shape& like, std::size_t batch, std::size_t channels, std::size_t h,
                  std::size_t w) {
  if (like.size() == 3) return {channels, h, w};
  return {batch, channels, h, w};
}

constexpr std::size_t kTaps = 9;

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, Conv2dCache* cache) {
  const ImageDims d = image_dims(x, "conv2d input");
  if (weight.rank() != 4 || weight.dim(1) != d.channels || weight.dim(2) != 3 ||
      weight.dim(3) != 3) {
    throw ShapeMismatch("conv2d: weight " + shape_string(weight.shape()) +
                        " incompatible with input " + shape_string(x.shape()));
  }
  const std::size_t out_channels = weight.dim(0);
  require_shape(bias, {out_channels}, "conv2d bias");

  const std::size_t rows = d.channels * kTaps;
  const std::size_t cols = d.batch * d.plane();
  const auto h = static_cast<long>(d.height);
  const auto w = static_cast<long>(d.width);

  std::vector<double> columns(rows * cols, 0.0);
  for (std::size_t c = 0; c < d.channels; ++c) {
    for (long ky = 0; ky < 3; ++ky) {
      for (long kx = 0; kx < 3; ++kx) {
        double* dst = columns.data() + (c * kTaps + ky * 3 + kx) * cols;
        for (std::size_t b = 0; b < d.batch; ++b) {
          const double* src = x.data() + (b * d.channels + c) * d.plane();
          double* out = dst + b * d.plane();
          for (long oy = 0; oy < h; ++oy) {
            const long iy = oy + ky - 1;
            if (iy < 0 || iy >= h) continue;
            for (long ox = 0; ox < w; ++ox) {
              const long ix = ox + kx - 1;
              if (ix >= 0 && ix < w) out[oy * w + ox] = src[iy * w + ix];
            }
          }
        }
      }
    }
  }

  RowMat product(static_cast<Eigen::Index>(out_channels), static_cast<Eigen::Index>(cols));
  product.noalias() = as_matrix(weight, out_channels, rows) *
                      ConstMapMat(columns.data(), static_cast<Eigen::Index>(rows),
                                  static_cast<Eigen::Index>(cols));

  Tensor y(image_shape(x.shape(), d.batch, out_channels, d.height, d.width));
  for (std::size_t b = 0; b < d.batch; ++b)
    for (std::size_t co = 0; co < out_channels; ++co) {
      const double* src = product.data() + co * cols + b * d.plane();
      double* dst = y.data() + (b * out_channels + co) * d.plane();
      for (std::size_t p = 0; p < d.plane(); ++p) dst[p] = src[p] + bias[co];
    }

  if (cache) {
    cache->input_shape = x.shape();
    cache->columns = std::move(columns);
  }
  return y;
}

Conv2dGrads conv2d_backward(const Tensor& dy, const Tensor& weight, const Conv2dCache& cache,
                            bool need_input_grad) {
  const Tensor shape_probe(cache.input_shape);
  const ImageDims d = image_dims(shape_probe, "conv2d_backward input");
  const std::size_t out_channels = weight.dim(0);
  require_shape(dy, image_shape(cache.input_shape, d.batch, out_channels, d.height, d.width),
                "conv2d_backward dy");
  const std::size_t rows = d.channels * kTaps;
  const std::size_t cols = d.batch * d.plane();

  RowMat grad_out(static_cast<Eigen::Index>(out_channels), static_cast<Eigen::Index>(cols));
  for (std::size_t b = 0; b < d.batch; ++b)
    for (std::size_t co = 0; co < out_channels; ++co) {
      const double* src = dy.data() + (b * out_channels + co) * d.plane();
      double* dst = grad_out.data() + co * cols + b * d.plane();
      std::copy(src, src + d.plane(), dst);
    }

  const ConstMapMat columns(cache.columns.data(), static_cast<Eigen::Index>(rows),
                            static_cast<Eigen::Index>(cols));
  Conv2dGrads grads;
  grads.weight = Tensor(weight.shape());
  as_matrix(grads.weight, out_channels, rows).noalias() = grad_out * columns.transpose();
  grads.bias = Tensor({out_channels});
  for (std::size_t co = 0; co < out_channels; ++co) grads.bias[co] = grad_out.row(co).sum();

  if (!need_input_grad) return grads;

  RowMat grad_columns(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  grad_columns.noalias() = as_matrix(weight, out_channels, rows).transpose() * grad_out;

  grads.input = Tensor(cache.input_shape);
  const auto h = static_cast<long>(d.height);
  const auto w = static_cast<long>(d.width);
  for (std::size_t c = 0; c < d.channels; ++c) {
    for (long ky = 0; ky < 3; ++ky) {
      for (long kx = 0; kx < 3; ++kx) {
        const double* src = grad_columns.data() + (c * kTaps + ky * 3 + kx) * cols;
        for (std::size_t b = 0; b < d.batch; ++b) {
          double* dst = grads.input.data() + (b * d.channels + c) * d.plane();
          const double* g = src + b * d.plane();
          for (long oy = 0; oy < h; ++oy) {
            const long iy = oy + ky - 1;
            if (iy < 0 || iy >= h) continue;
            for (long ox = 0; ox < w; ++ox) {
              const long ix = ox + kx - 1;
              if (ix >= 0 && ix < w) dst[iy * w + ix] += g[oy * w + ox];
            }
          }
        }
      }
    }
  }
  return grads;
}

Tensor batchnorm2d(const Tensor& x, const Tensor& scale, const Tensor& shift,
                   const Tensor& running_mean, const Tensor& running_var, Mode mode,
                   BatchNormCache* cache) {
  const ImageDims d = image_dims(x, "batchnorm2d input");
  const Shape channel_shape{d.channels};
  require_shape(scale, channel_shape, "batchnorm2d scale");
  require_shape(shift, channel_shape, "batchnorm2d shift");
  require_shape(running_mean, channel_shape, "batchnorm2d running mean");
  require_shape(running_var, channel_shape, "batchnorm2d running variance");

  const std::size_t count = d.batch * d.plane();
  const bool batch_stats = mode == Mode::Train && count >= 2;

  std::vector<double> mean(d.channels);
  std::vector<double> var(d.channels);
  if (batch_stats) {
    for (std::size_t c = 0; c < d.channels; ++c) {
      double sum = 0.0;
      for (std::size_t b = 0; b < d.batch; ++b) {
        const double* src = x.data() + (b * d.channels + c) * d.plane();
        for (std::size_t p = 0; p < d.plane(); ++p) sum += src[p];
      }
      mean[c] = sum / static_cast<double>(count);
      double sq = 0.0;
      for (std::size_t b = 0; b < d.batch; ++b) {
        const double* src = x.data() + (b * d.channels + c) * d.plane();
        for (std::size_t p = 0; p < d.plane(); ++p) sq += (src[p] - mean[c]) * (src[p] - mean[c]);
      }
      var[c] = sq / static_cast<double>(count);
    }
  } else {
    std::copy(running_mean.values().begin(), running_mean.values().end(), mean.begin());
    std::copy(running_var.values().begin(), running_var.values().end(), var.begin());
  }

  std::vector<double> inv_std(d.channels);
  for (std::size_t c = 0; c < d.channels; ++c) inv_std[c] = 1.0 / std::sqrt(var[c] + kBatchNormEpsilon);

  Tensor y(x.shape());
  std::vector<double> normalized(x.size());
  for (std::size_t b = 0; b < d.batch; ++b)
    for (std::size_t c = 0; c < d.channels; ++c) {
      const std::size_t base = (b * d.channels + c) * d.plane();
      for (std::size_t p = 0; p < d.plane(); ++p) {
        const double xh = (x[base + p] - mean[c]) * inv_std[c];
        normalized[base + p] = xh;
        y[base + p] = scale[c] * xh + shift[c];
      }
    }

  if (cache) {
    cache->input_shape = x.shape();
    cache->normalized = std::move(normalized);
    cache->inv_std = std::move(inv_std);
    cache->batch_statistics = batch_stats;
    cache->batch_mean.clear();
    cache->batch_var.clear();
    if (batch_stats) {
      cache->batch_mean = mean;
      cache->batch_var.resize(d.channels);
      const double unbias = static_cast<double>(count) / static_cast<double>(count - 1);
      for (std::size_t c = 0; c < d.channels; ++c) cache->batch_var[c] = var[c] * unbias;
    }
  }
  return y;
}

BatchNormGrads batchnorm2d_backward(const Tensor& dy, const Tensor& scale,
                                    const BatchNormCache& cache) {
  const Tensor shape_probe(cache.input_shape);
  const ImageDims d = image_dims(shape_probe, "batchnorm2d_backward input");
  require_shape(dy, cache.input_shape, "batchnorm2d_backward dy");
  const std::size_t count = d.batch * d.plane();

  BatchNormGrads grads{Tensor(cache.input_shape), Tensor({d.channels}), Tensor({d.channels})};
  for (std::size_t c = 0; c < d.channels; ++c) {
    double sum_dy = 0.0;
    double sum_dy_xhat = 0.0;
    for (std::size_t b = 0; b < d.batch; ++b) {
      const std::size_t base = (b * d.channels + c) * d.plane();
      for (std::size_t p = 0; p < d.plane(); ++p) {
        sum_dy += dy[base + p];
        sum_dy_xhat += dy[base + p] * cache.normalized[base + p];
      }
    }
    grads.shift[c] = sum_dy;
    grads.scale[c] = sum_dy_xhat;

    const double k = scale[c] * cache.inv_std[c];
    const double m = static_cast<double>(count);
    for (std::size_t b = 0; b < d.batch; ++b) {
      const std::size_t base = (b * d.channels + c) * d.plane();
      for (std::size_t p = 0; p < d.plane(); ++p) {
        if (cache.batch_statistics) {
          grads.input[base + p] =
              k / m * (m * dy[base + p] - sum_dy - cache.normalized[base + p] * sum_dy_xhat);
        } else {
          grads.input[base + p] = k * dy[base + p];
        }
      }
    }
  }
  return grads;
}

void update_running_stats(Tensor& running_mean, Tensor& running_var, const BatchNormCache& cache,
                          double momentum) {
  if (!cache.batch_statistics) return;
  for (std::size_t c = 0; c < running_mean.size(); ++c) {
    running_mean[c] = (1.0 - momentum) * running_mean[c] + momentum * cache.batch_mean[c];
    running_var[c] = (1.0 - momentum) * running_var[c] + momentum * cache.batch_var[c];
  }
}

Tensor relu(const Tensor& x) {
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
  return y;
}

Tensor relu_backward(const Tensor& dy, const Tensor& x) {
  require_shape(dy, x.shape(), "relu_backward dy");
  Tensor dx(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) dx[i] = x[i] > 0.0 ? dy[i] : 0.0;
  return dx;
}

Tensor maxpool2d(const Tensor& x, MaxPoolCache* cache) {
  const ImageDims d = image_dims(x, "maxpool2d input");
  const std::size_t oh = d.height / 2;
  const std::size_t ow = d.width / 2;
  if (oh == 0 || ow == 0) throw ShapeMismatch("maxpool2d: input smaller than the 2x2 window");

  Tensor y(image_shape(x.shape(), d.batch, d.channels, oh, ow));
  std::vector<std::uint32_t> argmax(y.size());
  std::size_t o = 0;
  for (std::size_t bc = 0; bc < d.batch * d.channels; ++bc) {
    const std::size_t base = bc * d.plane();
    for (std::size_t oy = 0; oy < oh; ++oy)
      for (std::size_t ox = 0; ox < ow; ++ox, ++o) {
        std::size_t best = base + 2 * oy * d.width + 2 * ox;
        for (std::size_t dy = 0; dy < 2; ++dy)
          for (std::size_t dx = 0; dx < 2; ++dx) {
            const std::size_t idx = base + (2 * oy + dy) * d.width + 2 * ox + dx;
            if (x[idx] > x[best]) best = idx;
          }
        y[o] = x[best];
        argmax[o] = static_cast<std::uint32_t>(best);
      }
  }
  if (cache) {
    cache->input_shape = x.shape();
    cache->argmax = std::move(argmax);
  }
  return y;
}

Tensor maxpool2d_backward(const Tensor& dy, const MaxPoolCache& cache) {
  if (dy.size() != cache.argmax.size()) throw ShapeMismatch("maxpool2d_backward: dy size");
  Tensor dx(cache.input_shape);
  for (std::size_t o = 0; o < dy.size(); ++o) dx[cache.argmax[o]] += dy[o];
  return dx;
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  if (x.rank() != 2 || weight.rank() != 2 || weight.dim(1) != x.dim(1)) {
    throw ShapeMismatch("linear: input " + shape_string(x.shape()) + " vs weight " +
                        shape_string(weight.shape()));
  }
  const std::size_t m = x.dim(0);
  const std::size_t in = x.dim(1);
  const std::size_t out = weight.dim(0);
  require_shape(bias, {out}, "linear bias");
  Tensor y({m, out});
  as_matrix(y, m, out).noalias() = as_matrix(x, m, in) * as_matrix(weight, out, in).transpose();
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t c = 0; c < out; ++c) y.at(r, c) += bias[c];
  return y;
}

LinearGrads linear_backward(const Tensor& dy, const Tensor& x, const Tensor& weight) {
  const std::size_t m = x.dim(0);
  const std::size_t in = x.dim(1);
  const std::size_t out = weight.dim(0);
  require_shape(dy, {m, out}, "linear_backward dy");
  LinearGrads grads{Tensor({m, in}), Tensor({out, in}), Tensor({out})};
  as_matrix(grads.input, m, in).noalias() = as_matrix(dy, m, out) * as_matrix(weight, out, in);
  as_matrix(grads.weight, out, in).noalias() =
      as_matrix(dy, m, out).transpose() * as_matrix(x, m, in);
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t c = 0; c < out; ++c) grads.bias[c] += dy.at(r, c);
  return grads;
}

Tensor log_softmax(const Tensor& x) {
  if (x.rank() != 2) throw ShapeMismatch("log_softmax: expected rank 2");
  Tensor y(x.shape());
  const std::size_t cols = x.dim(1);
  for (std::size_t r = 0; r < x.dim(0); ++r) {
    double top = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < cols; ++c) top = std::max(top, x.at(r, c));
    double sum = 0.0;
    for (std::size_t c = 0; c < cols; ++c) sum += std::exp(x.at(r, c) - top);
    const double log_sum = top + std::log(sum);
    for (std::size_t c = 0; c < cols; ++c) y.at(r, c) = x.at(r, c) - log_sum;
  }
  return y;
}

Tensor softmax(const Tensor& x) {
  Tensor y = log_softmax(x);
  for (double& v : y.values()) v = std::exp(v);
  return y;
}

LossResult cross_entropy_loss(const Tensor& logits, const Tensor& onehot_labels) {
  require_shape(onehot_labels, logits.shape(), "cross_entropy_loss labels");
  const Tensor logp = log_softmax(logits);
  const std::size_t m = logits.dim(0);
  LossResult result{0.0, Tensor(logits.shape())};
  double total = 0.0;
  for (std::size_t i = 0; i < logp.size(); ++i) {
    total -= onehot_labels[i] * logp[i];
    result.grad[i] = (std::exp(logp[i]) - onehot_labels[i]) / static_cast<double>(m);
  }
  result.loss = total / static_cast<double>(m);
  return result;
}

LossResult cross_entropy_loss(const Tensor& logits, std::span<const int> labels) {
  if (logits.rank() != 2 || labels.size() != logits.dim(0))
    throw ShapeMismatch("cross_entropy_loss: label count differs from logit rows");
  Tensor onehot(logits.shape());
  for (std::size_t r = 0; r < labels.size(); ++r) {
    if (labels[r] < 0 || static_cast<std::size_t>(labels[r]) >= logits.dim(1))
      throw ShapeMismatch("cross_entropy_loss: label out of range");
    onehot.at(r, static_cast<std::size_t>(labels[r])) = 1.0;
  }
  return cross_entropy_loss(logits, onehot);
}

Tensor graph_filter(const Tensor& x, const Tensor& shift, std::span<const Tensor> taps,
                    GraphFilterCache* cache) {
  if (taps.empty()) throw ShapeMismatch("graph_filter: at least one tap is required");
  if (x.rank() != 2) throw ShapeMismatch("graph_filter: X must be N x F");
  const std::size_t n = x.dim(0);
  const std::size_t f = x.dim(1);
  require_shape(shift, {n, n}, "graph_filter shift operator");
  const std::size_t g = taps[0].rank() == 2 ? taps[0].dim(1) : 0;
  for (const Tensor& tap : taps) require_shape(tap, {f, g}, "graph_filter tap");

  std::vector<Tensor> shifted;
  shifted.reserve(taps.size());
  shifted.push_back(x);
  for (std::size_t k = 1; k < taps.size(); ++k) {
    Tensor next({n, f});
    as_matrix(next, n, f).noalias() = as_matrix(shift, n, n) * as_matrix(shifted.back(), n, f);
    shifted.push_back(std::move(next));
  }
  Tensor y({n, g});
  auto out = as_matrix(y, n, g);
  for (std::size_t k = 0; k < taps.size(); ++k)
    out.noalias() += as_matrix(shifted[k], n, f) * as_matrix(taps[k], f, g);
  if (cache) cache->shifted = std::move(shifted);
  return y;
}

GraphFilterGrads graph_filter_backward(const Tensor& dy, const Tensor& shift,
                                       std::span<const Tensor> taps,
                                       const GraphFilterCache& cache) {
  const std::size_t k_taps = taps.size();
  if (cache.shifted.size() != k_taps) throw ShapeMismatch("graph_filter_backward: stale cache");
  const std::size_t n = cache.shifted[0].dim(0);
  const std::size_t f = cache.shifted[0].dim(1);
  const std::size_t g = taps[0].dim(1);
  require_shape(dy, {n, g}, "graph_filter_backward dy");

  GraphFilterGrads grads;
  grads.taps.reserve(k_taps);
  for (std::size_t k = 0; k < k_taps; ++k) {
    Tensor d_tap({f, g});
    as_matrix(d_tap, f, g).noalias() =
        as_matrix(cache.shifted[k], n, f).transpose() * as_matrix(dy, n, g);
    grads.taps.push_back(std::move(d_tap));
  }
  // dZ_{K-1} = dY A_{K-1}^T; dZ_k = dY A_k^T + S^T dZ_{k+1}; dX = dZ_0.
  Tensor d_shifted({n, f});
  for (std::size_t k = k_taps; k-- > 0;) {
    Tensor next({n, f});
    auto m = as_matrix(next, n, f);
    m.noalias() = as_matrix(dy, n, g) * as_matrix(taps[k], f, g).transpose();
    if (k + 1 < k_taps) m.noalias() += as_matrix(shift, n, n).transpose() * as_matrix(d_shifted, n, f);
    d_shifted = std::move(next);
  }
  grads.input = std::move(d_shifted);
  return grads;
}

}  // namespace gnnmapf::nn
