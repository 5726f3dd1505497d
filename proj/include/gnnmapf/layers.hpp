#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "gnnmapf/tensor.hpp"

// Layer kernels with hand-derived backward passes. Forward functions fill an
// optional cache that the matching backward function consumes. Images are
// laid out [batch, channel, row, col].
namespace gnnmapf::nn {

enum class Mode { Train, Eval };

inline constexpr double kBatchNormEpsilon = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;

// ---- conv2d: 3x3 kernel, stride 1, zero padding 1 -------------------------

struct Conv2dCache {
  Shape input_shape;
  std::vector<double> columns;  // im2col matrix, [C_in*9, B*H*W] row-major
};

struct Conv2dGrads {
  Tensor input;
  Tensor weight;
  Tensor bias;
};

// x: [B, C_in, H, W] or [C_in, H, W]; weight: [C_out, C_in, 3, 3]; bias: [C_out].
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias,
              Conv2dCache* cache = nullptr);
Conv2dGrads conv2d_backward(const Tensor& dy, const Tensor& weight, const Conv2dCache& cache,
                            bool need_input_grad = true);

// ---- batchnorm2d ------------------------------------------------------------

struct BatchNormCache {
  Shape input_shape;
  std::vector<double> normalized;  // x_hat, same layout as the input
  std::vector<double> inv_std;     // per channel
  std::vector<double> batch_mean;  // per channel (train mode)
  std::vector<double> batch_var;   // per channel, unbiased (train mode)
  bool batch_statistics = false;   // false when running statistics were used
};

struct BatchNormGrads {
  Tensor input;
  Tensor scale;
  Tensor shift;
};

// Train mode normalizes by per-channel batch statistics; when a channel has
// fewer than two values per batch it falls back to the running statistics.
// Running statistics are not modified here, see update_running_stats.
Tensor batchnorm2d(const Tensor& x, const Tensor& scale, const Tensor& shift,
                   const Tensor& running_mean, const Tensor& running_var, Mode mode,
                   BatchNormCache* cache = nullptr);
BatchNormGrads batchnorm2d_backward(const Tensor& dy, const Tensor& scale,
                                    const BatchNormCache& cache);
// running = (1 - momentum) * running + momentum * batch.
void update_running_stats(Tensor& running_mean, Tensor& running_var, const BatchNormCache& cache,
                          double momentum = kBatchNormMomentum);

// ---- pointwise and pooling -------------------------------------------------

Tensor relu(const Tensor& x);
Tensor relu_backward(const Tensor& dy, const Tensor& x);

struct MaxPoolCache {
  Shape input_shape;
  std::vector<std::uint32_t> argmax;  // flat input index per output element
};

// 2x2 window, stride 2, floor boundary (9 -> 4 -> 2 -> 1).
Tensor maxpool2d(const Tensor& x, MaxPoolCache* cache = nullptr);
Tensor maxpool2d_backward(const Tensor& dy, const MaxPoolCache& cache);

// ---- dense -----------------------------------------------------------------

struct LinearGrads {
  Tensor input;
  Tensor weight;
  Tensor bias;
};

// x: [M, in]; weight: [out, in]; bias: [out]. Returns [M, out].
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);
LinearGrads linear_backward(const Tensor& dy, const Tensor& x, const Tensor& weight);

// Row-wise, stabilized by subtracting the row max.
Tensor log_softmax(const Tensor& x);
Tensor softmax(const Tensor& x);

struct LossResult {
  double loss = 0.0;
  Tensor grad;  // d loss / d logits
};

// Mean negative log-likelihood over rows; gradient (softmax - onehot) / M.
LossResult cross_entropy_loss(const Tensor& logits, const Tensor& onehot_labels);
LossResult cross_entropy_loss(const Tensor& logits, std::span<const int> labels);

// ---- graph filter ------------------------------------------------------------

struct GraphFilterCache {
  std::vector<Tensor> shifted;  // S^k X for k = 0..K-1
};

struct GraphFilterGrads {
  Tensor input;
  std::vector<Tensor> taps;
};

// sum_k S^k X A_k with X: [N, F], S: [N, N], taps A_k: [F, G]. The shifted
// signals are built one neighbourhood exchange at a time: Z_k = S Z_{k-1}.
Tensor graph_filter(const Tensor& x, const Tensor& shift, std::span<const Tensor> taps,
                    GraphFilterCache* cache = nullptr);
// Gradients w.r.t. X and every tap; S is treated as a constant.
GraphFilterGrads graph_filter_backward(const Tensor& dy, const Tensor& shift,
                                       std::span<const Tensor> taps,
                                       const GraphFilterCache& cache);

}  // namespace gnnmapf::nn
