#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "pdseg/tensor.hpp"

namespace pdseg {

struct Conv2dOptions {
  int stride = 1;
  int padding = 0;
  int groups = 1;
};

/// Zero-padded 2-D cross-correlation. `bias` may be an undefined tensor.
/// input N×Cin×H×W, weight Cout×(Cin/groups)×kh×kw, bias Cout.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias,
                 Conv2dOptions options = {});

enum class PoolMode { kMax, kAvg };

/// N×C×H×W -> N×C×1×1. Max routes its gradient to the first row-major argmax.
template <typename T>
Tensor<T> global_pool(const Tensor<T>& input, PoolMode mode);

/// input N×Din, weight Dout×Din, bias Dout -> N×Dout.
template <typename T>
Tensor<T> linear(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias);

enum class Activation { kRelu, kSigmoid };

template <typename T>
Tensor<T> activation(const Tensor<T>& input, Activation kind);
template <typename T>
Tensor<T> relu(const Tensor<T>& input) { return activation(input, Activation::kRelu); }
template <typename T>
Tensor<T> sigmoid(const Tensor<T>& input) { return activation(input, Activation::kSigmoid); }

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& tensors, int axis);
template <typename T>
std::vector<Tensor<T>> split(const Tensor<T>& tensor, const std::vector<std::int64_t>& sizes, int axis);

enum class Elementwise { kAdd, kMul };

/// `b` must equal `a` in shape or have extent 1 wherever it differs.
template <typename T>
Tensor<T> elementwise(const Tensor<T>& a, const Tensor<T>& b, Elementwise kind);
template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) { return elementwise(a, b, Elementwise::kAdd); }
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) { return elementwise(a, b, Elementwise::kMul); }

/// a * factor, with factor a constant.
template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor);
template <typename T>
Tensor<T> sum(const Tensor<T>& a);
template <typename T>
Tensor<T> mean(const Tensor<T>& a);
template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape);

/// Bilinear resampling of the last two axes, half-pixel centers (align_corners=false).
template <typename T>
Tensor<T> resize_bilinear(const Tensor<T>& input, std::int64_t out_h, std::int64_t out_w);
/// Nearest-neighbour resampling, source index floor(o·in/out).
template <typename T>
Tensor<T> resize_nearest(const Tensor<T>& input, std::int64_t out_h, std::int64_t out_w);
template <typename T>
Tensor<T> upsample_nearest(const Tensor<T>& input, int factor);
/// Mirrors the last axis.
template <typename T>
Tensor<T> flip_horizontal(const Tensor<T>& input);

inline constexpr std::uint8_t kIgnoreLabel = 255;

/// Mean softmax cross-entropy over non-ignored pixels. logits 1×K×H×W, labels H·W.
/// Returns 0 when every pixel is ignored.
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const std::uint8_t> labels);

/// Soft dice loss 1 - (2·Σp·g + s)/(Σp + Σg + s), averaged over the classes that
/// appear in the labels or in the argmax prediction. Ignored pixels excluded.
template <typename T>
Tensor<T> soft_dice(const Tensor<T>& logits, std::span<const std::uint8_t> labels, T smooth = T(1));

/// Per-pixel softmax over the channel axis of a 1×K×H×W tensor (no gradient).
template <typename T>
std::vector<T> softmax_channels(const Tensor<T>& logits);

}  // namespace pdseg
