#pragma once

// Forward and backward kernels for the layer types of a VGG-style classifier.
// Every function is pure: outputs depend only on arguments.

#include <cstdint>
#include <span>
#include <vector>

#include "pruneforge/tensor.hpp"

namespace pruneforge::ops {

/// Stride-1 cross-correlation with zero "same" padding.
/// input [b,ci,h,w], kernels [co,ci,k,k] with odd k, bias [co] -> [b,co,h,w].
template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& input, const BasicTensor<T>& kernels,
                      const BasicTensor<T>& bias);

template <typename T>
struct Conv2dGrads {
  BasicTensor<T> input;  // empty when not requested
  BasicTensor<T> kernels;
  BasicTensor<T> bias;
};

template <typename T>
Conv2dGrads<T> conv2d_backward(const BasicTensor<T>& input, const BasicTensor<T>& kernels,
                               const BasicTensor<T>& grad_output, bool want_input_grad = true);

template <typename T>
BasicTensor<T> relu(const BasicTensor<T>& input);

/// Gradient passes where input > 0; exactly zero at input == 0.
template <typename T>
BasicTensor<T> relu_backward(const BasicTensor<T>& input, const BasicTensor<T>& grad_output);

template <typename T>
struct MaxPoolResult {
  BasicTensor<T> output;
  /// Flat input index of the selected element for each output element.
  std::vector<std::uint32_t> argmax;
};

/// 2x2 window, stride 2, floor semantics; ties pick the first element in
/// row-major window order.
template <typename T>
MaxPoolResult<T> maxpool2d(const BasicTensor<T>& input);

template <typename T>
BasicTensor<T> maxpool2d_backward(const Shape& input_shape, std::span<const std::uint32_t> argmax,
                                  const BasicTensor<T>& grad_output);

/// input [b,n], weights [m,n], bias [m] -> [b,m].
template <typename T>
BasicTensor<T> dense(const BasicTensor<T>& input, const BasicTensor<T>& weights,
                     const BasicTensor<T>& bias);

template <typename T>
struct DenseGrads {
  BasicTensor<T> input;
  BasicTensor<T> weights;
  BasicTensor<T> bias;
};

template <typename T>
DenseGrads<T> dense_backward(const BasicTensor<T>& input, const BasicTensor<T>& weights,
                             const BasicTensor<T>& grad_output, bool want_input_grad = true);

template <typename T>
struct LossResult {
  double loss = 0.0;
  BasicTensor<T> grad;  // d loss / d input, same shape as the input
};

/// Mean over the batch of -log softmax(logits)[label], max-subtracted.
template <typename T>
LossResult<T> softmax_cross_entropy(const BasicTensor<T>& logits, std::span<const int> labels);

/// Mean over the batch of the per-sample Euclidean distance between
/// `output` and `target` (leading axis is the batch). The gradient of a
/// zero-distance sample is defined as zero.
template <typename T>
LossResult<T> mean_l2_distance(const BasicTensor<T>& output, const BasicTensor<T>& target);

/// Returns param - learning_rate * grad.
template <typename T>
BasicTensor<T> sgd_step(const BasicTensor<T>& param, const BasicTensor<T>& grad,
                        double learning_rate);

/// In-place form of sgd_step.
template <typename T>
void sgd_update(BasicTensor<T>& param, const BasicTensor<T>& grad, double learning_rate);

}  // namespace pruneforge::ops
