#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "facever/tensor.hpp"

// Layer kernels used by the CNN engine.
//
// Two implementations are kept side by side: `kernels::` holds the optimized
// path (im2col + GEMM, OpenMP over the batch) used for training and
// inference, `kernels::reference::` holds direct nested-loop versions that
// are serial and exist to check the optimized path.
//
// Layouts: activations NHWC, convolution weights [Cout, kh, kw, Cin],
// fully connected weights [Dout, Din], biases one entry per output.
namespace facever::kernels {

/// floor((extent + 2*pad - kernel) / stride) + 1; throws if nonpositive.
std::size_t conv_output_extent(std::size_t extent, std::size_t kernel,
                               std::size_t stride, std::size_t pad);
/// Pool windows are fully contained; partial edge windows are dropped.
std::size_t pool_output_extent(std::size_t extent, std::size_t window,
                               std::size_t stride);

template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& input, const Tensor<T>& weights,
                         const Tensor<T>& bias, std::size_t stride,
                         std::size_t pad);

// Accumulates into weight_grad / bias_grad. Returns the input gradient, or an
// empty tensor when need_input_grad is false.
template <typename T>
Tensor<T> conv2d_backward(const Tensor<T>& input, const Tensor<T>& weights,
                          const Tensor<T>& grad_output, std::size_t stride,
                          std::size_t pad, Tensor<T>& weight_grad,
                          Tensor<T>& bias_grad, bool need_input_grad = true);

// argmax receives, per output element, the flat input index of its maximum
// (first occurrence on ties). Pass nullptr for inference.
template <typename T>
Tensor<T> maxpool2d_forward(const Tensor<T>& input, std::size_t window,
                            std::size_t stride,
                            std::vector<std::size_t>* argmax);

template <typename T>
Tensor<T> maxpool2d_backward(const Shape& input_shape,
                             std::span<const std::size_t> argmax,
                             const Tensor<T>& grad_output);

template <typename T>
Tensor<T> relu_forward(const Tensor<T>& input);

// Gradient is masked where input <= 0 (subgradient 0 at exactly 0).
template <typename T>
Tensor<T> relu_backward(const Tensor<T>& input, const Tensor<T>& grad_output);

// input [N, Din] (higher-rank inputs are flattened row-major per sample).
template <typename T>
Tensor<T> fc_forward(const Tensor<T>& input, const Tensor<T>& weights,
                     const Tensor<T>& bias);

template <typename T>
Tensor<T> fc_backward(const Tensor<T>& input, const Tensor<T>& weights,
                      const Tensor<T>& grad_output, Tensor<T>& weight_grad,
                      Tensor<T>& bias_grad, bool need_input_grad = true);

template <typename T>
struct SoftmaxXentResult {
  double loss = 0.0;         // mean over the batch
  Tensor<T> grad;            // (softmax - onehot) / N
  std::size_t correct = 0;   // argmax(logits) == label
};

template <typename T>
SoftmaxXentResult<T> softmax_xent(const Tensor<T>& logits,
                                  std::span<const int> labels);

template <typename T>
Tensor<T> softmax(const Tensor<T>& logits);

namespace reference {

template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& input, const Tensor<T>& weights,
                         const Tensor<T>& bias, std::size_t stride,
                         std::size_t pad);

template <typename T>
Tensor<T> conv2d_backward(const Tensor<T>& input, const Tensor<T>& weights,
                          const Tensor<T>& grad_output, std::size_t stride,
                          std::size_t pad, Tensor<T>& weight_grad,
                          Tensor<T>& bias_grad);

template <typename T>
Tensor<T> fc_forward(const Tensor<T>& input, const Tensor<T>& weights,
                     const Tensor<T>& bias);

template <typename T>
Tensor<T> fc_backward(const Tensor<T>& input, const Tensor<T>& weights,
                      const Tensor<T>& grad_output, Tensor<T>& weight_grad,
                      Tensor<T>& bias_grad);

}  // namespace reference
}  // namespace facever::kernels
