#pragma once

#include <string>

#include "facever/error.hpp"
#include "facever/kernels.hpp"
#include "facever/tensor.hpp"

namespace facever::kernels::detail {

struct ConvGeometry {
  std::size_t batch, in_h, in_w, in_c;
  std::size_t out_c, k_h, k_w;
  std::size_t out_h, out_w;
  std::size_t stride, pad;

  std::size_t patch_size() const { return k_h * k_w * in_c; }
  std::size_t out_pixels() const { return out_h * out_w; }
};

template <typename T>
ConvGeometry conv_geometry(const Tensor<T>& input, const Tensor<T>& weights,
                           const Tensor<T>& bias, std::size_t stride,
                           std::size_t pad) {
  if (stride == 0) throw ConfigError("convolution stride must be >= 1");
  if (input.rank() != 4) {
    throw DimensionError("conv2d expects NHWC input, got " +
                         shape_string(input.shape()));
  }
  if (weights.rank() != 4) {
    throw DimensionError("conv2d expects [Cout,kh,kw,Cin] weights, got " +
                         shape_string(weights.shape()));
  }
  if (weights.dim(3) != input.dim(3)) {
    throw DimensionError("conv2d channel mismatch: input " +
                         shape_string(input.shape()) + ", weights " +
                         shape_string(weights.shape()));
  }
  if (bias.size() != weights.dim(0)) {
    throw DimensionError("conv2d bias has " + std::to_string(bias.size()) +
                         " entries for " + std::to_string(weights.dim(0)) +
                         " filters");
  }
  ConvGeometry g{};
  g.batch = input.dim(0);
  g.in_h = input.dim(1);
  g.in_w = input.dim(2);
  g.in_c = input.dim(3);
  g.out_c = weights.dim(0);
  g.k_h = weights.dim(1);
  g.k_w = weights.dim(2);
  g.stride = stride;
  g.pad = pad;
  g.out_h = conv_output_extent(g.in_h, g.k_h, stride, pad);
  g.out_w = conv_output_extent(g.in_w, g.k_w, stride, pad);
  return g;
}

template <typename T>
void check_conv_grad(const ConvGeometry& g, const Tensor<T>& grad_output,
                     const Tensor<T>& weights, const Tensor<T>& weight_grad,
                     const Tensor<T>& bias_grad) {
  const Shape expected{g.batch, g.out_h, g.out_w, g.out_c};
  if (grad_output.shape() != expected) {
    throw DimensionError("conv2d upstream gradient " +
                         shape_string(grad_output.shape()) + ", expected " +
                         shape_string(expected));
  }
  if (weight_grad.shape() != weights.shape() || bias_grad.size() != g.out_c) {
    throw DimensionError("conv2d parameter gradient shape mismatch");
  }
}

struct FcGeometry {
  std::size_t batch, in_features, out_features;
};

template <typename T>
FcGeometry fc_geometry(const Tensor<T>& input, const Tensor<T>& weights,
                       const Tensor<T>& bias) {
  if (input.rank() < 2) {
    throw DimensionError("fully connected input needs a batch axis, got " +
                         shape_string(input.shape()));
  }
  if (weights.rank() != 2) {
    throw DimensionError("fully connected weights must be [Dout,Din], got " +
                         shape_string(weights.shape()));
  }
  FcGeometry g{};
  g.batch = input.dim(0);
  g.in_features = g.batch ? input.size() / g.batch : 0;
  g.out_features = weights.dim(0);
  if (weights.dim(1) != g.in_features) {
    throw DimensionError("fully connected expects " +
                         std::to_string(weights.dim(1)) + " inputs, got " +
                         std::to_string(g.in_features));
  }
  if (bias.size() != g.out_features) {
    throw DimensionError("fully connected bias length mismatch");
  }
  return g;
}

}  // namespace facever::kernels::detail
