#include "facever/kernels.hpp"
#include "kernels_common.hpp"

namespace facever::kernels::reference {

template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& input, const Tensor<T>& weights,
                         const Tensor<T>& bias, std::size_t stride,
                         std::size_t pad) {
  const auto g = detail::conv_geometry(input, weights, bias, stride, pad);
  Tensor<T> out({g.batch, g.out_h, g.out_w, g.out_c});
  for (std::size_t n = 0; n < g.batch; ++n) {
    for (std::size_t oh = 0; oh < g.out_h; ++oh) {
      for (std::size_t ow = 0; ow < g.out_w; ++ow) {
        for (std::size_t co = 0; co < g.out_c; ++co) {
          T sum = bias[co];
          for (std::size_t kh = 0; kh < g.k_h; ++kh) {
            const auto ih = static_cast<long>(oh * stride + kh) - static_cast<long>(pad);
            if (ih < 0 || ih >= static_cast<long>(g.in_h)) continue;
            for (std::size_t kw = 0; kw < g.k_w; ++kw) {
              const auto iw = static_cast<long>(ow * stride + kw) - static_cast<long>(pad);
              if (iw < 0 || iw >= static_cast<long>(g.in_w)) continue;
              for (std::size_t ci = 0; ci < g.in_c; ++ci) {
                sum += input.at(n, ih, iw, ci) * weights.at(co, kh, kw, ci);
              }
            }
          }
          out.at(n, oh, ow, co) = sum;
        }
      }
    }
  }
  return out;
}

template <typename T>
Tensor<T> conv2d_backward(const Tensor<T>& input, const Tensor<T>& weights,
                          const Tensor<T>& grad_output, std::size_t stride,
                          std::size_t pad, Tensor<T>& weight_grad,
                          Tensor<T>& bias_grad) {
  const auto g = detail::conv_geometry(input, weights, bias_grad, stride, pad);
  detail::check_conv_grad(g, grad_output, weights, weight_grad, bias_grad);
  Tensor<T> grad_in(input.shape());
  for (std::size_t n = 0; n < g.batch; ++n) {
    for (std::size_t oh = 0; oh < g.out_h; ++oh) {
      for (std::size_t ow = 0; ow < g.out_w; ++ow) {
        for (std::size_t co = 0; co < g.out_c; ++co) {
          const T go = grad_output.at(n, oh, ow, co);
          bias_grad[co] += go;
          for (std::size_t kh = 0; kh < g.k_h; ++kh) {
            const auto ih = static_cast<long>(oh * stride + kh) - static_cast<long>(pad);
            if (ih < 0 || ih >= static_cast<long>(g.in_h)) continue;
            for (std::size_t kw = 0; kw < g.k_w; ++kw) {
              const auto iw = static_cast<long>(ow * stride + kw) - static_cast<long>(pad);
              if (iw < 0 || iw >= static_cast<long>(g.in_w)) continue;
              for (std::size_t ci = 0; ci < g.in_c; ++ci) {
                weight_grad.at(co, kh, kw, ci) += input.at(n, ih, iw, ci) * go;
                grad_in.at(n, ih, iw, ci) += weights.at(co, kh, kw, ci) * go;
              }
            }
          }
        }
      }
    }
  }
  return grad_in;
}

template <typename T>
Tensor<T> fc_forward(const Tensor<T>& input, const Tensor<T>& weights,
                     const Tensor<T>& bias) {
  const auto g = detail::fc_geometry(input, weights, bias);
  Tensor<T> out({g.batch, g.out_features});
  for (std::size_t n = 0; n < g.batch; ++n) {
    for (std::size_t o = 0; o < g.out_features; ++o) {
      T sum = bias[o];
      for (std::size_t i = 0; i < g.in_features; ++i) {
        sum += weights[o * g.in_features + i] * input[n * g.in_features + i];
      }
      out[n * g.out_features + o] = sum;
    }
  }
  return out;
}

template <typename T>
Tensor<T> fc_backward(const Tensor<T>& input, const Tensor<T>& weights,
                      const Tensor<T>& grad_output, Tensor<T>& weight_grad,
                      Tensor<T>& bias_grad) {
  const auto g = detail::fc_geometry(input, weights, bias_grad);
  if (grad_output.size() != g.batch * g.out_features) {
    throw DimensionError("fully connected upstream gradient shape mismatch");
  }
  Tensor<T> grad_in(input.shape());
  for (std::size_t n = 0; n < g.batch; ++n) {
    for (std::size_t o = 0; o < g.out_features; ++o) {
      const T go = grad_output[n * g.out_features + o];
      bias_grad[o] += go;
      for (std::size_t i = 0; i < g.in_features; ++i) {
        weight_grad[o * g.in_features + i] += go * input[n * g.in_features + i];
        grad_in[n * g.in_features + i] += go * weights[o * g.in_features + i];
      }
    }
  }
  return grad_in;
}

#define FACEVER_INSTANTIATE(T)                                                    \
  template Tensor<T> conv2d_forward(const Tensor<T>&, const Tensor<T>&,           \
                                    const Tensor<T>&, std::size_t, std::size_t);  \
  template Tensor<T> conv2d_backward(const Tensor<T>&, const Tensor<T>&,          \
                                     const Tensor<T>&, std::size_t, std::size_t,  \
                                     Tensor<T>&, Tensor<T>&);                     \
  template Tensor<T> fc_forward(const Tensor<T>&, const Tensor<T>&,               \
                                const Tensor<T>&);                                \
  template Tensor<T> fc_backward(const Tensor<T>&, const Tensor<T>&,              \
                                 const Tensor<T>&, Tensor<T>&, Tensor<T>&);

FACEVER_INSTANTIATE(float)
FACEVER_INSTANTIATE(double)

#undef FACEVER_INSTANTIATE

}  // namespace facever::kernels::reference
