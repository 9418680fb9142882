#include "facever/kernels.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "kernels_common.hpp"

namespace facever::kernels {
namespace {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMatrix = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMapMatrix = Eigen::Map<const RowMatrix<T>>;

int team_size() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

int thread_id() {
#ifdef _OPENMP
  return omp_get_thread_num();
#else
  return 0;
#endif
}

// Rows are output pixels, columns follow the weight layout (kh, kw, cin).
template <typename T>
void im2col(const T* image, const detail::ConvGeometry& g, T* cols) {
  const std::size_t k = g.patch_size();
  for (std::size_t oh = 0; oh < g.out_h; ++oh) {
    for (std::size_t ow = 0; ow < g.out_w; ++ow) {
      T* row = cols + (oh * g.out_w + ow) * k;
      for (std::size_t kh = 0; kh < g.k_h; ++kh) {
        const long ih = static_cast<long>(oh * g.stride + kh) - static_cast<long>(g.pad);
        for (std::size_t kw = 0; kw < g.k_w; ++kw) {
          const long iw = static_cast<long>(ow * g.stride + kw) - static_cast<long>(g.pad);
          T* dst = row + (kh * g.k_w + kw) * g.in_c;
          if (ih < 0 || iw < 0 || ih >= static_cast<long>(g.in_h) ||
              iw >= static_cast<long>(g.in_w)) {
            std::fill(dst, dst + g.in_c, T{0});
          } else {
            std::memcpy(dst, image + (ih * g.in_w + iw) * g.in_c, g.in_c * sizeof(T));
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* cols, const detail::ConvGeometry& g, T* image) {
  const std::size_t k = g.patch_size();
  for (std::size_t oh = 0; oh < g.out_h; ++oh) {
    for (std::size_t ow = 0; ow < g.out_w; ++ow) {
      const T* row = cols + (oh * g.out_w + ow) * k;
      for (std::size_t kh = 0; kh < g.k_h; ++kh) {
        const long ih = static_cast<long>(oh * g.stride + kh) - static_cast<long>(g.pad);
        if (ih < 0 || ih >= static_cast<long>(g.in_h)) continue;
        for (std::size_t kw = 0; kw < g.k_w; ++kw) {
          const long iw = static_cast<long>(ow * g.stride + kw) - static_cast<long>(g.pad);
          if (iw < 0 || iw >= static_cast<long>(g.in_w)) continue;
          const T* src = row + (kh * g.k_w + kw) * g.in_c;
          T* dst = image + (ih * g.in_w + iw) * g.in_c;
          for (std::size_t c = 0; c < g.in_c; ++c) dst[c] += src[c];
        }
      }
    }
  }
}

}  // namespace

std::size_t conv_output_extent(std::size_t extent, std::size_t kernel,
                               std::size_t stride, std::size_t pad) {
  if (stride == 0) throw ConfigError("stride must be >= 1");
  if (extent + 2 * pad < kernel) {
    throw DimensionError("kernel " + std::to_string(kernel) +
                         " larger than padded extent " +
                         std::to_string(extent + 2 * pad));
  }
  return (extent + 2 * pad - kernel) / stride + 1;
}

std::size_t pool_output_extent(std::size_t extent, std::size_t window,
                               std::size_t stride) {
  if (window == 0) throw ConfigError("pooling window must be >= 1");
  if (stride == 0) throw ConfigError("pooling stride must be >= 1");
  if (window > extent) {
    throw DimensionError("pooling window " + std::to_string(window) +
                         " larger than input extent " + std::to_string(extent));
  }
  return (extent - window) / stride + 1;
}

template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& input, const Tensor<T>& weights,
                         const Tensor<T>& bias, std::size_t stride,
                         std::size_t pad) {
  const auto g = detail::conv_geometry(input, weights, bias, stride, pad);
  Tensor<T> out({g.batch, g.out_h, g.out_w, g.out_c});
  const std::size_t k = g.patch_size();
  const std::size_t pixels = g.out_pixels();
  const std::size_t in_stride = g.in_h * g.in_w * g.in_c;
  const std::size_t out_stride = pixels * g.out_c;
  ConstMapMatrix<T> w(weights.raw(), g.out_c, k);
  Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> b(bias.raw(), g.out_c);

  const long batch = static_cast<long>(g.batch);
#pragma omp parallel
  {
    AlignedVector<T> cols(pixels * k);
#pragma omp for schedule(static)
    for (long n = 0; n < batch; ++n) {
      im2col(input.raw() + n * in_stride, g, cols.data());
      ConstMapMatrix<T> c(cols.data(), pixels, k);
      MapMatrix<T> y(out.raw() + n * out_stride, pixels, g.out_c);
      y.noalias() = c * w.transpose();
      y.rowwise() += b;
    }
  }
  return out;
}

template <typename T>
Tensor<T> conv2d_backward(const Tensor<T>& input, const Tensor<T>& weights,
                          const Tensor<T>& grad_output, std::size_t stride,
                          std::size_t pad, Tensor<T>& weight_grad,
                          Tensor<T>& bias_grad, bool need_input_grad) {
  const auto g = detail::conv_geometry(input, weights, bias_grad, stride, pad);
  detail::check_conv_grad(g, grad_output, weights, weight_grad, bias_grad);
  const std::size_t k = g.patch_size();
  const std::size_t pixels = g.out_pixels();
  const std::size_t in_stride = g.in_h * g.in_w * g.in_c;
  const std::size_t out_stride = pixels * g.out_c;
  ConstMapMatrix<T> w(weights.raw(), g.out_c, k);

  Tensor<T> grad_in;
  if (need_input_grad) grad_in = Tensor<T>(input.shape());

  // One accumulator per thread, reduced in thread order so the result only
  // depends on the thread count.
  const int threads = team_size();
  std::vector<RowMatrix<T>> dw(threads, RowMatrix<T>::Zero(g.out_c, k));
  std::vector<Eigen::Matrix<T, 1, Eigen::Dynamic>> db(
      threads, Eigen::Matrix<T, 1, Eigen::Dynamic>::Zero(g.out_c));

  const long batch = static_cast<long>(g.batch);
#pragma omp parallel
  {
    const int tid = thread_id();
    AlignedVector<T> cols(pixels * k);
    AlignedVector<T> dcols(need_input_grad ? pixels * k : 0);
#pragma omp for schedule(static)
    for (long n = 0; n < batch; ++n) {
      im2col(input.raw() + n * in_stride, g, cols.data());
      ConstMapMatrix<T> c(cols.data(), pixels, k);
      ConstMapMatrix<T> gy(grad_output.raw() + n * out_stride, pixels, g.out_c);
      dw[tid].noalias() += gy.transpose() * c;
      db[tid] += gy.colwise().sum();
      if (need_input_grad) {
        MapMatrix<T> dc(dcols.data(), pixels, k);
        dc.noalias() = gy * w;
        col2im_add(dcols.data(), g, grad_in.raw() + n * in_stride);
      }
    }
  }
  MapMatrix<T> wg(weight_grad.raw(), g.out_c, k);
  Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>> bg(bias_grad.raw(), g.out_c);
  for (int t = 0; t < threads; ++t) {
    wg += dw[t];
    bg += db[t];
  }
  return grad_in;
}

template <typename T>
Tensor<T> maxpool2d_forward(const Tensor<T>& input, std::size_t window,
                            std::size_t stride, std::vector<std::size_t>* argmax) {
  if (input.rank() != 4) {
    throw DimensionError("maxpool2d expects NHWC input, got " +
                         shape_string(input.shape()));
  }
  const std::size_t batch = input.dim(0), h = input.dim(1), w = input.dim(2),
                    c = input.dim(3);
  const std::size_t oh = pool_output_extent(h, window, stride);
  const std::size_t ow = pool_output_extent(w, window, stride);
  Tensor<T> out({batch, oh, ow, c});
  if (argmax) argmax->assign(out.size(), 0);

  const long nb = static_cast<long>(batch);
#pragma omp parallel for schedule(static)
  for (long n = 0; n < nb; ++n) {
    for (std::size_t y = 0; y < oh; ++y) {
      for (std::size_t x = 0; x < ow; ++x) {
        for (std::size_t ch = 0; ch < c; ++ch) {
          T best = -std::numeric_limits<T>::infinity();
          std::size_t best_index = 0;
          for (std::size_t i = 0; i < window; ++i) {
            for (std::size_t j = 0; j < window; ++j) {
              const std::size_t idx =
                  ((n * h + y * stride + i) * w + x * stride + j) * c + ch;
              if (input[idx] > best || (i == 0 && j == 0)) {
                best = input[idx];
                best_index = idx;
              }
            }
          }
          const std::size_t o = ((n * oh + y) * ow + x) * c + ch;
          out[o] = best;
          if (argmax) (*argmax)[o] = best_index;
        }
      }
    }
  }
  return out;
}

template <typename T>
Tensor<T> maxpool2d_backward(const Shape& input_shape,
                             std::span<const std::size_t> argmax,
                             const Tensor<T>& grad_output) {
  if (argmax.size() != grad_output.size()) {
    throw DimensionError("maxpool2d argmax cache does not match upstream gradient");
  }
  Tensor<T> grad_in(input_shape);
  const std::size_t batch = grad_output.empty() ? 0 : grad_output.dim(0);
  const std::size_t per_sample = batch ? grad_output.size() / batch : 0;
  const long nb = static_cast<long>(batch);
  // Argmax cells of sample n lie inside sample n, so samples never collide.
#pragma omp parallel for schedule(static)
  for (long n = 0; n < nb; ++n) {
    for (std::size_t i = n * per_sample; i < (n + 1) * per_sample; ++i) {
      grad_in[argmax[i]] += grad_output[i];
    }
  }
  return grad_in;
}

template <typename T>
Tensor<T> relu_forward(const Tensor<T>& input) {
  Tensor<T> out(input.shape());
  const T* src = input.raw();
  T* dst = out.raw();
  const long n = static_cast<long>(input.size());
#pragma omp parallel for schedule(static)
  for (long i = 0; i < n; ++i) dst[i] = src[i] > T{0} ? src[i] : T{0};
  return out;
}

template <typename T>
Tensor<T> relu_backward(const Tensor<T>& input, const Tensor<T>& grad_output) {
  if (input.size() != grad_output.size()) {
    throw DimensionError("relu gradient shape mismatch");
  }
  Tensor<T> out(input.shape());
  const long n = static_cast<long>(input.size());
#pragma omp parallel for schedule(static)
  for (long i = 0; i < n; ++i) {
    out[i] = input[i] > T{0} ? grad_output[i] : T{0};
  }
  return out;
}

template <typename T>
Tensor<T> fc_forward(const Tensor<T>& input, const Tensor<T>& weights,
                     const Tensor<T>& bias) {
  const auto g = detail::fc_geometry(input, weights, bias);
  Tensor<T> out({g.batch, g.out_features});
  ConstMapMatrix<T> x(input.raw(), g.batch, g.in_features);
  ConstMapMatrix<T> w(weights.raw(), g.out_features, g.in_features);
  Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> b(bias.raw(), g.out_features);
  MapMatrix<T> y(out.raw(), g.batch, g.out_features);
  y.noalias() = x * w.transpose();
  y.rowwise() += b;
  return out;
}

template <typename T>
Tensor<T> fc_backward(const Tensor<T>& input, const Tensor<T>& weights,
                      const Tensor<T>& grad_output, Tensor<T>& weight_grad,
                      Tensor<T>& bias_grad, bool need_input_grad) {
  const auto g = detail::fc_geometry(input, weights, bias_grad);
  if (grad_output.size() != g.batch * g.out_features) {
    throw DimensionError("fully connected upstream gradient shape mismatch");
  }
  if (weight_grad.shape() != weights.shape()) {
    throw DimensionError("fully connected weight gradient shape mismatch");
  }
  ConstMapMatrix<T> x(input.raw(), g.batch, g.in_features);
  ConstMapMatrix<T> w(weights.raw(), g.out_features, g.in_features);
  ConstMapMatrix<T> gy(grad_output.raw(), g.batch, g.out_features);
  MapMatrix<T> dw(weight_grad.raw(), g.out_features, g.in_features);
  Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>> db(bias_grad.raw(), g.out_features);
  dw.noalias() += gy.transpose() * x;
  db += gy.colwise().sum();
  Tensor<T> grad_in;
  if (need_input_grad) {
    grad_in = Tensor<T>(input.shape());
    MapMatrix<T> dx(grad_in.raw(), g.batch, g.in_features);
    dx.noalias() = gy * w;
  }
  return grad_in;
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& logits) {
  if (logits.rank() != 2) {
    throw DimensionError("softmax expects [N,K] logits, got " +
                         shape_string(logits.shape()));
  }
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  Tensor<T> out(logits.shape());
  for (std::size_t i = 0; i < n; ++i) {
    const T* row = logits.raw() + i * k;
    const T m = *std::max_element(row, row + k);
    double sum = 0.0;
    for (std::size_t j = 0; j < k; ++j) sum += std::exp(static_cast<double>(row[j] - m));
    for (std::size_t j = 0; j < k; ++j) {
      out[i * k + j] = static_cast<T>(std::exp(static_cast<double>(row[j] - m)) / sum);
    }
  }
  return out;
}

template <typename T>
SoftmaxXentResult<T> softmax_xent(const Tensor<T>& logits,
                                  std::span<const int> labels) {
  if (logits.rank() != 2) {
    throw DimensionError("softmax_xent expects [N,K] logits, got " +
                         shape_string(logits.shape()));
  }
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  if (labels.size() != n) {
    throw DimensionError("softmax_xent got " + std::to_string(labels.size()) +
                         " labels for " + std::to_string(n) + " rows");
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= k) {
      throw LabelError("label " + std::to_string(labels[i]) + " outside [0," +
                       std::to_string(k) + ")");
    }
  }
  SoftmaxXentResult<T> result;
  result.grad = Tensor<T>(logits.shape());
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const T* row = logits.raw() + i * k;
    const auto top = std::max_element(row, row + k);
    const double m = *top;
    double sum = 0.0;
    for (std::size_t j = 0; j < k; ++j) sum += std::exp(row[j] - m);
    const double log_sum = std::log(sum);
    const auto label = static_cast<std::size_t>(labels[i]);
    total += -(row[label] - m - log_sum);
    if (static_cast<std::size_t>(top - row) == label) ++result.correct;
    for (std::size_t j = 0; j < k; ++j) {
      const double p = std::exp(row[j] - m - log_sum);
      result.grad[i * k + j] =
          static_cast<T>((p - (j == label ? 1.0 : 0.0)) / static_cast<double>(n));
    }
  }
  result.loss = n ? total / static_cast<double>(n) : 0.0;
  return result;
}

#define FACEVER_INSTANTIATE(T)                                                     \
  template Tensor<T> conv2d_forward(const Tensor<T>&, const Tensor<T>&,            \
                                    const Tensor<T>&, std::size_t, std::size_t);   \
  template Tensor<T> conv2d_backward(const Tensor<T>&, const Tensor<T>&,           \
                                     const Tensor<T>&, std::size_t, std::size_t,   \
                                     Tensor<T>&, Tensor<T>&, bool);                \
  template Tensor<T> maxpool2d_forward(const Tensor<T>&, std::size_t, std::size_t, \
                                       std::vector<std::size_t>*);                 \
  template Tensor<T> maxpool2d_backward(const Shape&, std::span<const std::size_t>,\
                                        const Tensor<T>&);                         \
  template Tensor<T> relu_forward(const Tensor<T>&);                               \
  template Tensor<T> relu_backward(const Tensor<T>&, const Tensor<T>&);            \
  template Tensor<T> fc_forward(const Tensor<T>&, const Tensor<T>&,                \
                                const Tensor<T>&);                                 \
  template Tensor<T> fc_backward(const Tensor<T>&, const Tensor<T>&,               \
                                 const Tensor<T>&, Tensor<T>&, Tensor<T>&, bool);  \
  template Tensor<T> softmax(const Tensor<T>&);                                    \
  template SoftmaxXentResult<T> softmax_xent(const Tensor<T>&, std::span<const int>);

FACEVER_INSTANTIATE(float)
FACEVER_INSTANTIATE(double)

#undef FACEVER_INSTANTIATE

}  // namespace facever::kernels
