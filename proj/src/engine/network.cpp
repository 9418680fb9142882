#include "facever/network.hpp"

#include <cmath>
#include <random>

#include "facever/error.hpp"
#include "facever/kernels.hpp"

namespace facever {

template <typename T>
Network<T>::Network(ArchitectureSpec spec) : spec_(std::move(spec)) {
  const auto trace = infer_shapes(spec_);
  Shape in = spec_.input_shape();
  for (std::size_t i = 0; i < spec_.layers.size(); ++i) {
    const auto& desc = spec_.layers[i];
    if (const auto* c = std::get_if<ConvDesc>(&desc)) {
      layers_.emplace_back(ConvLayer{*c, LayerParams<T>({c->filters, c->kernel, c->kernel, in.back()},
                                                        c->filters)});
    } else if (const auto* p = std::get_if<PoolDesc>(&desc)) {
      layers_.emplace_back(PoolLayer{*p});
    } else if (std::holds_alternative<ReluDesc>(desc)) {
      layers_.emplace_back(ReluLayer{});
    } else if (const auto* f = std::get_if<FcDesc>(&desc)) {
      layers_.emplace_back(FcLayer{*f, LayerParams<T>({f->units, shape_size(in)}, f->units)});
    } else if (i + 1 != spec_.layers.size()) {
      throw ArchitectureError("softmax must be the final layer of " + spec_.name);
    }
    in = trace[i];
  }
}

template <typename T>
void Network<T>::initialize(const InitConfig& init, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (auto* p : parameters()) {
    double stddev = init.stddev;
    if (init.scheme == InitScheme::he) {
      const std::size_t fan_in = p->weights.size() / p->weights.dim(0);
      stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
    }
    std::normal_distribution<double> normal(0.0, stddev);
    for (auto& w : p->weights.data()) w = static_cast<T>(normal(rng));
    p->biases.fill(T{0});
    p->zero_grad();
  }
}

template <typename T>
void Network<T>::check_input(const Tensor<T>& batch) const {
  const Shape expected = spec_.input_shape();
  if (batch.rank() != 4 || !std::equal(expected.begin(), expected.end(), batch.shape().begin() + 1)) {
    throw DimensionError(spec_.name + " expects [N," + std::to_string(expected[0]) + "," +
                         std::to_string(expected[1]) + "," + std::to_string(expected[2]) +
                         "] input, got " + shape_string(batch.shape()));
  }
}

template <typename T>
Tensor<T> Network<T>::run(const Tensor<T>& batch, std::size_t stop,
                          std::vector<Tensor<T>>* inputs,
                          std::vector<std::vector<std::size_t>>* argmax) const {
  check_input(batch);
  Tensor<T> x = batch;
  for (std::size_t i = 0; i < stop; ++i) {
    std::vector<std::size_t>* cache = argmax ? &(*argmax)[i] : nullptr;
    Tensor<T> y = std::visit(
        [&](const auto& layer) -> Tensor<T> {
          using L = std::decay_t<decltype(layer)>;
          if constexpr (std::is_same_v<L, ConvLayer>) {
            return kernels::conv2d_forward(x, layer.params.weights, layer.params.biases,
                                           layer.desc.stride, layer.desc.pad);
          } else if constexpr (std::is_same_v<L, PoolLayer>) {
            return kernels::maxpool2d_forward(x, layer.desc.window, layer.desc.stride, cache);
          } else if constexpr (std::is_same_v<L, ReluLayer>) {
            return kernels::relu_forward(x);
          } else {
            const std::size_t n = x.dim(0);
            return kernels::fc_forward(x.reshaped({n, x.size() / std::max<std::size_t>(n, 1)}),
                                       layer.params.weights, layer.params.biases);
          }
        },
        layers_[i]);
    if (inputs) {
      (*inputs)[i] = std::move(x);
    }
    x = std::move(y);
  }
  return x;
}

template <typename T>
Tensor<T> Network<T>::forward(const Tensor<T>& batch) const {
  return run(batch, layers_.size(), nullptr, nullptr);
}

template <typename T>
Tensor<T> Network<T>::features(const Tensor<T>& batch, FeatureTap tap) const {
  std::size_t stop = feature_layer_index(spec_) + 1;
  if (tap == FeatureTap::post_relu) {
    if (stop >= layers_.size() || !std::holds_alternative<ReluLayer>(layers_[stop])) {
      throw ArchitectureError(spec_.name + " feature layer is not followed by a ReLU");
    }
    ++stop;
  }
  return run(batch, stop, nullptr, nullptr);
}

template <typename T>
typename Network<T>::StepResult Network<T>::forward_backward(const Tensor<T>& batch,
                                                             std::span<const int> labels) {
  const std::size_t count = layers_.size();
  std::vector<Tensor<T>> inputs(count);
  std::vector<std::vector<std::size_t>> argmax(count);
  Tensor<T> logits = run(batch, count, &inputs, &argmax);
  auto xent = kernels::softmax_xent(logits, labels);

  Tensor<T> grad = std::move(xent.grad);
  for (std::size_t i = count; i-- > 0;) {
    const bool need_input_grad = i > 0;
    const Tensor<T>& in = inputs[i];
    grad = std::visit(
        [&](auto& layer) -> Tensor<T> {
          using L = std::decay_t<decltype(layer)>;
          if constexpr (std::is_same_v<L, ConvLayer>) {
            return kernels::conv2d_backward(in, layer.params.weights, grad, layer.desc.stride,
                                            layer.desc.pad, layer.params.weight_grad,
                                            layer.params.bias_grad, need_input_grad);
          } else if constexpr (std::is_same_v<L, PoolLayer>) {
            return kernels::maxpool2d_backward(in.shape(), argmax[i], grad);
          } else if constexpr (std::is_same_v<L, ReluLayer>) {
            return kernels::relu_backward(in, grad);
          } else {
            const std::size_t n = in.dim(0);
            auto flat = in.reshaped({n, in.size() / std::max<std::size_t>(n, 1)});
            auto g = kernels::fc_backward(flat, layer.params.weights, grad,
                                          layer.params.weight_grad, layer.params.bias_grad,
                                          need_input_grad);
            return need_input_grad ? std::move(g).reshaped(in.shape()) : std::move(g);
          }
        },
        layers_[i]);
  }
  return {xent.loss, xent.correct};
}

template <typename T>
std::vector<LayerParams<T>*> Network<T>::parameters() {
  std::vector<LayerParams<T>*> out;
  for (auto& layer : layers_) {
    if (auto* c = std::get_if<ConvLayer>(&layer)) out.push_back(&c->params);
    if (auto* f = std::get_if<FcLayer>(&layer)) out.push_back(&f->params);
  }
  return out;
}

template <typename T>
std::vector<const LayerParams<T>*> Network<T>::parameters() const {
  std::vector<const LayerParams<T>*> out;
  for (const auto& layer : layers_) {
    if (const auto* c = std::get_if<ConvLayer>(&layer)) out.push_back(&c->params);
    if (const auto* f = std::get_if<FcLayer>(&layer)) out.push_back(&f->params);
  }
  return out;
}

template <typename T>
void Network<T>::zero_grad() {
  for (auto* p : parameters()) p->zero_grad();
}

template <typename T>
std::size_t Network<T>::parameter_count() const {
  std::size_t total = 0;
  for (const auto* p : parameters()) total += p->count();
  return total;
}

template class Network<float>;
template class Network<double>;

}  // namespace facever
