#pragma once

#include <cstdint>
#include <span>
#include <variant>
#include <vector>

#include "facever/architecture.hpp"
#include "facever/tensor.hpp"

namespace facever {

template <typename T>
struct LayerParams {
  Tensor<T> weights;
  Tensor<T> biases;
  Tensor<T> weight_grad;
  Tensor<T> bias_grad;

  LayerParams() = default;
  LayerParams(Shape weight_shape, std::size_t outputs)
      : weights(weight_shape), biases({outputs}), weight_grad(weight_shape),
        bias_grad({outputs}) {}

  std::size_t count() const { return weights.size() + biases.size(); }
  void zero_grad() {
    weight_grad.fill(T{0});
    bias_grad.fill(T{0});
  }
};

enum class InitScheme { gaussian, he };

struct InitConfig {
  InitScheme scheme = InitScheme::gaussian;
  double stddev = 0.01;  // used by the gaussian scheme
};

/// Which side of the feature layer's ReLU to read.
enum class FeatureTap { post_relu, pre_relu };

template <typename T>
class Network {
 public:
  struct ConvLayer {
    ConvDesc desc;
    LayerParams<T> params;
  };
  struct PoolLayer {
    PoolDesc desc;
  };
  struct ReluLayer {};
  struct FcLayer {
    FcDesc desc;
    LayerParams<T> params;
  };
  using Layer = std::variant<ConvLayer, PoolLayer, ReluLayer, FcLayer>;

  struct StepResult {
    double loss = 0.0;
    std::size_t correct = 0;
  };

  Network() = default;
  /// Parameters start at zero; call initialize() for random weights.
  explicit Network(ArchitectureSpec spec);

  void initialize(const InitConfig& init, std::uint64_t seed);

  const ArchitectureSpec& spec() const noexcept { return spec_; }
  std::span<const Layer> layers() const noexcept { return layers_; }

  /// Logits for an NHWC batch. Does not touch any mutable state, so a
  /// frozen network can be shared by concurrent callers.
  Tensor<T> forward(const Tensor<T>& batch) const;

  /// Activations of the 160-unit layer, one row per sample.
  Tensor<T> features(const Tensor<T>& batch,
                     FeatureTap tap = FeatureTap::post_relu) const;

  /// Forward + softmax cross-entropy + backward. Gradients accumulate into
  /// each layer's params until zero_grad() / sgd_step().
  StepResult forward_backward(const Tensor<T>& batch, std::span<const int> labels);

  std::vector<LayerParams<T>*> parameters();
  std::vector<const LayerParams<T>*> parameters() const;
  void zero_grad();
  std::size_t parameter_count() const;

  template <typename U>
  Network<U> cast() const;

 private:
  void check_input(const Tensor<T>& batch) const;
  Tensor<T> run(const Tensor<T>& batch, std::size_t stop,
                std::vector<Tensor<T>>* inputs,
                std::vector<std::vector<std::size_t>>* argmax) const;

  ArchitectureSpec spec_;
  std::vector<Layer> layers_;

  template <typename U>
  friend class Network;
};

template <typename T>
template <typename U>
Network<U> Network<T>::cast() const {
  Network<U> out(spec_);
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    auto copy = [](const LayerParams<T>& from, LayerParams<U>& to) {
      to.weights = from.weights.template cast<U>();
      to.biases = from.biases.template cast<U>();
      to.weight_grad = from.weight_grad.template cast<U>();
      to.bias_grad = from.bias_grad.template cast<U>();
    };
    if (const auto* c = std::get_if<ConvLayer>(&layers_[i])) {
      copy(c->params, std::get<typename Network<U>::ConvLayer>(out.layers_[i]).params);
    } else if (const auto* f = std::get_if<FcLayer>(&layers_[i])) {
      copy(f->params, std::get<typename Network<U>::FcLayer>(out.layers_[i]).params);
    }
  }
  return out;
}

extern template class Network<float>;
extern template class Network<double>;

}  // namespace facever
