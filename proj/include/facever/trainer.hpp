#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "facever/architecture.hpp"
#include "facever/network.hpp"

namespace facever {

struct TrainConfig {
  double learning_rate = 0.001;
  std::size_t batch_size = 100;
  std::size_t epochs = 40;
  std::uint64_t rng_seed = 0;
  // 0 gives the plain update w <- w - lr * grad.
  double momentum = 0.0;
  InitConfig init;
  // Stop once loss[e-patience] - loss[e] < early_stop_delta. patience 0 disables.
  double early_stop_delta = 1e-4;
  std::size_t early_stop_patience = 3;

  void validate() const;
};

/// Velocity buffers for momentum; unused when momentum == 0.
template <typename T>
struct SgdState {
  std::vector<Tensor<T>> weight_velocity;
  std::vector<Tensor<T>> bias_velocity;
};

/// w <- w - lr * grad (with optional momentum), then zero the gradients.
template <typename T>
void sgd_step(std::span<LayerParams<T>* const> params, const TrainConfig& config,
              SgdState<T>* state = nullptr);

/// Mean-subtracted NHWC images with identity labels. With flip_augment the
/// sample space doubles: index i >= N is the horizontal mirror of image i - N.
struct TrainingSet {
  Tensor<float> images;
  std::vector<int> labels;
  bool flip_augment = false;

  std::size_t base_size() const { return labels.size(); }
  std::size_t size() const { return labels.size() * (flip_augment ? 2 : 1); }
};

struct EpochStats {
  std::size_t epoch = 0;  // 1-based
  double loss = 0.0;
  double accuracy = 0.0;
};

struct TrainResult {
  Network<float> network;
  std::vector<EpochStats> history;
  bool early_stopped = false;
};

using EpochCallback = std::function<void(const EpochStats&)>;

/// Copies samples `indices` of the set into one batch tensor.
Tensor<float> gather_batch(const TrainingSet& data, std::span<const std::size_t> indices);

/// Trains from a fresh initialization seeded by config.rng_seed. With one
/// thread the result is bitwise reproducible.
TrainResult train(const ArchitectureSpec& arch, const TrainingSet& data,
                  const TrainConfig& config, const EpochCallback& on_epoch = {});

}  // namespace facever
