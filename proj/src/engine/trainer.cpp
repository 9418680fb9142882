#include "facever/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <random>

#include "facever/error.hpp"

namespace facever {

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    throw ConfigError("learning_rate must be > 0");
  }
  if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
  if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("momentum must be in [0,1)");
  if (init.scheme == InitScheme::gaussian && !(init.stddev > 0.0)) {
    throw ConfigError("init stddev must be > 0");
  }
}

template <typename T>
void sgd_step(std::span<LayerParams<T>* const> params, const TrainConfig& config,
              SgdState<T>* state) {
  const T lr = static_cast<T>(config.learning_rate);
  const bool use_momentum = config.momentum > 0.0 && state != nullptr;
  if (use_momentum && state->weight_velocity.size() != params.size()) {
    state->weight_velocity.clear();
    state->bias_velocity.clear();
    for (const auto* p : params) {
      state->weight_velocity.emplace_back(p->weights.shape());
      state->bias_velocity.emplace_back(p->biases.shape());
    }
  }
  const T mu = static_cast<T>(config.momentum);
  auto update = [&](Tensor<T>& w, const Tensor<T>& g, Tensor<T>* v) {
    for (std::size_t i = 0; i < w.size(); ++i) {
      if (v) {
        (*v)[i] = mu * (*v)[i] - lr * g[i];
        w[i] += (*v)[i];
      } else {
        w[i] -= lr * g[i];
      }
    }
  };
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto* p = params[k];
    update(p->weights, p->weight_grad, use_momentum ? &state->weight_velocity[k] : nullptr);
    update(p->biases, p->bias_grad, use_momentum ? &state->bias_velocity[k] : nullptr);
    p->zero_grad();
  }
}

template void sgd_step(std::span<LayerParams<float>* const>, const TrainConfig&,
                       SgdState<float>*);
template void sgd_step(std::span<LayerParams<double>* const>, const TrainConfig&,
                       SgdState<double>*);

Tensor<float> gather_batch(const TrainingSet& data, std::span<const std::size_t> indices) {
  const auto& shape = data.images.shape();
  const std::size_t h = shape[1], w = shape[2], c = shape[3];
  const std::size_t per = h * w * c;
  const std::size_t n_base = data.base_size();
  Tensor<float> batch({indices.size(), h, w, c});
  for (std::size_t b = 0; b < indices.size(); ++b) {
    const std::size_t idx = indices[b];
    const bool flipped = idx >= n_base;
    const float* src = data.images.raw() + (flipped ? idx - n_base : idx) * per;
    float* dst = batch.raw() + b * per;
    if (!flipped) {
      std::memcpy(dst, src, per * sizeof(float));
      continue;
    }
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        std::memcpy(dst + (y * w + x) * c, src + (y * w + (w - 1 - x)) * c, c * sizeof(float));
      }
    }
  }
  return batch;
}

TrainResult train(const ArchitectureSpec& arch, const TrainingSet& data,
                  const TrainConfig& config, const EpochCallback& on_epoch) {
  config.validate();
  const std::size_t classes = arch.num_classes();
  for (int label : data.labels) {
    if (label < 0 || static_cast<std::size_t>(label) >= classes) {
      throw LabelError("training label " + std::to_string(label) + " outside [0," +
                       std::to_string(classes) + ")");
    }
  }
  if (data.images.rank() != 4 || data.images.dim(0) != data.labels.size()) {
    throw DimensionError("training images " + shape_string(data.images.shape()) +
                         " do not match " + std::to_string(data.labels.size()) + " labels");
  }

  TrainResult result{Network<float>(arch), {}, false};
  result.network.initialize(config.init, config.rng_seed);
  if (config.epochs == 0 || data.size() == 0) return result;

  std::mt19937_64 rng(config.rng_seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<std::size_t> order(data.size());
  std::vector<int> batch_labels;
  std::vector<LayerParams<float>*> params = result.network.parameters();
  SgdState<float> state;

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    // Fisher-Yates with raw engine output keeps the order library-independent.
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[rng() % i]);
    }
    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t stop = std::min(order.size(), start + config.batch_size);
      std::span<const std::size_t> idx(order.data() + start, stop - start);
      Tensor<float> batch = gather_batch(data, idx);
      batch_labels.clear();
      for (auto i : idx) batch_labels.push_back(data.labels[i % data.base_size()]);
      const auto step = result.network.forward_backward(batch, batch_labels);
      if (!std::isfinite(step.loss)) {
        throw TrainingDiverged("loss became non-finite in epoch " + std::to_string(epoch));
      }
      loss_sum += step.loss * static_cast<double>(idx.size());
      correct += step.correct;
      sgd_step<float>(params, config, &state);
    }
    EpochStats stats{epoch, loss_sum / static_cast<double>(order.size()),
                     static_cast<double>(correct) / static_cast<double>(order.size())};
    result.history.push_back(stats);
    if (on_epoch) on_epoch(stats);

    const std::size_t patience = config.early_stop_patience;
    if (patience > 0 && result.history.size() > patience) {
      const double before = result.history[result.history.size() - 1 - patience].loss;
      if (before - stats.loss < config.early_stop_delta) {
        result.early_stopped = true;
        break;
      }
    }
  }
  return result;
}

}  // namespace facever
