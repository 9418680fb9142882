#include <cmath>
#include <numeric>
#include <random>

#include "doctest.h"
#include "facever/architecture.hpp"
#include "facever/error.hpp"
#include "facever/kernels.hpp"
#include "facever/network.hpp"
#include "facever/trainer.hpp"
#include "support/gradcheck.hpp"
#include "support/random.hpp"

using namespace facever;
using facever::testing::max_abs_diff;
using facever::testing::random_tensor;

namespace {

// Direct six-loop convolution, independent of both library paths.
Tensor<double> six_loop_conv(const Tensor<double>& x, const Tensor<double>& w,
                             const Tensor<double>& b) {
  const std::size_t n = x.dim(0), h = x.dim(1), wd = x.dim(2), cin = x.dim(3);
  const std::size_t cout = w.dim(0), k = w.dim(1);
  const std::size_t oh = h - k + 1, ow = wd - k + 1;
  Tensor<double> y({n, oh, ow, cout});
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t i = 0; i < oh; ++i)
      for (std::size_t j = 0; j < ow; ++j)
        for (std::size_t o = 0; o < cout; ++o) {
          double acc = b[o];
          for (std::size_t u = 0; u < k; ++u)
            for (std::size_t v = 0; v < k; ++v)
              for (std::size_t c = 0; c < cin; ++c) acc += x.at(s, i + u, j + v, c) * w.at(o, u, v, c);
          y.at(s, i, j, o) = acc;
        }
  return y;
}

TrainingSet blob_dataset(std::size_t per_class, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> noise(0.0f, 0.05f);
  TrainingSet set;
  set.images = Tensor<float>({2 * per_class, 58, 58, 1});
  for (std::size_t i = 0; i < 2 * per_class; ++i) {
    const int label = static_cast<int>(i % 2);
    const double cy = label ? 40.0 : 17.0, cx = label ? 40.0 : 17.0;
    for (std::size_t y = 0; y < 58; ++y)
      for (std::size_t x = 0; x < 58; ++x) {
        const double d2 = (y - cy) * (y - cy) + (x - cx) * (x - cx);
        set.images.at(i, y, x, 0) = static_cast<float>(std::exp(-d2 / 50.0) - 0.1) + noise(rng);
      }
    set.labels.push_back(label);
  }
  return set;
}

TrainConfig quick_config() {
  TrainConfig cfg;
  cfg.learning_rate = 0.01;
  cfg.momentum = 0.9;
  cfg.batch_size = 10;
  cfg.epochs = 5;
  cfg.init.scheme = InitScheme::he;
  cfg.early_stop_patience = 0;
  cfg.rng_seed = 3;
  return cfg;
}

}  // namespace

TEST_SUITE("conv2d") {
  TEST_CASE("degenerate 1x1 convolution is w*x+b") {
    Tensor<double> x({1, 1, 1, 1}, {2.0});
    Tensor<double> w({1, 1, 1, 1}, {3.0});
    Tensor<double> b({1}, {0.5});
    const auto y = kernels::conv2d_forward(x, w, b, 1, 0);
    CHECK(y.shape() == Shape{1, 1, 1, 1});
    CHECK(y[0] == doctest::Approx(6.5));
  }

  TEST_CASE("CNN-M conv1 output extent") {
    Tensor<float> x({1, 58, 58, 3});
    Tensor<float> w({16, 5, 5, 3});
    Tensor<float> b({16});
    CHECK(kernels::conv2d_forward(x, w, b, 1, 0).shape() == Shape{1, 54, 54, 16});
    CHECK(kernels::conv_output_extent(58, 5, 1, 0) == 54);
  }

  TEST_CASE("matches the six-loop oracle on a random 1x8x8x2 case") {
    std::mt19937_64 rng(11);
    const auto x = random_tensor<double>({1, 8, 8, 2}, rng);
    const auto w = random_tensor<double>({3, 3, 3, 2}, rng);
    const auto b = random_tensor<double>({3}, rng);
    const auto expected = six_loop_conv(x, w, b);
    CHECK(max_abs_diff(kernels::conv2d_forward(x, w, b, 1, 0), expected) < 1e-6);
    CHECK(max_abs_diff(kernels::reference::conv2d_forward(x, w, b, 1, 0), expected) < 1e-6);
  }

  TEST_CASE("optimized forward and backward equal the reference on random cases") {
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 100; ++trial) {
      const std::size_t n = testing::uniform_index(rng, 1, 3);
      const std::size_t k = testing::uniform_index(rng, 1, 4);
      const std::size_t pad = testing::uniform_index(rng, 0, 2);
      const std::size_t stride = testing::uniform_index(rng, 1, 3);
      const std::size_t h = testing::uniform_index(rng, k, 9);
      const std::size_t w = testing::uniform_index(rng, k, 9);
      const std::size_t cin = testing::uniform_index(rng, 1, 4);
      const std::size_t cout = testing::uniform_index(rng, 1, 5);
      const auto x = random_tensor<double>({n, h, w, cin}, rng);
      const auto wt = random_tensor<double>({cout, k, k, cin}, rng);
      const auto b = random_tensor<double>({cout}, rng);
      const auto fast = kernels::conv2d_forward(x, wt, b, stride, pad);
      const auto slow = kernels::reference::conv2d_forward(x, wt, b, stride, pad);
      REQUIRE(fast.shape() == slow.shape());
      CHECK(max_abs_diff(fast, slow) < 1e-6);

      const auto g = random_tensor<double>(fast.shape(), rng);
      Tensor<double> gw1(wt.shape()), gb1(b.shape()), gw2(wt.shape()), gb2(b.shape());
      const auto gx1 = kernels::conv2d_backward(x, wt, g, stride, pad, gw1, gb1);
      const auto gx2 = kernels::reference::conv2d_backward(x, wt, g, stride, pad, gw2, gb2);
      CHECK(max_abs_diff(gx1, gx2) < 1e-6);
      CHECK(max_abs_diff(gw1, gw2) < 1e-6);
      CHECK(max_abs_diff(gb1, gb2) < 1e-6);
    }
  }

  TEST_CASE("forward is linear in the input up to the bias") {
    std::mt19937_64 rng(9);
    const auto x = random_tensor<double>({2, 7, 7, 3}, rng);
    const auto y = random_tensor<double>({2, 7, 7, 3}, rng);
    const auto w = random_tensor<double>({4, 3, 3, 3}, rng);
    const auto b = random_tensor<double>({4}, rng);
    const double a = 1.7, c = -0.4;
    Tensor<double> mix(x.shape());
    for (std::size_t i = 0; i < mix.size(); ++i) mix[i] = a * x[i] + c * y[i];
    const auto lhs = kernels::conv2d_forward(mix, w, b, 1, 1);
    const auto cx = kernels::conv2d_forward(x, w, b, 1, 1);
    const auto cy = kernels::conv2d_forward(y, w, b, 1, 1);
    double worst = 0.0;
    for (std::size_t i = 0; i < lhs.size(); ++i) {
      const double bias = b[i % 4];
      const double rhs = a * (cx[i] - bias) + c * (cy[i] - bias) + bias;
      worst = std::max(worst, std::abs(lhs[i] - rhs));
    }
    CHECK(worst < 1e-6);
  }

  TEST_CASE("errors") {
    Tensor<double> x({1, 4, 4, 2});
    Tensor<double> w({1, 3, 3, 1});
    Tensor<double> b({1});
    CHECK_THROWS_AS(kernels::conv2d_forward(x, w, b, 1, 0), DimensionError);
    Tensor<double> w2({1, 3, 3, 2});
    CHECK_THROWS_AS(kernels::conv2d_forward(x, w2, b, 0, 0), ConfigError);
    Tensor<double> w3({1, 7, 7, 2});
    CHECK_THROWS_AS(kernels::conv2d_forward(x, w3, b, 1, 1), DimensionError);
  }

  TEST_CASE("gradient check") {
    std::mt19937_64 rng(21);
    CHECK(testing::check_conv(rng, 2, 6, 5, 2, 3, 3, 1, 1).worst() < 1e-4);
    CHECK(testing::check_conv(rng, 1, 7, 7, 3, 2, 3, 2, 0).worst() < 1e-4);
  }
}

TEST_SUITE("maxpool2d") {
  TEST_CASE("2x2 window selects the max") {
    Tensor<double> x({1, 2, 2, 1}, {1, 2, 3, 4});
    std::vector<std::size_t> argmax;
    const auto y = kernels::maxpool2d_forward(x, 2, 2, &argmax);
    CHECK(y.shape() == Shape{1, 1, 1, 1});
    CHECK(y[0] == 4.0);
    Tensor<double> g({1, 1, 1, 1}, {2.5});
    const auto gx = kernels::maxpool2d_backward(x.shape(), argmax, g);
    CHECK(gx.to_vector() == std::vector<double>{0, 0, 0, 2.5});
  }

  TEST_CASE("partial edge windows are dropped") {
    Tensor<float> x({1, 5, 5, 48});
    CHECK(kernels::maxpool2d_forward<float>(x, 2, 2, nullptr).shape() == Shape{1, 2, 2, 48});
    CHECK(kernels::pool_output_extent(29, 3, 2) == 14);
  }

  TEST_CASE("window larger than input") {
    Tensor<double> x({1, 2, 2, 1});
    CHECK_THROWS_AS(kernels::maxpool2d_forward<double>(x, 3, 3, nullptr), DimensionError);
  }

  TEST_CASE("backward conserves upstream gradient mass") {
    std::mt19937_64 rng(4);
    for (int trial = 0; trial < 20; ++trial) {
      const auto x = random_tensor<double>({2, 9, 9, 3}, rng);
      std::vector<std::size_t> argmax;
      const std::size_t window = testing::uniform_index(rng, 2, 3);
      const std::size_t stride = testing::uniform_index(rng, 1, 3);
      const auto y = kernels::maxpool2d_forward(x, window, stride, &argmax);
      const auto g = random_tensor<double>(y.shape(), rng);
      const auto gx = kernels::maxpool2d_backward(x.shape(), argmax, g);
      const double up = std::accumulate(g.data().begin(), g.data().end(), 0.0);
      const double down = std::accumulate(gx.data().begin(), gx.data().end(), 0.0);
      CHECK(down == doctest::Approx(up).epsilon(1e-12));
      for (std::size_t i = 0; i < y.size(); ++i) CHECK(y[i] == x[argmax[i]]);
    }
  }

  TEST_CASE("gradient check") {
    std::mt19937_64 rng(8);
    CHECK(testing::check_maxpool(rng, 2, 7, 7, 2, 3, 2).worst() < 1e-4);
  }
}

TEST_SUITE("relu") {
  TEST_CASE("forward and backward") {
    Tensor<double> x({3}, {-1, 0, 2});
    CHECK(kernels::relu_forward(x).to_vector() == std::vector<double>{0, 0, 2});
    Tensor<double> g({3}, {5, 5, 5});
    CHECK(kernels::relu_backward(x, g).to_vector() == std::vector<double>{0, 0, 5});
  }
  TEST_CASE("gradient check") {
    std::mt19937_64 rng(2);
    CHECK(testing::check_relu(rng, 64).worst() < 1e-4);
  }
}

TEST_SUITE("fully_connected") {
  TEST_CASE("identity weights pass the input through") {
    std::mt19937_64 rng(1);
    const auto x = random_tensor<double>({3, 4}, rng);
    Tensor<double> w({4, 4});
    for (std::size_t i = 0; i < 4; ++i) w[i * 4 + i] = 1.0;
    Tensor<double> b({4});
    CHECK(kernels::fc_forward(x, w, b) == x);
  }
  TEST_CASE("CNN-M classifier input and parameter count") {
    auto spec = build_arch("CNN-M", 3, 10);
    const auto idx = feature_layer_index(spec);
    const auto trace = infer_shapes(spec);
    CHECK(trace[idx - 1] == Shape{2, 2, 48});
    Network<float> net(spec);
    const auto& fc = std::get<Network<float>::FcLayer>(net.layers()[idx]);
    CHECK(fc.params.count() == 30880);
  }
  TEST_CASE("input width mismatch") {
    Tensor<double> x({2, 5}), w({3, 4}), b({3});
    CHECK_THROWS_AS(kernels::fc_forward(x, w, b), DimensionError);
  }
  TEST_CASE("optimized path equals reference") {
    std::mt19937_64 rng(6);
    const auto x = random_tensor<double>({4, 9}, rng);
    const auto w = random_tensor<double>({5, 9}, rng);
    const auto b = random_tensor<double>({5}, rng);
    CHECK(max_abs_diff(kernels::fc_forward(x, w, b), kernels::reference::fc_forward(x, w, b)) < 1e-12);
  }
  TEST_CASE("gradient check") {
    std::mt19937_64 rng(3);
    CHECK(testing::check_fc(rng, 3, 6, 4).worst() < 1e-4);
  }
}

TEST_SUITE("softmax_xent") {
  TEST_CASE("two equal logits give ln 2") {
    Tensor<double> logits({1, 2}, {0, 0});
    std::vector<int> labels{0};
    CHECK(kernels::softmax_xent(logits, labels).loss == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  }
  TEST_CASE("uniform logits over 4000 classes give ln 4000") {
    Tensor<float> logits({2, 4000}, 0.25f);
    std::vector<int> labels{7, 3999};
    const auto res = kernels::softmax_xent(logits, labels);
    CHECK(res.loss == doctest::Approx(std::log(4000.0)).epsilon(1e-6));
    CHECK(res.loss == doctest::Approx(8.294).epsilon(1e-4));
  }
  TEST_CASE("out of range label") {
    Tensor<double> logits({1, 3});
    std::vector<int> labels{3};
    CHECK_THROWS_AS(kernels::softmax_xent(logits, labels), LabelError);
    labels[0] = -1;
    CHECK_THROWS_AS(kernels::softmax_xent(logits, labels), LabelError);
  }
  TEST_CASE("rows are distributions and loss is nonnegative") {
    std::mt19937_64 rng(12);
    for (int t = 0; t < 20; ++t) {
      const auto logits = random_tensor<double>({4, 9}, rng, -30, 30);
      const auto p = kernels::softmax(logits);
      for (std::size_t i = 0; i < 4; ++i) {
        double s = 0;
        for (std::size_t j = 0; j < 9; ++j) {
          CHECK(p[i * 9 + j] >= 0.0);
          s += p[i * 9 + j];
        }
        CHECK(std::abs(s - 1.0) < 1e-6);
      }
      std::vector<int> labels{0, 1, 2, 8};
      CHECK(kernels::softmax_xent(logits, labels).loss >= 0.0);
    }
  }
  TEST_CASE("gradient check on 3x7 logits") {
    std::mt19937_64 rng(17);
    CHECK(testing::check_softmax_xent(rng, 3, 7).worst() < 1e-5);
  }
}

TEST_SUITE("sgd") {
  TEST_CASE("plain update and zeroed gradients") {
    LayerParams<double> p({1}, 1);
    p.weights[0] = 1.0;
    p.weight_grad[0] = 2.0;
    TrainConfig cfg;
    std::vector<LayerParams<double>*> params{&p};
    sgd_step<double>(params, cfg);
    CHECK(p.weights[0] == doctest::Approx(0.998).epsilon(1e-12));
    CHECK(p.weight_grad[0] == 0.0);
    sgd_step<double>(params, cfg);
    CHECK(p.weights[0] == doctest::Approx(0.998).epsilon(1e-12));
  }
  TEST_CASE("two steps on 0.5 w^2 strictly decrease the loss") {
    LayerParams<double> p({1}, 1);
    p.weights[0] = 3.0;
    TrainConfig cfg;
    std::vector<LayerParams<double>*> params{&p};
    double loss = 0.5 * 9.0;
    for (int step = 0; step < 2; ++step) {
      p.weight_grad[0] = p.weights[0];
      sgd_step<double>(params, cfg);
      const double next = 0.5 * p.weights[0] * p.weights[0];
      CHECK(next < loss);
      loss = next;
    }
  }
  TEST_CASE("config validation") {
    TrainConfig cfg;
    cfg.learning_rate = 0.0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg.learning_rate = 0.001;
    cfg.batch_size = 0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
  }
}

TEST_SUITE("network") {
  TEST_CASE("features are the 160-unit layer and match a layer-by-layer trace") {
    auto spec = build_arch("CNN-S", 1, 5);
    Network<double> net(spec);
    net.initialize({InitScheme::he, 0.0}, 4);
    std::mt19937_64 rng(1);
    const auto x = random_tensor<double>({2, 58, 58, 1}, rng);
    const auto f = net.features(x);
    CHECK(f.shape() == Shape{2, 160});

    Tensor<double> t = x;
    std::size_t fc_seen = 0;
    for (const auto& layer : net.layers()) {
      if (const auto* c = std::get_if<Network<double>::ConvLayer>(&layer)) {
        t = kernels::reference::conv2d_forward(t, c->params.weights, c->params.biases, c->desc.stride, c->desc.pad);
      } else if (const auto* p = std::get_if<Network<double>::PoolLayer>(&layer)) {
        t = kernels::maxpool2d_forward<double>(t, p->desc.window, p->desc.stride, nullptr);
      } else if (std::holds_alternative<Network<double>::ReluLayer>(layer)) {
        t = kernels::relu_forward(t);
        if (fc_seen == 1) break;
      } else {
        const auto& fc = std::get<Network<double>::FcLayer>(layer);
        t = kernels::reference::fc_forward(t.reshaped({2, t.size() / 2}), fc.params.weights, fc.params.biases);
        ++fc_seen;
      }
    }
    CHECK(max_abs_diff(t, f) < 1e-10);
  }

  TEST_CASE("zero weights give a zero feature; copies give equal features") {
    Network<float> net(build_arch("CNN-M", 3, 4));
    std::mt19937_64 rng(2);
    auto x = random_tensor<float>({1, 58, 58, 3}, rng);
    const auto f = net.features(x);
    for (float v : f.data()) CHECK(v == 0.0f);
    net.initialize({}, 1);
    Tensor<float> pair({2, 58, 58, 3});
    std::copy(x.data().begin(), x.data().end(), pair.data().begin());
    std::copy(x.data().begin(), x.data().end(), pair.data().begin() + x.size());
    const auto g = net.features(pair);
    for (std::size_t i = 0; i < 160; ++i) CHECK(g[i] == g[160 + i]);
  }

  TEST_CASE("channel mismatch") {
    Network<float> net(build_arch("CNN-M", 3, 4));
    Tensor<float> grey({1, 58, 58, 1});
    CHECK_THROWS_AS(net.features(grey), DimensionError);
  }
}

TEST_SUITE("train") {
  TEST_CASE("separable blobs reach 95% training accuracy in 5 epochs") {
    const auto data = blob_dataset(60, 1);
    const auto result = train(build_arch("CNN-M", 1, 2), data, quick_config());
    REQUIRE(result.history.size() == 5);
    CHECK(result.history.back().accuracy >= 0.95);
  }

  TEST_CASE("zero epochs returns the initialized network") {
    const auto data = blob_dataset(5, 2);
    auto cfg = quick_config();
    cfg.epochs = 0;
    const auto arch = build_arch("CNN-S", 1, 2);
    const auto result = train(arch, data, cfg);
    Network<float> fresh(arch);
    fresh.initialize(cfg.init, cfg.rng_seed);
    CHECK(result.history.empty());
    const auto a = result.network.parameters();
    const auto b = fresh.parameters();
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i]->weights == b[i]->weights);
  }

  TEST_CASE("same seed and data give a bitwise identical model") {
    const auto data = blob_dataset(10, 3);
    auto cfg = quick_config();
    cfg.epochs = 2;
    const auto arch = build_arch("CNN-S", 1, 2);
    const auto r1 = train(arch, data, cfg);
    const auto r2 = train(arch, data, cfg);
    const auto a = r1.network.parameters();
    const auto b = r2.network.parameters();
    for (std::size_t i = 0; i < a.size(); ++i) {
      CHECK(a[i]->weights == b[i]->weights);
      CHECK(a[i]->biases == b[i]->biases);
    }
  }

  TEST_CASE("labels outside the softmax width are rejected") {
    auto data = blob_dataset(2, 4);
    data.labels[0] = 5;
    CHECK_THROWS_AS(train(build_arch("CNN-S", 1, 2), data, quick_config()), LabelError);
  }

  TEST_CASE("a diverging run names the epoch") {
    const auto data = blob_dataset(10, 5);
    auto cfg = quick_config();
    cfg.learning_rate = 1e12;
    cfg.momentum = 0.0;
    try {
      train(build_arch("CNN-S", 1, 2), data, cfg);
      FAIL("expected divergence");
    } catch (const TrainingDiverged& e) {
      CHECK(std::string(e.what()).find("epoch") != std::string::npos);
    }
  }
}
