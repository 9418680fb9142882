#include <cmath>
#include <random>
#include <variant>

#include "doctest.h"
#include "facever/error.hpp"
#include "facever/features.hpp"
#include "facever/kernels.hpp"
#include "support/oracles.hpp"
#include "support/random.hpp"

using namespace facever;
using facever::testing::random_tensor;
using facever::testing::random_vector;

namespace {

FaceModel small_model(std::size_t channels, std::uint64_t seed, int patch = -1) {
  FaceModel m;
  m.network = Network<float>(build_arch("cnn-s", channels, 8));
  m.network.initialize({InitScheme::he, 0.01}, seed);
  std::mt19937_64 rng(seed + 1);
  m.mean_image = random_tensor<float>({kFaceSize, kFaceSize, channels}, rng, 0.3, 0.6);
  m.patch_index = patch;
  m.network_id = network_id_for_patch(patch);
  return m;
}

FaceSet random_faces(std::size_t n, std::size_t channels, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < n; ++i) ids.push_back("Face_" + std::to_string(i));
  return FaceSet(random_tensor<float>({n, kFaceSize, kFaceSize, channels}, rng, 0.0, 1.0), ids);
}

// Layer-by-layer single-sample pass through the serial reference kernels.
std::vector<double> traced_feature(const FaceModel& model, const Image& image) {
  Tensor<float> x = subtract_mean(image, model.mean_image).reshaped({1, kFaceSize, kFaceSize, image.dim(2)});
  const auto layers = model.network.layers();
  const std::size_t feature_layer = feature_layer_index(model.network.spec());
  for (std::size_t i = 0; i <= feature_layer + 1 && i < layers.size(); ++i) {
    const auto& layer = layers[i];
    if (const auto* c = std::get_if<Network<float>::ConvLayer>(&layer)) {
      x = kernels::reference::conv2d_forward(x, c->params.weights, c->params.biases, c->desc.stride, c->desc.pad);
    } else if (const auto* p = std::get_if<Network<float>::PoolLayer>(&layer)) {
      x = kernels::maxpool2d_forward(x, p->desc.window, p->desc.stride, nullptr);
    } else if (std::holds_alternative<Network<float>::ReluLayer>(layer)) {
      x = kernels::relu_forward(x);
    } else if (const auto* f = std::get_if<Network<float>::FcLayer>(&layer)) {
      x = kernels::reference::fc_forward(x, f->params.weights, f->params.biases);
    }
  }
  return {x.data().begin(), x.data().end()};
}

}  // namespace

TEST_CASE("zero-weight model gives a zero feature") {
  FaceModel m;
  m.network = Network<float>(build_arch("cnn-m", 1, 4));
  m.mean_image = make_image(kFaceSize, kFaceSize, 1, 0.5f);
  std::mt19937_64 rng(1);
  const auto f = extract_feature(m, random_tensor<float>({kFaceSize, kFaceSize, 1}, rng, 0, 1));
  REQUIRE(f.size() == kFeatureLength);
  for (double v : f) CHECK(v == 0.0);
}

TEST_CASE("extraction matches a traced forward pass and is deterministic") {
  const auto model = small_model(3, 11);
  const auto faces = random_faces(3, 3, 12);
  for (std::size_t r = 0; r < faces.size(); ++r) {
    const auto f = extract_feature(model, faces.face(r));
    const auto copy = extract_feature(model, Image(faces.face(r)));
    CHECK(f == copy);
    const auto oracle = traced_feature(model, faces.face(r));
    REQUIRE(oracle.size() == f.size());
    double scale = 1e-6;
    for (double v : oracle) scale = std::max(scale, std::abs(v));
    for (std::size_t i = 0; i < f.size(); ++i) CHECK(std::abs(f[i] - oracle[i]) <= 1e-4 * scale);
    bool any_positive = false;
    for (double v : f) {
      CHECK(v >= 0.0);
      any_positive |= v > 0.0;
    }
    CHECK(any_positive);
  }
}

TEST_CASE("pre-activation tap differs from post-ReLU only where negative") {
  const auto model = small_model(1, 21);
  const auto faces = random_faces(1, 1, 22);
  const auto post = extract_feature(model, faces.face(0));
  const auto pre = extract_feature(model, faces.face(0), FeatureTap::pre_relu);
  for (std::size_t i = 0; i < post.size(); ++i) CHECK(post[i] == std::max(0.0, pre[i]));
}

TEST_CASE("batched extraction is independent of grouping") {
  const auto model = small_model(3, 31, 17);
  const auto faces = random_faces(7, 3, 32);
  std::vector<std::size_t> rows{6, 0, 3, 3, 5};
  const auto one = extract_features(model, faces, rows, true, FeatureTap::post_relu, 1);
  const auto three = extract_features(model, faces, rows, true, FeatureTap::post_relu, 3);
  const auto all = extract_features(model, faces, rows, true, FeatureTap::post_relu, 64);
  CHECK(one == three);
  CHECK(one == all);
  const auto single = extract_feature(model, network_input(faces.face(6), 17, true));
  for (std::size_t j = 0; j < kFeatureLength; ++j) CHECK(one(0, static_cast<Eigen::Index>(j)) == single[j]);
  CHECK_THROWS_AS(extract_features(model, random_faces(2, 1, 1), rows, false), DimensionError);
}

TEST_CASE("zscore values and properties") {
  const auto z = zscore(std::vector<double>{1, 2, 3});
  CHECK(z[0] == doctest::Approx(-std::sqrt(1.5)));
  CHECK(z[1] == doctest::Approx(0.0));
  CHECK(z[2] == doctest::Approx(std::sqrt(1.5)));
  CHECK_THROWS_AS(zscore(std::vector<double>{4, 4, 4}), NormalizationError);
  CHECK_THROWS_AS(zscore(std::vector<double>{4}), NormalizationError);

  std::mt19937_64 rng(41);
  for (int trial = 0; trial < 100; ++trial) {
    const auto v = random_vector(50, rng, -2, 7);
    const auto zv = zscore(v);
    double mean = 0, var = 0;
    for (double x : zv) mean += x;
    mean /= 50;
    for (double x : zv) var += (x - mean) * (x - mean);
    CHECK(std::abs(mean) < 1e-10);
    CHECK(std::abs(std::sqrt(var / 50) - 1.0) < 1e-10);
    const auto zz = zscore(zv);
    for (std::size_t i = 0; i < v.size(); ++i) CHECK(std::abs(zz[i] - zv[i]) < 1e-10);
    const double a = std::uniform_real_distribution<double>(0.1, 5)(rng) * (trial % 2 ? -1 : 1);
    const double b = std::uniform_real_distribution<double>(-10, 10)(rng);
    std::vector<double> affine(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) affine[i] = a * v[i] + b;
    const auto za = zscore(affine);
    for (std::size_t i = 0; i < v.size(); ++i) CHECK(std::abs(za[i] - (a > 0 ? 1 : -1) * zv[i]) < 1e-9);
  }
}

TEST_CASE("PCA recovers the principal axis of an anisotropic 2-d cloud") {
  std::mt19937_64 rng(51);
  std::normal_distribution<double> n(0, 1);
  const double angle = 0.7;
  FeatureMatrix x(2000, 2);
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double a = 3 * n(rng), b = 0.5 * n(rng);
    x(i, 0) = 1 + a * std::cos(angle) - b * std::sin(angle);
    x(i, 1) = -2 + a * std::sin(angle) + b * std::cos(angle);
  }
  const auto pca = pca_fit(x, 1);
  // Closed-form leading eigenvector of the 2x2 sample covariance.
  const Eigen::RowVector2d m = x.colwise().mean();
  const Eigen::MatrixXd c = (x.rowwise() - m).transpose() * (x.rowwise() - m) / double(x.rows() - 1);
  const double tr = c(0, 0) + c(1, 1), det = c(0, 0) * c(1, 1) - c(0, 1) * c(1, 0);
  const double l1 = tr / 2 + std::sqrt(tr * tr / 4 - det);
  Eigen::Vector2d v(c(0, 1), l1 - c(0, 0));
  v.normalize();
  CHECK(std::abs(pca.basis.col(0).dot(v)) > 0.99);
  CHECK(std::abs(pca.basis.col(0).dot(Eigen::Vector2d(std::cos(angle), std::sin(angle)))) > 0.99);
  CHECK(pca.eigenvalues[0] == doctest::Approx(l1).epsilon(1e-10));
}

TEST_CASE("PCA eigenvalues match a Jacobi oracle and the basis is orthonormal") {
  std::mt19937_64 rng(61);
  for (std::size_t d : {3, 8, 20, 64}) {
    FeatureMatrix x(150, static_cast<Eigen::Index>(d));
    std::normal_distribution<double> n(0, 1);
    for (Eigen::Index i = 0; i < x.rows(); ++i)
      for (Eigen::Index j = 0; j < x.cols(); ++j) x(i, j) = n(rng) * (1.0 + 0.2 * double(j));
    const std::size_t p = std::min<std::size_t>(d, 10);
    const auto pca = pca_fit(x, p);
    REQUIRE(pca.output_dim() == p);
    const Eigen::MatrixXd gram = pca.basis.transpose() * pca.basis;
    CHECK((gram - Eigen::MatrixXd::Identity(long(p), long(p))).cwiseAbs().maxCoeff() < 1e-8);
    const Eigen::RowVectorXd mean = x.colwise().mean();
    const Eigen::MatrixXd cov = (x.rowwise() - mean).transpose() * (x.rowwise() - mean) / double(x.rows() - 1);
    const auto ev = facever::testing::jacobi_eigenvalues(cov);
    for (std::size_t k = 0; k < p; ++k) {
      CHECK(std::abs(pca.eigenvalues[long(k)] - ev[k]) < 1e-8 * std::max(1.0, ev[0]));
      if (k > 0) CHECK(pca.eigenvalues[long(k)] <= pca.eigenvalues[long(k - 1)]);
    }
  }
}

TEST_CASE("PCA on data inside a subspace reconstructs exactly and keeps distances") {
  std::mt19937_64 rng(71);
  const Eigen::Index d = 12, rank = 4, n = 60;
  Eigen::MatrixXd axes = Eigen::MatrixXd::Random(d, rank);
  FeatureMatrix x = (Eigen::MatrixXd::Random(n, rank) * axes.transpose()).rowwise() +
                    Eigen::RowVectorXd::LinSpaced(d, -1, 1);
  const auto pca = pca_fit(x, rank);
  const FeatureMatrix y = pca_project_rows(pca, x);
  const FeatureMatrix back = (y * pca.basis.transpose()).rowwise() + pca.mean.transpose();
  CHECK((back - x).cwiseAbs().maxCoeff() < 1e-8);
  for (Eigen::Index i = 0; i + 1 < n; ++i) {
    CHECK(std::abs((x.row(i) - x.row(i + 1)).norm() - (y.row(i) - y.row(i + 1)).norm()) < 1e-6);
  }
  const auto proj = pca_project(pca, row_span(x, 3));
  CHECK((proj.transpose() - y.row(3)).cwiseAbs().maxCoeff() < 1e-12);

  // Asking for more than the rank keeps only the real components.
  const auto wide = pca_fit(x, 10);
  CHECK(wide.requested == 10);
  CHECK(wide.output_dim() == rank);
  CHECK_THROWS_AS(pca_fit(x, 13), ConfigError);
  CHECK_THROWS_AS(pca_fit(x.topRows(5), 5), ConfigError);
  CHECK_THROWS_AS(pca_fit(x, 0), ConfigError);
}

TEST_CASE("flip and network fusion concatenate in a fixed order") {
  std::mt19937_64 rng(81);
  const auto a = random_vector(kFeatureLength, rng), b = random_vector(kFeatureLength, rng);
  const auto f = fuse_flip(a, b);
  REQUIRE(f.size() == 2 * kFeatureLength);
  CHECK(std::equal(a.begin(), a.end(), f.begin()));
  CHECK(std::equal(b.begin(), b.end(), f.begin() + kFeatureLength));
  double na = 0, nf = 0;
  for (double v : a) na += v * v;
  for (double v : fuse_flip(a, a)) nf += v * v;
  CHECK(nf == doctest::Approx(2 * na));
  CHECK_THROWS_AS(fuse_flip(a, std::vector<double>(3)), FusionError);

  std::vector<std::vector<double>> nets;
  for (int i = 0; i < 16; ++i) nets.push_back(random_vector(kFeatureLength, rng));
  const auto fused = fuse_networks(nets);
  CHECK(fused.size() == 2560);
  CHECK(fuse_networks(std::span(nets).first(1)) == nets[0]);
  std::vector<std::vector<double>> swapped{nets[1], nets[0]};
  const auto ab = fuse_networks(std::span(nets).first(2)), ba = fuse_networks(swapped);
  CHECK(std::equal(ab.begin(), ab.begin() + kFeatureLength, ba.begin() + kFeatureLength));
  CHECK_THROWS_AS(fuse_networks(std::span<const std::vector<double>>{}), FusionError);
}

TEST_CASE("feature bank keeps patch order, fuses, hashes and round-trips") {
  const std::vector<std::string> ids{"A_0001", "A_0002", "B_0001"};
  FeatureBank bank(ids);
  std::mt19937_64 rng(91);
  auto block = [&](int patch) {
    FeatureBlock b;
    b.patch_index = patch;
    b.network_id = network_id_for_patch(patch);
    b.original = FeatureMatrix::Random(3, kFeatureLength);
    b.mirrored = FeatureMatrix::Random(3, kFeatureLength);
    b.fold_mask = patch < 0 ? 0 : 1u << (patch % 10);
    return b;
  };
  bank.add(block(11));
  bank.add(block(-1));
  bank.add(block(5));
  REQUIRE(bank.blocks().size() == 3);
  CHECK(bank.blocks()[0].network_id == "full");
  CHECK(bank.blocks()[1].network_id == "patch5");
  CHECK(bank.blocks()[2].network_id == "patch11");
  CHECK(bank.has("patch5"));
  CHECK_THROWS_AS(bank.block("patch6"), FusionError);

  const std::vector<std::string> sel{"patch5", "patch11"};
  const auto rows = bank.rows(std::vector<std::string>{"B_0001", "A_0001"});
  const auto fused = bank.fused(sel, rows, true);
  CHECK(fused.cols() == 320);
  CHECK(fused(0, 0) == bank.block("patch5").mirrored(2, 0));
  CHECK(fused(1, 160) == bank.block("patch11").mirrored(0, 0));
  CHECK_THROWS_AS(bank.fused(std::vector<std::string>{"patch7"}, rows, false), FusionError);
  CHECK(bank.hash(sel) == bank.hash(sel));
  CHECK(bank.hash(sel) != bank.hash(std::vector<std::string>{"patch11", "patch5"}));
  CHECK_THROWS_AS(bank.row("C_0001"), Error);

  const auto dir = std::filesystem::temp_directory_path() / "facever_bank_test";
  std::filesystem::create_directories(dir);
  nlohmann::json extra{{"scope", "shared"}};
  save_features(dir / "bank.fvf", bank, extra);
  nlohmann::json back_extra;
  const auto back = load_features(dir / "bank.fvf", &back_extra);
  CHECK(back_extra.at("scope") == "shared");
  CHECK(back.image_ids() == ids);
  REQUIRE(back.blocks().size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(back.blocks()[i].network_id == bank.blocks()[i].network_id);
    CHECK(back.blocks()[i].fold_mask == bank.blocks()[i].fold_mask);
    // Stored as f32.
    CHECK((back.blocks()[i].original - bank.blocks()[i].original).cwiseAbs().maxCoeff() < 1e-6);
  }
  // Hashes are taken over what is stored, so a saved bank reloads to the same hash.
  save_features(dir / "again.fvf", back, extra);
  CHECK(load_features(dir / "again.fvf").hash(sel) == back.hash(sel));
  export_features_csv(dir / "bank.csv", bank);
  CHECK(std::filesystem::file_size(dir / "bank.csv") > 0);
  std::filesystem::remove_all(dir);
}
