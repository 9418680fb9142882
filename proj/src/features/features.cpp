#include "facever/features.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

#include <Eigen/Eigenvalues>

#include "facever/container.hpp"
#include "facever/error.hpp"

namespace facever {

std::vector<double> extract_feature(const FaceModel& model, const Image& image, FeatureTap tap) {
  const Image centred = subtract_mean(image, model.mean_image);
  const auto out = model.network.features(centred.reshaped({1, image.dim(0), image.dim(1), image.dim(2)}), tap);
  return {out.data().begin(), out.data().end()};
}

FeatureMatrix extract_features(const FaceModel& model, const FaceSet& faces,
                               std::span<const std::size_t> rows, bool flipped, FeatureTap tap,
                               std::size_t batch) {
  if (faces.channels() != model.network.spec().channels) {
    throw DimensionError("model expects " + std::to_string(model.network.spec().channels) +
                         " channels, face cache has " + std::to_string(faces.channels()));
  }
  batch = std::max<std::size_t>(batch, 1);
  FeatureMatrix out(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(kFeatureLength));
  const std::size_t per = model.mean_image.size();
  const Shape one{1, kFaceSize, kFaceSize, faces.channels()};
  for (std::size_t start = 0; start < rows.size(); start += batch) {
    const std::size_t n = std::min(batch, rows.size() - start);
    const Tensor<float> inputs = network_inputs(faces, rows.subspan(start, n), model.patch_index, flipped);
    // One forward pass per sample: GEMM blocking depends on the row count,
    // so batching samples together would change the low bits.
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t s = 0; s < static_cast<std::ptrdiff_t>(n); ++s) {
      Tensor<float> x(one);
      const float* src = inputs.raw() + static_cast<std::size_t>(s) * per;
      for (std::size_t i = 0; i < per; ++i) x[i] = src[i] - model.mean_image[i];
      const auto f = model.network.features(x, tap);
      for (std::size_t j = 0; j < kFeatureLength; ++j) {
        out(static_cast<Eigen::Index>(start) + s, static_cast<Eigen::Index>(j)) = f[j];
      }
    }
  }
  return out;
}

std::vector<double> zscore(std::span<const double> v) {
  if (v.size() < 2) throw NormalizationError("zscore needs at least 2 entries");
  const double n = static_cast<double>(v.size());
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / n;
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  const double sd = std::sqrt(ss / n);
  if (!(sd > 0.0) || sd <= 1e-300) throw NormalizationError("zscore of a constant vector");
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = (v[i] - mean) / sd;
  return out;
}

void zscore_rows(FeatureMatrix& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    const auto z = zscore(row_span(m, r));
    std::copy(z.begin(), z.end(), m.data() + r * m.cols());
  }
}

PcaModel pca_fit(const FeatureMatrix& samples, std::size_t p) {
  const auto n = static_cast<std::size_t>(samples.rows());
  const auto d = static_cast<std::size_t>(samples.cols());
  if (p == 0) throw ConfigError("PCA dimension must be positive");
  if (n < 2 || p > std::min(d, n - 1)) {
    throw ConfigError("PCA dimension " + std::to_string(p) + " exceeds min(d=" + std::to_string(d) +
                      ", n-1=" + std::to_string(n < 1 ? 0 : n - 1) + ")");
  }
  PcaModel model;
  model.requested = p;
  model.mean = samples.colwise().mean().transpose();
  const Eigen::MatrixXd centred = samples.rowwise() - model.mean.transpose();
  const Eigen::MatrixXd cov = (centred.transpose() * centred) / static_cast<double>(n - 1);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  if (eig.info() != Eigen::Success) throw FittingError("covariance eigendecomposition failed");

  // Eigen returns ascending order; walk from the top.
  const Eigen::VectorXd& values = eig.eigenvalues();
  const double top = std::max(values(values.size() - 1), 0.0);
  const double cutoff = top * 1e-12 * static_cast<double>(d);
  std::size_t kept = 0;
  while (kept < p && values(values.size() - 1 - static_cast<Eigen::Index>(kept)) > cutoff) ++kept;
  model.basis.resize(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(kept));
  model.eigenvalues.resize(static_cast<Eigen::Index>(kept));
  for (std::size_t k = 0; k < kept; ++k) {
    const auto src = values.size() - 1 - static_cast<Eigen::Index>(k);
    Eigen::VectorXd v = eig.eigenvectors().col(src);
    // Fix the sign so the largest-magnitude entry is positive.
    Eigen::Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v(arg) < 0) v = -v;
    model.basis.col(static_cast<Eigen::Index>(k)) = v;
    model.eigenvalues(static_cast<Eigen::Index>(k)) = values(src);
  }
  return model;
}

Eigen::VectorXd pca_project(const PcaModel& model, std::span<const double> v) {
  if (v.size() != model.input_dim()) {
    throw DimensionError("PCA input has " + std::to_string(v.size()) + " entries, model expects " +
                         std::to_string(model.input_dim()));
  }
  const Eigen::Map<const Eigen::VectorXd> x(v.data(), static_cast<Eigen::Index>(v.size()));
  return model.basis.transpose() * (x - model.mean);
}

FeatureMatrix pca_project_rows(const PcaModel& model, const FeatureMatrix& samples) {
  if (static_cast<std::size_t>(samples.cols()) != model.input_dim()) {
    throw DimensionError("PCA input has " + std::to_string(samples.cols()) + " columns, model expects " +
                         std::to_string(model.input_dim()));
  }
  return (samples.rowwise() - model.mean.transpose()) * model.basis;
}

std::vector<double> fuse_flip(std::span<const double> original, std::span<const double> mirrored) {
  if (original.size() != mirrored.size()) {
    throw FusionError("flip fusion of lengths " + std::to_string(original.size()) + " and " +
                      std::to_string(mirrored.size()));
  }
  std::vector<double> out(original.begin(), original.end());
  out.insert(out.end(), mirrored.begin(), mirrored.end());
  return out;
}

FeatureMatrix fuse_flip(const FeatureMatrix& original, const FeatureMatrix& mirrored) {
  if (original.rows() != mirrored.rows() || original.cols() != mirrored.cols()) {
    throw FusionError("flip fusion of mismatched feature matrices");
  }
  FeatureMatrix out(original.rows(), 2 * original.cols());
  out << original, mirrored;
  return out;
}

std::vector<double> fuse_networks(std::span<const std::vector<double>> features) {
  if (features.empty()) throw FusionError("network fusion needs at least one network");
  std::vector<double> out;
  for (const auto& f : features) {
    if (f.size() != features.front().size()) throw FusionError("network features differ in length");
    out.insert(out.end(), f.begin(), f.end());
  }
  return out;
}

std::string network_id_for_patch(int patch_index) {
  if (patch_index < 0) return "full";
  return "patch" + std::to_string(patch_index);
}

FeatureBank::FeatureBank(std::vector<std::string> image_ids) : ids_(std::move(image_ids)) {
  for (std::size_t i = 0; i < ids_.size(); ++i) {
    if (!rows_.emplace(ids_[i], i).second) throw IngestionError("duplicate image id '" + ids_[i] + "'");
  }
}

std::size_t FeatureBank::row(const std::string& id) const {
  const auto it = rows_.find(id);
  if (it == rows_.end()) throw IngestionError("no features for image '" + id + "'");
  return it->second;
}

std::vector<std::size_t> FeatureBank::rows(std::span<const std::string> ids) const {
  std::vector<std::size_t> out;
  out.reserve(ids.size());
  for (const auto& id : ids) out.push_back(row(id));
  return out;
}

void FeatureBank::add(FeatureBlock block) {
  const auto n = static_cast<Eigen::Index>(ids_.size());
  if (block.original.rows() != n || block.mirrored.rows() != n) {
    throw DimensionError("feature block '" + block.network_id + "' has the wrong number of rows");
  }
  for (auto& b : blocks_) {
    if (b.network_id == block.network_id) {
      b = std::move(block);
      return;
    }
  }
  const auto pos = std::find_if(blocks_.begin(), blocks_.end(),
                                [&](const FeatureBlock& b) { return b.patch_index > block.patch_index; });
  blocks_.insert(pos, std::move(block));
}

bool FeatureBank::has(const std::string& network_id) const {
  return std::any_of(blocks_.begin(), blocks_.end(),
                     [&](const FeatureBlock& b) { return b.network_id == network_id; });
}

const FeatureBlock& FeatureBank::block(const std::string& network_id) const {
  for (const auto& b : blocks_) {
    if (b.network_id == network_id) return b;
  }
  throw FusionError("missing features for network '" + network_id + "'");
}

FeatureMatrix FeatureBank::fused(std::span<const std::string> network_ids,
                                 std::span<const std::size_t> rows, bool mirrored) const {
  if (network_ids.empty()) throw FusionError("network fusion needs at least one network");
  std::vector<const FeatureMatrix*> parts;
  Eigen::Index cols = 0;
  for (const auto& id : network_ids) {
    const auto& b = block(id);
    parts.push_back(mirrored ? &b.mirrored : &b.original);
    cols += parts.back()->cols();
  }
  FeatureMatrix out(static_cast<Eigen::Index>(rows.size()), cols);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    Eigen::Index c = 0;
    for (const auto* m : parts) {
      out.row(static_cast<Eigen::Index>(r)).segment(c, m->cols()) = m->row(static_cast<Eigen::Index>(rows[r]));
      c += m->cols();
    }
  }
  return out;
}

namespace {

struct Fnv1a {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 0x100000001b3ULL;
    }
  }
  void text(const std::string& s) { bytes(s.data(), s.size() + 1); }
};

}  // namespace

std::uint64_t FeatureBank::hash(std::span<const std::string> network_ids) const {
  Fnv1a f;
  for (const auto& id : ids_) f.text(id);
  for (const auto& id : network_ids) {
    const auto& b = block(id);
    f.text(b.network_id);
    f.bytes(b.original.data(), static_cast<std::size_t>(b.original.size()) * sizeof(double));
    f.bytes(b.mirrored.data(), static_cast<std::size_t>(b.mirrored.size()) * sizeof(double));
  }
  return f.h;
}

void FeatureBank::merge(const FeatureBank& other) {
  if (other.ids_ != ids_) throw FusionError("cannot merge feature banks over different images");
  for (const auto& b : other.blocks_) add(b);
}

namespace {

Tensor<float> to_tensor(const FeatureMatrix& m) {
  Tensor<float> t({static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())});
  for (Eigen::Index i = 0; i < m.size(); ++i) t[static_cast<std::size_t>(i)] = static_cast<float>(m.data()[i]);
  return t;
}

FeatureMatrix from_tensor(const Tensor<float>& t) {
  if (t.rank() != 2) throw FormatError("feature matrix must be rank 2");
  FeatureMatrix m(static_cast<Eigen::Index>(t.dim(0)), static_cast<Eigen::Index>(t.dim(1)));
  for (std::size_t i = 0; i < t.size(); ++i) m.data()[i] = t[i];
  return m;
}

}  // namespace

void save_features(const std::filesystem::path& path, const FeatureBank& bank, const nlohmann::json& extra) {
  Container c{magic::features};
  auto& meta = c.metadata();
  meta["kind"] = "features";
  meta["image_ids"] = bank.image_ids();
  meta["extra"] = extra;
  nlohmann::json nets = nlohmann::json::array();
  for (const auto& b : bank.blocks()) {
    nets.push_back({{"network_id", b.network_id}, {"patch_index", b.patch_index}, {"fold_mask", b.fold_mask}});
    c.add(b.network_id + ".original", to_tensor(b.original));
    c.add(b.network_id + ".mirrored", to_tensor(b.mirrored));
  }
  meta["networks"] = nets;
  meta["flipped"] = {false, true};
  c.save(path);
}

FeatureBank load_features(const std::filesystem::path& path, nlohmann::json* extra) {
  const auto c = Container::load(path, magic::features);
  try {
    const auto& meta = c.metadata();
    FeatureBank bank(meta.at("image_ids").get<std::vector<std::string>>());
    for (const auto& n : meta.at("networks")) {
      FeatureBlock b;
      b.network_id = n.at("network_id").get<std::string>();
      b.patch_index = n.at("patch_index").get<int>();
      b.fold_mask = n.value("fold_mask", std::uint64_t{0});
      b.original = from_tensor(c.get_float(b.network_id + ".original"));
      b.mirrored = from_tensor(c.get_float(b.network_id + ".mirrored"));
      bank.add(std::move(b));
    }
    if (extra) *extra = meta.value("extra", nlohmann::json::object());
    return bank;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": malformed feature metadata: " + e.what());
  }
}

void export_features_csv(const std::filesystem::path& path, const FeatureBank& bank) {
  std::string out = "network_id,image_id,flipped";
  for (std::size_t j = 0; j < kFeatureLength; ++j) out += ",f" + std::to_string(j);
  out += '\n';
  char buf[32];
  for (const auto& b : bank.blocks()) {
    for (int flip = 0; flip < 2; ++flip) {
      const auto& m = flip ? b.mirrored : b.original;
      for (Eigen::Index r = 0; r < m.rows(); ++r) {
        out += b.network_id + ',' + bank.image_ids()[static_cast<std::size_t>(r)] + (flip ? ",1" : ",0");
        for (Eigen::Index j = 0; j < m.cols(); ++j) {
          std::snprintf(buf, sizeof buf, ",%.9g", m(r, j));
          out += buf;
        }
        out += '\n';
      }
    }
  }
  atomic_write(path, out);
}

}  // namespace facever
