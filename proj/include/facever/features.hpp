#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "facever/face_set.hpp"
#include "facever/model_io.hpp"

namespace facever {

/// Row-major so each sample's feature vector is one contiguous row.
using FeatureMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline std::span<const double> row_span(const FeatureMatrix& m, Eigen::Index r) {
  return {m.data() + r * m.cols(), static_cast<std::size_t>(m.cols())};
}

/// 160-d feature of one preprocessed image (the mean is subtracted here).
std::vector<double> extract_feature(const FaceModel& model, const Image& image,
                                    FeatureTap tap = FeatureTap::post_relu);

/// Features of the model's network input for each face row, in chunks of
/// `batch` so peak memory stays bounded. Grouping does not change results.
FeatureMatrix extract_features(const FaceModel& model, const FaceSet& faces,
                               std::span<const std::size_t> rows, bool flipped,
                               FeatureTap tap = FeatureTap::post_relu, std::size_t batch = 64);

/// (v - mean) / std with the population standard deviation.
std::vector<double> zscore(std::span<const double> v);
void zscore_rows(FeatureMatrix& m);

struct PcaModel {
  Eigen::VectorXd mean;         // d
  Eigen::MatrixXd basis;        // d x p, orthonormal columns
  Eigen::VectorXd eigenvalues;  // p, descending
  std::size_t requested = 0;    // p asked for; basis.cols() may be smaller
  std::uint64_t fold_mask = 0;  // folds whose data the fit consumed

  std::size_t input_dim() const { return static_cast<std::size_t>(mean.size()); }
  std::size_t output_dim() const { return static_cast<std::size_t>(basis.cols()); }
};

/// Top-p eigenvectors of the sample covariance (n - 1 normalization). Throws
/// ConfigError when p > min(d, n - 1). Components whose eigenvalue is
/// numerically zero are dropped, so output_dim() reports the effective p.
PcaModel pca_fit(const FeatureMatrix& samples, std::size_t p);
Eigen::VectorXd pca_project(const PcaModel& model, std::span<const double> v);
FeatureMatrix pca_project_rows(const PcaModel& model, const FeatureMatrix& samples);

/// [original | mirrored].
std::vector<double> fuse_flip(std::span<const double> original, std::span<const double> mirrored);
FeatureMatrix fuse_flip(const FeatureMatrix& original, const FeatureMatrix& mirrored);

/// Concatenation of the given per-network features in the given order.
std::vector<double> fuse_networks(std::span<const std::vector<double>> features);

/// Features of every image under each network, original and mirrored.
struct FeatureBlock {
  std::string network_id;
  int patch_index = -1;
  FeatureMatrix original;  // [images, 160]
  FeatureMatrix mirrored;  // [images, 160]
  std::uint64_t fold_mask = 0;  // provenance of the model that produced it
};

class FeatureBank {
 public:
  FeatureBank() = default;
  explicit FeatureBank(std::vector<std::string> image_ids);

  const std::vector<std::string>& image_ids() const noexcept { return ids_; }
  std::size_t row(const std::string& id) const;
  std::vector<std::size_t> rows(std::span<const std::string> ids) const;

  /// Blocks are kept in patch order (whole face first).
  void add(FeatureBlock block);
  const std::vector<FeatureBlock>& blocks() const noexcept { return blocks_; }
  /// Throws FusionError naming the missing network.
  const FeatureBlock& block(const std::string& network_id) const;
  bool has(const std::string& network_id) const;

  /// Concatenated features of the named networks for the given rows, in the
  /// order given.
  FeatureMatrix fused(std::span<const std::string> network_ids, std::span<const std::size_t> rows,
                      bool mirrored) const;

  /// FNV-1a over the ids and raw values of the named blocks.
  std::uint64_t hash(std::span<const std::string> network_ids) const;

  void merge(const FeatureBank& other);

 private:
  std::vector<std::string> ids_;
  std::map<std::string, std::size_t> rows_;
  std::vector<FeatureBlock> blocks_;
};

std::string network_id_for_patch(int patch_index);

/// FVF1 container with the image ids, network ids and flip flags in the
/// metadata and one f32 matrix per (network, flip).
void save_features(const std::filesystem::path& path, const FeatureBank& bank,
                   const nlohmann::json& extra = nlohmann::json::object());
FeatureBank load_features(const std::filesystem::path& path, nlohmann::json* extra = nullptr);
void export_features_csv(const std::filesystem::path& path, const FeatureBank& bank);

}  // namespace facever
