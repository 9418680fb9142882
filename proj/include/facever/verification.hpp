#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "facever/features.hpp"
#include "facever/joint_bayesian.hpp"
#include "facever/protocol.hpp"
#include "facever/similarity.hpp"

namespace facever {

enum class FlipFusion { none, feature, score };

std::string to_string(FlipFusion mode);
FlipFusion parse_flip_fusion(const std::string& text);

struct ScoringOptions {
  std::vector<std::string> networks{"full"};  // candidates, concatenated in this order
  std::size_t select = 0;  // keep the k best candidates per fold; 0 keeps all
  FlipFusion flip = FlipFusion::none;
  bool zscore = false;
  std::size_t pca_dim = 0;  // 0 = no projection
  bool joint_bayesian = false;
  DistanceKind distance = DistanceKind::cosine;
  JbFitOptions jb;

  nlohmann::json to_json() const;
};

using BankProvider = std::function<const FeatureBank&(std::size_t fold)>;

/// Verification from stored features. Per fold it ranks candidate networks
/// on the fold's threshold pairs (when select > 0), then fits z-score / PCA /
/// Joint Bayesian on the images of the training identities only.
class FeatureScorer final : public PairScorer {
 public:
  FeatureScorer(const FeatureBank& bank, ScoringOptions options);

  ScoreDirection direction() const override;
  void fit(const FoldContext& context) override;
  double score(const Pair& pair) const override;
  FoldMask provenance() const override { return provenance_; }
  nlohmann::json describe() const override;

  const std::vector<std::string>& selected() const noexcept { return selected_; }
  const std::optional<PcaModel>& pca() const noexcept { return pca_; }
  const std::optional<JbModel>& jb() const noexcept { return jb_; }

 private:
  FeatureMatrix represent(std::span<const std::size_t> rows, bool mirrored) const;
  double compare(std::span<const double> a, std::span<const double> b) const;

  const FeatureBank& bank_;
  ScoringOptions options_;
  std::vector<std::string> selected_;
  std::vector<double> candidate_accuracy_;
  std::optional<PcaModel> pca_;
  std::optional<JbModel> jb_;
  JbFitReport jb_report_;
  Eigen::VectorXd centre_;  // removed before Joint Bayesian
  FeatureMatrix original_, mirrored_;  // final representation per bank row
  FoldMask provenance_ = 0;
  std::size_t training_samples_ = 0;
};

ScorerFactory feature_scorer_factory(BankProvider banks, ScoringOptions options);

}  // namespace facever
