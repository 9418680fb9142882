#include "facever/verification.hpp"

#include <cstdio>
#include <map>
#include <memory>

#include "facever/error.hpp"

namespace facever {

std::string to_string(FlipFusion mode) {
  switch (mode) {
    case FlipFusion::none: return "none";
    case FlipFusion::feature: return "feature";
    case FlipFusion::score: return "score";
  }
  return "none";
}

FlipFusion parse_flip_fusion(const std::string& text) {
  if (text == "none") return FlipFusion::none;
  if (text == "feature") return FlipFusion::feature;
  if (text == "score") return FlipFusion::score;
  throw ConfigError("flip fusion must be none, feature or score, got '" + text + "'");
}

nlohmann::json ScoringOptions::to_json() const {
  return {{"networks", networks},
          {"select", select},
          {"flip_fusion", to_string(flip)},
          {"zscore", zscore},
          {"pca_dim", pca_dim},
          {"jb", joint_bayesian},
          {"distance", joint_bayesian ? "joint-bayesian" : to_string(distance)},
          {"jb_tol", jb.tol},
          {"jb_max_iter", jb.max_iter}};
}

FeatureScorer::FeatureScorer(const FeatureBank& bank, ScoringOptions options)
    : bank_(bank), options_(std::move(options)) {
  if (options_.networks.empty()) throw ConfigError("no networks selected for scoring");
  if (options_.select > options_.networks.size()) {
    throw ConfigError("cannot keep " + std::to_string(options_.select) + " of " +
                      std::to_string(options_.networks.size()) + " networks");
  }
  for (const auto& id : options_.networks) bank_.block(id);  // FusionError when absent
}

ScoreDirection FeatureScorer::direction() const {
  return options_.joint_bayesian ? ScoreDirection::higher_is_match : ScoreDirection::lower_is_match;
}

FeatureMatrix FeatureScorer::represent(std::span<const std::size_t> rows, bool mirrored) const {
  FeatureMatrix x = bank_.fused(selected_, rows, mirrored);
  if (options_.flip == FlipFusion::feature) x = fuse_flip(x, bank_.fused(selected_, rows, !mirrored));
  if (options_.zscore) zscore_rows(x);
  if (pca_) x = pca_project_rows(*pca_, x);
  if (jb_) x = x.rowwise() - centre_.transpose();
  return x;
}

double FeatureScorer::compare(std::span<const double> a, std::span<const double> b) const {
  return jb_ ? jb_->score(a, b) : distance(options_.distance, a, b);
}

void FeatureScorer::fit(const FoldContext& ctx) {
  const DatasetIndex& index = *ctx.index;
  provenance_ = identity_mask(index, ctx.training_identities);

  // Network selection on training-role pairs only.
  selected_ = options_.networks;
  candidate_accuracy_.clear();
  if (options_.select > 0 && options_.select < options_.networks.size()) {
    std::vector<std::vector<double>> table;
    const std::size_t n = ctx.threshold_pairs.size();
    auto labels = std::make_unique<bool[]>(n);
    for (std::size_t i = 0; i < n; ++i) labels[i] = ctx.threshold_pairs[i].matched;
    for (const auto& id : options_.networks) {
      const auto& block = bank_.block(id);
      std::vector<double> scores(n);
      for (std::size_t i = 0; i < n; ++i) {
        const auto& p = ctx.threshold_pairs[i];
        scores[i] = distance(options_.distance, row_span(block.original, static_cast<Eigen::Index>(bank_.row(p.a))),
                             row_span(block.original, static_cast<Eigen::Index>(bank_.row(p.b))));
      }
      const double acc = choose_threshold(scores, {labels.get(), n}, ScoreDirection::lower_is_match).accuracy;
      candidate_accuracy_.push_back(acc);
      table.push_back({acc});
    }
    auto keep = select_best_networks(table, options_.select);
    std::sort(keep.begin(), keep.end());  // back to candidate (patch) order
    selected_.clear();
    for (auto k : keep) selected_.push_back(options_.networks[k]);
  }
  for (const auto& id : selected_) provenance_ |= bank_.block(id).fold_mask;

  pca_.reset();
  jb_.reset();
  const bool needs_fit = options_.pca_dim > 0 || options_.joint_bayesian;
  if (needs_fit) {
    // Training samples: every image of every training identity, in the
    // representation scoring will use (mirrors as extra samples under score
    // fusion, since those vectors are compared too).
    std::vector<std::string> ids;
    std::vector<std::size_t> group_of;
    for (std::size_t g = 0; g < ctx.training_identities.size(); ++g) {
      for (const auto& id : index.subjects.at(ctx.training_identities[g])) {
        ids.push_back(id);
        group_of.push_back(g);
      }
    }
    const auto rows = bank_.rows(ids);
    FeatureMatrix train = represent(rows, false);
    if (options_.flip == FlipFusion::score) {
      FeatureMatrix both(2 * train.rows(), train.cols());
      both << train, represent(rows, true);
      train = std::move(both);
      const auto half = group_of;
      group_of.insert(group_of.end(), half.begin(), half.end());
    }
    if (options_.pca_dim > 0) {
      pca_ = pca_fit(train, options_.pca_dim);
      pca_->fold_mask = provenance_;
      train = pca_project_rows(*pca_, train);
    }
    training_samples_ = static_cast<std::size_t>(train.rows());
    if (options_.joint_bayesian) {
      centre_ = train.colwise().mean().transpose();
      train = train.rowwise() - centre_.transpose();
      std::vector<std::vector<Eigen::Index>> members(ctx.training_identities.size());
      for (std::size_t i = 0; i < group_of.size(); ++i) members[group_of[i]].push_back(static_cast<Eigen::Index>(i));
      std::vector<Eigen::MatrixXd> groups;
      for (const auto& m : members) {
        if (m.empty()) continue;
        Eigen::MatrixXd g(static_cast<Eigen::Index>(m.size()), train.cols());
        for (std::size_t r = 0; r < m.size(); ++r) g.row(static_cast<Eigen::Index>(r)) = train.row(m[r]);
        groups.push_back(std::move(g));
      }
      JbModel model = jb_fit(groups, options_.jb, &jb_report_);
      model.fold_mask = provenance_;
      jb_ = std::move(model);
    }
  }

  // Final representation of every image the bank holds, computed once.
  std::vector<std::size_t> all(bank_.image_ids().size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  original_ = represent(all, false);
  if (options_.flip == FlipFusion::score) mirrored_ = represent(all, true);
}

double FeatureScorer::score(const Pair& pair) const {
  const auto a = static_cast<Eigen::Index>(bank_.row(pair.a));
  const auto b = static_cast<Eigen::Index>(bank_.row(pair.b));
  if (options_.flip != FlipFusion::score) return compare(row_span(original_, a), row_span(original_, b));
  return 0.25 * (compare(row_span(original_, a), row_span(original_, b)) +
                 compare(row_span(original_, a), row_span(mirrored_, b)) +
                 compare(row_span(mirrored_, a), row_span(original_, b)) +
                 compare(row_span(mirrored_, a), row_span(mirrored_, b)));
}

nlohmann::json FeatureScorer::describe() const {
  char hash[24];
  std::snprintf(hash, sizeof hash, "%016llx", static_cast<unsigned long long>(bank_.hash(selected_)));
  nlohmann::json j{{"selected_networks", selected_},
                   {"feature_hash", hash},
                   {"feature_dim", original_.cols()},
                   {"training_samples", training_samples_}};
  if (!candidate_accuracy_.empty()) j["candidate_training_accuracy"] = candidate_accuracy_;
  if (pca_) {
    j["pca_requested"] = pca_->requested;
    j["pca_effective"] = pca_->output_dim();
  }
  if (jb_) {
    j["jb_iterations"] = jb_report_.iterations;
    j["jb_converged"] = jb_report_.converged;
    j["jb_final_change"] = jb_report_.final_change;
    j["jb_ridge_corrections"] = jb_report_.ridge_corrections;
    j["jb_warnings"] = jb_report_.warnings;
  }
  return j;
}

ScorerFactory feature_scorer_factory(BankProvider banks, ScoringOptions options) {
  return [banks = std::move(banks), options = std::move(options)](std::size_t fold) {
    return std::make_unique<FeatureScorer>(banks(fold), options);
  };
}

}  // namespace facever
