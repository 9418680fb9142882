#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "facever/lfw.hpp"

namespace facever {

/// Which way a scorer's values point.
enum class ScoreDirection {
  lower_is_match,   // distances: matched when score <= threshold
  higher_is_match,  // log-likelihood ratios: matched when score >= threshold
};

bool decide(double score, double threshold, ScoreDirection direction);

struct ThresholdChoice {
  double threshold = 0.0;
  double accuracy = 0.0;
};

/// Sweeps every midpoint between consecutive distinct scores plus one point
/// beyond each end. Picks the highest training accuracy; ties go to the
/// candidate with the widest gap between its neighbouring scores (the end
/// points count as gap 0), then to the lowest threshold.
ThresholdChoice choose_threshold(std::span<const double> scores, std::span<const bool> matched,
                                 ScoreDirection direction);

double accuracy_at(std::span<const double> scores, std::span<const bool> matched, double threshold,
                   ScoreDirection direction);

struct MeanSem {
  double mean = 0.0;
  double sem = 0.0;
};

/// Mean and sample standard deviation / sqrt(n). n >= 2.
MeanSem mean_sem(std::span<const double> values);

/// Rows are networks, columns training-fold accuracies. Returns the indices
/// of the k networks with the highest mean, best first; ties keep the lower
/// index first.
std::vector<std::size_t> select_best_networks(const std::vector<std::vector<double>>& accuracies,
                                              std::size_t k);

/// Bit f set = data from fold f was consumed.
using FoldMask = std::uint64_t;
FoldMask fold_bit(int fold);
FoldMask identity_mask(const DatasetIndex& index, std::span<const std::string> identities);

/// What a scorer may use while fitting for one held-out fold.
struct FoldContext {
  std::size_t fold = 0;
  const DatasetIndex* index = nullptr;
  std::vector<std::string> training_identities;
  std::vector<Pair> threshold_pairs;  // balanced, drawn from training_identities
};

/// Fitted once per fold, then asked to score the held-out pairs.
class PairScorer {
 public:
  virtual ~PairScorer() = default;
  virtual ScoreDirection direction() const = 0;
  virtual void fit(const FoldContext& context) = 0;
  virtual double score(const Pair& pair) const = 0;
  /// Union of the folds behind every fitted statistic.
  virtual FoldMask provenance() const = 0;
  /// Extra per-fold facts for the report (selected networks, PCA dim, ...).
  virtual nlohmann::json describe() const { return nlohmann::json::object(); }
};

using ScorerFactory = std::function<std::unique_ptr<PairScorer>(std::size_t fold)>;

struct PairOutcome {
  Pair pair;
  double score = 0.0;
  bool decision = false;
};

struct FoldResult {
  std::size_t fold = 0;
  double threshold = 0.0;
  double training_accuracy = 0.0;
  double accuracy = 0.0;
  std::size_t correct = 0;
  std::vector<PairOutcome> outcomes;
  FoldMask provenance = 0;
  nlohmann::json details = nlohmann::json::object();
};

struct Report {
  double mean_accuracy = 0.0;
  double sem = 0.0;
  std::vector<FoldResult> folds;
  nlohmann::json fingerprint = nlohmann::json::object();  // what produced the models
  nlohmann::json options = nlohmann::json::object();      // evaluation settings
  ScoreDirection direction = ScoreDirection::lower_is_match;

  nlohmann::json to_json(bool include_pairs = true) const;
  static Report from_json(const nlohmann::json& j);
  /// One row per fold: fold,threshold,training_accuracy,accuracy,correct,pairs.
  std::string to_csv() const;
};

struct ProtocolOptions {
  std::size_t threshold_pairs_per_class = 3000;
  std::uint64_t seed = 0;
  std::vector<std::size_t> folds;  // empty = all
};

/// Unrestricted protocol: for every fold, fit on the other folds' identities
/// (never on the fold's own pairs), choose the threshold on generated
/// training pairs, and score the held-out pairs. Throws ProtocolError if a
/// fitted statistic reports provenance from the held-out fold.
Report run_protocol(const DatasetIndex& index, const PairList& pairs, const ScorerFactory& factory,
                    const ProtocolOptions& options = {});

/// Training identities and threshold pairs for one fold, as run_protocol
/// builds them.
FoldContext make_fold_context(const DatasetIndex& index, const PairList& pairs, std::size_t fold,
                              const ProtocolOptions& options);

void write_report(const std::filesystem::path& stem, const Report& report);
Report read_report(const std::filesystem::path& json_path);

}  // namespace facever
