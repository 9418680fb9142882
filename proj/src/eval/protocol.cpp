#include "facever/protocol.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "facever/container.hpp"
#include "facever/error.hpp"

namespace facever {

bool decide(double score, double threshold, ScoreDirection direction) {
  return direction == ScoreDirection::lower_is_match ? score <= threshold : score >= threshold;
}

double accuracy_at(std::span<const double> scores, std::span<const bool> matched, double threshold,
                   ScoreDirection direction) {
  if (scores.size() != matched.size() || scores.empty()) {
    throw ProtocolError("scores and labels must be nonempty and of equal length");
  }
  std::size_t correct = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    correct += decide(scores[i], threshold, direction) == matched[i];
  }
  return static_cast<double>(correct) / static_cast<double>(scores.size());
}

ThresholdChoice choose_threshold(std::span<const double> scores, std::span<const bool> matched,
                                 ScoreDirection direction) {
  if (scores.size() != matched.size() || scores.empty()) {
    throw ProtocolError("scores and labels must be nonempty and of equal length");
  }
  const std::size_t n = scores.size();
  const auto positives = static_cast<std::size_t>(std::count(matched.begin(), matched.end(), true));
  if (positives == 0 || positives == n) throw ProtocolError("threshold selection needs both classes");
  for (double s : scores) {
    if (!std::isfinite(s)) throw ProtocolError("non-finite score in threshold selection");
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return scores[a] < scores[b] || (scores[a] == scores[b] && a < b);
  });

  // Candidate k puts the threshold after the first k sorted scores (k only at
  // boundaries between distinct values). below_pos = matched among them.
  const bool lower = direction == ScoreDirection::lower_is_match;
  auto correct_for = [&](std::size_t k, std::size_t below_pos) {
    const std::size_t below_neg = k - below_pos;
    const std::size_t above_pos = positives - below_pos;
    const std::size_t above_neg = (n - positives) - below_neg;
    return lower ? below_pos + above_neg : below_neg + above_pos;
  };

  std::size_t best_correct = 0;
  double best_gap = -1.0;
  double best_threshold = 0.0;
  auto consider = [&](std::size_t correct, double gap, double threshold) {
    if (correct > best_correct || (correct == best_correct && gap > best_gap)) {
      best_correct = correct;
      best_gap = gap;
      best_threshold = threshold;
    }
  };

  const double lo = scores[order.front()], hi = scores[order.back()];
  const double margin = std::max(1.0, hi - lo);
  // With the threshold below everything: nothing is <= t (lower) and
  // everything is >= t (higher).
  consider(correct_for(0, 0), 0.0, lo - margin);
  std::size_t below_pos = 0;
  for (std::size_t k = 1; k < n; ++k) {
    below_pos += matched[order[k - 1]];
    const double a = scores[order[k - 1]], b = scores[order[k]];
    if (a == b) continue;
    consider(correct_for(k, below_pos), b - a, a + 0.5 * (b - a));
  }
  below_pos += matched[order[n - 1]];
  consider(correct_for(n, below_pos), 0.0, hi + margin);

  return {best_threshold, static_cast<double>(best_correct) / static_cast<double>(n)};
}

MeanSem mean_sem(std::span<const double> values) {
  if (values.size() < 2) throw ProtocolError("standard error needs at least 2 values");
  const double n = static_cast<double>(values.size());
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  return {mean, std::sqrt(ss / (n - 1.0)) / std::sqrt(n)};
}

std::vector<std::size_t> select_best_networks(const std::vector<std::vector<double>>& accuracies,
                                              std::size_t k) {
  if (k == 0 || k > accuracies.size()) {
    throw ConfigError("cannot select " + std::to_string(k) + " of " + std::to_string(accuracies.size()) +
                      " networks");
  }
  std::vector<double> mean(accuracies.size());
  for (std::size_t i = 0; i < accuracies.size(); ++i) {
    if (accuracies[i].empty()) throw ProtocolError("network " + std::to_string(i) + " has no accuracies");
    mean[i] = std::accumulate(accuracies[i].begin(), accuracies[i].end(), 0.0) /
              static_cast<double>(accuracies[i].size());
  }
  std::vector<std::size_t> order(accuracies.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return mean[a] > mean[b]; });
  order.resize(k);
  return order;
}

FoldMask fold_bit(int fold) {
  if (fold < 0) return 0;
  if (fold >= 64) throw ProtocolError("fold masks support at most 64 folds");
  return FoldMask{1} << fold;
}

FoldMask identity_mask(const DatasetIndex& index, std::span<const std::string> identities) {
  FoldMask mask = 0;
  for (const auto& id : identities) mask |= fold_bit(index.fold_of_identity(id));
  return mask;
}

FoldContext make_fold_context(const DatasetIndex& index, const PairList& pairs, std::size_t fold,
                              const ProtocolOptions& options) {
  const auto split = make_fold_datasets(index, pairs, fold);
  FoldContext ctx;
  ctx.fold = fold;
  ctx.index = &index;
  ctx.training_identities = split.train.identities;
  ctx.threshold_pairs = sample_pairs(index, ctx.training_identities, options.threshold_pairs_per_class,
                                     options.seed * 1000003ULL + fold);
  return ctx;
}

Report run_protocol(const DatasetIndex& index, const PairList& pairs, const ScorerFactory& factory,
                    const ProtocolOptions& options) {
  std::vector<std::size_t> folds = options.folds;
  if (folds.empty()) {
    folds.resize(pairs.folds.size());
    std::iota(folds.begin(), folds.end(), 0);
  }
  for (auto f : folds) {
    if (f >= pairs.folds.size()) throw ConfigError("fold " + std::to_string(f) + " does not exist");
  }

  Report report;
  report.folds.resize(folds.size());
  std::vector<std::string> errors(folds.size());
  std::vector<ScoreDirection> directions(folds.size(), ScoreDirection::lower_is_match);
  // Folds share nothing mutable; each has its own scorer.
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t slot = 0; slot < static_cast<std::ptrdiff_t>(folds.size()); ++slot) {
    const std::size_t s = static_cast<std::size_t>(slot);
    const std::size_t fold = folds[s];
    try {
      const auto ctx = make_fold_context(index, pairs, fold, options);
      auto scorer = factory(fold);
      if (!scorer) throw ProtocolError("no scorer for fold " + std::to_string(fold));
      scorer->fit(ctx);
      const FoldMask provenance = scorer->provenance();
      if (provenance & fold_bit(static_cast<int>(fold))) {
        throw ProtocolError("fitted statistics for fold " + std::to_string(fold) +
                            " consumed data from that held-out fold");
      }
      directions[s] = scorer->direction();

      const std::size_t n_train = ctx.threshold_pairs.size();
      std::vector<double> train_scores(n_train);
      auto train_labels = std::make_unique<bool[]>(n_train);
      for (std::size_t i = 0; i < n_train; ++i) {
        train_scores[i] = scorer->score(ctx.threshold_pairs[i]);
        train_labels[i] = ctx.threshold_pairs[i].matched;
      }
      const auto choice = choose_threshold(train_scores, {train_labels.get(), n_train}, directions[s]);

      FoldResult& r = report.folds[s];
      r.fold = fold;
      r.threshold = choice.threshold;
      r.training_accuracy = choice.accuracy;
      r.provenance = provenance;
      r.details = scorer->describe();
      for (const auto& p : pairs.folds[fold]) {
        PairOutcome o{p, scorer->score(p), false};
        o.decision = decide(o.score, r.threshold, directions[s]);
        r.correct += o.decision == p.matched;
        r.outcomes.push_back(std::move(o));
      }
      r.accuracy = r.outcomes.empty() ? 0.0
                                      : static_cast<double>(r.correct) / static_cast<double>(r.outcomes.size());
    } catch (const Error& e) {
      errors[s] = std::string(e.error_class()) + "\x1f" + e.what();
    } catch (const std::exception& e) {
      errors[s] = std::string("protocol\x1f") + e.what();
    }
  }
  for (std::size_t s = 0; s < errors.size(); ++s) {
    if (errors[s].empty()) continue;
    const auto sep = errors[s].find('\x1f');
    const std::string cls = errors[s].substr(0, sep);
    const std::string msg = "fold " + std::to_string(folds[s]) + ": " + errors[s].substr(sep + 1);
    throw Error(cls, msg);
  }
  report.direction = directions.front();
  std::vector<double> acc;
  for (const auto& r : report.folds) acc.push_back(r.accuracy);
  if (acc.size() >= 2) {
    const auto ms = mean_sem(acc);
    report.mean_accuracy = ms.mean;
    report.sem = ms.sem;
  } else {
    report.mean_accuracy = acc.front();
    report.sem = 0.0;
  }
  return report;
}

nlohmann::json Report::to_json(bool include_pairs) const {
  nlohmann::json j;
  j["mean_accuracy"] = mean_accuracy;
  j["sem"] = sem;
  j["fingerprint"] = fingerprint;
  j["options"] = options;
  j["direction"] = direction == ScoreDirection::lower_is_match ? "lower_is_match" : "higher_is_match";
  nlohmann::json fs = nlohmann::json::array();
  for (const auto& r : folds) {
    nlohmann::json f{{"fold", r.fold},
                     {"threshold", r.threshold},
                     {"training_accuracy", r.training_accuracy},
                     {"accuracy", r.accuracy},
                     {"correct", r.correct},
                     {"pairs", r.outcomes.size()},
                     {"provenance_mask", r.provenance},
                     {"details", r.details}};
    if (include_pairs) {
      nlohmann::json ps = nlohmann::json::array();
      for (const auto& o : r.outcomes) ps.push_back({o.pair.a, o.pair.b, o.pair.matched, o.score, o.decision});
      f["outcomes"] = ps;
    }
    fs.push_back(f);
  }
  j["folds"] = fs;
  return j;
}

Report Report::from_json(const nlohmann::json& j) {
  Report r;
  try {
    r.mean_accuracy = j.at("mean_accuracy");
    r.sem = j.at("sem");
    r.fingerprint = j.value("fingerprint", nlohmann::json::object());
    r.options = j.value("options", nlohmann::json::object());
    r.direction = j.value("direction", "lower_is_match") == "higher_is_match" ? ScoreDirection::higher_is_match
                                                                               : ScoreDirection::lower_is_match;
    for (const auto& f : j.at("folds")) {
      FoldResult fr;
      fr.fold = f.at("fold");
      fr.threshold = f.at("threshold");
      fr.training_accuracy = f.at("training_accuracy");
      fr.accuracy = f.at("accuracy");
      fr.correct = f.at("correct");
      fr.provenance = f.value("provenance_mask", FoldMask{0});
      fr.details = f.value("details", nlohmann::json::object());
      for (const auto& o : f.value("outcomes", nlohmann::json::array())) {
        fr.outcomes.push_back({Pair{o.at(0), o.at(1), o.at(2)}, o.at(3), o.at(4)});
      }
      r.folds.push_back(std::move(fr));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed report: ") + e.what());
  }
  return r;
}

std::string Report::to_csv() const {
  std::ostringstream os;
  os.precision(10);
  os << "fold,threshold,training_accuracy,accuracy,correct,pairs\n";
  for (const auto& r : folds) {
    os << r.fold << ',' << r.threshold << ',' << r.training_accuracy << ',' << r.accuracy << ','
       << r.correct << ',' << r.outcomes.size() << '\n';
  }
  return os.str();
}

void write_report(const std::filesystem::path& stem, const Report& report) {
  auto json_path = stem;
  json_path += ".json";
  auto csv_path = stem;
  csv_path += ".csv";
  atomic_write(json_path, report.to_json().dump(1) + "\n");
  atomic_write(csv_path, report.to_csv());
}

Report read_report(const std::filesystem::path& json_path) {
  std::ifstream in(json_path);
  if (!in) throw IngestionError("cannot open report " + json_path.string());
  try {
    return Report::from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(json_path.string() + ": " + e.what());
  }
}

}  // namespace facever
