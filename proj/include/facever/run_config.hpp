#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "facever/face_set.hpp"
#include "facever/joint_bayesian.hpp"
#include "facever/network.hpp"
#include "facever/similarity.hpp"
#include "facever/trainer.hpp"
#include "facever/verification.hpp"

namespace facever {

/// Which identities each trained network sees.
enum class TrainScope {
  shared,    // one set of networks trained on the development identities
  per_fold,  // a set per held-out fold, trained on the other nine folds
};

std::string to_string(TrainScope scope);
TrainScope parse_train_scope(const std::string& text);

/// Comma list of "full", "all" (the 30 patches), "patchN" or N.
std::vector<int> parse_network_list(const std::string& text);

/// Everything one experiment needs. Read from a sectioned key=value file:
///
///   [data]  root, pairs, people, dev_people, eyes, channels
///   [model] arch, networks, feature_tap
///   [train] scope, learning_rate, batch_size, epochs, momentum, init,
///           init_std, early_stop_delta, early_stop_patience, flip_augment
///   [eval]  network, distance, flip_fusion, zscore, pca_dim, jb, select,
///           threshold_pairs, jb_tol, jb_max_iter, pca_sweep
///   [run]   seed, output, threads, fold
///
/// Relative paths resolve against the config file's directory.
struct RunConfig {
  std::filesystem::path root, pairs, people, dev_people, eyes;
  ColourMode channels = ColourMode::colour;

  std::string arch = "cnn-m";
  std::vector<int> networks{-1};
  FeatureTap feature_tap = FeatureTap::post_relu;

  TrainScope scope = TrainScope::per_fold;
  TrainConfig train;
  bool flip_augment = true;

  std::string network = "full";  // what `eval` scores
  DistanceKind distance = DistanceKind::cosine;
  FlipFusion flip = FlipFusion::none;
  bool zscore = false;
  std::size_t pca_dim = 0;
  bool joint_bayesian = false;
  std::size_t select = 0;
  std::size_t threshold_pairs = 3000;
  JbFitOptions jb;
  std::vector<std::size_t> pca_sweep;

  std::uint64_t seed = 0;
  std::filesystem::path output = "output";
  std::size_t threads = 0;  // 0 = machine parallelism
  std::optional<std::size_t> fold;

  static RunConfig parse(std::istream& in, const std::string& source = "config",
                         const std::filesystem::path& base = {});
  static RunConfig load(const std::filesystem::path& path);

  /// Sets one key; throws ConfigError for unknown keys or bad values.
  void set(const std::string& section, const std::string& key, const std::string& value,
           const std::filesystem::path& base = {});

  /// Range and consistency checks that need no filesystem access.
  void validate() const;
  /// Additionally checks that the dataset files exist.
  void validate_data() const;

  std::vector<std::string> network_ids() const;

  /// What the trained models depend on: data, architecture, training and
  /// seed. Evaluation settings are recorded separately in each report.
  nlohmann::json fingerprint() const;
  std::string fingerprint_id() const;
  nlohmann::json to_json() const;

  /// FACEVER_CACHE_DIR if set, else <output>/cache.
  std::filesystem::path cache_dir() const;
};

}  // namespace facever
