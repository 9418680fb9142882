#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "facever/features.hpp"
#include "facever/lfw.hpp"
#include "facever/protocol.hpp"
#include "facever/run_config.hpp"

namespace facever {

enum class EvalCommand { eval, fuse_eval, jb_eval };

std::string to_string(EvalCommand command);

using LogSink = std::function<void(const std::string& line)>;

/// The staged pipeline behind the CLI. Each stage reads the artifacts of the
/// previous one from the output tree:
///
///   prepare  <cache>/faces-<channels>.fvt
///   train    models/<scope>/<network>.fvb
///   extract  features/<scope>.fvf
///   eval     reports/<name>.json, .csv (and <name>-pca.csv for a sweep)
///
/// <scope> is "shared" or "fold<k>".
class Experiment {
 public:
  explicit Experiment(RunConfig config, LogSink log = {}, LogSink warn = {});

  const RunConfig& config() const noexcept { return config_; }
  const LfwData& data();

  std::vector<std::string> scopes();
  std::filesystem::path face_cache_path() const;
  std::filesystem::path model_path(const std::string& scope, const std::string& network_id) const;
  std::filesystem::path feature_path(const std::string& scope) const;
  std::filesystem::path reports_dir() const;

  std::filesystem::path prepare();
  std::vector<std::filesystem::path> train();
  std::vector<std::filesystem::path> extract();

  ScoringOptions scoring_options(EvalCommand command) const;
  std::string report_name(EvalCommand command) const;
  /// Runs the protocol, writes the report and returns it.
  Report evaluate(EvalCommand command);

 private:
  LabelledImages scope_training(const std::string& scope);
  FaceSet load_faces();
  std::uint64_t network_seed(const std::string& scope, int patch_index) const;

  RunConfig config_;
  LogSink log_, warn_;
  std::optional<LfwData> data_;
  std::vector<std::string> dev_identities_;
};

/// Config for the desk-scale synthetic experiment, with data paths relative
/// to the directory `write_synthetic_lfw` filled.
std::string desk_config_text();

struct SummaryOptions {
  std::vector<std::filesystem::path> inputs;  // report directories
  std::filesystem::path output;               // summary.csv and summary.md go here
  bool force = false;                         // aggregate across fingerprints
};

/// Collects every report JSON under the inputs into one comparison table.
/// Throws ProtocolError when fingerprints differ and force is off.
std::vector<std::filesystem::path> summarize_reports(const SummaryOptions& options);

}  // namespace facever
