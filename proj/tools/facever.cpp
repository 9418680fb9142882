// facever: staged face verification experiments driven by a config file.
//
//   facever synth --out data/desk
//   facever prepare --config data/desk/desk.conf
//   facever train   --config data/desk/desk.conf --threads 1
//   facever extract --config data/desk/desk.conf
//   facever eval    --config data/desk/desk.conf --distance euclidean
//   facever report  --config data/desk/desk.conf

#include <omp.h>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "facever/error.hpp"
#include "facever/experiment.hpp"
#include "facever/synthetic.hpp"

namespace {

using namespace facever;

struct Overrides {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  std::optional<std::size_t> fold;
  std::optional<std::string> arch, distance, pca_dim, jb, flip_fusion, network;
  std::vector<std::string> set;
  bool quiet = false;
};

void add_common(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--config", o.config, "Experiment config file")->required();
  cmd->add_option("--seed", o.seed, "Run seed");
  cmd->add_option("--threads", o.threads, "OpenMP threads (1 for bitwise reproducible runs)");
  cmd->add_option("--fold", o.fold, "Restrict to one held-out fold");
  cmd->add_option("--arch", o.arch, "cnn-s, cnn-m or cnn-l");
  cmd->add_option("--distance", o.distance, "euclidean, cityblock, chebychev, cosine, correlation or spearman");
  cmd->add_option("--pca-dim", o.pca_dim, "PCA output dimension, 0 for none");
  cmd->add_option("--jb", o.jb, "Joint Bayesian scoring")->check(CLI::IsMember({"on", "off"}));
  cmd->add_option("--flip-fusion", o.flip_fusion, "Mirror handling")->check(CLI::IsMember({"none", "feature", "score"}));
  cmd->add_option("--network", o.network, "Network scored by eval (full or patchN)");
  cmd->add_option("--set", o.set, "Override any key: section.key=value");
  cmd->add_flag("--quiet", o.quiet, "Only print warnings and errors");
}

RunConfig build_config(const Overrides& o) {
  auto config = RunConfig::load(o.config);
  if (o.seed) config.seed = *o.seed;
  if (o.fold) config.fold = *o.fold;
  if (o.arch) config.set("model", "arch", *o.arch);
  if (o.distance) config.set("eval", "distance", *o.distance);
  if (o.pca_dim) config.set("eval", "pca_dim", *o.pca_dim);
  if (o.jb) config.set("eval", "jb", *o.jb);
  if (o.flip_fusion) config.set("eval", "flip_fusion", *o.flip_fusion);
  if (o.network) config.set("eval", "network", *o.network);
  for (const auto& item : o.set) {
    const auto dot = item.find('.');
    const auto eq = item.find('=');
    if (dot == std::string::npos || eq == std::string::npos || dot > eq) {
      throw ConfigError("--set expects section.key=value, got '" + item + "'");
    }
    config.set(item.substr(0, dot), item.substr(dot + 1, eq - dot - 1), item.substr(eq + 1));
  }
  if (o.threads) {
    if (*o.threads < 1) throw ConfigError("--threads must be at least 1");
    config.threads = static_cast<std::size_t>(*o.threads);
  }
  config.validate();
  if (config.threads > 0) omp_set_num_threads(static_cast<int>(config.threads));
  return config;
}

Experiment make_experiment(const Overrides& o) {
  LogSink log = [quiet = o.quiet](const std::string& line) {
    if (!quiet) std::fprintf(stderr, "%s\n", line.c_str());
  };
  LogSink warn = [](const std::string& line) { std::fprintf(stderr, "warning: %s\n", line.c_str()); };
  return Experiment(build_config(o), log, warn);
}

// Messages can quote multi-line inputs; the error contract is one line.
std::string one_line(std::string s) {
  for (auto& c : s) {
    if (c == '\n' || c == '\r') c = ' ';
  }
  return s;
}

void print_paths(const std::vector<std::filesystem::path>& paths) {
  for (const auto& p : paths) std::printf("%s\n", p.string().c_str());
}

void write_desk_config(const std::filesystem::path& dir) { std::ofstream(dir / "desk.conf") << desk_config_text(); }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Face verification experiments: prepare, train, extract, evaluate, report"};
  app.require_subcommand(1);

  Overrides o;
  auto* prepare = app.add_subcommand("prepare", "Crop and cache every face");
  auto* train = app.add_subcommand("train", "Train the configured networks");
  auto* extract = app.add_subcommand("extract", "Write feature files for the trained networks");
  auto* eval = app.add_subcommand("eval", "Verify with a single network's features");
  auto* fuse = app.add_subcommand("fuse-eval", "Verify with the fused features of all configured networks");
  auto* jb = app.add_subcommand("jb-eval", "Fused features scored by Joint Bayesian");
  auto* report = app.add_subcommand("report", "Aggregate reports into a comparison table");
  for (auto* cmd : {prepare, train, extract, eval, fuse, jb, report}) add_common(cmd, o);
  bool force = false;
  std::vector<std::filesystem::path> inputs;
  report->add_flag("--force", force, "Aggregate reports with different fingerprints");
  report->add_option("--input", inputs, "Extra report directories");

  auto* synth = app.add_subcommand("synth", "Write a synthetic LFW-style dataset and a desk config");
  std::filesystem::path out;
  SyntheticConfig sc;
  SyntheticLayout layout;
  synth->add_option("--out", out, "Output directory")->required();
  synth->add_option("--identities", sc.identities, "Identities")->capture_default_str();
  synth->add_option("--images", sc.images_per_identity, "Images per identity")->capture_default_str();
  synth->add_option("--dev", layout.dev_identities, "Development identities (no fold)")->capture_default_str();
  synth->add_option("--folds", layout.folds, "Folds")->capture_default_str();
  synth->add_option("--pairs", layout.pairs_per_class, "Pairs per class and fold")->capture_default_str();
  synth->add_option("--seed", sc.seed, "Generator seed")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    std::fprintf(stderr, "error: usage: %s\n", one_line(e.what()).c_str());
    return 2;
  }

  try {
    if (synth->parsed()) {
      write_synthetic_lfw(out, sc, layout);
      write_desk_config(out);
      std::printf("%s\n", (out / "desk.conf").string().c_str());
      return 0;
    }
    auto experiment = make_experiment(o);
    if (prepare->parsed()) {
      print_paths({experiment.prepare()});
    } else if (train->parsed()) {
      print_paths(experiment.train());
    } else if (extract->parsed()) {
      print_paths(experiment.extract());
    } else if (eval->parsed() || fuse->parsed() || jb->parsed()) {
      const auto command = eval->parsed() ? EvalCommand::eval : fuse->parsed() ? EvalCommand::fuse_eval : EvalCommand::jb_eval;
      const auto r = experiment.evaluate(command);
      std::printf("%s %.4f %.4f\n", experiment.report_name(command).c_str(), r.mean_accuracy, r.sem);
    } else if (report->parsed()) {
      SummaryOptions s;
      s.inputs = {experiment.reports_dir()};
      s.inputs.insert(s.inputs.end(), inputs.begin(), inputs.end());
      s.output = experiment.reports_dir();
      s.force = force;
      print_paths(summarize_reports(s));
    }
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s: %s\n", e.error_class().c_str(), one_line(e.what()).c_str());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: internal: %s\n", one_line(e.what()).c_str());
    return 1;
  }
  return 0;
}
