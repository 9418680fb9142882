#include "facever/experiment.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <memory>
#include <numeric>
#include <sstream>

#include "facever/architecture.hpp"
#include "facever/container.hpp"
#include "facever/error.hpp"
#include "facever/model_io.hpp"
#include "facever/trainer.hpp"
#include "facever/verification.hpp"

namespace facever {

namespace {

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

std::string fixed(double v, int digits = 4) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::size_t scope_fold(const std::string& scope) { return std::stoul(scope.substr(4)); }

std::string fingerprint_id_of(const nlohmann::json& artifact_fingerprint) {
  return artifact_fingerprint.is_object() ? artifact_fingerprint.value("id", std::string{}) : std::string{};
}

}  // namespace

std::string to_string(EvalCommand command) {
  switch (command) {
    case EvalCommand::eval: return "eval";
    case EvalCommand::fuse_eval: return "fuse-eval";
    case EvalCommand::jb_eval: return "jb-eval";
  }
  return "eval";
}

Experiment::Experiment(RunConfig config, LogSink log, LogSink warn)
    : config_(std::move(config)), log_(std::move(log)), warn_(std::move(warn)) {
  config_.validate();
  if (!log_) log_ = [](const std::string&) {};
  if (!warn_) warn_ = [](const std::string&) {};
}

const LfwData& Experiment::data() {
  if (!data_) {
    config_.validate_data();
    LfwOptions options;
    options.eyes_csv = config_.eyes;
    data_ = load_lfw(config_.root, config_.pairs, config_.people, options);
    if (!config_.dev_people.empty()) {
      dev_identities_ = add_people(data_->index, config_.root, config_.dev_people, options);
    }
    if (config_.fold && *config_.fold >= data_->pairs.folds.size()) {
      throw ConfigError("run.fold = " + std::to_string(*config_.fold) + " but the pairs file has " +
                        std::to_string(data_->pairs.folds.size()) + " folds");
    }
  }
  return *data_;
}

std::vector<std::string> Experiment::scopes() {
  if (config_.scope == TrainScope::shared) return {"shared"};
  if (config_.fold) return {"fold" + std::to_string(*config_.fold)};
  std::vector<std::string> out;
  for (std::size_t f = 0; f < data().pairs.folds.size(); ++f) out.push_back("fold" + std::to_string(f));
  return out;
}

std::filesystem::path Experiment::face_cache_path() const {
  return config_.cache_dir() / ("faces-" + to_string(config_.channels) + ".fvt");
}

std::filesystem::path Experiment::model_path(const std::string& scope, const std::string& network_id) const {
  return config_.output / "models" / scope / (network_id + ".fvb");
}

std::filesystem::path Experiment::feature_path(const std::string& scope) const {
  return config_.output / "features" / (scope + ".fvf");
}

std::filesystem::path Experiment::reports_dir() const { return config_.output / "reports"; }

std::filesystem::path Experiment::prepare() {
  const auto& index = data().index;
  std::vector<std::string> ids;
  for (const auto& [id, record] : index.images) ids.push_back(id);
  log_("prepare: cropping " + std::to_string(ids.size()) + " images");
  const auto faces = prepare_faces(index, ids, config_.channels);
  const auto path = face_cache_path();
  save_face_set(path, faces, {{"data", config_.fingerprint().at("data")}});
  log_("prepare: wrote " + path.string());
  return path;
}

FaceSet Experiment::load_faces() {
  const auto path = face_cache_path();
  if (!std::filesystem::exists(path)) {
    throw IngestionError("face cache " + path.string() + " is missing; run prepare first");
  }
  nlohmann::json extra;
  auto faces = load_face_set(path, &extra);
  if (extra.value("data", nlohmann::json{}) != config_.fingerprint().at("data")) {
    throw IngestionError("face cache " + path.string() + " was built from different data; rerun prepare");
  }
  return faces;
}

LabelledImages Experiment::scope_training(const std::string& scope) {
  const auto& d = data();
  if (scope == "shared") {
    if (dev_identities_.empty()) throw ConfigError("data.dev_people lists no identities");
    return label_identities(d.index, dev_identities_);
  }
  return make_fold_datasets(d.index, d.pairs, scope_fold(scope)).train;
}

std::uint64_t Experiment::network_seed(const std::string& scope, int patch_index) const {
  std::uint64_t h = splitmix(config_.seed);
  for (unsigned char c : scope) h = splitmix(h ^ c);
  return splitmix(h ^ static_cast<std::uint64_t>(patch_index + 1));
}

std::vector<std::filesystem::path> Experiment::train() {
  const auto faces = load_faces();
  const nlohmann::json fingerprint{{"id", config_.fingerprint_id()}, {"config", config_.fingerprint()}};
  if (config_.train.epochs == 0) warn_("epochs = 0: saving untrained networks");
  std::vector<std::filesystem::path> written;
  for (const auto& scope : scopes()) {
    const auto labelled = scope_training(scope);
    if (labelled.num_classes() < 2) throw LabelError(scope + ": fewer than two training identities");
    const FoldMask mask = identity_mask(data().index, labelled.identities);
    for (int patch : config_.networks) {
      const auto id = network_id_for_patch(patch);
      const auto tensors = make_training_data(faces, labelled, patch, config_.flip_augment);
      const auto arch = build_arch(config_.arch, faces.channels(), labelled.num_classes());
      TrainConfig tc = config_.train;
      tc.rng_seed = network_seed(scope, patch);
      log_("train " + scope + "/" + id + ": " + std::to_string(tensors.set.size()) + " samples, " +
           std::to_string(labelled.num_classes()) + " identities");
      auto result = facever::train(arch, tensors.set, tc, [&](const EpochStats& e) {
        log_("train " + scope + "/" + id + " epoch " + std::to_string(e.epoch) + ": loss " + fixed(e.loss) +
             ", accuracy " + fixed(e.accuracy));
      });
      FaceModel model;
      model.network = std::move(result.network);
      model.mean_image = tensors.mean;
      model.network_id = id;
      model.patch_index = patch;
      model.fingerprint = fingerprint;
      model.fold_mask = mask;
      model.history = std::move(result.history);
      const auto path = model_path(scope, id);
      save_model(path, model);
      written.push_back(path);
    }
  }
  return written;
}

std::vector<std::filesystem::path> Experiment::extract() {
  const auto faces = load_faces();
  const auto expected = config_.fingerprint_id();
  std::vector<std::size_t> rows(faces.size());
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  std::vector<std::filesystem::path> written;
  for (const auto& scope : scopes()) {
    FeatureBank bank(faces.ids());
    for (int patch : config_.networks) {
      const auto id = network_id_for_patch(patch);
      const auto path = model_path(scope, id);
      if (!std::filesystem::exists(path)) {
        throw ProtocolError(scope + ": model " + path.string() + " is missing; run train first");
      }
      const auto model = load_model(path);
      if (fingerprint_id_of(model.fingerprint) != expected) {
        throw ConfigError(path.string() + " was trained under fingerprint " + fingerprint_id_of(model.fingerprint) +
                          ", the config gives " + expected);
      }
      log_("extract " + scope + "/" + id);
      FeatureBlock block;
      block.network_id = id;
      block.patch_index = patch;
      block.fold_mask = model.fold_mask;
      block.original = extract_features(model, faces, rows, false, config_.feature_tap);
      block.mirrored = extract_features(model, faces, rows, true, config_.feature_tap);
      bank.add(std::move(block));
    }
    const auto path = feature_path(scope);
    save_features(path, bank, {{"fingerprint", {{"id", expected}, {"config", config_.fingerprint()}}}, {"scope", scope}});
    written.push_back(path);
  }
  return written;
}

ScoringOptions Experiment::scoring_options(EvalCommand command) const {
  ScoringOptions o;
  o.flip = config_.flip;
  o.zscore = config_.zscore;
  o.pca_dim = config_.pca_dim;
  o.joint_bayesian = config_.joint_bayesian || command == EvalCommand::jb_eval;
  o.distance = config_.distance;
  o.jb = config_.jb;
  if (command == EvalCommand::eval) {
    o.networks = {config_.network};
  } else {
    o.networks = config_.network_ids();
    o.select = config_.select;
  }
  return o;
}

std::string Experiment::report_name(EvalCommand command) const {
  const auto o = scoring_options(command);
  std::string name = to_string(command) + "-" + config_.arch + "-";
  if (command == EvalCommand::eval) {
    name += o.networks.front();
  } else {
    name += std::to_string(o.networks.size()) + "nets";
    if (o.select) name += "-best" + std::to_string(o.select);
  }
  if (o.zscore) name += "-z";
  if (o.pca_dim) name += "-pca" + std::to_string(o.pca_dim);
  name += o.joint_bayesian ? std::string("-jb") : "-" + to_string(o.distance);
  if (o.flip != FlipFusion::none) name += "-flip" + to_string(o.flip);
  if (config_.fold) name += "-fold" + std::to_string(*config_.fold);
  return name;
}

Report Experiment::evaluate(EvalCommand command) {
  const auto& d = data();
  const auto expected = config_.fingerprint_id();
  // Banks are loaded up front; a missing one surfaces inside its fold.
  std::map<std::string, std::unique_ptr<FeatureBank>> banks;
  for (const auto& scope : scopes()) {
    const auto path = feature_path(scope);
    if (!std::filesystem::exists(path)) continue;
    nlohmann::json extra;
    auto bank = std::make_unique<FeatureBank>(load_features(path, &extra));
    const auto got = fingerprint_id_of(extra.value("fingerprint", nlohmann::json{}));
    if (got != expected) {
      throw ConfigError(path.string() + " was extracted under fingerprint " + got + ", the config gives " + expected);
    }
    banks[scope] = std::move(bank);
  }
  const bool shared = config_.scope == TrainScope::shared;
  if (shared && banks.empty()) {
    throw ProtocolError("features " + feature_path("shared").string() + " are missing; run extract first");
  }
  BankProvider provider = [&, shared](std::size_t fold) -> const FeatureBank& {
    const std::string scope = shared ? "shared" : "fold" + std::to_string(fold);
    const auto it = banks.find(scope);
    if (it == banks.end()) {
      throw ProtocolError("feature artifact " + feature_path(scope).string() + " for fold " + std::to_string(fold) +
                          " is missing");
    }
    return *it->second;
  };

  ProtocolOptions p;
  p.threshold_pairs_per_class = config_.threshold_pairs;
  p.seed = config_.seed;
  if (config_.fold) p.folds = {*config_.fold};

  const auto options = scoring_options(command);
  const auto name = report_name(command);
  log_(to_string(command) + ": " + name);
  Report report = run_protocol(d.index, d.pairs, feature_scorer_factory(provider, options), p);
  report.fingerprint = {{"id", expected}, {"config", config_.fingerprint()}};
  report.options = options.to_json();
  report.options["command"] = to_string(command);
  report.options["threshold_pairs"] = config_.threshold_pairs;
  for (const auto& f : report.folds) {
    for (const auto& w : f.details.value("jb_warnings", nlohmann::json::array())) {
      warn_("fold " + std::to_string(f.fold) + ": " + w.get<std::string>());
    }
  }
  write_report(reports_dir() / name, report);
  log_(name + ": accuracy " + fixed(report.mean_accuracy) + " +- " + fixed(report.sem));

  if (!config_.pca_sweep.empty()) {
    std::string csv = "pca_dim,mean_accuracy,sem\n";
    for (auto dim : config_.pca_sweep) {
      auto o = options;
      o.pca_dim = dim;
      const auto r = run_protocol(d.index, d.pairs, feature_scorer_factory(provider, o), p);
      char line[96];
      std::snprintf(line, sizeof line, "%zu,%.6f,%.6f\n", dim, r.mean_accuracy, r.sem);
      csv += line;
      log_("pca sweep " + std::to_string(dim) + ": " + fixed(r.mean_accuracy));
    }
    atomic_write(reports_dir() / (name + "-pca.csv"), csv);
  }
  return report;
}

std::string desk_config_text() {
  return "# Desk-scale experiment on a synthetic LFW-style tree.\n"
         "[data]\n"
         "root = images\n"
         "pairs = pairs.txt\n"
         "people = people.txt\n"
         "dev_people = peopleDevTrain.txt\n"
         "eyes = eyes.csv\n"
         "channels = colour\n"
         "\n"
         "[model]\n"
         "arch = cnn-m\n"
         "networks = full,5,11,17,23,29\n"
         "\n"
         "[train]\n"
         "scope = shared\n"
         "learning_rate = 0.01\n"
         "momentum = 0.9\n"
         "init = he\n"
         "batch_size = 100\n"
         "epochs = 25\n"
         "\n"
         "[eval]\n"
         "distance = cosine\n"
         "threshold_pairs = 1000\n"
         "pca_sweep = 16,32,64,128\n"
         "\n"
         "[run]\n"
         "seed = 1\n"
         "output = output\n";
}

std::vector<std::filesystem::path> summarize_reports(const SummaryOptions& options) {
  struct Row {
    std::string name;
    Report report;
  };
  std::vector<Row> rows;
  for (const auto& dir : options.inputs) {
    if (!std::filesystem::is_directory(dir)) throw ProtocolError("report directory " + dir.string() + " does not exist");
    std::vector<std::filesystem::path> files;
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
      if (entry.path().extension() == ".json") files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) rows.push_back({f.stem().string(), read_report(f)});
  }
  if (rows.empty()) throw ProtocolError("no reports to aggregate");

  const auto first = fingerprint_id_of(rows.front().report.fingerprint);
  for (const auto& r : rows) {
    const auto id = fingerprint_id_of(r.report.fingerprint);
    if (id != first && !options.force) {
      throw ProtocolError("report " + r.name + " has fingerprint " + id + " but " + rows.front().name + " has " +
                          first + "; pass --force to aggregate anyway");
    }
  }

  auto join = [](const nlohmann::json& list) {
    std::string s;
    for (const auto& v : list) s += (s.empty() ? "" : "+") + v.get<std::string>();
    return s;
  };
  std::string csv = "report,command,arch,fingerprint,networks,select,distance,flip_fusion,zscore,pca_dim,jb,folds,"
                    "mean_accuracy,sem\n";
  std::map<std::string, std::vector<std::string>> tables;
  for (const auto& [name, report] : rows) {
    const auto& o = report.options;
    const auto config = report.fingerprint.value("config", nlohmann::json::object());
    const std::string arch = config.value("arch", std::string("?"));
    const std::string command = o.value("command", std::string("eval"));
    const std::string nets = join(o.value("networks", nlohmann::json::array()));
    const bool jb = o.value("jb", false);
    const std::string distance = o.value("distance", std::string("?"));
    const std::string flip = o.value("flip_fusion", std::string("none"));
    const auto pca = o.value("pca_dim", std::size_t{0});
    const auto select = o.value("select", std::size_t{0});
    std::ostringstream line;
    line << name << ',' << command << ',' << arch << ',' << fingerprint_id_of(report.fingerprint) << ',' << nets
         << ',' << select << ',' << distance << ',' << flip << ','
         << (o.value("zscore", false) ? 1 : 0) << ',' << pca << ',' << (jb ? 1 : 0) << ',' << report.folds.size()
         << ',' << fixed(report.mean_accuracy, 6) << ',' << fixed(report.sem, 6) << '\n';
    csv += line.str();
    std::ostringstream md;
    md << "| " << name << " | " << arch << " | " << nets << (select ? " (best " + std::to_string(select) + ")" : "")
       << " | " << distance << (o.value("zscore", false) ? " (z-scored)" : "") << " | " << flip << " | "
       << (pca ? std::to_string(pca) : "-") << " | " << fixed(report.mean_accuracy) << " +- " << fixed(report.sem)
       << " |\n";
    tables[command].push_back(md.str());
  }

  std::string md = "# Verification results\n";
  const std::vector<std::pair<std::string, std::string>> sections{
      {"eval", "Single networks"}, {"fuse-eval", "Network fusion"}, {"jb-eval", "Joint Bayesian"}};
  for (const auto& [command, title] : sections) {
    if (!tables.count(command)) continue;
    md += "\n## " + title + "\n\n| Report | Arch | Networks | Scoring | Flip fusion | PCA | Accuracy |\n";
    md += "|---|---|---|---|---|---|---|\n";
    for (const auto& line : tables[command]) md += line;
  }
  const auto csv_path = options.output / "summary.csv";
  const auto md_path = options.output / "summary.md";
  atomic_write(csv_path, csv);
  atomic_write(md_path, md);
  return {csv_path, md_path};
}

}  // namespace facever
