#include "facever/run_config.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "facever/architecture.hpp"
#include "facever/error.hpp"
#include "facever/image.hpp"

namespace facever {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return char(std::tolower(c)); });
  return s;
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

template <typename T>
T parse_integer(const std::string& key, const std::string& text) {
  T v{};
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc{} || ptr != end) throw ConfigError(key + ": expected a non-negative integer, got '" + text + "'");
  return v;
}

double parse_real(const std::string& key, const std::string& text) {
  char* end = nullptr;
  const double v = std::strtod(text.c_str(), &end);
  if (text.empty() || end != text.c_str() + text.size()) {
    throw ConfigError(key + ": expected a number, got '" + text + "'");
  }
  return v;
}

bool parse_bool(const std::string& key, const std::string& text) {
  const auto t = lower(text);
  if (t == "on" || t == "true" || t == "yes" || t == "1") return true;
  if (t == "off" || t == "false" || t == "no" || t == "0") return false;
  throw ConfigError(key + ": expected on/off, got '" + text + "'");
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& text) {
  if (text.empty()) return {};
  const std::filesystem::path p(text);
  return p.is_absolute() || base.empty() ? p : base / p;
}

FeatureTap parse_tap(const std::string& text) {
  const auto t = lower(text);
  if (t == "post-relu") return FeatureTap::post_relu;
  if (t == "pre-relu") return FeatureTap::pre_relu;
  throw ConfigError("unknown feature tap '" + text + "' (post-relu or pre-relu)");
}

std::string tap_name(FeatureTap tap) { return tap == FeatureTap::post_relu ? "post-relu" : "pre-relu"; }

InitScheme parse_init(const std::string& text) {
  const auto t = lower(text);
  if (t == "gaussian") return InitScheme::gaussian;
  if (t == "he") return InitScheme::he;
  throw ConfigError("unknown init scheme '" + text + "' (gaussian or he)");
}

std::string init_name(InitScheme s) { return s == InitScheme::gaussian ? "gaussian" : "he"; }

}  // namespace

std::string to_string(TrainScope scope) { return scope == TrainScope::shared ? "shared" : "per-fold"; }

TrainScope parse_train_scope(const std::string& text) {
  const auto t = lower(text);
  if (t == "shared") return TrainScope::shared;
  if (t == "per-fold") return TrainScope::per_fold;
  throw ConfigError("unknown training scope '" + text + "' (shared or per-fold)");
}

std::vector<int> parse_network_list(const std::string& text) {
  const auto t = lower(trim(text));
  std::vector<int> out;
  for (auto item : split_list(t)) {
    if (item == "all") {
      for (std::size_t i = 0; i < kPatchCount; ++i) out.push_back(int(i));
      continue;
    }
    if (item == "full") {
      out.push_back(-1);
      continue;
    }
    if (item.rfind("patch", 0) == 0) item = item.substr(5);
    const auto index = parse_integer<std::size_t>("networks", item);
    if (index >= kPatchCount) throw ConfigError("networks: patch index " + item + " outside [0,30)");
    out.push_back(int(index));
  }
  if (out.empty()) throw ConfigError("networks: empty list");
  std::sort(out.begin(), out.end());
  if (std::adjacent_find(out.begin(), out.end()) != out.end()) throw ConfigError("networks: duplicate entry");
  return out;
}

void RunConfig::set(const std::string& section, const std::string& key, const std::string& raw,
                    const std::filesystem::path& base) {
  const std::string name = section + "." + key;
  const std::string value = trim(raw);
  auto positive = [&](double v) {
    if (!(v > 0)) throw ConfigError(name + ": must be positive");
    return v;
  };
  if (section == "data") {
    if (key == "root") root = resolve(base, value);
    else if (key == "pairs") pairs = resolve(base, value);
    else if (key == "people") people = resolve(base, value);
    else if (key == "dev_people") dev_people = resolve(base, value);
    else if (key == "eyes") eyes = resolve(base, value);
    else if (key == "channels") channels = parse_colour_mode(value);
    else throw ConfigError("unknown key " + name);
  } else if (section == "model") {
    if (key == "arch") arch = lower(value);
    else if (key == "networks") networks = parse_network_list(value);
    else if (key == "feature_tap") feature_tap = parse_tap(value);
    else throw ConfigError("unknown key " + name);
  } else if (section == "train") {
    if (key == "scope") scope = parse_train_scope(value);
    else if (key == "learning_rate") train.learning_rate = positive(parse_real(name, value));
    else if (key == "batch_size") train.batch_size = parse_integer<std::size_t>(name, value);
    else if (key == "epochs") train.epochs = parse_integer<std::size_t>(name, value);
    else if (key == "momentum") train.momentum = parse_real(name, value);
    else if (key == "init") train.init.scheme = parse_init(value);
    else if (key == "init_std") train.init.stddev = positive(parse_real(name, value));
    else if (key == "early_stop_delta") train.early_stop_delta = parse_real(name, value);
    else if (key == "early_stop_patience") train.early_stop_patience = parse_integer<std::size_t>(name, value);
    else if (key == "flip_augment") flip_augment = parse_bool(name, value);
    else throw ConfigError("unknown key " + name);
  } else if (section == "eval") {
    if (key == "network") {
      const auto ids = parse_network_list(value);
      if (ids.size() != 1) throw ConfigError(name + ": expected a single network");
      network = network_id_for_patch(ids[0]);
    } else if (key == "distance") distance = parse_distance(value);
    else if (key == "flip_fusion") flip = parse_flip_fusion(value);
    else if (key == "zscore") zscore = parse_bool(name, value);
    else if (key == "pca_dim") pca_dim = parse_integer<std::size_t>(name, value);
    else if (key == "jb") joint_bayesian = parse_bool(name, value);
    else if (key == "select") select = parse_integer<std::size_t>(name, value);
    else if (key == "threshold_pairs") threshold_pairs = parse_integer<std::size_t>(name, value);
    else if (key == "jb_tol") jb.tol = positive(parse_real(name, value));
    else if (key == "jb_max_iter") jb.max_iter = parse_integer<std::size_t>(name, value);
    else if (key == "pca_sweep") {
      pca_sweep.clear();
      for (const auto& item : split_list(value)) pca_sweep.push_back(parse_integer<std::size_t>(name, item));
    } else throw ConfigError("unknown key " + name);
  } else if (section == "run") {
    if (key == "seed") seed = parse_integer<std::uint64_t>(name, value);
    else if (key == "output") output = resolve(base, value);
    else if (key == "threads") threads = parse_integer<std::size_t>(name, value);
    else if (key == "fold") {
      if (value.empty() || lower(value) == "all") fold.reset();
      else fold = parse_integer<std::size_t>(name, value);
    } else throw ConfigError("unknown key " + name);
  } else {
    throw ConfigError("unknown section [" + section + "]");
  }
}

RunConfig RunConfig::parse(std::istream& in, const std::string& source, const std::filesystem::path& base) {
  RunConfig config;
  std::string line, section;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    const auto at = source + ":" + std::to_string(number) + ": ";
    const auto hash = line.find_first_of("#;");
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(at + "unterminated section header");
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(at + "expected key = value");
    if (section.empty()) throw ConfigError(at + "key outside any section");
    try {
      config.set(section, trim(line.substr(0, eq)), line.substr(eq + 1), base);
    } catch (const ConfigError& e) {
      throw ConfigError(at + e.what());
    }
  }
  return config;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  return parse(in, path.string(), path.parent_path());
}

void RunConfig::validate() const {
  build_arch(arch, channel_count(channels), 2);
  train.validate();
  if (networks.empty()) throw ConfigError("model.networks: empty list");
  const auto ids = network_ids();
  if (select > ids.size()) {
    throw ConfigError("eval.select = " + std::to_string(select) + " exceeds the " + std::to_string(ids.size()) +
                      " configured networks");
  }
  if (threshold_pairs == 0) throw ConfigError("eval.threshold_pairs must be positive");
  if (jb.max_iter == 0) throw ConfigError("eval.jb_max_iter must be positive");
  for (auto p : pca_sweep) {
    if (p == 0) throw ConfigError("eval.pca_sweep entries must be positive");
  }
  if (scope == TrainScope::shared && dev_people.empty()) {
    throw ConfigError("train.scope = shared needs data.dev_people");
  }
}

void RunConfig::validate_data() const {
  auto need = [](const std::filesystem::path& p, const char* key) {
    if (p.empty()) throw ConfigError(std::string("data.") + key + " is not set");
    if (!std::filesystem::exists(p)) throw ConfigError(std::string("data.") + key + ": " + p.string() + " does not exist");
  };
  need(root, "root");
  need(pairs, "pairs");
  need(people, "people");
  if (!dev_people.empty()) need(dev_people, "dev_people");
  if (!eyes.empty()) need(eyes, "eyes");
}

std::vector<std::string> RunConfig::network_ids() const {
  std::vector<std::string> out;
  for (int p : networks) out.push_back(network_id_for_patch(p));
  return out;
}

nlohmann::json RunConfig::fingerprint() const {
  // Absolute so the same files give the same fingerprint from any directory.
  auto canonical = [](const std::filesystem::path& p) {
    return p.empty() ? std::string{} : std::filesystem::weakly_canonical(std::filesystem::absolute(p)).generic_string();
  };
  return {
      {"data",
       {{"root", canonical(root)},
        {"pairs", canonical(pairs)},
        {"people", canonical(people)},
        {"dev_people", canonical(dev_people)},
        {"eyes", canonical(eyes)},
        {"channels", to_string(channels)}}},
      {"arch", arch},
      {"feature_tap", tap_name(feature_tap)},
      {"train",
       {{"scope", to_string(scope)},
        {"learning_rate", train.learning_rate},
        {"batch_size", train.batch_size},
        {"epochs", train.epochs},
        {"momentum", train.momentum},
        {"init", init_name(train.init.scheme)},
        {"init_std", train.init.stddev},
        {"early_stop_delta", train.early_stop_delta},
        {"early_stop_patience", train.early_stop_patience},
        {"flip_augment", flip_augment}}},
      {"seed", seed},
  };
}

std::string RunConfig::fingerprint_id() const {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : fingerprint().dump()) {
    h ^= c;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

nlohmann::json RunConfig::to_json() const {
  auto j = fingerprint();
  j["networks"] = network_ids();
  j["eval"] = {{"network", network},
               {"distance", to_string(distance)},
               {"flip_fusion", to_string(flip)},
               {"zscore", zscore},
               {"pca_dim", pca_dim},
               {"jb", joint_bayesian},
               {"select", select},
               {"threshold_pairs", threshold_pairs},
               {"jb_tol", jb.tol},
               {"jb_max_iter", jb.max_iter},
               {"pca_sweep", pca_sweep}};
  j["output"] = output.generic_string();
  j["fingerprint_id"] = fingerprint_id();
  return j;
}

std::filesystem::path RunConfig::cache_dir() const {
  if (const char* env = std::getenv("FACEVER_CACHE_DIR"); env && *env) return env;
  return output / "cache";
}

}  // namespace facever
