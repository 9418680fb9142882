#include "facever/lfw.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <istream>
#include <optional>
#include <random>
#include <set>
#include <sstream>

#include "facever/error.hpp"

namespace facever {
namespace {

struct Line {
  std::size_t number;
  std::vector<std::string> tokens;
};

std::vector<Line> read_lines(std::istream& in) {
  std::vector<Line> lines;
  std::string text;
  std::size_t number = 0;
  while (std::getline(in, text)) {
    ++number;
    std::istringstream ss(text);
    Line line{number, {}};
    std::string tok;
    while (ss >> tok) line.tokens.push_back(tok);
    if (!line.tokens.empty()) lines.push_back(std::move(line));
  }
  return lines;
}

[[noreturn]] void fail(const std::string& source, std::size_t line, const std::string& what) {
  throw ParseError(source + ":" + std::to_string(line) + ": " + what);
}

int to_int(const std::string& tok, const std::string& source, std::size_t line) {
  int value = 0;
  const auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), value);
  if (ec != std::errc{} || ptr != tok.data() + tok.size()) {
    fail(source, line, "expected an integer, got '" + tok + "'");
  }
  return value;
}

std::optional<double> to_double(const std::string& tok) {
  try {
    std::size_t used = 0;
    const double v = std::stod(tok, &used);
    if (used != tok.size()) return std::nullopt;
    return v;
  } catch (const std::exception&) {
    return std::nullopt;
  }
}

std::ifstream open(const std::filesystem::path& path, const char* what) {
  std::ifstream in(path);
  if (!in) throw IngestionError(std::string("cannot open ") + what + " file " + path.string());
  return in;
}

std::filesystem::path resolve_image(const std::filesystem::path& root, const std::string& identity,
                                    const std::string& id, const LfwOptions& options) {
  const auto dir = root / identity;
  for (const auto& ext : options.extensions) {
    auto p = dir / (id + "." + ext);
    if (std::filesystem::exists(p)) return p;
  }
  return dir / (id + "." + options.extensions.front());
}

void register_identity(DatasetIndex& index, const std::filesystem::path& root,
                       const std::string& name, int count, const LfwOptions& options,
                       const std::map<std::string, EyeCoordinates>& eyes) {
  auto& ids = index.subjects[name];
  ids.clear();
  for (int i = 1; i <= count; ++i) {
    const auto id = image_id(name, i);
    ImageRecord rec{name, i, resolve_image(root, name, id, options), options.default_eyes};
    if (auto it = eyes.find(id); it != eyes.end()) rec.eyes = it->second;
    index.images[id] = std::move(rec);
    ids.push_back(id);
  }
}

std::map<std::string, EyeCoordinates> load_eyes(const LfwOptions& options) {
  if (options.eyes_csv.empty()) return {};
  auto in = open(options.eyes_csv, "eye-coordinate");
  return parse_eye_csv(in, options.eyes_csv.string());
}

}  // namespace

int DatasetIndex::fold_of_identity(const std::string& identity) const {
  const auto it = fold_of.find(identity);
  return it == fold_of.end() ? -1 : it->second;
}

const ImageRecord& DatasetIndex::image(const std::string& id) const {
  const auto it = images.find(id);
  if (it == images.end()) throw IngestionError("unknown image id '" + id + "'");
  return it->second;
}

std::size_t PairList::total() const {
  std::size_t n = 0;
  for (const auto& f : folds) n += f.size();
  return n;
}

std::string image_id(const std::string& identity, int number) {
  char suffix[16];
  std::snprintf(suffix, sizeof suffix, "_%04d", number);
  return identity + suffix;
}

PairList parse_pairs(std::istream& in, const std::string& source) {
  const auto lines = read_lines(in);
  if (lines.empty()) fail(source, 1, "empty pairs file");
  const auto& header = lines.front();
  int folds = 1, per_class = 0;
  if (header.tokens.size() == 2) {
    folds = to_int(header.tokens[0], source, header.number);
    per_class = to_int(header.tokens[1], source, header.number);
  } else if (header.tokens.size() == 1) {
    per_class = to_int(header.tokens[0], source, header.number);
  } else {
    fail(source, header.number, "header must be '<folds> <pairs per class>'");
  }
  if (folds <= 0 || per_class <= 0) fail(source, header.number, "header counts must be positive");

  const std::size_t expected = static_cast<std::size_t>(folds) * 2 * per_class;
  if (lines.size() - 1 != expected) {
    const std::size_t at = lines.size() - 1 < expected ? lines.back().number + 1 : lines[expected + 1].number;
    fail(source, at, "expected " + std::to_string(expected) + " pair lines, found " +
                         std::to_string(lines.size() - 1));
  }
  PairList out;
  out.folds.resize(static_cast<std::size_t>(folds));
  std::size_t next = 1;
  for (auto& fold : out.folds) {
    for (int k = 0; k < 2 * per_class; ++k, ++next) {
      const auto& line = lines[next];
      const bool want_matched = k < per_class;
      if (want_matched && line.tokens.size() == 3) {
        const auto& name = line.tokens[0];
        fold.push_back({image_id(name, to_int(line.tokens[1], source, line.number)),
                        image_id(name, to_int(line.tokens[2], source, line.number)), true});
      } else if (!want_matched && line.tokens.size() == 4) {
        fold.push_back({image_id(line.tokens[0], to_int(line.tokens[1], source, line.number)),
                        image_id(line.tokens[2], to_int(line.tokens[3], source, line.number)),
                        false});
      } else {
        fail(source, line.number,
             want_matched ? "expected matched pair 'name i j'"
                          : "expected unmatched pair 'name1 i name2 j'");
      }
    }
  }
  return out;
}

std::vector<std::vector<std::pair<std::string, int>>> parse_people(std::istream& in,
                                                                   const std::string& source) {
  const auto lines = read_lines(in);
  if (lines.empty()) fail(source, 1, "empty people file");
  if (lines.front().tokens.size() != 1) fail(source, lines.front().number, "header must be a count");
  const int head = to_int(lines.front().tokens[0], source, lines.front().number);
  if (head < 0) fail(source, lines.front().number, "negative count");

  std::set<std::string> seen;
  std::size_t next = 1;
  auto read_person = [&](std::vector<std::pair<std::string, int>>& into) {
    if (next >= lines.size()) fail(source, lines.back().number + 1, "unexpected end of file");
    const auto& line = lines[next++];
    if (line.tokens.size() != 2) fail(source, line.number, "expected 'name count'");
    const int n = to_int(line.tokens[1], source, line.number);
    if (n <= 0) fail(source, line.number, "image count must be positive");
    if (!seen.insert(line.tokens[0]).second) {
      fail(source, line.number, "identity '" + line.tokens[0] + "' listed twice");
    }
    into.emplace_back(line.tokens[0], n);
  };

  std::vector<std::vector<std::pair<std::string, int>>> folds;
  const bool flat = lines.size() > 1 && lines[1].tokens.size() == 2;
  if (flat) {
    folds.emplace_back();
    for (int i = 0; i < head; ++i) read_person(folds.back());
  } else {
    for (int f = 0; f < head; ++f) {
      if (next >= lines.size()) fail(source, lines.back().number + 1, "missing fold block");
      const auto& count_line = lines[next++];
      if (count_line.tokens.size() != 1) fail(source, count_line.number, "expected fold size");
      const int count = to_int(count_line.tokens[0], source, count_line.number);
      if (count < 0) fail(source, count_line.number, "negative fold size");
      folds.emplace_back();
      for (int i = 0; i < count; ++i) read_person(folds.back());
    }
  }
  if (next != lines.size()) fail(source, lines[next].number, "trailing lines after last block");
  return folds;
}

std::map<std::string, EyeCoordinates> parse_eye_csv(std::istream& in, const std::string& source) {
  std::map<std::string, EyeCoordinates> out;
  std::string text;
  std::size_t number = 0;
  while (std::getline(in, text)) {
    ++number;
    if (!text.empty() && text.back() == '\r') text.pop_back();
    if (text.find_first_not_of(" \t") == std::string::npos) continue;
    std::vector<std::string> fields;
    std::stringstream ss(text);
    std::string f;
    while (std::getline(ss, f, ',')) {
      const auto b = f.find_first_not_of(" \t");
      const auto e = f.find_last_not_of(" \t");
      fields.push_back(b == std::string::npos ? std::string{} : f.substr(b, e - b + 1));
    }
    if (fields.size() != 5) fail(source, number, "expected 'image_id,lx,ly,rx,ry'");
    std::array<double, 4> v{};
    bool numeric = true;
    for (std::size_t i = 0; i < 4; ++i) {
      const auto d = to_double(fields[i + 1]);
      if (!d) {
        numeric = false;
        break;
      }
      v[i] = *d;
    }
    if (!numeric) {
      if (out.empty() && number == 1) continue;  // header
      fail(source, number, "non-numeric eye coordinate");
    }
    out[fields[0]] = {{v[0], v[1]}, {v[2], v[3]}};
  }
  return out;
}

LfwData load_lfw(const std::filesystem::path& root, const std::filesystem::path& pairs_file,
                 const std::filesystem::path& people_file, const LfwOptions& options) {
  if (!std::filesystem::is_directory(root)) {
    throw IngestionError("image root " + root.string() + " is not a directory");
  }
  const auto eyes = load_eyes(options);
  LfwData data;
  {
    auto in = open(people_file, "people");
    const auto folds = parse_people(in, people_file.string());
    data.index.num_folds = folds.size();
    for (std::size_t f = 0; f < folds.size(); ++f) {
      for (const auto& [name, count] : folds[f]) {
        register_identity(data.index, root, name, count, options, eyes);
        data.index.fold_of[name] = static_cast<int>(f);
      }
    }
  }
  {
    auto in = open(pairs_file, "pairs");
    data.pairs = parse_pairs(in, pairs_file.string());
  }
  if (data.pairs.folds.size() != data.index.num_folds) {
    throw ParseError(pairs_file.string() + ":1: " + std::to_string(data.pairs.folds.size()) +
                     " pair folds but " + std::to_string(data.index.num_folds) + " people folds");
  }
  for (std::size_t f = 0; f < data.pairs.folds.size(); ++f) {
    for (const auto& p : data.pairs.folds[f]) {
      for (const auto* id : {&p.a, &p.b}) {
        if (!data.index.images.count(*id)) {
          throw ParseError(pairs_file.string() + ": fold " + std::to_string(f) +
                           " references image '" + *id + "' absent from " + people_file.string());
        }
      }
    }
  }
  return data;
}

std::vector<std::string> add_people(DatasetIndex& index, const std::filesystem::path& root,
                                    const std::filesystem::path& people_file,
                                    const LfwOptions& options) {
  const auto eyes = load_eyes(options);
  auto in = open(people_file, "people");
  const auto folds = parse_people(in, people_file.string());
  std::vector<std::string> names;
  for (const auto& fold : folds) {
    for (const auto& [name, count] : fold) {
      if (index.subjects.count(name)) {
        // Keep the existing record (and its fold) when the lists overlap.
        names.push_back(name);
        continue;
      }
      register_identity(index, root, name, count, options, eyes);
      names.push_back(name);
    }
  }
  return names;
}

LabelledImages label_identities(const DatasetIndex& index, std::vector<std::string> identities) {
  LabelledImages out;
  out.identities = std::move(identities);
  for (std::size_t label = 0; label < out.identities.size(); ++label) {
    const auto it = index.subjects.find(out.identities[label]);
    if (it == index.subjects.end()) {
      throw IngestionError("identity '" + out.identities[label] + "' is not in the index");
    }
    for (const auto& id : it->second) {
      out.image_ids.push_back(id);
      out.labels.push_back(static_cast<int>(label));
    }
  }
  return out;
}

FoldSplit make_fold_datasets(const DatasetIndex& index, const PairList& pairs, std::size_t fold) {
  if (fold >= pairs.folds.size() || fold >= index.num_folds) {
    throw ConfigError("fold " + std::to_string(fold) + " outside [0," +
                      std::to_string(pairs.folds.size()) + ")");
  }
  FoldSplit split;
  split.fold = fold;
  split.test_pairs = pairs.folds[fold];
  std::set<std::string> test_identities;
  for (const auto& p : split.test_pairs) {
    test_identities.insert(index.image(p.a).identity);
    test_identities.insert(index.image(p.b).identity);
  }
  std::vector<std::string> train;
  for (const auto& [name, f] : index.fold_of) {
    if (f != static_cast<int>(fold) && !test_identities.count(name)) train.push_back(name);
  }
  split.train = label_identities(index, std::move(train));
  return split;
}

std::vector<Pair> sample_pairs(const DatasetIndex& index, const std::vector<std::string>& identities,
                               std::size_t per_class, std::uint64_t seed) {
  std::vector<const std::vector<std::string>*> groups, multi;
  for (const auto& name : identities) {
    const auto it = index.subjects.find(name);
    if (it == index.subjects.end()) throw IngestionError("identity '" + name + "' is not in the index");
    groups.push_back(&it->second);
    if (it->second.size() >= 2) multi.push_back(&it->second);
  }
  if (multi.empty()) throw ProtocolError("no identity with two or more images to form matched pairs");
  if (groups.size() < 2) throw ProtocolError("need two identities to form unmatched pairs");

  std::mt19937_64 rng(seed);
  auto pick = [&](std::size_t n) { return static_cast<std::size_t>(rng() % n); };
  std::set<std::pair<std::string, std::string>> used;
  // Draw until a fresh pair turns up; after a bounded number of collisions
  // accept repeats so tiny identity sets still terminate.
  auto draw = [&](auto make) {
    for (std::size_t attempt = 0;; ++attempt) {
      Pair p = make();
      auto key = std::minmax(p.a, p.b);
      if (used.insert({key.first, key.second}).second || attempt >= 64) return p;
    }
  };
  std::vector<Pair> out;
  out.reserve(2 * per_class);
  for (std::size_t k = 0; k < per_class; ++k) {
    out.push_back(draw([&] {
      const auto& g = *multi[pick(multi.size())];
      const std::size_t i = pick(g.size());
      std::size_t j = pick(g.size() - 1);
      if (j >= i) ++j;
      return Pair{g[i], g[j], true};
    }));
  }
  for (std::size_t k = 0; k < per_class; ++k) {
    out.push_back(draw([&] {
      const std::size_t gi = pick(groups.size());
      std::size_t gj = pick(groups.size() - 1);
      if (gj >= gi) ++gj;
      const auto& a = *groups[gi];
      const auto& b = *groups[gj];
      return Pair{a[pick(a.size())], b[pick(b.size())], false};
    }));
  }
  return out;
}

}  // namespace facever
