#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "doctest.h"
#include "facever/error.hpp"
#include "facever/image_io.hpp"
#include "facever/lfw.hpp"

using namespace facever;

namespace {

std::string parse_error(const std::string& text, bool people = false) {
  std::istringstream in(text);
  try {
    if (people) {
      parse_people(in, "f.txt");
    } else {
      parse_pairs(in, "f.txt");
    }
  } catch (const ParseError& e) {
    return e.what();
  }
  return "";
}

struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& name) : path(std::filesystem::temp_directory_path() / name) {
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
};

void write(const std::filesystem::path& p, const std::string& text) { std::ofstream(p) << text; }

}  // namespace

TEST_CASE("image ids") {
  CHECK(image_id("Alice", 3) == "Alice_0003");
  CHECK(image_id("George_W_Bush", 123) == "George_W_Bush_0123");
}

TEST_CASE("pairs lines") {
  std::istringstream in("1 1\nAlice 1 3\nAlice 1 Bob 2\n");
  const auto p = parse_pairs(in);
  REQUIRE(p.folds.size() == 1);
  REQUIRE(p.folds[0].size() == 2);
  CHECK(p.folds[0][0] == Pair{"Alice_0001", "Alice_0003", true});
  CHECK(p.folds[0][1] == Pair{"Alice_0001", "Bob_0002", false});
  CHECK(p.total() == 2);

  std::istringstream two("2 1\nA 1 2\nA 1 B 1\nC 2 3\nC 1 D 4\n");
  const auto q = parse_pairs(two);
  REQUIRE(q.folds.size() == 2);
  CHECK(q.folds[1][0] == Pair{"C_0002", "C_0003", true});
  // A lone count means a single fold of that many pairs per class.
  std::istringstream single("1\nA 1 2\nA 1 B 1\n");
  CHECK(parse_pairs(single).folds.size() == 1);
}

TEST_CASE("malformed pairs name the line") {
  CHECK(parse_error("1 1\nAlice 1\nAlice 1 Bob 2\n").rfind("f.txt:2:", 0) == 0);
  CHECK(parse_error("1 1\nAlice 1 3\nAlice one Bob 2\n").rfind("f.txt:3:", 0) == 0);
  CHECK(parse_error("1 1\nAlice 1 3\nAlice 1 3\n").rfind("f.txt:3:", 0) == 0);
  CHECK(!parse_error("1 2\nAlice 1 3\n").empty());
  CHECK(!parse_error("x y\n").empty());
  CHECK(!parse_error("").empty());
}

TEST_CASE("people files in fold and flat form") {
  std::istringstream folds("2\n2\nA 3\nB 1\n1\nC 2\n");
  const auto f = parse_people(folds);
  REQUIRE(f.size() == 2);
  CHECK(f[0] == std::vector<std::pair<std::string, int>>{{"A", 3}, {"B", 1}});
  CHECK(f[1] == std::vector<std::pair<std::string, int>>{{"C", 2}});
  std::istringstream flat("3\nA 3\nB 1\nC 2\n");
  const auto g = parse_people(flat);
  REQUIRE(g.size() == 1);
  CHECK(g[0].size() == 3);
  CHECK(parse_error("1\n2\nA 3\nA 2\n", true).find("f.txt:4:") != std::string::npos);
  CHECK(!parse_error("1\n2\nA 3\n", true).empty());
  CHECK(!parse_error("1\n1\nA zero\n", true).empty());
}

TEST_CASE("eye coordinate CSV") {
  std::istringstream with_header("image_id,lx,ly,rx,ry\nA_0001,10,20,30,20.5\n");
  const auto e = parse_eye_csv(with_header);
  REQUIRE(e.count("A_0001") == 1);
  CHECK(e.at("A_0001").left.x == 10);
  CHECK(e.at("A_0001").right.y == 20.5);
  std::istringstream bare("A_0002,1,2,3,4\n");
  CHECK(parse_eye_csv(bare).size() == 1);
  std::istringstream bad("A_0001,1,2,3\n");
  CHECK_THROWS_AS(parse_eye_csv(bad, "eyes.csv"), ParseError);
}

TEST_CASE("load an LFW-style tree") {
  TempDir tmp("facever_lfw_test");
  const auto root = tmp.path / "images";
  for (const auto& [name, n] : std::vector<std::pair<std::string, int>>{{"Ann", 2}, {"Bob", 1}, {"Cy", 2}, {"Di", 2}}) {
    std::filesystem::create_directories(root / name);
    for (int i = 1; i <= n; ++i) write_pnm(root / name / (image_id(name, i) + ".ppm"), make_image(8, 8, 3, 0.5f));
  }
  write(tmp.path / "people.txt", "2\n2\nAnn 2\nBob 1\n2\nCy 2\nDi 2\n");
  write(tmp.path / "pairs.txt", "2 1\nAnn 1 2\nAnn 1 Bob 1\nCy 1 2\nCy 2 Di 1\n");
  write(tmp.path / "eyes.csv", "Ann_0002,11,12,13,14\n");
  LfwOptions opts;
  opts.eyes_csv = tmp.path / "eyes.csv";
  const auto data = load_lfw(root, tmp.path / "pairs.txt", tmp.path / "people.txt", opts);
  CHECK(data.index.num_folds == 2);
  CHECK(data.index.images.size() == 7);
  CHECK(data.index.fold_of_identity("Cy") == 1);
  CHECK(data.index.fold_of_identity("Nobody") == -1);
  CHECK(data.index.image("Ann_0002").eyes.left.x == 11);
  CHECK(data.index.image("Ann_0001").eyes.left.x == kFunneledEyes.left.x);
  CHECK(data.index.image("Bob_0001").path.extension() == ".ppm");
  CHECK_THROWS_AS(data.index.image("Ann_0009"), IngestionError);

  // Every image belongs to exactly one identity.
  std::set<std::string> seen;
  for (const auto& [name, ids] : data.index.subjects)
    for (const auto& id : ids) CHECK(seen.insert(id).second);
  CHECK(seen.size() == data.index.images.size());

  write(tmp.path / "dev.txt", "2\nEve 1\nAnn 2\n");
  std::filesystem::create_directories(root / "Eve");
  auto index = data.index;
  const auto dev = add_people(index, root, tmp.path / "dev.txt");
  CHECK(dev == std::vector<std::string>{"Eve", "Ann"});
  CHECK(index.fold_of_identity("Eve") == -1);
  CHECK(index.fold_of_identity("Ann") == 0);

  CHECK_THROWS_AS(load_lfw(root, tmp.path / "nope.txt", tmp.path / "people.txt"), IngestionError);
  CHECK_THROWS_AS(load_lfw(tmp.path / "missing", tmp.path / "pairs.txt", tmp.path / "people.txt"), IngestionError);
  write(tmp.path / "bad_pairs.txt", "2 1\nAnn 1 2\nAnn 1 Zed 1\nCy 1 2\nCy 2 Di 1\n");
  CHECK_THROWS_AS(load_lfw(root, tmp.path / "bad_pairs.txt", tmp.path / "people.txt"), ParseError);
}

TEST_CASE("fold datasets and sampled pairs") {
  DatasetIndex index;
  index.num_folds = 3;
  PairList pairs;
  pairs.folds.resize(3);
  for (int f = 0; f < 3; ++f) {
    for (int i = 0; i < 4; ++i) {
      const std::string name = "P" + std::to_string(f) + std::to_string(i);
      index.fold_of[name] = f;
      for (int k = 1; k <= 3; ++k) {
        index.subjects[name].push_back(image_id(name, k));
        index.images[image_id(name, k)] = {name, k, {}, {}};
      }
    }
    const std::string a = "P" + std::to_string(f) + "0", b = "P" + std::to_string(f) + "1";
    pairs.folds[f].push_back({image_id(a, 1), image_id(a, 2), true});
    pairs.folds[f].push_back({image_id(a, 1), image_id(b, 1), false});
  }
  // An identity from fold 2 also appears in a fold-0 test pair.
  pairs.folds[0].push_back({image_id("P00", 3), image_id("P23", 1), false});

  const auto split = make_fold_datasets(index, pairs, 0);
  CHECK(split.fold == 0);
  CHECK(split.test_pairs.size() == 3);
  CHECK(split.train.num_classes() == 7);
  for (const auto& name : split.train.identities) {
    CHECK(index.fold_of_identity(name) != 0);
    CHECK(name != "P23");
  }
  CHECK(split.train.image_ids.size() == split.train.labels.size());
  CHECK(split.train.image_ids.size() == 21);
  for (std::size_t i = 0; i < split.train.labels.size(); ++i) {
    CHECK(index.image(split.train.image_ids[i]).identity == split.train.identities[split.train.labels[i]]);
  }
  CHECK_THROWS_AS(make_fold_datasets(index, pairs, 3), ConfigError);

  const auto sampled = sample_pairs(index, split.train.identities, 20, 5);
  CHECK(sampled.size() == 40);
  std::size_t matched = 0;
  std::set<std::pair<std::string, std::string>> distinct;
  for (const auto& p : sampled) {
    matched += p.matched;
    CHECK((index.image(p.a).identity == index.image(p.b).identity) == p.matched);
    distinct.insert({p.a, p.b});
  }
  CHECK(matched == 20);
  CHECK(distinct.size() == 40);
  CHECK(sample_pairs(index, split.train.identities, 20, 5) == sampled);
  CHECK(sample_pairs(index, split.train.identities, 20, 6) != sampled);
}
