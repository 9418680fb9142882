#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "facever/image.hpp"

namespace facever {

struct EyeCoordinates {
  Point left;
  Point right;
};

/// Approximate eye centres of a 250x250 deep-funneled LFW image.
inline constexpr EyeCoordinates kFunneledEyes{{101.0, 117.0}, {148.0, 117.0}};

struct ImageRecord {
  std::string identity;
  int number = 0;  // 1-based, as in the image file name
  std::filesystem::path path;
  EyeCoordinates eyes = kFunneledEyes;
};

struct DatasetIndex {
  std::map<std::string, std::vector<std::string>> subjects;  // identity -> image ids
  std::map<std::string, ImageRecord> images;                 // image id -> record
  std::map<std::string, int> fold_of;                        // identity -> fold
  std::size_t num_folds = 0;

  /// -1 when the identity is not assigned to any fold.
  int fold_of_identity(const std::string& identity) const;
  const ImageRecord& image(const std::string& id) const;
};

struct Pair {
  std::string a;
  std::string b;
  bool matched = false;
  friend bool operator==(const Pair&, const Pair&) = default;
};

struct PairList {
  std::vector<std::vector<Pair>> folds;
  std::size_t total() const;
};

/// Identity "Alice", number 3 -> "Alice_0003".
std::string image_id(const std::string& identity, int number);

/// Header "<folds> <per_class>", then per fold <per_class> matched lines
/// "name i j" followed by <per_class> unmatched lines "name1 i name2 j".
PairList parse_pairs(std::istream& in, const std::string& source = "pairs");

/// One (identity, image count) list per fold. Accepts the fold form
/// ("<folds>", then per fold a count and that many "name n" lines) and the
/// flat single-list form ("<count>", then "name n" lines).
std::vector<std::vector<std::pair<std::string, int>>> parse_people(
    std::istream& in, const std::string& source = "people");

/// Lines "image_id,lx,ly,rx,ry"; a non-numeric first line is taken as a header.
std::map<std::string, EyeCoordinates> parse_eye_csv(std::istream& in,
                                                    const std::string& source = "eyes");

struct LfwOptions {
  std::filesystem::path eyes_csv;  // empty = canonical coordinates for all
  EyeCoordinates default_eyes = kFunneledEyes;
  std::vector<std::string> extensions{"jpg", "ppm", "pgm", "jpeg"};
};

struct LfwData {
  DatasetIndex index;
  PairList pairs;
};

/// Images live at root/<name>/<name>_<NNNN>.<ext>. Identities get their fold
/// from people_file; every pair must reference an image listed there.
LfwData load_lfw(const std::filesystem::path& root, const std::filesystem::path& pairs_file,
                 const std::filesystem::path& people_file, const LfwOptions& options = {});

/// Identity list from a flat people file (e.g. a development split) merged
/// into the index as fold-less identities. Returns the identity names.
std::vector<std::string> add_people(DatasetIndex& index, const std::filesystem::path& root,
                                    const std::filesystem::path& people_file,
                                    const LfwOptions& options = {});

/// Labelled image list: label i is identities[i].
struct LabelledImages {
  std::vector<std::string> identities;
  std::vector<std::string> image_ids;
  std::vector<int> labels;
  std::size_t num_classes() const { return identities.size(); }
};

LabelledImages label_identities(const DatasetIndex& index, std::vector<std::string> identities);

struct FoldSplit {
  std::size_t fold = 0;
  LabelledImages train;
  std::vector<Pair> test_pairs;
};

/// Training identities: those assigned to the other folds and not referenced
/// by any of this fold's test pairs.
FoldSplit make_fold_datasets(const DatasetIndex& index, const PairList& pairs, std::size_t fold);

/// Balanced random pairs over `identities`: per_class matched pairs (from
/// identities with two or more images) and per_class unmatched pairs.
/// Repeats are avoided while enough distinct pairs remain.
std::vector<Pair> sample_pairs(const DatasetIndex& index, const std::vector<std::string>& identities,
                               std::size_t per_class, std::uint64_t seed);

}  // namespace facever
