#pragma once

#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "facever/image.hpp"
#include "facever/lfw.hpp"
#include "facever/trainer.hpp"

namespace facever {

enum class ColourMode { grey, colour };

std::size_t channel_count(ColourMode mode);
ColourMode parse_colour_mode(const std::string& text);
std::string to_string(ColourMode mode);

/// Cropped 58x58 faces in [0,1], one row per image id, not mean-subtracted.
class FaceSet {
 public:
  FaceSet() = default;
  FaceSet(Tensor<float> faces, std::vector<std::string> ids);

  const Tensor<float>& faces() const noexcept { return faces_; }
  const std::vector<std::string>& ids() const noexcept { return ids_; }
  std::size_t size() const noexcept { return ids_.size(); }
  std::size_t channels() const { return faces_.dim(3); }

  bool contains(const std::string& id) const { return rows_.count(id) != 0; }
  /// Throws IngestionError for an unknown id.
  std::size_t row(const std::string& id) const;
  std::vector<std::size_t> rows(std::span<const std::string> ids) const;
  Image face(std::size_t row) const;

 private:
  Tensor<float> faces_;  // [N,58,58,C]
  std::vector<std::string> ids_;
  std::map<std::string, std::size_t> rows_;
};

/// Reads, crops (by each record's eye coordinates) and colour-converts the
/// listed images. Rows follow `ids` order.
FaceSet prepare_faces(const DatasetIndex& index, std::span<const std::string> ids, ColourMode mode,
                      const CropReference& ref = {});

/// FVT1 container: tensor "faces" plus the id list in the metadata.
void save_face_set(const std::filesystem::path& path, const FaceSet& set,
                   const nlohmann::json& extra = nlohmann::json::object());
FaceSet load_face_set(const std::filesystem::path& path, nlohmann::json* extra = nullptr);

/// What one network sees for a face: the whole crop (patch_index < 0) or a
/// patch. Mirroring happens on the face, before the patch is cut.
Image network_input(const Image& face, int patch_index, bool flipped);

/// Stacked network inputs for the given rows, [rows, 58, 58, C].
Tensor<float> network_inputs(const FaceSet& set, std::span<const std::size_t> rows, int patch_index,
                             bool flipped);

/// Training tensor for one network. Originals and mirrors are both
/// materialized (mirrors second) and the mean over all of them is subtracted.
struct NetworkTrainingData {
  TrainingSet set;
  Image mean;
};
NetworkTrainingData make_training_data(const FaceSet& faces, const LabelledImages& labelled,
                                       int patch_index, bool flip_augment = true);

}  // namespace facever
