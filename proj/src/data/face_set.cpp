#include "facever/face_set.hpp"

#include <algorithm>

#include "facever/container.hpp"
#include "facever/error.hpp"
#include "facever/image_io.hpp"

namespace facever {

std::size_t channel_count(ColourMode mode) { return mode == ColourMode::grey ? 1 : 3; }

ColourMode parse_colour_mode(const std::string& text) {
  if (text == "grey" || text == "gray") return ColourMode::grey;
  if (text == "colour" || text == "color") return ColourMode::colour;
  throw ConfigError("channels must be grey or colour, got '" + text + "'");
}

std::string to_string(ColourMode mode) { return mode == ColourMode::grey ? "grey" : "colour"; }

FaceSet::FaceSet(Tensor<float> faces, std::vector<std::string> ids)
    : faces_(std::move(faces)), ids_(std::move(ids)) {
  if (faces_.rank() != 4 || faces_.dim(0) != ids_.size() || faces_.dim(1) != kFaceSize ||
      faces_.dim(2) != kFaceSize) {
    throw DimensionError("face set tensor " + shape_string(faces_.shape()) + " does not hold " +
                         std::to_string(ids_.size()) + " 58x58 faces");
  }
  for (std::size_t i = 0; i < ids_.size(); ++i) {
    if (!rows_.emplace(ids_[i], i).second) throw IngestionError("duplicate image id '" + ids_[i] + "'");
  }
}

std::size_t FaceSet::row(const std::string& id) const {
  const auto it = rows_.find(id);
  if (it == rows_.end()) throw IngestionError("image '" + id + "' is not in the face cache");
  return it->second;
}

std::vector<std::size_t> FaceSet::rows(std::span<const std::string> ids) const {
  std::vector<std::size_t> out;
  out.reserve(ids.size());
  for (const auto& id : ids) out.push_back(row(id));
  return out;
}

Image FaceSet::face(std::size_t row) const {
  const std::size_t per = kFaceSize * kFaceSize * channels();
  const float* src = faces_.raw() + row * per;
  return Image({kFaceSize, kFaceSize, channels()}, std::vector<float>(src, src + per));
}

FaceSet prepare_faces(const DatasetIndex& index, std::span<const std::string> ids, ColourMode mode,
                      const CropReference& ref) {
  const std::size_t c = channel_count(mode);
  const std::size_t per = kFaceSize * kFaceSize * c;
  Tensor<float> faces({ids.size(), kFaceSize, kFaceSize, c});
  std::vector<std::string> names(ids.begin(), ids.end());
  // Work is per image and pure; errors are collected and rethrown serially.
  std::vector<std::string> errors(ids.size());
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(ids.size()); ++i) {
    try {
      const auto& rec = index.image(ids[static_cast<std::size_t>(i)]);
      Image raw = read_image(rec.path);
      if (mode == ColourMode::grey) {
        raw = to_grey(raw);
      } else if (raw.dim(2) == 1) {
        Image rgb = make_image(raw.dim(0), raw.dim(1), 3);
        for (std::size_t p = 0; p < raw.size(); ++p) rgb[3 * p] = rgb[3 * p + 1] = rgb[3 * p + 2] = raw[p];
        raw = std::move(rgb);
      }
      const auto face = crop_face(raw, rec.eyes.left, rec.eyes.right, ref);
      std::copy(face.pixels.raw(), face.pixels.raw() + per,
                faces.raw() + static_cast<std::size_t>(i) * per);
    } catch (const std::exception& e) {
      errors[static_cast<std::size_t>(i)] = e.what();
    }
  }
  for (std::size_t i = 0; i < errors.size(); ++i) {
    if (!errors[i].empty()) throw IngestionError(names[i] + ": " + errors[i]);
  }
  return FaceSet(std::move(faces), std::move(names));
}

void save_face_set(const std::filesystem::path& path, const FaceSet& set, const nlohmann::json& extra) {
  Container c{magic::tensors};
  c.metadata()["kind"] = "faces";
  c.metadata()["ids"] = set.ids();
  c.metadata()["extra"] = extra;
  c.add("faces", set.faces());
  c.save(path);
}

FaceSet load_face_set(const std::filesystem::path& path, nlohmann::json* extra) {
  const auto c = Container::load(path, magic::tensors);
  try {
    if (extra) *extra = c.metadata().value("extra", nlohmann::json::object());
    return FaceSet(c.get_float("faces"), c.metadata().at("ids").get<std::vector<std::string>>());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": malformed face cache metadata: " + e.what());
  }
}

Image network_input(const Image& face, int patch_index, bool flipped) {
  Image src = flipped ? flip_h(face) : face;
  if (patch_index < 0) return src;
  return extract_patch(src, PatchSpec::from_index(static_cast<std::size_t>(patch_index)));
}

Tensor<float> network_inputs(const FaceSet& set, std::span<const std::size_t> rows, int patch_index,
                             bool flipped) {
  const std::size_t c = set.channels();
  const std::size_t per = kFaceSize * kFaceSize * c;
  Tensor<float> out({rows.size(), kFaceSize, kFaceSize, c});
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(rows.size()); ++i) {
    const Image img = network_input(set.face(rows[static_cast<std::size_t>(i)]), patch_index, flipped);
    std::copy(img.raw(), img.raw() + per, out.raw() + static_cast<std::size_t>(i) * per);
  }
  return out;
}

NetworkTrainingData make_training_data(const FaceSet& faces, const LabelledImages& labelled,
                                       int patch_index, bool flip_augment) {
  if (labelled.image_ids.empty()) throw IngestionError("training split has no images");
  const auto rows = faces.rows(labelled.image_ids);
  const std::size_t n = rows.size();
  const std::size_t copies = flip_augment ? 2 : 1;
  const std::size_t per = kFaceSize * kFaceSize * faces.channels();

  Tensor<float> images({n * copies, kFaceSize, kFaceSize, faces.channels()});
  for (std::size_t k = 0; k < copies; ++k) {
    const auto part = network_inputs(faces, rows, patch_index, k == 1);
    std::copy(part.raw(), part.raw() + n * per, images.raw() + k * n * per);
  }
  NetworkTrainingData out;
  out.mean = mean_image(images);
  for (std::size_t s = 0; s < n * copies; ++s) {
    float* p = images.raw() + s * per;
    for (std::size_t i = 0; i < per; ++i) p[i] -= out.mean[i];
  }
  out.set.images = std::move(images);
  out.set.labels = labelled.labels;
  if (flip_augment) out.set.labels.insert(out.set.labels.end(), labelled.labels.begin(), labelled.labels.end());
  out.set.flip_augment = false;
  return out;
}

}  // namespace facever
