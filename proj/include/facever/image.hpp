#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "facever/architecture.hpp"
#include "facever/tensor.hpp"

namespace facever {

// Images are Tensor<float> of shape [height, width, channels], values in
// [0,1] straight from the decoder and mean-subtracted later.
using Image = Tensor<float>;

struct FaceImage {
  Image pixels;  // [58,58,C]
  std::string source_id;
  bool flipped = false;
};

struct Point {
  double x = 0.0;  // column
  double y = 0.0;  // row
};

/// Where the eye centres land inside the 58x58 crop.
struct CropReference {
  Point left_eye{19.0, 23.0};
  Point right_eye{39.0, 23.0};
  std::size_t size = kFaceSize;
};

Image make_image(std::size_t height, std::size_t width, std::size_t channels, float fill = 0.0f);

/// Bilinear sample at (y, x) with coordinates clamped to the image.
float sample_bilinear(const Image& image, double y, double x, std::size_t channel);

/// Similarity transform taking the two eye centres of `raw` onto the
/// reference points, resampled bilinearly with edge clamping.
FaceImage crop_face(const Image& raw, Point left_eye, Point right_eye,
                    const CropReference& ref = {}, std::string source_id = {});

/// ITU-R 601 luma: 0.299 R + 0.587 G + 0.114 B.
Image to_grey(const Image& image);

Image flip_h(const Image& image);

/// Corner-aligned bilinear resize.
Image resize_bilinear(const Image& image, std::size_t height, std::size_t width);

/// Per-pixel, per-channel mean. With include_flips every image also
/// contributes its mirror. Throws IngestionError on an empty set.
Image mean_image(std::span<const Image> images, bool include_flips = false);
/// Same, over the rows of an NHWC batch.
Image mean_image(const Tensor<float>& batch, bool include_flips = false);

Image subtract_mean(const Image& image, const Image& mean);

enum class PatchPosition { top_left, top_right, bottom_left, bottom_right, center };

inline constexpr std::array<double, 6> kPatchScales{0.3, 0.4, 0.5, 0.6, 0.7, 0.8};
inline constexpr std::size_t kPatchCount = 30;

struct PatchSpec {
  PatchPosition position = PatchPosition::top_left;
  std::size_t scale_index = 0;

  /// Position-major: index = position * 6 + scale_index.
  std::size_t index() const { return static_cast<std::size_t>(position) * 6 + scale_index; }
  /// d = floor(58 * s).
  std::size_t side() const;
  std::string name() const;

  static PatchSpec from_index(std::size_t index);
  friend bool operator==(const PatchSpec&, const PatchSpec&) = default;
};

std::vector<PatchSpec> all_patch_specs();

/// d x d crop at the spec's corner or centre, upsampled back to 58x58.
Image extract_patch(const Image& image, const PatchSpec& spec);

}  // namespace facever
