#include "facever/image.hpp"

#include <algorithm>
#include <cmath>
#include <complex>

#include "facever/error.hpp"

namespace facever {

Image make_image(std::size_t height, std::size_t width, std::size_t channels, float fill) {
  return Image({height, width, channels}, fill);
}

float sample_bilinear(const Image& image, double y, double x, std::size_t channel) {
  const std::size_t h = image.dim(0), w = image.dim(1), c = image.dim(2);
  y = std::clamp(y, 0.0, static_cast<double>(h - 1));
  x = std::clamp(x, 0.0, static_cast<double>(w - 1));
  const auto y0 = static_cast<std::size_t>(std::floor(y));
  const auto x0 = static_cast<std::size_t>(std::floor(x));
  const std::size_t y1 = std::min(y0 + 1, h - 1);
  const std::size_t x1 = std::min(x0 + 1, w - 1);
  const double fy = y - static_cast<double>(y0);
  const double fx = x - static_cast<double>(x0);
  auto px = [&](std::size_t r, std::size_t col) {
    return static_cast<double>(image[(r * w + col) * c + channel]);
  };
  const double top = px(y0, x0) * (1.0 - fx) + px(y0, x1) * fx;
  const double bottom = px(y1, x0) * (1.0 - fx) + px(y1, x1) * fx;
  return static_cast<float>(top * (1.0 - fy) + bottom * fy);
}

FaceImage crop_face(const Image& raw, Point left_eye, Point right_eye,
                    const CropReference& ref, std::string source_id) {
  if (raw.rank() != 3 || raw.empty()) {
    throw DimensionError("crop_face expects an [H,W,C] image, got " + shape_string(raw.shape()));
  }
  const std::complex<double> src_l(left_eye.x, left_eye.y), src_r(right_eye.x, right_eye.y);
  const std::complex<double> dst_l(ref.left_eye.x, ref.left_eye.y),
      dst_r(ref.right_eye.x, ref.right_eye.y);
  if (std::abs(src_r - src_l) < 1e-9) {
    throw GeometryError("eye centres coincide at (" + std::to_string(left_eye.x) + ", " +
                        std::to_string(left_eye.y) + ")");
  }
  if (std::abs(dst_r - dst_l) < 1e-9) throw GeometryError("reference eye points coincide");
  // Output pixel p maps to src_l + m * (p - dst_l): scale + rotation as one
  // complex factor.
  const std::complex<double> m = (src_r - src_l) / (dst_r - dst_l);
  const std::size_t c = raw.dim(2);
  FaceImage out{make_image(ref.size, ref.size, c), std::move(source_id), false};
  for (std::size_t y = 0; y < ref.size; ++y) {
    for (std::size_t x = 0; x < ref.size; ++x) {
      const std::complex<double> p(static_cast<double>(x), static_cast<double>(y));
      const std::complex<double> s = src_l + m * (p - dst_l);
      for (std::size_t ch = 0; ch < c; ++ch) {
        out.pixels[(y * ref.size + x) * c + ch] = sample_bilinear(raw, s.imag(), s.real(), ch);
      }
    }
  }
  return out;
}

Image to_grey(const Image& image) {
  if (image.rank() != 3) throw DimensionError("to_grey expects an [H,W,C] image");
  if (image.dim(2) == 1) return image;
  if (image.dim(2) != 3) throw DimensionError("to_grey expects 3 channels");
  const std::size_t n = image.dim(0) * image.dim(1);
  Image out = make_image(image.dim(0), image.dim(1), 1);
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = 0.299f * image[3 * i] + 0.587f * image[3 * i + 1] + 0.114f * image[3 * i + 2];
  }
  return out;
}

Image flip_h(const Image& image) {
  if (image.rank() != 3) throw DimensionError("flip_h expects an [H,W,C] image");
  const std::size_t h = image.dim(0), w = image.dim(1), c = image.dim(2);
  Image out(image.shape());
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      for (std::size_t ch = 0; ch < c; ++ch) {
        out[(y * w + x) * c + ch] = image[(y * w + (w - 1 - x)) * c + ch];
      }
    }
  }
  return out;
}

Image resize_bilinear(const Image& image, std::size_t height, std::size_t width) {
  const std::size_t h = image.dim(0), w = image.dim(1), c = image.dim(2);
  Image out = make_image(height, width, c);
  const double sy = height > 1 ? static_cast<double>(h - 1) / static_cast<double>(height - 1) : 0.0;
  const double sx = width > 1 ? static_cast<double>(w - 1) / static_cast<double>(width - 1) : 0.0;
  for (std::size_t y = 0; y < height; ++y) {
    for (std::size_t x = 0; x < width; ++x) {
      for (std::size_t ch = 0; ch < c; ++ch) {
        out[(y * width + x) * c + ch] =
            sample_bilinear(image, static_cast<double>(y) * sy, static_cast<double>(x) * sx, ch);
      }
    }
  }
  return out;
}

namespace {

Image finish_mean(std::vector<double>& sum, const Shape& shape, std::size_t count,
                  bool include_flips) {
  const std::size_t w = shape[1], c = shape[2];
  Image mean(shape);
  const double denom = static_cast<double>(count) * (include_flips ? 2.0 : 1.0);
  for (std::size_t y = 0; y < shape[0]; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      for (std::size_t ch = 0; ch < c; ++ch) {
        double s = sum[(y * w + x) * c + ch];
        if (include_flips) s += sum[(y * w + (w - 1 - x)) * c + ch];
        mean[(y * w + x) * c + ch] = static_cast<float>(s / denom);
      }
    }
  }
  return mean;
}

}  // namespace

Image mean_image(std::span<const Image> images, bool include_flips) {
  if (images.empty()) throw IngestionError("cannot compute a mean image over an empty training set");
  const Shape shape = images.front().shape();
  std::vector<double> sum(shape_size(shape), 0.0);
  for (const auto& img : images) {
    if (img.shape() != shape) throw DimensionError("mean_image inputs differ in shape");
    for (std::size_t i = 0; i < sum.size(); ++i) sum[i] += img[i];
  }
  return finish_mean(sum, shape, images.size(), include_flips);
}

Image mean_image(const Tensor<float>& batch, bool include_flips) {
  if (batch.rank() != 4 || batch.dim(0) == 0) {
    throw IngestionError("cannot compute a mean image over an empty training set");
  }
  const Shape shape{batch.dim(1), batch.dim(2), batch.dim(3)};
  const std::size_t per = shape_size(shape);
  std::vector<double> sum(per, 0.0);
  for (std::size_t n = 0; n < batch.dim(0); ++n) {
    const float* src = batch.raw() + n * per;
    for (std::size_t i = 0; i < per; ++i) sum[i] += src[i];
  }
  return finish_mean(sum, shape, batch.dim(0), include_flips);
}

Image subtract_mean(const Image& image, const Image& mean) {
  if (image.shape() != mean.shape()) {
    throw DimensionError("mean image " + shape_string(mean.shape()) + " does not match " +
                         shape_string(image.shape()));
  }
  Image out(image.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = image[i] - mean[i];
  return out;
}

std::size_t PatchSpec::side() const {
  // floor(58 * s) with s = (scale_index + 3) / 10, exact in integers.
  return kFaceSize * (scale_index + 3) / 10;
}

std::string PatchSpec::name() const {
  static constexpr const char* kNames[] = {"top-left", "top-right", "bottom-left",
                                           "bottom-right", "center"};
  return std::string(kNames[static_cast<std::size_t>(position)]) + "@" +
         std::to_string(kPatchScales[scale_index]).substr(0, 3);
}

PatchSpec PatchSpec::from_index(std::size_t index) {
  if (index >= kPatchCount) throw ConfigError("patch index " + std::to_string(index) + " outside [0,30)");
  return {static_cast<PatchPosition>(index / 6), index % 6};
}

std::vector<PatchSpec> all_patch_specs() {
  std::vector<PatchSpec> specs;
  for (std::size_t i = 0; i < kPatchCount; ++i) specs.push_back(PatchSpec::from_index(i));
  return specs;
}

Image extract_patch(const Image& image, const PatchSpec& spec) {
  if (image.rank() != 3 || image.dim(0) != kFaceSize || image.dim(1) != kFaceSize) {
    throw DimensionError("extract_patch expects a 58x58 source, got " + shape_string(image.shape()));
  }
  const std::size_t d = spec.side();
  const std::size_t far = kFaceSize - d;
  std::size_t top = 0, left = 0;
  switch (spec.position) {
    case PatchPosition::top_left: break;
    case PatchPosition::top_right: left = far; break;
    case PatchPosition::bottom_left: top = far; break;
    case PatchPosition::bottom_right: top = far; left = far; break;
    case PatchPosition::center: top = far / 2; left = far / 2; break;
  }
  const std::size_t c = image.dim(2);
  Image crop = make_image(d, d, c);
  for (std::size_t y = 0; y < d; ++y) {
    const float* src = image.raw() + ((top + y) * kFaceSize + left) * c;
    std::copy(src, src + d * c, crop.raw() + y * d * c);
  }
  return resize_bilinear(crop, kFaceSize, kFaceSize);
}

}  // namespace facever
