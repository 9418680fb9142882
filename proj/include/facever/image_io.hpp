#pragma once

#include <filesystem>

#include "facever/image.hpp"

namespace facever {

/// Decodes JPEG (libjpeg) or binary PNM (P5/P6) into [H,W,C] with values
/// scaled to [0,1]. The format is sniffed from the leading bytes.
Image read_image(const std::filesystem::path& path);

/// Binary PGM for 1 channel, PPM for 3; values in [0,1] are quantized to 8 bits.
void write_pnm(const std::filesystem::path& path, const Image& image);

}  // namespace facever
