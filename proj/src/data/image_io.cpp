#include "facever/image_io.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <memory>
#include <sstream>

#include <jpeglib.h>

#include "facever/container.hpp"
#include "facever/error.hpp"

namespace facever {
namespace {

struct JpegErrorManager {
  jpeg_error_mgr base;
  std::jmp_buf jump;
  char message[JMSG_LENGTH_MAX];
};

void jpeg_error_exit(j_common_ptr info) {
  auto* err = reinterpret_cast<JpegErrorManager*>(info->err);
  (*info->err->format_message)(info, err->message);
  std::longjmp(err->jump, 1);
}

Image decode_jpeg(const std::vector<unsigned char>& bytes, const std::string& name) {
  jpeg_decompress_struct info{};
  JpegErrorManager err{};
  info.err = jpeg_std_error(&err.base);
  err.base.error_exit = jpeg_error_exit;
  std::vector<unsigned char> pixels;
  std::size_t h = 0, w = 0, c = 0;
  if (setjmp(err.jump)) {
    jpeg_destroy_decompress(&info);
    throw IngestionError(name + ": JPEG decode failed: " + err.message);
  }
  jpeg_create_decompress(&info);
  jpeg_mem_src(&info, bytes.data(), static_cast<unsigned long>(bytes.size()));
  jpeg_read_header(&info, TRUE);
  if (info.num_components != 1) info.out_color_space = JCS_RGB;
  jpeg_start_decompress(&info);
  h = info.output_height;
  w = info.output_width;
  c = static_cast<std::size_t>(info.output_components);
  pixels.resize(h * w * c);
  while (info.output_scanline < info.output_height) {
    JSAMPROW row = pixels.data() + static_cast<std::size_t>(info.output_scanline) * w * c;
    jpeg_read_scanlines(&info, &row, 1);
  }
  jpeg_finish_decompress(&info);
  jpeg_destroy_decompress(&info);

  Image out = make_image(h, w, c);
  for (std::size_t i = 0; i < pixels.size(); ++i) out[i] = static_cast<float>(pixels[i]) / 255.0f;
  return out;
}

Image decode_pnm(const std::vector<unsigned char>& bytes, const std::string& name) {
  std::size_t pos = 2;
  auto next_token = [&]() -> long {
    for (;;) {
      while (pos < bytes.size() && std::isspace(bytes[pos])) ++pos;
      if (pos < bytes.size() && bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
        continue;
      }
      break;
    }
    long value = 0;
    bool any = false;
    while (pos < bytes.size() && std::isdigit(bytes[pos])) {
      value = value * 10 + (bytes[pos++] - '0');
      any = true;
    }
    if (!any) throw IngestionError(name + ": malformed PNM header");
    return value;
  };
  const std::size_t c = bytes[1] == '5' ? 1 : 3;
  const long w = next_token(), h = next_token(), maxval = next_token();
  if (w <= 0 || h <= 0 || maxval <= 0 || maxval > 255) {
    throw IngestionError(name + ": unsupported PNM dimensions or depth");
  }
  ++pos;  // single whitespace before the raster
  const std::size_t n = static_cast<std::size_t>(w * h) * c;
  if (pos + n > bytes.size()) throw IngestionError(name + ": PNM raster truncated");
  Image out = make_image(static_cast<std::size_t>(h), static_cast<std::size_t>(w), c);
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = static_cast<float>(bytes[pos + i]) / static_cast<float>(maxval);
  }
  return out;
}

}  // namespace

Image read_image(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestionError("cannot open image " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  if (bytes.size() >= 3 && bytes[0] == 0xFF && bytes[1] == 0xD8) {
    return decode_jpeg(bytes, path.string());
  }
  if (bytes.size() >= 2 && bytes[0] == 'P' && (bytes[1] == '5' || bytes[1] == '6')) {
    return decode_pnm(bytes, path.string());
  }
  throw IngestionError(path.string() + ": unrecognized image format");
}

void write_pnm(const std::filesystem::path& path, const Image& image) {
  if (image.rank() != 3 || (image.dim(2) != 1 && image.dim(2) != 3)) {
    throw DimensionError("write_pnm expects [H,W,1] or [H,W,3], got " + shape_string(image.shape()));
  }
  std::ostringstream os;
  os << (image.dim(2) == 1 ? "P5" : "P6") << '\n'
     << image.dim(1) << ' ' << image.dim(0) << "\n255\n";
  std::string bytes = os.str();
  bytes.reserve(bytes.size() + image.size());
  for (float v : image.data()) {
    bytes.push_back(static_cast<char>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f)));
  }
  atomic_write(path, bytes);
}

}  // namespace facever
