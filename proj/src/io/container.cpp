#include "facever/container.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "facever/error.hpp"

namespace facever {
namespace {

constexpr std::uint32_t kVersion = 1;

template <typename T>
void append_le(std::vector<std::uint8_t>& out, T value) {
  std::uint8_t raw[sizeof(T)];
  std::memcpy(raw, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(raw, raw + sizeof(T));
  out.insert(out.end(), raw, raw + sizeof(T));
}

template <typename T>
T read_le(const std::uint8_t* p) {
  std::uint8_t raw[sizeof(T)];
  std::memcpy(raw, p, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(raw, raw + sizeof(T));
  T value;
  std::memcpy(&value, raw, sizeof(T));
  return value;
}

template <typename T>
std::vector<std::uint8_t> encode(std::span<const T> values) {
  std::vector<std::uint8_t> out;
  out.reserve(values.size() * sizeof(T));
  if constexpr (std::endian::native == std::endian::little) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(values.data());
    out.assign(p, p + values.size() * sizeof(T));
  } else {
    for (T v : values) append_le(out, v);
  }
  return out;
}

template <typename T>
std::vector<T> decode(const std::vector<std::uint8_t>& bytes) {
  std::vector<T> out(bytes.size() / sizeof(T));
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = read_le<T>(bytes.data() + i * sizeof(T));
  return out;
}

std::size_t width(DType d) { return d == DType::f32 ? 4 : 8; }
const char* dtype_name(DType d) { return d == DType::f32 ? "f32" : "f64"; }

}  // namespace

void atomic_write(const std::filesystem::path& path, std::string_view bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".partial";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IngestionError("cannot open " + tmp.string() + " for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IngestionError("failed writing " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

void Container::add(const std::string& name, const Tensor<float>& t) {
  entries_.push_back({name, t.shape(), DType::f32, encode<float>(t.data())});
}

void Container::add(const std::string& name, const Tensor<double>& t) {
  entries_.push_back({name, t.shape(), DType::f64, encode<double>(t.data())});
}

bool Container::contains(const std::string& name) const {
  for (const auto& e : entries_) {
    if (e.name == name) return true;
  }
  return false;
}

std::vector<std::string> Container::names() const {
  std::vector<std::string> out;
  for (const auto& e : entries_) out.push_back(e.name);
  return out;
}

const Container::Entry& Container::find(const std::string& name) const {
  for (const auto& e : entries_) {
    if (e.name == name) return e;
  }
  throw FormatError(magic_ + " container has no tensor '" + name + "'");
}

DType Container::dtype(const std::string& name) const { return find(name).dtype; }

Tensor<float> Container::get_float(const std::string& name) const {
  const auto& e = find(name);
  if (e.dtype == DType::f32) return Tensor<float>(e.shape, decode<float>(e.bytes));
  return Tensor<double>(e.shape, decode<double>(e.bytes)).cast<float>();
}

Tensor<double> Container::get_double(const std::string& name) const {
  const auto& e = find(name);
  if (e.dtype == DType::f64) return Tensor<double>(e.shape, decode<double>(e.bytes));
  return Tensor<float>(e.shape, decode<float>(e.bytes)).cast<double>();
}

std::vector<std::uint8_t> Container::serialize() const {
  if (magic_.size() != 4) throw FormatError("container magic must be 4 bytes");
  nlohmann::json meta = metadata_;
  nlohmann::json listing = nlohmann::json::array();
  for (const auto& e : entries_) {
    listing.push_back({{"name", e.name}, {"shape", e.shape}, {"dtype", dtype_name(e.dtype)}});
  }
  meta["tensors"] = listing;
  const std::string text = meta.dump();

  std::vector<std::uint8_t> out(magic_.begin(), magic_.end());
  append_le<std::uint32_t>(out, kVersion);
  append_le<std::uint64_t>(out, text.size());
  out.insert(out.end(), text.begin(), text.end());
  for (const auto& e : entries_) out.insert(out.end(), e.bytes.begin(), e.bytes.end());
  return out;
}

void Container::save(const std::filesystem::path& path) const {
  const auto bytes = serialize();
  atomic_write(path, std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
}

Container Container::parse(const std::vector<std::uint8_t>& bytes,
                           std::string_view expected_magic) {
  if (bytes.size() < 16) throw FormatError("container truncated before header");
  const std::string got(bytes.begin(), bytes.begin() + 4);
  if (got != expected_magic) {
    throw FormatError("bad magic '" + got + "', expected '" + std::string(expected_magic) + "'");
  }
  const auto version = read_le<std::uint32_t>(bytes.data() + 4);
  if (version != kVersion) throw FormatError("unsupported container version " + std::to_string(version));
  const auto meta_len = read_le<std::uint64_t>(bytes.data() + 8);
  if (meta_len > bytes.size() - 16) throw FormatError("container metadata truncated");

  Container c{got};
  try {
    c.metadata_ = nlohmann::json::parse(bytes.begin() + 16, bytes.begin() + 16 + meta_len);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("container metadata is not valid JSON: ") + e.what());
  }
  std::size_t offset = 16 + meta_len;
  try {
    for (const auto& t : c.metadata_.at("tensors")) {
      Entry e;
      e.name = t.at("name").get<std::string>();
      e.shape = t.at("shape").get<Shape>();
      const auto d = t.at("dtype").get<std::string>();
      if (d == "f32") e.dtype = DType::f32;
      else if (d == "f64") e.dtype = DType::f64;
      else throw FormatError("unknown dtype '" + d + "'");
      const std::size_t n = shape_size(e.shape) * width(e.dtype);
      if (offset + n > bytes.size()) throw FormatError("payload of '" + e.name + "' truncated");
      e.bytes.assign(bytes.begin() + offset, bytes.begin() + offset + n);
      offset += n;
      c.entries_.push_back(std::move(e));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed tensor listing: ") + e.what());
  }
  if (offset != bytes.size()) throw FormatError("trailing bytes after container payload");
  c.metadata_.erase("tensors");
  return c;
}

Container Container::load(const std::filesystem::path& path, std::string_view expected_magic) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestionError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  try {
    return parse(bytes, expected_magic);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

}  // namespace facever
