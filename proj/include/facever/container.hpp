#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "facever/tensor.hpp"

namespace facever {

// Self-describing binary container shared by every artifact:
//
//   magic      4 bytes ("FVB1" model, "FVT1" tensor cache, "FVF1" features,
//              "FVJ1" Joint Bayesian model)
//   version    u32 little-endian (currently 1)
//   meta_len   u64 little-endian
//   metadata   meta_len bytes of UTF-8 JSON; its "tensors" array lists
//              {name, shape, dtype} for each payload array in order
//   payload    raw little-endian arrays, concatenated in declaration order
//
// dtype is "f32" or "f64".
namespace magic {
inline constexpr std::string_view model = "FVB1";
inline constexpr std::string_view tensors = "FVT1";
inline constexpr std::string_view features = "FVF1";
inline constexpr std::string_view joint_bayesian = "FVJ1";
}  // namespace magic

enum class DType { f32, f64 };

class Container {
 public:
  Container() = default;
  explicit Container(std::string_view magic) : magic_(magic) {}

  const std::string& magic() const noexcept { return magic_; }
  nlohmann::json& metadata() noexcept { return metadata_; }
  const nlohmann::json& metadata() const noexcept { return metadata_; }

  void add(const std::string& name, const Tensor<float>& t);
  void add(const std::string& name, const Tensor<double>& t);

  bool contains(const std::string& name) const;
  std::vector<std::string> names() const;
  Tensor<float> get_float(const std::string& name) const;
  Tensor<double> get_double(const std::string& name) const;
  DType dtype(const std::string& name) const;

  /// Writes to a temporary sibling and renames it into place.
  void save(const std::filesystem::path& path) const;
  std::vector<std::uint8_t> serialize() const;

  static Container load(const std::filesystem::path& path, std::string_view expected_magic);
  static Container parse(const std::vector<std::uint8_t>& bytes, std::string_view expected_magic);

 private:
  struct Entry {
    std::string name;
    Shape shape;
    DType dtype;
    std::vector<std::uint8_t> bytes;  // little-endian
  };
  const Entry& find(const std::string& name) const;

  std::string magic_;
  nlohmann::json metadata_ = nlohmann::json::object();
  std::vector<Entry> entries_;
};

/// Writes `bytes` to `path` via temp-then-rename so readers never observe a
/// partial file.
void atomic_write(const std::filesystem::path& path, std::string_view bytes);

}  // namespace facever
