#pragma once

#include <cstddef>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "facever/tensor.hpp"

namespace facever {

inline constexpr std::size_t kFaceSize = 58;
inline constexpr std::size_t kFeatureLength = 160;
inline constexpr std::size_t kDefaultClasses = 4000;

struct ConvDesc {
  std::size_t filters = 0;
  std::size_t kernel = 0;
  std::size_t stride = 1;
  std::size_t pad = 0;
  friend bool operator==(const ConvDesc&, const ConvDesc&) = default;
};
struct PoolDesc {
  std::size_t window = 2;
  std::size_t stride = 2;
  friend bool operator==(const PoolDesc&, const PoolDesc&) = default;
};
struct ReluDesc {
  friend bool operator==(const ReluDesc&, const ReluDesc&) = default;
};
struct FcDesc {
  std::size_t units = 0;
  friend bool operator==(const FcDesc&, const FcDesc&) = default;
};
struct SoftmaxDesc {
  std::size_t classes = 0;
  friend bool operator==(const SoftmaxDesc&, const SoftmaxDesc&) = default;
};

using LayerDesc = std::variant<ConvDesc, PoolDesc, ReluDesc, FcDesc, SoftmaxDesc>;

std::string layer_label(const LayerDesc& layer);

struct ArchitectureSpec {
  std::string name;
  std::size_t input_height = kFaceSize;
  std::size_t input_width = kFaceSize;
  std::size_t channels = 3;
  std::vector<LayerDesc> layers;

  Shape input_shape() const { return {input_height, input_width, channels}; }
  std::size_t num_classes() const;
  friend bool operator==(const ArchitectureSpec&, const ArchitectureSpec&) = default;
};

/// CNN-S, CNN-M or CNN-L (case-insensitive). channels must be 1 or 3.
ArchitectureSpec build_arch(const std::string& name, std::size_t channels,
                            std::size_t num_classes = kDefaultClasses);

/// Per-sample output shape of every layer; throws ArchitectureError naming
/// the first layer whose output extent would be nonpositive.
std::vector<Shape> infer_shapes(const ArchitectureSpec& spec);

std::size_t num_params(const ArchitectureSpec& spec);

/// Index of the 160-unit fully connected layer (the feature layer).
std::size_t feature_layer_index(const ArchitectureSpec& spec);

nlohmann::json to_json(const ArchitectureSpec& spec);
ArchitectureSpec architecture_from_json(const nlohmann::json& j);

}  // namespace facever
