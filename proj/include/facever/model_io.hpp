#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "facever/network.hpp"
#include "facever/trainer.hpp"

namespace facever {

/// A trained network plus everything needed to preprocess its inputs.
struct FaceModel {
  Network<float> network;
  Tensor<float> mean_image;        // [58,58,C], subtracted before the forward pass
  std::string network_id = "full";
  int patch_index = -1;            // -1 = whole face, else PatchSpec index
  nlohmann::json fingerprint = nlohmann::json::object();
  std::uint64_t fold_mask = 0;     // folds whose identities the training consumed
  std::vector<EpochStats> history;
};

/// FVB1 container: architecture + layer list + tensor listing in the metadata,
/// then "mean" and each parameter array ("layer<i>.weights", "layer<i>.biases")
/// in layer order, all f32.
void save_model(const std::filesystem::path& path, const FaceModel& model);
FaceModel load_model(const std::filesystem::path& path);

}  // namespace facever
