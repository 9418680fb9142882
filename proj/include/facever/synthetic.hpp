#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "facever/image.hpp"
#include "facever/lfw.hpp"

namespace facever {

// Procedural face-like images for desk-scale runs. Each identity owns a fixed
// set of facial traits (head shape, skin and hair tone, eye, brow, nose and
// mouth geometry, a few skin marks); each image of it re-renders those traits
// under random pose, lighting, contrast, expression and sensor noise.
struct SyntheticConfig {
  std::size_t identities = 50;
  std::size_t images_per_identity = 40;
  std::size_t image_size = 64;
  std::uint64_t seed = 2024;

  double eye_distance = 20.0;     // pixels between eye centres at scale 1
  double rotation_jitter = 0.06;  // radians, std
  double scale_jitter = 0.05;     // relative, std
  double shift_jitter = 1.5;      // pixels, std
  double brightness_jitter = 0.08;
  double contrast_jitter = 0.15;  // relative, std
  double illumination = 0.25;     // peak side-light gradient
  double expression = 0.25;       // relative mouth/brow change, std
  double noise = 0.02;            // additive Gaussian, std
  double eye_label_noise = 0.5;   // pixels, std, on the reported eye coordinates
};

struct SyntheticImage {
  Image pixels;  // [size,size,3] in [0,1]
  EyeCoordinates eyes;
};

struct SyntheticIdentity {
  std::string name;
  std::vector<SyntheticImage> images;
};

std::vector<SyntheticIdentity> generate_synthetic_faces(const SyntheticConfig& config);

struct SyntheticLayout {
  std::size_t dev_identities = 30;  // written to peopleDevTrain.txt, no fold
  std::size_t folds = 10;           // the rest are spread evenly over the folds
  std::size_t pairs_per_class = 300;
  std::uint64_t pair_seed = 99;
};

/// Writes an LFW-style tree under `dir`: images/<name>/<name>_NNNN.ppm,
/// pairs.txt, people.txt, peopleDevTrain.txt and eyes.csv.
void write_synthetic_lfw(const std::filesystem::path& dir, const SyntheticConfig& config,
                         const SyntheticLayout& layout);

}  // namespace facever
