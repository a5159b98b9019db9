#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "metaseg/episodes/dataset.hpp"

namespace metaseg::episodes {

enum class ShapeKind { disk, square, triangle, ring, cross };
enum class Texture { solid, stripes, checker };

inline constexpr int kNumShapes = 5;
inline constexpr int kNumTextures = 3;

// Novel classes of the standard split; the other ten declared classes train.
inline const std::vector<int> kDefaultNovelClasses{3, 5, 9, 12};

// Class id c >= 1 is the pair (shape (c-1) % 5, texture (c-1) / 5).
ShapeKind class_shape(int class_id);
Texture class_texture(int class_id);

struct SynthConfig {
  int num_classes = 14;
  int images_per_class = 64;
  int image_size = 32;
  int min_objects = 1;
  int max_objects = 3;
  // Objects past min_objects are dropped when no free spot turns up.
  double min_radius = 4.5;
  double max_radius = 7.0;
  // Probability that an extra object belongs to a different class than the
  // image's primary class.
  double mixed_prob = 0.3;
  double noise = 0.08;
  // Distractor strokes painted into the background of every image (off by default).
  int clutter = 0;
  // Largest episode width the dataset is meant to serve.
  int max_way = 2;
  std::uint64_t seed = 2024;

  void validate() const;
};

struct PlacedObject {
  int class_id = 0;
  double cx = 0, cy = 0, radius = 0;
};

// Point test in pixel coordinates (pixel (x, y) is sampled at its center).
bool inside(const PlacedObject& object, double x, double y);

struct SynthOutput {
  SegDataset dataset;
  std::vector<std::vector<PlacedObject>> layouts;  // per record
};

SynthOutput gen_synthetic_with_layout(const SynthConfig& config);
// Deterministic in the config; the split is left empty (see split_classes).
SegDataset gen_synthetic(const SynthConfig& config);

}  // namespace metaseg::episodes
