#pragma once

#include <cstdint>
#include <vector>

#include "metaseg/episodes/dataset.hpp"

namespace metaseg::episodes {

struct Sample {
  std::size_t record = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> image;  // planar RGB
  std::vector<int> mask;            // episode-local labels 0..K
};

struct Episode {
  int K = 0, N = 0, Q = 0;
  std::vector<int> class_table;  // global id of local class k + 1
  std::vector<Sample> support;   // class-major, N per class
  std::vector<Sample> query;     // class-major, Q per class
  std::uint64_t seed = 0;
};

// Draws K classes from the split, then Q query and N support images per
// class, without repeats inside the episode. Candidate images for a class
// must contain it and nothing outside the drawn classes. Queries are drawn
// before supports, so episodes that differ only in N share their queries.
Episode sample_episode(const SegDataset& dataset, Split split, int K, int N, int Q, std::uint64_t seed);

// Global -> episode-local label map (drawn classes to 1..K, all else 0).
std::vector<int> remap_mask(const std::vector<std::uint8_t>& mask, const std::vector<int>& class_table);

// Images as an N x 3 x H x W tensor in [0, 1].
template <typename T>
ad::Tensor<T> images_tensor(const std::vector<Sample>& samples);

// Nearest-neighbour label downsampling by an integer stride, sampling the
// pixel at offset stride / 2 inside each cell. Output is image-major.
std::vector<int> downsample_labels(const std::vector<Sample>& samples, std::size_t stride);
std::vector<int> concat_labels(const std::vector<Sample>& samples);

}  // namespace metaseg::episodes
