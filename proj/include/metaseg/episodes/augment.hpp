#pragma once

#include <cstdint>
#include <vector>

#include "metaseg/episodes/sampler.hpp"

namespace metaseg::episodes {

struct PairTransform {
  bool flip = false;      // horizontal mirror, applied first
  int quarter_turns = 0;  // clockwise 90 degree rotations, 0..3
};

PairTransform random_transform(std::uint64_t seed);

// Square images only. The same pixel permutation moves image and mask.
void apply_transform(Sample& sample, const PairTransform& t);

// Random flip with probability 1/2, then a uniform rotation from
// {0, 90, 180, 270} degrees.
void augment_pair(Sample& sample, std::uint64_t seed);

// Augments every sample of an episode with per-sample derived seeds.
void augment_episode(Episode& episode, std::uint64_t seed);

}  // namespace metaseg::episodes
