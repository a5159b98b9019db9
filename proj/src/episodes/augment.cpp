#include "metaseg/episodes/augment.hpp"

#include "metaseg/common/error.hpp"
#include "metaseg/common/rng.hpp"

namespace metaseg::episodes {

PairTransform random_transform(std::uint64_t seed) {
  Rng rng(seed);
  PairTransform t;
  t.flip = rng.bernoulli(0.5);
  t.quarter_turns = static_cast<int>(rng.below(4));
  return t;
}

namespace {

// Source coordinate of destination (y, x) for an S x S square.
void source_of(const PairTransform& t, std::size_t S, std::size_t y, std::size_t x, std::size_t& sy, std::size_t& sx) {
  // undo the rotation first (it was applied last), then the flip
  std::size_t ry = y, rx = x;
  for (int i = 0; i < ((t.quarter_turns % 4) + 4) % 4; ++i) {
    // one clockwise turn maps (r, c) -> (c, S-1-r); its inverse is below
    const std::size_t py = S - 1 - rx, px = ry;
    ry = py;
    rx = px;
  }
  sy = ry;
  sx = t.flip ? S - 1 - rx : rx;
}

}  // namespace

void apply_transform(Sample& sample, const PairTransform& t) {
  if (sample.height != sample.width) throw ShapeError("augment: images must be square");
  const std::size_t S = sample.height;
  if (!t.flip && t.quarter_turns % 4 == 0) return;
  std::vector<std::uint8_t> image(sample.image.size());
  std::vector<int> mask(sample.mask.size());
  for (std::size_t y = 0; y < S; ++y) {
    for (std::size_t x = 0; x < S; ++x) {
      std::size_t sy = 0, sx = 0;
      source_of(t, S, y, x, sy, sx);
      mask[y * S + x] = sample.mask[sy * S + sx];
      for (std::size_t c = 0; c < 3; ++c) image[(c * S + y) * S + x] = sample.image[(c * S + sy) * S + sx];
    }
  }
  sample.image = std::move(image);
  sample.mask = std::move(mask);
}

void augment_pair(Sample& sample, std::uint64_t seed) { apply_transform(sample, random_transform(seed)); }

void augment_episode(Episode& episode, std::uint64_t seed) {
  std::uint64_t i = 0;
  for (auto* set : {&episode.support, &episode.query}) {
    for (Sample& s : *set) augment_pair(s, derive_seed(seed, i++));
  }
}

}  // namespace metaseg::episodes
