#include "metaseg/episodes/sampler.hpp"

#include <algorithm>
#include <array>
#include <set>

#include "metaseg/common/error.hpp"
#include "metaseg/common/rng.hpp"

namespace metaseg::episodes {

std::vector<int> remap_mask(const std::vector<std::uint8_t>& mask, const std::vector<int>& class_table) {
  std::array<int, 256> lut{};
  for (std::size_t k = 0; k < class_table.size(); ++k) lut[static_cast<std::size_t>(class_table[k])] = static_cast<int>(k) + 1;
  std::vector<int> out(mask.size());
  for (std::size_t i = 0; i < mask.size(); ++i) out[i] = lut[mask[i]];
  return out;
}

Episode sample_episode(const SegDataset& dataset, Split split, int K, int N, int Q, std::uint64_t seed) {
  if (K < 1 || N < 1 || Q < 0) throw ValidationError("sample_episode: need K >= 1, N >= 1, Q >= 0");
  const std::set<int>& pool = dataset.classes(split);
  if (pool.size() < static_cast<std::size_t>(K)) {
    throw ValidationError("sample_episode: split has " + std::to_string(pool.size()) + " classes, need " +
                          std::to_string(K));
  }
  Rng rng(seed);
  std::vector<int> classes(pool.begin(), pool.end());
  // partial Fisher-Yates: first K entries are a uniform draw without replacement
  for (std::size_t i = 0; i < static_cast<std::size_t>(K); ++i) {
    const std::size_t j = i + rng.below(classes.size() - i);
    std::swap(classes[i], classes[j]);
  }
  classes.resize(static_cast<std::size_t>(K));
  const std::set<int> drawn(classes.begin(), classes.end());

  std::vector<std::vector<std::size_t>> candidates(classes.size());
  for (std::size_t i = 0; i < dataset.records.size(); ++i) {
    const auto& present = dataset.records[i].present;
    if (present.empty()) continue;
    if (!std::all_of(present.begin(), present.end(), [&](int c) { return drawn.count(c) > 0; })) continue;
    for (std::size_t k = 0; k < classes.size(); ++k) {
      if (std::binary_search(present.begin(), present.end(), classes[k])) candidates[k].push_back(i);
    }
  }
  for (std::size_t k = 0; k < classes.size(); ++k) {
    if (candidates[k].size() < static_cast<std::size_t>(N + Q)) {
      throw ValidationError("sample_episode: class " + std::to_string(classes[k]) + " has " +
                            std::to_string(candidates[k].size()) + " usable images, need " + std::to_string(N + Q));
    }
  }

  Episode ep;
  ep.K = K;
  ep.N = N;
  ep.Q = Q;
  ep.class_table = classes;
  ep.seed = seed;
  std::set<std::size_t> used;
  auto draw = [&](std::size_t k, int count, std::vector<Sample>& into) {
    std::vector<std::size_t> free;
    for (const std::size_t r : candidates[k]) {
      if (!used.count(r)) free.push_back(r);
    }
    if (free.size() < static_cast<std::size_t>(count)) {
      throw ValidationError("sample_episode: ran out of distinct images for class " + std::to_string(classes[k]));
    }
    for (int i = 0; i < count; ++i) {
      const std::size_t j = static_cast<std::size_t>(i) + rng.below(free.size() - static_cast<std::size_t>(i));
      std::swap(free[static_cast<std::size_t>(i)], free[j]);
      const std::size_t r = free[static_cast<std::size_t>(i)];
      used.insert(r);
      const Record& rec = dataset.records[r];
      into.push_back(Sample{r, rec.height, rec.width, rec.image, remap_mask(rec.mask, classes)});
    }
  };
  for (std::size_t k = 0; k < classes.size(); ++k) draw(k, Q, ep.query);
  for (std::size_t k = 0; k < classes.size(); ++k) draw(k, N, ep.support);
  return ep;
}

template <typename T>
ad::Tensor<T> images_tensor(const std::vector<Sample>& samples) {
  if (samples.empty()) throw ValidationError("images_tensor: no samples");
  const std::size_t H = samples[0].height, W = samples[0].width;
  ad::Tensor<T> out(ad::Shape{samples.size(), 3, H, W});
  for (std::size_t n = 0; n < samples.size(); ++n) {
    if (samples[n].height != H || samples[n].width != W) throw ShapeError("images_tensor: mixed image sizes");
    for (std::size_t i = 0; i < 3 * H * W; ++i) {
      out[n * 3 * H * W + i] = static_cast<T>(samples[n].image[i]) / T{255};
    }
  }
  return out;
}

std::vector<int> downsample_labels(const std::vector<Sample>& samples, std::size_t stride) {
  std::vector<int> out;
  for (const Sample& s : samples) {
    if (s.height % stride != 0 || s.width % stride != 0) throw ShapeError("downsample_labels: extent not divisible");
    const std::size_t h = s.height / stride, w = s.width / stride, off = stride / 2;
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) out.push_back(s.mask[(y * stride + off) * s.width + x * stride + off]);
  }
  return out;
}

std::vector<int> concat_labels(const std::vector<Sample>& samples) {
  std::vector<int> out;
  for (const Sample& s : samples) out.insert(out.end(), s.mask.begin(), s.mask.end());
  return out;
}

template ad::Tensor<float> images_tensor<float>(const std::vector<Sample>&);
template ad::Tensor<double> images_tensor<double>(const std::vector<Sample>&);

}  // namespace metaseg::episodes
