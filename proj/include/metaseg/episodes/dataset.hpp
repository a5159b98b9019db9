#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "metaseg/autodiff/tensor.hpp"

namespace metaseg::episodes {

// One image with its dense label map. Pixels are stored as 8-bit planar RGB
// (3 x H x W) so the on-disk format round-trips exactly; image_value() maps
// them to [0, 1].
struct Record {
  std::string name;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> image;
  std::vector<std::uint8_t> mask;  // global class ids, 0 = background
  std::vector<int> present;        // sorted foreground ids in the mask

  float image_value(std::size_t channel, std::size_t y, std::size_t x) const {
    return static_cast<float>(image[(channel * height + y) * width + x]) / 255.0f;
  }
  void refresh_present();

  friend bool operator==(const Record&, const Record&) = default;
};

struct ClassSplit {
  std::set<int> train;
  std::set<int> novel;

  friend bool operator==(const ClassSplit&, const ClassSplit&) = default;
};

enum class Split { train, novel };

struct SegDataset {
  std::vector<Record> records;
  std::map<int, std::string> class_names;  // ids >= 1
  ClassSplit split;

  std::vector<int> class_ids() const;
  const std::set<int>& classes(Split which) const { return which == Split::train ? split.train : split.novel; }
  // Throws ValidationError on undeclared mask values, size mismatches or an
  // overlapping split.
  void validate() const;
  // CRC32 over names, pixels, masks, class table and split.
  std::uint32_t checksum() const;

  friend bool operator==(const SegDataset&, const SegDataset&) = default;
};

std::string checksum_hex(std::uint32_t crc);

// Novel classes as given, every other declared class becomes a train class.
SegDataset split_classes(SegDataset dataset, std::span<const int> novel_ids);
// Explicit train/novel sets; they must be disjoint and declared.
SegDataset split_classes(SegDataset dataset, std::span<const int> train_ids, std::span<const int> novel_ids);

// Records whose foreground classes all belong to the split (and are non-empty).
std::vector<std::size_t> usable_records(const SegDataset& dataset, Split which);

}  // namespace metaseg::episodes
