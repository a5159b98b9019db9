#include "metaseg/episodes/dataset.hpp"

#include <algorithm>
#include <cstdio>
#include <zlib.h>

#include "metaseg/common/error.hpp"

namespace metaseg::episodes {

void Record::refresh_present() {
  std::set<int> seen;
  for (const std::uint8_t v : mask) {
    if (v != 0) seen.insert(v);
  }
  present.assign(seen.begin(), seen.end());
}

std::vector<int> SegDataset::class_ids() const {
  std::vector<int> ids;
  for (const auto& [id, name] : class_names) ids.push_back(id);
  return ids;
}

void SegDataset::validate() const {
  for (const auto& [id, name] : class_names) {
    if (id < 1 || id > 255) throw ValidationError("class id " + std::to_string(id) + " outside [1, 255]");
  }
  for (const int id : split.train) {
    if (split.novel.count(id)) throw ValidationError("class " + std::to_string(id) + " is both train and novel");
  }
  for (const auto* set : {&split.train, &split.novel}) {
    for (const int id : *set) {
      if (!class_names.count(id)) throw ValidationError("split names undeclared class " + std::to_string(id));
    }
  }
  for (const Record& r : records) {
    if (r.image.size() != 3 * r.height * r.width || r.mask.size() != r.height * r.width) {
      throw ValidationError("record '" + r.name + "': image/mask size mismatch");
    }
    for (const std::uint8_t v : r.mask) {
      if (v != 0 && !class_names.count(v)) {
        throw ValidationError("record '" + r.name + "': mask value " + std::to_string(v) + " is not a declared class");
      }
    }
  }
}

std::uint32_t SegDataset::checksum() const {
  uLong crc = crc32(0L, Z_NULL, 0);
  auto feed = [&crc](const void* data, std::size_t n) {
    crc = crc32(crc, static_cast<const Bytef*>(data), static_cast<uInt>(n));
  };
  auto feed_u64 = [&feed](std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    feed(b, 8);
  };
  for (const auto& [id, name] : class_names) {
    feed_u64(static_cast<std::uint64_t>(id));
    feed(name.data(), name.size());
  }
  for (const int id : split.train) feed_u64(static_cast<std::uint64_t>(id));
  feed_u64(0xFFFF);
  for (const int id : split.novel) feed_u64(static_cast<std::uint64_t>(id));
  for (const Record& r : records) {
    feed(r.name.data(), r.name.size());
    feed_u64(r.height);
    feed_u64(r.width);
    feed(r.image.data(), r.image.size());
    feed(r.mask.data(), r.mask.size());
  }
  return static_cast<std::uint32_t>(crc);
}

std::string checksum_hex(std::uint32_t crc) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%08x", crc);
  return buf;
}

SegDataset split_classes(SegDataset dataset, std::span<const int> novel_ids) {
  std::vector<int> train;
  for (const int id : dataset.class_ids()) {
    if (std::find(novel_ids.begin(), novel_ids.end(), id) == novel_ids.end()) train.push_back(id);
  }
  return split_classes(std::move(dataset), train, novel_ids);
}

SegDataset split_classes(SegDataset dataset, std::span<const int> train_ids, std::span<const int> novel_ids) {
  ClassSplit split;
  for (const int id : novel_ids) {
    if (!dataset.class_names.count(id)) throw ValidationError("novel class " + std::to_string(id) + " is not declared");
    split.novel.insert(id);
  }
  for (const int id : train_ids) {
    if (!dataset.class_names.count(id)) throw ValidationError("train class " + std::to_string(id) + " is not declared");
    if (split.novel.count(id)) {
      throw ValidationError("class " + std::to_string(id) + " appears in both the train and novel sets");
    }
    split.train.insert(id);
  }
  if (split.train.empty()) throw ValidationError("split leaves no training classes");
  dataset.split = std::move(split);
  return dataset;
}

std::vector<std::size_t> usable_records(const SegDataset& dataset, Split which) {
  const std::set<int>& allowed = dataset.classes(which);
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < dataset.records.size(); ++i) {
    const auto& present = dataset.records[i].present;
    if (present.empty()) continue;
    if (std::all_of(present.begin(), present.end(), [&](int c) { return allowed.count(c) > 0; })) out.push_back(i);
  }
  return out;
}

}  // namespace metaseg::episodes
