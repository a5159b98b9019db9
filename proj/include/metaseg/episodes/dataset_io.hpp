#pragma once

#include <filesystem>

#include "metaseg/episodes/dataset.hpp"

namespace metaseg::episodes {

// Directory layout:
//   classes.txt        "<id>\t<name>" per line, id >= 1
//   split.txt          "train: 1,2,..." and "novel: 5,6,..."
//   images/<name>.ppm  binary P6, 8-bit RGB
//   masks/<name>.pgm   binary P5, 8-bit class ids, 0 = background
void write_dataset_dir(const SegDataset& dataset, const std::filesystem::path& dir);

// Records come back sorted by name.
SegDataset load_dataset_dir(const std::filesystem::path& dir);

}  // namespace metaseg::episodes
