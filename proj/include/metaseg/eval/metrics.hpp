#pragma once

#include <span>
#include <vector>

namespace metaseg::eval {

struct IoU {
  std::vector<double> per_class;  // NaN for classes absent from both masks
  double mean = 0;                // over the remaining classes
};

// Pixelwise IoU per class over flattened label maps with values in
// [0, num_classes). Classes absent from both prediction and ground truth are
// left out of the mean. Two empty masks give mean 0.
IoU miou(std::span<const int> pred, std::span<const int> gt, int num_classes);

}  // namespace metaseg::eval
