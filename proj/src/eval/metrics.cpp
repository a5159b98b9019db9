#include "metaseg/eval/metrics.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "metaseg/common/error.hpp"

namespace metaseg::eval {

IoU miou(std::span<const int> pred, std::span<const int> gt, int num_classes) {
  if (pred.size() != gt.size()) {
    throw ShapeError("miou: prediction has " + std::to_string(pred.size()) + " pixels, ground truth " +
                     std::to_string(gt.size()));
  }
  if (num_classes < 1) throw ValidationError("miou: num_classes must be >= 1");
  const auto m = static_cast<std::size_t>(num_classes);
  std::vector<std::size_t> inter(m, 0), pred_count(m, 0), gt_count(m, 0);
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const int p = pred[i], g = gt[i];
    if (p < 0 || p >= num_classes || g < 0 || g >= num_classes) {
      throw ValidationError("miou: label " + std::to_string(p < 0 || p >= num_classes ? p : g) + " at pixel " +
                            std::to_string(i) + " outside [0, " + std::to_string(num_classes) + ")");
    }
    ++pred_count[static_cast<std::size_t>(p)];
    ++gt_count[static_cast<std::size_t>(g)];
    if (p == g) ++inter[static_cast<std::size_t>(p)];
  }
  IoU out;
  out.per_class.assign(m, std::numeric_limits<double>::quiet_NaN());
  double sum = 0;
  std::size_t counted = 0;
  for (std::size_t k = 0; k < m; ++k) {
    const std::size_t uni = pred_count[k] + gt_count[k] - inter[k];
    if (uni == 0) continue;
    out.per_class[k] = static_cast<double>(inter[k]) / static_cast<double>(uni);
    sum += out.per_class[k];
    ++counted;
  }
  out.mean = counted ? sum / static_cast<double>(counted) : 0.0;
  return out;
}

}  // namespace metaseg::eval
