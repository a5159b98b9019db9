#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "metaseg/trainer/trainer.hpp"

namespace metaseg::eval {

struct TaskResult {
  std::uint64_t seed = 0;
  std::vector<double> class_iou;  // K + 1 entries, NaN when excluded
  double miou = 0;
  std::vector<int> prediction;  // only when retained
};

struct EvalReport {
  int K = 0, N = 0, Q = 0;
  std::vector<TaskResult> tasks;
  double mean = 0, stddev = 0, min = 0, max = 0;
  double seconds = 0;
};

// Full-resolution labels for the query images: logits upsampled bilinearly
// from feature resolution, then argmax per pixel (ties to the lower class).
template <typename T>
std::vector<int> predict_query(const trainer::Model<T>& model, const trainer::PreparedEpisode& prepared,
                               const trainer::HeadOptions& options);

// Task seeds are derive_seed(seed, t). The model is only read.
template <typename T>
EvalReport evaluate(const trainer::Model<T>& model, const trainer::HeadOptions& options,
                    const episodes::SegDataset& dataset, episodes::Split split, int K, int N, int Q, int num_tasks,
                    std::uint64_t seed, int workers = 1, bool keep_predictions = false);

struct SweepRow {
  int shots = 0;
  EvalReport report;
};

// One evaluation per shot count with the same task seeds; query draws are
// shared between rows because the sampler picks queries before supports.
template <typename T>
std::vector<SweepRow> shot_sweep(const trainer::Model<T>& model, const trainer::HeadOptions& options,
                                 const episodes::SegDataset& dataset, int K, const std::vector<int>& shots, int Q,
                                 int num_tasks, std::uint64_t seed, int workers = 1);

std::string format_report(const EvalReport& report);
std::string format_sweep(const std::vector<SweepRow>& rows);
// "task_seed,iou_0,...,iou_K,miou" header plus one row per task; excluded
// classes are written as "nan".
std::string report_csv(const EvalReport& report);
// Same columns with a leading "shots" column.
std::string sweep_csv(const std::vector<SweepRow>& rows);

}  // namespace metaseg::eval
