#include "metaseg/eval/evaluate.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "metaseg/common/error.hpp"
#include "metaseg/common/parallel.hpp"
#include "metaseg/common/rng.hpp"
#include "metaseg/eval/metrics.hpp"

namespace metaseg::eval {

template <typename T>
std::vector<int> predict_query(const trainer::Model<T>& model, const trainer::PreparedEpisode& prepared,
                               const trainer::HeadOptions& options) {
  ad::Tape<T> tape;
  const trainer::ModelVars<T> vars = trainer::bind_model(tape, model);
  const ad::Var<T> logits = trainer::episode_logits(tape, model, vars, prepared, ad::Mode::eval, options);
  const auto& q = prepared.episode.query;
  const std::size_t H = q.front().height, W = q.front().width;
  ad::Var<T> maps =
      ad::from_pixel_matrix(logits, q.size(), H / trainer::kOutputStride, W / trainer::kOutputStride);
  maps = ad::bilinear_upsample(maps, static_cast<int>(H), static_cast<int>(W));
  const ad::Tensor<T>& v = maps.value();
  const std::size_t m = v.shape()[1], plane = H * W;
  std::vector<int> out(q.size() * plane);
  for (std::size_t n = 0; n < q.size(); ++n) {
    for (std::size_t p = 0; p < plane; ++p) {
      std::size_t best = 0;
      for (std::size_t k = 1; k < m; ++k) {
        if (v[(n * m + k) * plane + p] > v[(n * m + best) * plane + p]) best = k;
      }
      out[n * plane + p] = static_cast<int>(best);
    }
  }
  return out;
}

namespace {

void summarize(EvalReport& r) {
  double sum = 0;
  r.min = r.tasks.front().miou;
  r.max = r.min;
  for (const auto& t : r.tasks) {
    sum += t.miou;
    r.min = std::min(r.min, t.miou);
    r.max = std::max(r.max, t.miou);
  }
  r.mean = sum / static_cast<double>(r.tasks.size());
  double sq = 0;
  for (const auto& t : r.tasks) sq += (t.miou - r.mean) * (t.miou - r.mean);
  r.stddev = std::sqrt(sq / static_cast<double>(r.tasks.size()));
}

std::string csv_number(double v) {
  if (std::isnan(v)) return "nan";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

std::string csv_rows(const EvalReport& r, const std::string& prefix) {
  std::string out;
  for (const auto& t : r.tasks) {
    out += prefix + std::to_string(t.seed);
    for (const double iou : t.class_iou) out += "," + csv_number(iou);
    out += "," + csv_number(t.miou) + "\n";
  }
  return out;
}

std::string csv_header(int K, bool with_shots) {
  std::string h = with_shots ? "shots,task_seed" : "task_seed";
  for (int k = 0; k <= K; ++k) h += ",iou_" + std::to_string(k);
  return h + ",miou\n";
}

}  // namespace

template <typename T>
EvalReport evaluate(const trainer::Model<T>& model, const trainer::HeadOptions& options,
                    const episodes::SegDataset& dataset, episodes::Split split, int K, int N, int Q, int num_tasks,
                    std::uint64_t seed, int workers, bool keep_predictions) {
  if (num_tasks <= 0) throw ValidationError("evaluate: num_tasks must be positive (empty report)");
  const auto start = std::chrono::steady_clock::now();
  EvalReport report;
  report.K = K;
  report.N = N;
  report.Q = Q;
  report.tasks.resize(static_cast<std::size_t>(num_tasks));
  parallel_for(report.tasks.size(), workers, [&](std::size_t t) {
    TaskResult& r = report.tasks[t];
    r.seed = derive_seed(seed, t);
    const trainer::PreparedEpisode p = trainer::prepare_episode(dataset, split, K, N, Q, r.seed, false);
    std::vector<int> pred = predict_query(model, p, options);
    const IoU iou = miou(pred, p.query_labels_full, K + 1);
    r.class_iou = iou.per_class;
    r.miou = iou.mean;
    if (keep_predictions) r.prediction = std::move(pred);
  });
  summarize(report);
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

template <typename T>
std::vector<SweepRow> shot_sweep(const trainer::Model<T>& model, const trainer::HeadOptions& options,
                                 const episodes::SegDataset& dataset, int K, const std::vector<int>& shots, int Q,
                                 int num_tasks, std::uint64_t seed, int workers) {
  if (shots.empty()) throw ValidationError("shot_sweep: empty shot list");
  std::vector<SweepRow> rows;
  for (const int n : shots) {
    if (n < 1) throw ValidationError("shot_sweep: shot counts must be >= 1");
    rows.push_back(
        SweepRow{n, evaluate(model, options, dataset, episodes::Split::novel, K, n, Q, num_tasks, seed, workers)});
  }
  return rows;
}

std::string format_report(const EvalReport& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%d-way %d-shot, %zu tasks: mIoU %.4f +- %.4f (min %.4f, max %.4f), %.1f s\n", r.K,
                r.N, r.tasks.size(), r.mean, r.stddev, r.min, r.max, r.seconds);
  return buf;
}

std::string format_sweep(const std::vector<SweepRow>& rows) {
  std::string out = "shots  tasks  mean_miou  std_miou\n";
  char buf[128];
  for (const auto& row : rows) {
    std::snprintf(buf, sizeof buf, "%5d  %5zu  %9.4f  %8.4f\n", row.shots, row.report.tasks.size(), row.report.mean,
                  row.report.stddev);
    out += buf;
  }
  return out;
}

std::string report_csv(const EvalReport& report) { return csv_header(report.K, false) + csv_rows(report, ""); }

std::string sweep_csv(const std::vector<SweepRow>& rows) {
  if (rows.empty()) return {};
  std::string out = csv_header(rows.front().report.K, true);
  for (const auto& row : rows) out += csv_rows(row.report, std::to_string(row.shots) + ",");
  return out;
}

#define METASEG_INSTANTIATE_EVAL(T)                                                                             \
  template std::vector<int> predict_query(const trainer::Model<T>&, const trainer::PreparedEpisode&,           \
                                          const trainer::HeadOptions&);                                         \
  template EvalReport evaluate(const trainer::Model<T>&, const trainer::HeadOptions&, const episodes::SegDataset&, \
                               episodes::Split, int, int, int, int, std::uint64_t, int, bool);                  \
  template std::vector<SweepRow> shot_sweep(const trainer::Model<T>&, const trainer::HeadOptions&,             \
                                            const episodes::SegDataset&, int, const std::vector<int>&, int, int, \
                                            std::uint64_t, int);

METASEG_INSTANTIATE_EVAL(float)
METASEG_INSTANTIATE_EVAL(double)

}  // namespace metaseg::eval
