#include "metaseg/verify/battery.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>

#include "metaseg/autodiff/grad_check.hpp"
#include "metaseg/common/error.hpp"
#include "metaseg/episodes/sampler.hpp"
#include "metaseg/episodes/synth.hpp"
#include "metaseg/ridge/heads.hpp"
#include "metaseg/trainer/trainer.hpp"
#include "metaseg/verify/oracles.hpp"

namespace metaseg::verify {

using ad::Shape;
using ad::Tape;
using ad::Var;
using Vars = std::span<const Var<double>>;

namespace {

using Clock = std::chrono::steady_clock;

double since(Clock::time_point start) { return std::chrono::duration<double>(Clock::now() - start).count(); }

std::string fmt(const char* pattern, double a, double b = 0) {
  char buf[160];
  std::snprintf(buf, sizeof buf, pattern, a, b);
  return buf;
}

// Scalar probe sum(v * R) with a fixed random R, so every output entry
// carries its own weight into the checked gradient.
Var<double> probe(Tape<double>& tape, const Var<double>& v, std::uint64_t seed) {
  Rng rng(seed);
  return ad::sum(ad::mul(v, tape.constant(random_tensor(v.shape(), rng))));
}

// Keeps entries at least `gap` away from zero so kinks stay out of reach of
// the finite-difference stencil.
Tensor<double> away_from_zero(Tensor<double> t, double gap) {
  for (std::size_t i = 0; i < t.size(); ++i) t[i] += t[i] >= 0 ? gap : -gap;
  return t;
}

Var<double> faulty_leaky_relu(const Var<double>& x) {
  Tensor<double> out = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = out[i] >= 0 ? out[i] : 0.1 * out[i];
  const Tensor<double> in = x.value();
  const ad::NodeId id = x.id();
  return x.tape().record(std::move(out), {x}, [in, id](Tape<double>& tape, std::span<const double> up) {
    std::vector<double> g(up.size());
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = up[i] * (in[i] >= 0 ? 1.0 : 0.2);  // wrong slope
    tape.accumulate(id, g);
  });
}

struct OpCase {
  std::string name;
  ad::TapeFunction fn;
  std::vector<Tensor<double>> inputs;
};

CheckResult run_case(const OpCase& c, const ad::GradCheckOptions& options) {
  const auto start = Clock::now();
  CheckResult r;
  r.name = "grad " + c.name;
  try {
    const ad::GradCheckReport report = ad::grad_check(c.fn, c.inputs, options);
    r.passed = report.passed;
    r.detail = report.summary();
  } catch (const std::exception& e) {
    r.passed = false;
    r.detail = std::string("exception: ") + e.what();
  }
  r.seconds = since(start);
  return r;
}

std::vector<OpCase> op_cases(std::uint64_t seed, bool inject_fault) {
  Rng rng(seed);
  auto rnd = [&rng](const Shape& s, double scale = 1.0) { return random_tensor(s, rng, scale); };
  std::vector<OpCase> cases;
  std::uint64_t probe_seed = seed * 1000;
  auto add = [&](std::string name, std::vector<Tensor<double>> inputs, auto body) {
    const std::uint64_t ps = ++probe_seed;
    cases.push_back(OpCase{std::move(name),
                           [body, ps](Tape<double>& t, Vars v) { return probe(t, body(t, v), ps); },
                           std::move(inputs)});
  };

  add("conv2d 3x3", {rnd({2, 2, 5, 5}), rnd({3, 2, 3, 3}), rnd({3})},
      [](Tape<double>&, Vars v) { return ad::conv2d(v[0], v[1], v[2], ad::Conv2dOptions{1, 1, 1}); });
  add("conv2d dilation 2", {rnd({1, 2, 7, 7}), rnd({2, 2, 3, 3}), rnd({2})},
      [](Tape<double>&, Vars v) { return ad::conv2d(v[0], v[1], v[2], ad::Conv2dOptions{1, 2, 2}); });
  add("conv2d stride 2", {rnd({1, 2, 6, 6}), rnd({2, 2, 3, 3})},
      [](Tape<double>&, Vars v) { return ad::conv2d(v[0], v[1], Var<double>(), ad::Conv2dOptions{2, 1, 1}); });
  add("conv2d 1x1", {rnd({2, 3, 4, 4}), rnd({2, 3, 1, 1}), rnd({2})},
      [](Tape<double>&, Vars v) { return ad::conv2d(v[0], v[1], v[2], ad::Conv2dOptions{}); });
  add("pool2d max2x2", {rnd({2, 2, 4, 4})}, [](Tape<double>&, Vars v) { return ad::pool2d(v[0], ad::PoolMode::max2x2); });
  add("pool2d max2x2 odd", {rnd({1, 2, 3, 5})},
      [](Tape<double>&, Vars v) { return ad::pool2d(v[0], ad::PoolMode::max2x2); });
  add("pool2d global_avg", {rnd({2, 3, 3, 4})},
      [](Tape<double>&, Vars v) { return ad::pool2d(v[0], ad::PoolMode::global_avg); });
  add("replicate_upsample", {rnd({2, 3, 1, 1})},
      [](Tape<double>&, Vars v) { return ad::replicate_upsample(v[0], 3, 4); });
  add("bilinear_upsample", {rnd({1, 2, 3, 3})},
      [](Tape<double>&, Vars v) { return ad::bilinear_upsample(v[0], 12, 12); });
  add("batchnorm2d train", {rnd({2, 3, 3, 3}), rnd({3}), rnd({3})}, [](Tape<double>&, Vars v) {
    const Tensor<double> rm(Shape{3}), rv(Shape{3}, 1.0);
    return ad::batchnorm2d(v[0], v[1], v[2], rm, rv, ad::Mode::train);
  });
  {
    Tensor<double> rv = rnd({3});
    for (std::size_t i = 0; i < 3; ++i) rv[i] = 0.5 + std::abs(rv[i]);
    const Tensor<double> rm = rnd({3});
    add("batchnorm2d eval", {rnd({2, 3, 2, 2}), rnd({3}), rnd({3})}, [rm, rv](Tape<double>&, Vars v) {
      return ad::batchnorm2d(v[0], v[1], v[2], rm, rv, ad::Mode::eval);
    });
  }
  if (inject_fault) {
    add("leaky_relu", {away_from_zero(rnd({2, 3, 3}), 0.05)}, [](Tape<double>&, Vars v) { return faulty_leaky_relu(v[0]); });
  } else {
    add("leaky_relu", {away_from_zero(rnd({2, 3, 3}), 0.05)}, [](Tape<double>&, Vars v) { return ad::leaky_relu(v[0], 0.1); });
  }
  add("l2_normalize_channels", {rnd({2, 3, 3, 3})},
      [](Tape<double>&, Vars v) { return ad::l2_normalize_channels(v[0], 1e-8); });
  add("concat_channels", {rnd({2, 2, 3, 3}), rnd({2, 3, 3, 3})},
      [](Tape<double>&, Vars v) { return ad::concat_channels(v[0], v[1]); });
  add("to_pixel_matrix", {rnd({2, 3, 2, 3})}, [](Tape<double>&, Vars v) { return ad::to_pixel_matrix(v[0]); });
  add("from_pixel_matrix", {rnd({12, 3})},
      [](Tape<double>&, Vars v) { return ad::from_pixel_matrix(v[0], 2, 2, 3); });
  add("add", {rnd({3, 4}), rnd({3, 4})}, [](Tape<double>&, Vars v) { return ad::add(v[0], v[1]); });
  add("sub", {rnd({3, 4}), rnd({3, 4})}, [](Tape<double>&, Vars v) { return ad::sub(v[0], v[1]); });
  add("mul", {rnd({3, 4}), rnd({3, 4})}, [](Tape<double>&, Vars v) { return ad::mul(v[0], v[1]); });
  add("scale", {rnd({3, 4})}, [](Tape<double>&, Vars v) { return ad::scale(v[0], -2.5); });
  add("exp", {rnd({3, 4}, 0.5)}, [](Tape<double>&, Vars v) { return ad::exp(v[0]); });
  add("mul_scalar", {rnd({3, 4}), rnd({})}, [](Tape<double>&, Vars v) { return ad::mul_scalar(v[0], v[1]); });
  add("add_scalar", {rnd({3, 4}), rnd({})}, [](Tape<double>&, Vars v) { return ad::add_scalar(v[0], v[1]); });
  add("sum", {rnd({3, 4})}, [](Tape<double>&, Vars v) { return ad::sum(v[0]); });
  add("mean", {rnd({3, 4})}, [](Tape<double>&, Vars v) { return ad::mean(v[0]); });
  add("adam_first_direction", {away_from_zero(rnd({3, 4}, 1e-3), 1e-4)},
      [](Tape<double>&, Vars v) { return ad::adam_first_direction(v[0], 1e-4); });
  add("matmul", {rnd({3, 4}), rnd({4, 2})}, [](Tape<double>&, Vars v) { return ad::matmul(v[0], v[1]); });
  add("transpose", {rnd({3, 4})}, [](Tape<double>&, Vars v) { return ad::transpose(v[0]); });
  add("add_diag", {rnd({4, 4}), rnd({})}, [](Tape<double>&, Vars v) { return ad::add_diag(v[0], v[1]); });
  add("select_rows", {rnd({5, 3})}, [](Tape<double>&, Vars v) {
    static constexpr std::size_t rows[] = {4, 0, 4, 2};
    return ad::select_rows(v[0], std::span<const std::size_t>(rows));
  });
  // A = S S^T + 2 I keeps the system SPD and symmetric under perturbation
  // (the factorization reads only one triangle of A).
  add("spd_solve", {rnd({5, 5}, 0.5), rnd({5, 3})}, [](Tape<double>& t, Vars v) {
    const Var<double> a = ad::add_diag(ad::matmul(v[0], ad::transpose(v[0])), t.constant(Tensor<double>::scalar(2.0)));
    return ad::spd_solve(a, v[1]);
  });
  add("neg_sq_distance", {rnd({4, 3}), rnd({2, 3})},
      [](Tape<double>&, Vars v) { return ad::neg_sq_distance(v[0], v[1]); });
  cases.push_back(OpCase{"softmax_cross_entropy",
                         [](Tape<double>&, Vars v) {
                           static constexpr int labels[] = {0, 2, 1, 2, 0};
                           return ad::softmax_cross_entropy(v[0], std::span<const int>(labels));
                         },
                         {rnd({5, 3}, 2.0)}});

  // base learners, differentiated through features and head scalars
  const std::vector<int> labels{0, 1, 2, 0, 1, 2, 0, 0};
  const Tensor<double> y = ridge::make_targets(labels, 3).onehot<double>();
  add("ridge_fit primal + predict", {rnd({8, 3}), rnd({5, 3}), Tensor<double>::scalar(-0.5), rnd({}), rnd({})},
      [y](Tape<double>&, Vars v) {
        const Var<double> w = ridge::ridge_fit(v[0], y, ad::exp(v[2]), ridge::SolveForm::primal);
        return ridge::ridge_predict(v[1], w, v[3], v[4]);
      });
  add("ridge_fit dual + predict", {rnd({8, 11}), rnd({5, 11}), Tensor<double>::scalar(0.3), rnd({}), rnd({})},
      [y](Tape<double>&, Vars v) {
        const Var<double> w = ridge::ridge_fit(v[0], y, ad::exp(v[2]), ridge::SolveForm::dual);
        return ridge::ridge_predict(v[1], w, v[3], v[4]);
      });
  add("prototype_predict", {rnd({8, 3}), rnd({5, 3})}, [labels](Tape<double>&, Vars v) {
    return ridge::prototype_predict(v[0], std::span<const int>(labels), 3, v[1]);
  });
  add("convstep_predict", {rnd({8, 3}), rnd({5, 3})},
      [y](Tape<double>&, Vars v) { return ridge::convstep_predict(v[0], y, v[1], 1e-3, 1e-3); });
  return cases;
}

// A frozen 2-way 1-shot episode of random 8x8 images with blocky masks.
trainer::PreparedEpisode micro_episode(std::uint64_t seed) {
  Rng rng(seed);
  trainer::PreparedEpisode p;
  episodes::Episode& ep = p.episode;
  ep.K = 2;
  ep.N = 1;
  ep.Q = 1;
  ep.class_table = {1, 2};
  ep.seed = seed;
  auto make = [&rng](int cls) {
    episodes::Sample s;
    s.height = s.width = 8;
    s.image.resize(3 * 64);
    for (auto& v : s.image) v = static_cast<std::uint8_t>(rng.below(256));
    s.mask.assign(64, 0);
    const std::size_t y0 = rng.below(4), x0 = rng.below(4);
    for (std::size_t y = y0; y < y0 + 4; ++y)
      for (std::size_t x = x0; x < x0 + 4; ++x) s.mask[y * 8 + x] = cls;
    return s;
  };
  for (int k = 1; k <= 2; ++k) ep.support.push_back(make(k));
  for (int k = 1; k <= 2; ++k) ep.query.push_back(make(k));
  p.support_labels = episodes::downsample_labels(ep.support, trainer::kOutputStride);
  p.query_labels = episodes::downsample_labels(ep.query, trainer::kOutputStride);
  p.query_labels_full = episodes::concat_labels(ep.query);
  return p;
}

}  // namespace

std::vector<CheckResult> check_op_gradients(std::uint64_t seed, bool inject_fault) {
  ad::GradCheckOptions options;
  options.rtol = 1e-4;
  options.h = 1e-6;
  options.seed = seed;
  std::vector<CheckResult> out;
  for (const OpCase& c : op_cases(seed, inject_fault)) out.push_back(run_case(c, options));
  return out;
}

CheckResult check_pipeline_gradient(int channels, std::uint64_t seed) {
  const auto start = Clock::now();
  trainer::TrainConfig cfg;
  cfg.K = 2;
  cfg.N = 1;
  cfg.Q = 1;
  cfg.seed = seed;
  cfg.embed = embed::EmbedConfig::uniform(channels);
  const trainer::Model<double> model = trainer::init_model<double>(cfg);
  const trainer::PreparedEpisode episode = micro_episode(seed + 1);

  // inputs: every trainable embedding tensor, then log_lambda, alpha, beta
  std::vector<Tensor<double>> inputs;
  const auto trainable = model.embed.trainable_indices();
  for (const std::size_t i : trainable) inputs.push_back(model.embed.entries[i].value);
  inputs.push_back(Tensor<double>::scalar(0.2));
  inputs.push_back(Tensor<double>::scalar(1.3));
  inputs.push_back(Tensor<double>::scalar(-0.1));

  const ad::TapeFunction fn = [&](Tape<double>& tape, Vars v) {
    trainer::ModelVars<double> vars;
    vars.embed.by_entry.resize(model.embed.entries.size());
    for (std::size_t j = 0; j < trainable.size(); ++j) vars.embed.by_entry[trainable[j]] = v[j];
    vars.head = {v[trainable.size()], v[trainable.size() + 1], v[trainable.size() + 2]};
    const Var<double> logits = trainer::episode_logits(tape, model, vars, episode, ad::Mode::train, {});
    return trainer::meta_loss(logits, std::span<const int>(episode.query_labels));
  };
  ad::GradCheckOptions options;
  options.rtol = 1e-4;
  options.h = 1e-6;
  options.seed = seed;
  CheckResult r;
  const std::size_t c = static_cast<std::size_t>(cfg.embed.feature_channels());
  r.name = "grad episode pipeline (width " + std::to_string(channels) + ", " +
           (episode.support_labels.size() >= c ? "primal" : "dual") + " solve)";
  try {
    const ad::GradCheckReport report = ad::grad_check(fn, inputs, options);
    std::size_t coords = 0;
    for (const auto& in : report.inputs) coords += in.coords_checked;
    r.passed = report.passed;
    r.detail = std::to_string(inputs.size()) + " tensors, " + std::to_string(coords) +
               " coordinates, worst rel err " + fmt("%.2e", report.worst_rel_error());
  } catch (const std::exception& e) {
    r.detail = std::string("exception: ") + e.what();
  }
  r.seconds = since(start);
  return r;
}

std::vector<CheckResult> check_ridge_closed_form(int combos, std::uint64_t seed) {
  const auto start = Clock::now();
  Rng rng(seed);
  const double lambdas[] = {0.1, 1.0, 10.0};
  double worst_gd = 0, worst_wood = 0, worst_resid = 0;
  std::size_t gd_unconverged = 0;
  for (int i = 0; i < combos; ++i) {
    const auto n = static_cast<std::size_t>(rng.range(3, 40));
    const auto c = static_cast<std::size_t>(rng.range(3, 40));
    const auto m = static_cast<std::size_t>(rng.range(2, 4));
    const double lambda = lambdas[i % 3];
    const Tensor<double> x = random_tensor(Shape{n, c}, rng);
    Tensor<double> y(Shape{n, m});
    for (std::size_t r = 0; r < n; ++r) y[r * m + rng.below(m)] = 1.0;

    Tape<double> tape;
    const Var<double> xv = tape.constant(x);
    const Var<double> lv = tape.constant(Tensor<double>::scalar(lambda));
    const Tensor<double> primal = ridge::ridge_fit(xv, y, lv, ridge::SolveForm::primal).value();
    const Tensor<double> dual = ridge::ridge_fit(xv, y, lv, ridge::SolveForm::dual).value();
    worst_wood = std::max(worst_wood, max_abs_diff(primal, dual));

    const GdResult gd = ridge_gd_oracle(x, y, lambda, 400000, -1.0, 1e-11);
    if (gd.grad_inf > 1e-9) ++gd_unconverged;
    worst_gd = std::max(worst_gd, max_abs_diff(primal, gd.w));

    // normal-equation residual (X^T X + lambda I) W - X^T Y
    double resid = 0, scale = 0;
    for (std::size_t a = 0; a < c; ++a)
      for (std::size_t j = 0; j < m; ++j) {
        double lhs = lambda * primal[a * m + j], rhs = 0;
        for (std::size_t r = 0; r < n; ++r) {
          double xw = 0;
          for (std::size_t b = 0; b < c; ++b) xw += x[r * c + b] * primal[b * m + j];
          lhs += x[r * c + a] * xw;
          rhs += x[r * c + a] * y[r * m + j];
        }
        resid = std::max(resid, std::abs(lhs - rhs));
        scale = std::max(scale, std::abs(rhs));
      }
    worst_resid = std::max(worst_resid, resid / std::max(1.0, scale));
  }
  const double secs = since(start);
  std::vector<CheckResult> out;
  out.push_back(CheckResult{"ridge closed form vs gradient-descent oracle", worst_gd <= 1e-6 && gd_unconverged == 0,
                            std::to_string(combos) + " cases, max |dW| " + fmt("%.2e", worst_gd) +
                                (gd_unconverged ? ", oracle unconverged in " + std::to_string(gd_unconverged) : ""),
                            secs});
  out.push_back(CheckResult{"ridge primal vs Woodbury form", worst_wood <= 1e-8,
                            std::to_string(combos) + " cases, max |dW| " + fmt("%.2e", worst_wood), 0});
  out.push_back(CheckResult{"ridge normal-equation residual", worst_resid <= 1e-9,
                            "max scaled residual " + fmt("%.2e", worst_resid), 0});
  return out;
}

std::vector<CheckResult> check_ablation_heads(std::uint64_t seed) {
  std::vector<CheckResult> out;
  Rng rng(seed);
  {
    const Tensor<double> x = random_tensor(Shape{9, 4}, rng), xq = random_tensor(Shape{5, 4}, rng);
    const std::vector<int> labels{0, 1, 2, 2, 1, 0, 0, 1, 2};
    const Tensor<double> y = ridge::make_targets(labels, 3).onehot<double>();
    Tape<double> tape;
    const Tensor<double> got = ridge::convstep_predict(tape.constant(x), y, tape.constant(xq), 1e-3, 1e-8).value();
    const double err = max_abs_diff(got, convstep_oracle(x, y, xq, 1e-3, 1e-8));
    out.push_back(CheckResult{"one-step head vs Adam t=1 formula", err <= 1e-12, "max diff " + fmt("%.2e", err), 0});
  }
  {
    // supports {0, 0} and {2, 2} in one dimension, query 0.5
    Tape<double> tape;
    const Var<double> xs = tape.constant(Tensor<double>(Shape{4, 1}, std::vector<double>{0, 0, 2, 2}));
    const Var<double> xq = tape.constant(Tensor<double>(Shape{1, 1}, std::vector<double>{0.5}));
    const std::vector<int> labels{0, 0, 1, 1};
    const Tensor<double> got = ridge::prototype_predict(xs, std::span<const int>(labels), 2, xq).value();
    const double err = std::max(std::abs(got[0] + 0.25), std::abs(got[1] + 2.25));
    out.push_back(
        CheckResult{"prototype head hand example", err <= 1e-15, fmt("logits (%.4f, %.4f)", got[0], got[1]), 0});
  }
  return out;
}

CheckResult check_sampler_invariants(const episodes::SegDataset& dataset, std::size_t count, std::uint64_t seed) {
  const auto start = Clock::now();
  CheckResult r;
  r.name = "sampler invariants";
  std::string problem;
  std::size_t checked = 0, replayed = 0;
  for (std::size_t i = 0; i < count && problem.empty(); ++i) {
    const auto split = i % 2 == 0 ? episodes::Split::train : episodes::Split::novel;
    const int K = 1 + static_cast<int>(i % 4 / 2);
    const int N = i % 3 == 0 ? 1 : 5;
    const int Q = 2;
    const std::uint64_t s = derive_seed(seed, i);
    const episodes::Episode ep = episodes::sample_episode(dataset, split, K, N, Q, s);
    const std::set<int>& allowed = dataset.classes(split);
    auto fail = [&](const std::string& what) { problem = "episode " + std::to_string(i) + ": " + what; };
    if (ep.support.size() != static_cast<std::size_t>(N * K) || ep.query.size() != static_cast<std::size_t>(Q * K)) {
      fail("wrong support/query cardinality");
      break;
    }
    std::set<std::size_t> seen;
    for (const auto* set : {&ep.support, &ep.query}) {
      for (const episodes::Sample& sample : *set) {
        if (!seen.insert(sample.record).second) fail("record used twice");
        const episodes::Record& rec = dataset.records[sample.record];
        for (std::size_t p = 0; p < rec.mask.size(); ++p) {
          const int g = rec.mask[p], l = sample.mask[p];
          if (l < 0 || l > K) fail("label out of range");
          if (g != 0 && !allowed.count(g)) fail("class " + std::to_string(g) + " leaked across the split");
          const auto it = std::find(ep.class_table.begin(), ep.class_table.end(), g);
          const int expect = it == ep.class_table.end() ? 0 : static_cast<int>(it - ep.class_table.begin()) + 1;
          if (l != expect) fail("label remap mismatch");
        }
      }
    }
    if (i % 50 == 0) {
      const episodes::Episode again = episodes::sample_episode(dataset, split, K, N, Q, s);
      bool same = again.class_table == ep.class_table && again.support.size() == ep.support.size();
      for (std::size_t j = 0; same && j < ep.support.size(); ++j) {
        same = again.support[j].record == ep.support[j].record && again.support[j].mask == ep.support[j].mask;
      }
      for (std::size_t j = 0; same && j < ep.query.size(); ++j) same = again.query[j].record == ep.query[j].record;
      if (!same) fail("same seed gave a different episode");
      ++replayed;
    }
    ++checked;
  }
  r.passed = problem.empty();
  r.detail = problem.empty() ? std::to_string(checked) + " episodes, " + std::to_string(replayed) + " replayed" : problem;
  r.seconds = since(start);
  return r;
}

CheckResult check_checkpoint_roundtrip(const std::filesystem::path& dir, std::uint64_t seed) {
  const auto start = Clock::now();
  CheckResult r;
  r.name = "checkpoint round trip";
  try {
    trainer::TrainConfig cfg;
    cfg.seed = seed;
    cfg.embed = embed::EmbedConfig::uniform(4);
    trainer::TrainState<float> state = trainer::init_state<float>(cfg);
    // give the optimizer state non-trivial contents
    Rng rng(seed);
    auto params = state.model.trainable();
    std::vector<Tensor<float>> grads;
    for (const Tensor<float>* p : params) {
      Tensor<float> g(p->shape());
      for (std::size_t i = 0; i < g.size(); ++i) g[i] = static_cast<float>(rng.normal());
      grads.push_back(std::move(g));
    }
    ad::adam_step<float>(std::span<Tensor<float>* const>(params), std::span<const Tensor<float>>(grads), state.adam);
    state.epoch = 3;

    std::filesystem::create_directories(dir);
    const auto a = dir / "roundtrip_a.ckpt", b = dir / "roundtrip_b.ckpt";
    trainer::save_checkpoint(a, trainer::to_checkpoint(state));
    const auto restored = trainer::state_from_checkpoint<float>(trainer::load_checkpoint(a));
    trainer::save_checkpoint(b, trainer::to_checkpoint(restored));
    auto slurp = [](const std::filesystem::path& p) {
      std::ifstream in(p, std::ios::binary);
      return std::vector<char>((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    };
    const auto bytes_a = slurp(a), bytes_b = slurp(b);
    std::string problem;
    if (bytes_a != bytes_b) problem = "save -> load -> save changed the bytes";

    std::vector<std::uint8_t> bytes(bytes_a.begin(), bytes_a.end());
    bytes[bytes.size() / 2] ^= 0x10;
    try {
      trainer::deserialize(bytes, "corrupted");
      problem = "flipped payload byte went unnoticed";
    } catch (const FormatError&) {
    }
    std::vector<std::uint8_t> versioned(bytes_a.begin(), bytes_a.end());
    versioned[4] = 99;
    try {
      trainer::deserialize(versioned, "versioned");
      problem = "unknown version accepted";
    } catch (const FormatError& e) {
      if (std::string(e.what()).find("version") == std::string::npos) problem = "version error not reported as such";
    }
    std::filesystem::remove(a);
    std::filesystem::remove(b);
    r.passed = problem.empty();
    r.detail = problem.empty() ? std::to_string(bytes_a.size()) + " bytes, corruption and version checks ok" : problem;
  } catch (const std::exception& e) {
    r.detail = std::string("exception: ") + e.what();
  }
  r.seconds = since(start);
  return r;
}

bool BatteryReport::passed() const {
  return !checks.empty() && std::all_of(checks.begin(), checks.end(), [](const CheckResult& c) { return c.passed; });
}

std::string BatteryReport::format() const {
  std::string out;
  std::size_t failed = 0;
  char buf[64];
  for (const CheckResult& c : checks) {
    std::snprintf(buf, sizeof buf, " (%.2fs)", c.seconds);
    out += std::string(c.passed ? "PASS " : "FAIL ") + c.name + ": " + c.detail + buf + "\n";
    failed += c.passed ? 0 : 1;
  }
  out += std::to_string(checks.size() - failed) + "/" + std::to_string(checks.size()) + " checks passed\n";
  return out;
}

BatteryReport run_battery(const BatteryOptions& options) {
  BatteryReport report;
  auto append = [&report](std::vector<CheckResult> more) {
    report.checks.insert(report.checks.end(), more.begin(), more.end());
  };
  append(check_op_gradients(options.seed, options.inject_gradient_fault));
  report.checks.push_back(check_pipeline_gradient(4, options.seed));
  report.checks.push_back(check_pipeline_gradient(8, options.seed));
  append(check_ridge_closed_form(options.ridge_combos, options.seed));
  append(check_ablation_heads(options.seed));
  const auto dataset =
      episodes::split_classes(episodes::gen_synthetic(episodes::SynthConfig{}), episodes::kDefaultNovelClasses);
  report.checks.push_back(check_sampler_invariants(dataset, options.sampler_episodes, options.seed));
  const auto dir = options.scratch_dir.empty() ? std::filesystem::temp_directory_path() / "metaseg_verify"
                                               : options.scratch_dir;
  report.checks.push_back(check_checkpoint_roundtrip(dir, options.seed));
  return report;
}

}  // namespace metaseg::verify
