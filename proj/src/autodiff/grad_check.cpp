#include "metaseg/autodiff/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "metaseg/common/rng.hpp"

namespace metaseg::ad {

double GradCheckReport::worst_rel_error() const {
  double w = 0.0;
  for (const auto& in : inputs) w = std::max(w, in.max_rel_error);
  return w;
}

std::string GradCheckReport::summary() const {
  std::ostringstream os;
  os << (passed ? "ok" : "FAILED") << " (";
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    if (i) os << ", ";
    os << "in" << i << ": " << inputs[i].coords_checked << " coords rel " << inputs[i].max_rel_error;
  }
  os << ")";
  return os.str();
}

namespace {

double evaluate(const TapeFunction& fn, const std::vector<Tensor<double>>& inputs) {
  Tape<double> tape;
  std::vector<Var<double>> vars;
  vars.reserve(inputs.size());
  for (const auto& t : inputs) vars.push_back(tape.leaf(t));
  return fn(tape, vars).value().item();
}

}  // namespace

GradCheckReport grad_check(const TapeFunction& fn, std::span<const Tensor<double>> inputs,
                           const GradCheckOptions& options) {
  std::vector<Tensor<double>> work(inputs.begin(), inputs.end());

  std::vector<Tensor<double>> analytic;
  {
    Tape<double> tape;
    std::vector<Var<double>> vars;
    for (const auto& t : work) vars.push_back(tape.leaf(t));
    Var<double> out = fn(tape, vars);
    tape.backward(out);
    for (const auto& v : vars) analytic.push_back(tape.grad(v));
  }

  GradCheckReport report;
  Rng rng(options.seed);
  for (std::size_t k = 0; k < work.size(); ++k) {
    const std::size_t n = work[k].size();
    std::vector<std::size_t> coords(n);
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (n > options.full_check_limit) {
      rng.shuffle(std::span<std::size_t>(coords));
      coords.resize(std::max<std::size_t>(options.subset_size, 1));
      std::sort(coords.begin(), coords.end());
    }
    std::vector<double> numeric(coords.size());
    for (std::size_t i = 0; i < coords.size(); ++i) {
      double& x = work[k][coords[i]];
      const double orig = x;
      x = orig + options.h;
      const double fp = evaluate(fn, work);
      x = orig - options.h;
      const double fm = evaluate(fn, work);
      x = orig;
      numeric[i] = (fp - fm) / (2.0 * options.h);
    }
    double scale = 0.0;
    for (const double v : numeric) scale = std::max(scale, std::abs(v));
    // below atol a difference is indistinguishable from rounding in f(x +- h)
    const double floor = std::max({1e-3 * scale, options.atol / options.rtol, 1e-10});

    InputCheck check;
    check.coords_checked = coords.size();
    for (std::size_t i = 0; i < coords.size(); ++i) {
      const double a = analytic[k][coords[i]];
      const double num = numeric[i];
      const double abs_err = std::abs(a - num);
      const double rel = abs_err / std::max({std::abs(a), std::abs(num), floor});
      check.max_abs_error = std::max(check.max_abs_error, abs_err);
      check.max_rel_error = std::max(check.max_rel_error, rel);
    }
    check.passed = check.max_rel_error <= options.rtol;
    report.passed = report.passed && check.passed;
    report.inputs.push_back(check);
  }
  return report;
}

}  // namespace metaseg::ad
