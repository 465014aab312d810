#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "gatiaa/autodiff.hpp"

namespace gatiaa {

struct GradCheckResult {
  double max_rel_error = 0.0;         // denominators floored at kGradRelativeFloor * largest gradient
  double max_rel_error_strict = 0.0;  // denominators floored at 1e-12 only
  std::size_t coordinates = 0;
  std::string worst_parameter;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

// Builds a scalar loss on a fresh tape from the current parameter values.
using LossBuilder = std::function<Var<double>(Tape<double>&)>;

// |a - n| / max(|a|, |n|, floor). The floor keeps gradients that are zero up
// to round-off from producing huge ratios.
inline double relative_error(double analytic, double numeric, double floor = 1e-12) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

// Central differences resolve a gradient only to about 1e-16 * |loss| / h, so
// coordinates far below the largest gradient in the check are compared against
// this fraction of it instead of their own magnitude.
inline constexpr double kGradRelativeFloor = 1e-5;

// Compares reverse-mode gradients with central differences
// (f(x + h e_i) - f(x - h e_i)) / 2h on up to `max_coords` coordinates per
// parameter (all of them when the parameter is small enough).
inline GradCheckResult grad_check(const LossBuilder& f, const std::vector<Parameter<double>*>& params,
                                  double h = 1e-5, std::size_t max_coords = 64, std::uint64_t seed = 0) {
  if (!(h > 0)) throw ValueError("grad_check: step must be positive");
  for (auto* p : params) p->zero_grad();
  {
    Tape<double> tape;
    Var<double> loss = f(tape);
    if (!loss.value().all_finite()) throw ValueError("grad_check: loss is not finite at the base point");
    tape.backward(loss);
    tape.accumulate_parameter_grads();
  }
  auto eval = [&f]() {
    Tape<double> tape;
    const double v = f(tape).value()[0];
    if (!std::isfinite(v)) throw ValueError("grad_check: loss is not finite at a probe point");
    return v;
  };

  double largest = 0;
  for (auto* p : params)
    for (double g : p->grad.data()) largest = std::max(largest, std::abs(g));
  const double floor = std::max(1e-12, kGradRelativeFloor * largest);

  std::mt19937_64 rng(seed);
  GradCheckResult res;
  for (auto* p : params) {
    std::vector<std::size_t> coords(p->value.size());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (coords.size() > max_coords) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(max_coords);
    }
    for (std::size_t i : coords) {
      const double orig = p->value[i];
      p->value[i] = orig + h;
      const double up = eval();
      p->value[i] = orig - h;
      const double down = eval();
      p->value[i] = orig;
      const double numeric = (up - down) / (2 * h);
      const double analytic = p->grad[i];
      const double err = relative_error(analytic, numeric, floor);
      res.max_rel_error_strict = std::max(res.max_rel_error_strict, relative_error(analytic, numeric));
      ++res.coordinates;
      if (err > res.max_rel_error || res.coordinates == 1) {
        res.max_rel_error = std::max(res.max_rel_error, err);
        res.worst_parameter = p->name;
        res.worst_index = i;
        res.worst_analytic = analytic;
        res.worst_numeric = numeric;
      }
    }
  }
  return res;
}

}  // namespace gatiaa
