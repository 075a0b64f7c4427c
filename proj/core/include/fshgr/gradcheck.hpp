#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fshgr/params.hpp"
#include "fshgr/tensor.hpp"

namespace fshgr {

struct GradCheckResult {
  double max_rel_err = 0.0;
  std::int64_t checked = 0;
  std::int64_t skipped = 0;  // excluded coordinates (listed or relu-kink straddles)
};

namespace detail {
inline double rel_err(double analytic, double fd) {
  const double denom = std::max({std::abs(analytic), std::abs(fd), 1e-8});
  return std::abs(analytic - fd) / denom;
}
}  // namespace detail

// Central differences resolve a derivative no finer than eps*|f|/(2h); a
// coordinate whose gradient sits below that noise divided by the target
// tolerance cannot be certified at this h regardless of correctness. Such
// coordinates are skipped, like the relu-kink ones.
inline double fd_measurable_floor(double f0, double h, double certify_tol) {
  if (certify_tol <= 0) return 0.0;
  return 8.0 * std::numeric_limits<double>::epsilon() * std::max(1.0, std::abs(f0)) /
         (2.0 * h * certify_tol);
}

// Compares the tape gradient of a scalar-valued build function against central
// finite differences. `build(Graph<double>&, Tensor<double> x)` must return a
// scalar tensor. Coordinates listed in `exclude` are skipped, as are
// coordinates whose +-h evaluations land on different sides of a relu kink
// (central differences are meaningless across the nondifferentiable point).
template <typename BuildFn>
GradCheckResult grad_check(BuildFn&& build, std::span<const double> x0, Shape shape,
                           double h = 1e-5, std::span<const std::int64_t> exclude = {},
                           double certify_tol = 0.0) {
  std::vector<double> base(x0.begin(), x0.end());

  Graph<double> g;
  Tensor<double> x = g.leaf(shape, base, true);
  Tensor<double> loss = build(g, x);
  if (loss.numel() != 1) throw DimensionError("grad_check: build must return a scalar");
  g.backward(loss);
  std::vector<double> analytic(x.grad().begin(), x.grad().end());
  if (analytic.empty()) analytic.assign(base.size(), 0.0);
  const double floor = fd_measurable_floor(loss.value()[0], h, certify_tol);

  const auto eval = [&](const std::vector<double>& pt) {
    Graph<double> gg;
    Tensor<double> xx = gg.leaf(shape, pt, false);
    Tensor<double> l = build(gg, xx);
    return std::make_pair(l.value()[0], gg.relu_sign_hash());
  };

  GradCheckResult res;
  std::vector<double> pt = base;
  for (std::size_t i = 0; i < base.size(); ++i) {
    if (std::find(exclude.begin(), exclude.end(), static_cast<std::int64_t>(i)) !=
        exclude.end()) {
      ++res.skipped;
      continue;
    }
    pt[i] = base[i] + h;
    const auto [fp, hp] = eval(pt);
    pt[i] = base[i] - h;
    const auto [fm, hm] = eval(pt);
    pt[i] = base[i];
    if (hp != hm) {
      ++res.skipped;
      continue;
    }
    const double fd = (fp - fm) / (2.0 * h);
    if (std::max(std::abs(analytic[i]), std::abs(fd)) < floor) {
      ++res.skipped;
      continue;
    }
    res.max_rel_err = std::max(res.max_rel_err, detail::rel_err(analytic[i], fd));
    ++res.checked;
  }
  return res;
}

// Same check over every coordinate of every entry in a ParamSet. The build
// function binds parameters itself via use_param and returns a scalar loss.
template <typename BuildFn>
GradCheckResult grad_check_params(BuildFn&& build, ParamSet<double>& params, double h = 1e-5,
                                  double certify_tol = 0.0) {
  Graph<double> g;
  Tensor<double> loss = build(g);
  if (loss.numel() != 1)
    throw DimensionError("grad_check_params: build must return a scalar");
  g.backward(loss);
  GradStore<double> analytic = make_grad_store(params);
  g.add_param_grads(analytic);
  const double floor = fd_measurable_floor(loss.value()[0], h, certify_tol);

  const auto eval = [&]() {
    Graph<double> gg;
    Tensor<double> l = build(gg);
    return std::make_pair(l.value()[0], gg.relu_sign_hash());
  };

  GradCheckResult res;
  for (std::size_t e = 0; e < params.entries.size(); ++e) {
    auto& value = params.entries[e].value;
    for (std::size_t i = 0; i < value.size(); ++i) {
      const double keep = value[i];
      value[i] = keep + h;
      const auto [fp, hp] = eval();
      value[i] = keep - h;
      const auto [fm, hm] = eval();
      value[i] = keep;
      if (hp != hm) {
        ++res.skipped;
        continue;
      }
      const double fd = (fp - fm) / (2.0 * h);
      if (std::max(std::abs(analytic[e][i]), std::abs(fd)) < floor) {
        ++res.skipped;
        continue;
      }
      res.max_rel_err = std::max(res.max_rel_err, detail::rel_err(analytic[e][i], fd));
      ++res.checked;
    }
  }
  return res;
}

}  // namespace fshgr
