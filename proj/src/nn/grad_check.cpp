// SPDX-License-Identifier: Apache-2.0
#include "fedsim/nn/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "fedsim/common/rng.hpp"

namespace fedsim::nn {
namespace {

double evaluate(const LossClosure& loss) {
  Graph g;
  return loss(g).value().item();
}

}  // namespace

GradCheckReport grad_check(const LossClosure& loss, const std::vector<Param*>& params,
                           const GradCheckOptions& opts) {
  for (Param* p : params) p->zero_grad();
  {
    Graph g;
    Var l = loss(g);
    g.backward(l);
  }

  GradCheckReport report;
  Rng rng(opts.seed, "grad-check");
  for (Param* p : params) {
    const std::size_t n = p->value.numel();
    std::vector<std::size_t> coords(n);
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (opts.coords_per_param != 0 && opts.coords_per_param < n) {
      rng.shuffle(std::span<std::size_t>(coords));
      coords.resize(opts.coords_per_param);
      std::sort(coords.begin(), coords.end());
    }
    for (std::size_t i : coords) {
      const double saved = p->value[i];
      p->value[i] = saved + opts.h;
      const double up = evaluate(loss);
      p->value[i] = saved - opts.h;
      const double down = evaluate(loss);
      p->value[i] = saved;

      GradCheckEntry e;
      e.path = p->path();
      e.index = i;
      e.analytic = p->grad[i];
      e.numeric = (up - down) / (2.0 * opts.h);
      e.rel_error = std::abs(e.analytic - e.numeric) / std::max(1.0, std::abs(e.analytic));
      if (!std::isfinite(e.rel_error)) e.rel_error = INFINITY;
      report.max_rel_error = std::max(report.max_rel_error, e.rel_error);
      ++report.checked;
      report.worst.push_back(std::move(e));
    }
  }
  std::stable_sort(report.worst.begin(), report.worst.end(),
                   [](const GradCheckEntry& a, const GradCheckEntry& b) {
                     return a.rel_error > b.rel_error;
                   });
  if (report.worst.size() > opts.report_top) report.worst.resize(opts.report_top);
  report.passed = report.max_rel_error <= opts.tol;
  return report;
}

}  // namespace fedsim::nn
