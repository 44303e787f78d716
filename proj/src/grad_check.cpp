#include "coroi/grad_check.hpp"

#include <algorithm>
#include <cmath>

#include "coroi/rng.hpp"

namespace coroi {

std::vector<GradCheckReport> grad_check(const std::function<Tensor()>& f,
                                        ParamSet& params,
                                        const std::vector<std::string>& names,
                                        const GradCheckOptions& opt) {
  for (const auto& name : names)
    if (params.at(name).dtype() != DType::F64)
      throw ContractError("grad_check: parameter " + name +
                          " is not float64 (float64 mode required)");

  // analytic pass
  for (const auto& name : names) params.at(name).zero_grad();
  Tensor loss = f();
  if (loss.numel() != 1) throw ContractError("grad_check: loss must be scalar");
  loss.backward();

  std::vector<GradCheckReport> reports;
  for (const auto& name : names) {
    Tensor& p = params.at(name);
    int64_t n = p.numel();
    std::vector<int64_t> indices;
    if (opt.samples_per_param <= 0 || opt.samples_per_param >= n) {
      indices.resize(static_cast<size_t>(n));
      for (int64_t i = 0; i < n; ++i) indices[static_cast<size_t>(i)] = i;
    } else {
      Rng rng(Rng::mix(opt.sample_seed, Rng::fnv1a64(name)));
      std::set<int64_t> picked;
      while (static_cast<int64_t>(picked.size()) < opt.samples_per_param)
        picked.insert(rng.range(0, n));
      indices.assign(picked.begin(), picked.end());
    }

    GradCheckReport rep;
    rep.param = name;
    rep.entries_checked = static_cast<int64_t>(indices.size());
    for (int64_t i : indices) {
      double orig = p.at(i);
      double analytic = p.has_grad() ? p.grad_at(i) : 0.0;
      p.set(i, orig + opt.h);
      double fp = f().item();
      p.set(i, orig - opt.h);
      double fm = f().item();
      p.set(i, orig);
      double fd = (fp - fm) / (2.0 * opt.h);
      // relative error with a floor so near-zero gradients are compared
      // absolutely at the same tolerance scale
      double denom = std::max(std::abs(analytic) + std::abs(fd), 1e-4);
      double err = std::abs(analytic - fd) / denom;
      rep.max_rel_err = std::max(rep.max_rel_err, err);
    }
    rep.pass = rep.max_rel_err < opt.tol;
    reports.push_back(rep);
  }
  return reports;
}

double max_rel_err(const std::vector<GradCheckReport>& reports) {
  double m = 0;
  for (const auto& r : reports) m = std::max(m, r.max_rel_err);
  return m;
}

bool all_pass(const std::vector<GradCheckReport>& reports) {
  return std::all_of(reports.begin(), reports.end(),
                     [](const GradCheckReport& r) { return r.pass; });
}

}  // namespace coroi
