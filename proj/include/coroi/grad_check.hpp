#pragma once

#include <functional>

#include "coroi/tensor.hpp"

namespace coroi {

struct GradCheckReport {
  std::string param;
  double max_rel_err = 0.0;
  int64_t entries_checked = 0;
  bool pass = true;
};

struct GradCheckOptions {
  double h = 1e-5;
  double tol = 1e-4;
  // Entries sampled per parameter tensor; <=0 checks every entry.
  int64_t samples_per_param = 0;
  uint64_t sample_seed = 0x5eed;
};

// Central-difference check of analytic gradients. `f` rebuilds the scalar
// loss from current parameter values on every call; parameters must be
// float64. Always returns a report per parameter.
std::vector<GradCheckReport> grad_check(const std::function<Tensor()>& f,
                                        ParamSet& params,
                                        const std::vector<std::string>& names,
                                        const GradCheckOptions& opt = {});

double max_rel_err(const std::vector<GradCheckReport>& reports);
bool all_pass(const std::vector<GradCheckReport>& reports);

}  // namespace coroi
