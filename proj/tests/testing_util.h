// tests/testing_util.h
//
// Copyright 2026  The cmm authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.

#ifndef CMM_TESTS_TESTING_UTIL_H_
#define CMM_TESTS_TESTING_UTIL_H_

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "rng.h"
#include "tensor.h"

namespace cmm {
namespace testing {

inline Tensor random_tensor(std::vector<int> shape, Rng &rng, real lo = -1,
                            real hi = 1) {
  Tensor t = Tensor::zeros(std::move(shape));
  for (real &v : t.data) v = static_cast<real>(rng.uniform(lo, hi));
  return t;
}

// Guarded relative error: the denominator guard absorbs central-difference
// roundoff noise on near-zero gradients; for gradients of ordinary size it
// reduces to the plain relative error.
inline double rel_err(double a, double n, double guard) {
  return std::fabs(a - n) / (std::fabs(a) + std::fabs(n) + guard);
}

struct GradCheckReport {
  double max_rel_err = 0;
  std::string worst;  // "param_idx[flat_idx] analytic=? numeric=?"
};

// Central finite differences against analytic gradients, the independent
// oracle for every backward implementation in the codebase.
//   eval:       pure forward pass, loss as a function of the parameter set
//   params:     the point to differentiate at
//   analytic:   gradients produced by the tape at `params`
inline GradCheckReport finite_difference_check(
    const std::function<double(const std::vector<Tensor> &)> &eval,
    std::vector<Tensor> params, const std::vector<Tensor> &analytic,
    double step = 1e-5, double guard = 1e-5) {
  GradCheckReport report;
  for (size_t p = 0; p < params.size(); ++p) {
    for (size_t i = 0; i < params[p].data.size(); ++i) {
      real saved = params[p].data[i];
      params[p].data[i] = saved + static_cast<real>(step);
      double up = eval(params);
      params[p].data[i] = saved - static_cast<real>(step);
      double down = eval(params);
      params[p].data[i] = saved;
      double numeric = (up - down) / (2 * step);
      double a = analytic[p].data[i];
      double e = rel_err(a, numeric, guard);
      if (e > report.max_rel_err) {
        report.max_rel_err = e;
        report.worst = "param " + std::to_string(p) + "[" + std::to_string(i) +
                       "] analytic=" + std::to_string(a) +
                       " numeric=" + std::to_string(numeric);
      }
    }
  }
  return report;
}

}  // namespace testing
}  // namespace cmm

#endif  // CMM_TESTS_TESTING_UTIL_H_
