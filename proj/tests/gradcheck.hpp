// Copyright 2026 The Weavenet Authors
// SPDX-License-Identifier: Apache-2.0
//
// Central finite-difference gradient oracle shared by the op and model tests.
// Kept independent of the autodiff path it checks: it only re-evaluates the
// forward function at perturbed inputs.

#ifndef WEAVENET_TESTS_GRADCHECK_HPP_
#define WEAVENET_TESTS_GRADCHECK_HPP_

#include <cmath>
#include <functional>
#include <vector>

#include "weavenet/tensor.hpp"

namespace gradcheck {

struct Result {
  double max_rel_err = 0.0;
  std::int64_t checked = 0;
};

// fn must rebuild the graph from the (mutated) input tensors on every call
// and return a scalar loss. Inputs must have requires_grad set.
inline Result check(const std::function<weavenet::Tensor()>& fn,
                    std::vector<weavenet::Tensor> inputs, double h = 1e-5,
                    std::int64_t max_entries_per_input = -1) {
  weavenet::Tensor loss = fn();
  weavenet::backward(loss);
  std::vector<std::vector<double>> analytic;
  analytic.reserve(inputs.size());
  for (auto& in : inputs) {
    in.ensure_grad();
    analytic.push_back(in.grad_ref());
  }

  Result res;
  for (std::size_t t = 0; t < inputs.size(); ++t) {
    auto& vals = inputs[t].values();
    std::int64_t n = static_cast<std::int64_t>(vals.size());
    std::int64_t step = 1;
    if (max_entries_per_input > 0 && n > max_entries_per_input) {
      step = (n + max_entries_per_input - 1) / max_entries_per_input;
    }
    for (std::int64_t i = 0; i < n; i += step) {
      const double orig = vals[i];
      vals[i] = orig + h;
      const double fp = fn().item();
      vals[i] = orig - h;
      const double fm = fn().item();
      vals[i] = orig;
      const double numeric = (fp - fm) / (2.0 * h);
      const double a = analytic[t][i];
      const double err = std::abs(a - numeric) /
                         std::max({1.0, std::abs(a), std::abs(numeric)});
      res.max_rel_err = std::max(res.max_rel_err, err);
      res.checked++;
    }
  }
  return res;
}

}  // namespace gradcheck

#endif  // WEAVENET_TESTS_GRADCHECK_HPP_
