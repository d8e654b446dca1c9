// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <functional>
#include <string>
#include <vector>

#include "trisim/tensor.hpp"

namespace trisim {

// Central-difference verification of reverse-mode gradients. The numeric side
// never records a tape; for functions containing stop_gradient the caller
// supplies the value-equivalent cut function (stop_gradient arguments frozen
// at the base point) as the numeric evaluation.
template <typename S>
struct GradCheckReport {
  S max_rel_error = S(0);
  S max_abs_error = S(0);
  bool pass = false;
};

template <typename S>
using TensorFn = std::function<TensorT<S>(TapeT<S>&, std::vector<TensorT<S>>&)>;

template <typename S>
GradCheckReport<S> grad_check(const TensorFn<S>& f, const TensorFn<S>& f_numeric,
                              std::vector<TensorT<S>> point, S eps, S tol) {
  // Analytic gradients.
  TapeT<S> tape;
  for (auto& t : point) tape.watch(t);
  TensorT<S> loss = f(tape, point);
  require(loss.is_scalar(), "grad_check: function must be scalar-valued");
  tape.backward(loss);
  std::vector<std::vector<S>> analytic;
  analytic.reserve(point.size());
  for (auto& t : point) analytic.push_back(tape.grad(t).values);

  GradCheckReport<S> report;
  auto eval = [&](std::vector<TensorT<S>>& p) -> S {
    TapeT<S> fwd;
    return f_numeric(fwd, p).scalar();
  };

  // Detached copy for numeric probing.
  std::vector<TensorT<S>> probe;
  probe.reserve(point.size());
  for (const auto& t : point) probe.push_back(make_tensor<S>(t.shape, t.values));

  for (std::size_t ti = 0; ti < probe.size(); ++ti) {
    std::vector<S> numeric(probe[ti].values.size());
    for (std::size_t j = 0; j < probe[ti].values.size(); ++j) {
      const S saved = probe[ti].values[j];
      probe[ti].values[j] = saved + eps;
      const S fp = eval(probe);
      probe[ti].values[j] = saved - eps;
      const S fm = eval(probe);
      probe[ti].values[j] = saved;
      numeric[j] = (fp - fm) / (S(2) * eps);
    }
    S linf = S(1);
    for (std::size_t j = 0; j < numeric.size(); ++j) {
      linf = std::max(linf, std::abs(numeric[j]));
      linf = std::max(linf, std::abs(analytic[ti][j]));
    }
    for (std::size_t j = 0; j < numeric.size(); ++j) {
      const S abs_err = std::abs(analytic[ti][j] - numeric[j]);
      report.max_abs_error = std::max(report.max_abs_error, abs_err);
      report.max_rel_error = std::max(report.max_rel_error, abs_err / linf);
    }
  }
  report.pass = report.max_rel_error < tol;
  return report;
}

template <typename S>
GradCheckReport<S> grad_check(const TensorFn<S>& f, std::vector<TensorT<S>> point, S eps, S tol) {
  return grad_check<S>(f, f, std::move(point), eps, tol);
}

}  // namespace trisim
