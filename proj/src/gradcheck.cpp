/*
 * Copyright 2026 The srwm Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *    http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include "srwm/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace srwm {

namespace {

template <class T>
double evaluate(const ScalarGraph<T>& f, std::span<Tensor<T>* const> params) {
  Tape<T> tape;
  std::vector<Var<T>> leaves;
  leaves.reserve(params.size());
  for (auto* p : params) leaves.push_back(tape.leaf_view(*p, false));
  Var<T> loss = f(tape, leaves);
  if (loss.size() != 1) throw ShapeError("finite_diff_check: loss must be scalar, got " + shape_string(loss.shape()));
  return static_cast<double>(loss.value()[0]);
}

}  // namespace

template <class T>
GradCheckReport finite_diff_check(const ScalarGraph<T>& f, std::span<Tensor<T>* const> params, double eps) {
  if (!(eps > 0.0)) throw std::invalid_argument("finite_diff_check: eps must be positive");

  std::vector<Tensor<T>> analytic;
  {
    Tape<T> tape;
    std::vector<Var<T>> leaves;
    for (auto* p : params) leaves.push_back(tape.leaf_view(*p, true));
    Var<T> loss = f(tape, leaves);
    auto grads = tape.backward(loss);
    for (const auto& leaf : leaves) analytic.push_back(grads[leaf]);
  }

  GradCheckReport report;
  for (std::size_t p = 0; p < params.size(); ++p) {
    auto data = params[p]->data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const T saved = data[i];
      data[i] = static_cast<T>(static_cast<double>(saved) + eps);
      const double plus = evaluate(f, params);
      data[i] = static_cast<T>(static_cast<double>(saved) - eps);
      const double minus = evaluate(f, params);
      data[i] = saved;

      const double numeric = (plus - minus) / (2.0 * eps);
      if (!std::isfinite(numeric)) throw NumericError("finite_diff_check: non-finite central difference");
      const double a = static_cast<double>(analytic[p][i]);
      const double err = std::abs(a - numeric) / std::max(1.0, std::abs(numeric));
      ++report.checked;
      if (err > report.max_rel_error || report.checked == 1) {
        report.max_rel_error = err;
        report.worst_param = p;
        report.worst_element = i;
        report.worst_analytic = a;
        report.worst_numeric = numeric;
      }
    }
  }
  return report;
}

template GradCheckReport finite_diff_check<float>(const ScalarGraph<float>&, std::span<Tensor<float>* const>, double);
template GradCheckReport finite_diff_check<double>(const ScalarGraph<double>&, std::span<Tensor<double>* const>,
                                                   double);

}  // namespace srwm
