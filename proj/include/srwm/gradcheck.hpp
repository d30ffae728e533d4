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

#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "srwm/tape.hpp"

namespace srwm {

/// Builds a scalar loss on `tape` from parameter leaves (one per checked tensor,
/// in the same order).
template <class T>
using ScalarGraph = std::function<Var<T>(Tape<T>&, std::span<const Var<T>>)>;

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t worst_param = 0;
  std::size_t worst_element = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t checked = 0;
};

/// Central-difference check of every element of every tensor in `params`.
/// Error per element is |analytic - numeric| / max(1, |numeric|); the report
/// carries the maximum. Tensors are perturbed in place and restored.
template <class T>
GradCheckReport finite_diff_check(const ScalarGraph<T>& f, std::span<Tensor<T>* const> params, double eps);

extern template GradCheckReport finite_diff_check<float>(const ScalarGraph<float>&, std::span<Tensor<float>* const>,
                                                         double);
extern template GradCheckReport finite_diff_check<double>(const ScalarGraph<double>&,
                                                          std::span<Tensor<double>* const>, double);

}  // namespace srwm
