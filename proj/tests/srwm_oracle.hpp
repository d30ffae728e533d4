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

// Scalar reference for one SRWM read-and-update, written with plain loops over
// std::vector and no library code.

#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

namespace srwm::oracle {

struct Step {
  std::vector<double> y;
  std::vector<double> w;  // row-major, rows x cols
};

inline std::vector<double> softmax(const std::vector<double>& a) {
  double hi = a[0];
  for (double v : a) hi = v > hi ? v : hi;
  std::vector<double> e(a.size());
  double z = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    e[i] = std::exp(a[i] - hi);
    z += e[i];
  }
  for (double& v : e) v /= z;
  return e;
}

inline std::vector<double> read(const std::vector<double>& w, std::size_t rows, std::size_t cols,
                                const std::vector<double>& x) {
  std::vector<double> out(rows, 0.0);
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) out[i] += w[i * cols + j] * x[j];
  }
  return out;
}

inline Step srwm_step(const std::vector<double>& w, std::size_t rows, std::size_t cols, const std::vector<double>& x) {
  const std::size_t d_out = rows - 2 * cols - 1;
  const std::vector<double> r = read(w, rows, cols, x);
  Step s;
  s.y.assign(r.begin(), r.begin() + d_out);
  const std::vector<double> k = softmax({r.begin() + d_out, r.begin() + d_out + cols});
  const std::vector<double> q = softmax({r.begin() + d_out + cols, r.begin() + d_out + 2 * cols});
  const double beta = 1.0 / (1.0 + std::exp(-r[rows - 1]));
  const std::vector<double> v = read(w, rows, cols, q);
  const std::vector<double> v_bar = read(w, rows, cols, k);
  s.w = w;
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) s.w[i * cols + j] += beta * (v[i] - v_bar[i]) * k[j];
  }
  return s;
}

}  // namespace srwm::oracle
