// Copyright 2026 The circuitscope Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "circuitscope/tensor.hpp"

namespace circuitscope {

// Per-timestep noise tables. t runs 0..T-1 with t = T-1 the most noised
// state; alpha_bar[t] is the fraction of signal variance surviving at t.
struct NoiseSchedule {
  int T = 0;
  std::vector<double> alpha_bar;  // strictly decreasing, in (0,1]
  std::vector<double> beta;       // in (0, 0.999]
};

// Cosine schedule: alpha_bar[t] = prod_{i<=t}(1 - beta_i) with
// beta_t = 1 - f(t+1)/f(t), f(u) = cos^2(((u/T + s)/(1+s)) * pi/2),
// betas clipped to <= 0.999 so alpha_bar never collapses to zero.
inline NoiseSchedule cosine_schedule(int T, double s = 0.008) {
  if (T < 2) throw std::invalid_argument("cosine_schedule: T must be >= 2");
  const double pi_half = 1.5707963267948966;
  auto f = [&](double u) {
    double c = std::cos(((u / T + s) / (1.0 + s)) * pi_half);
    return c * c;
  };
  NoiseSchedule sched;
  sched.T = T;
  sched.alpha_bar.resize(T);
  sched.beta.resize(T);
  double prod = 1.0;
  for (int t = 0; t < T; ++t) {
    double b = 1.0 - f(t + 1) / f(t);
    if (b > 0.999) b = 0.999;
    sched.beta[t] = b;
    prod *= 1.0 - b;
    sched.alpha_bar[t] = prod;
  }
  return sched;
}

// Forward diffusion sample: sqrt(abar_t) * x0 + sqrt(1 - abar_t) * eps.
inline Tensor q_sample(const Tensor& x0, int t, const Tensor& eps, const NoiseSchedule& sched) {
  if (t < 0 || t >= sched.T) {
    throw std::out_of_range("q_sample: t=" + std::to_string(t) + " outside [0," +
                            std::to_string(sched.T) + ")");
  }
  check_shape(x0.shape == eps.shape, "q_sample", x0.shape, eps.shape);
  float a = static_cast<float>(std::sqrt(sched.alpha_bar[t]));
  float b = static_cast<float>(std::sqrt(1.0 - sched.alpha_bar[t]));
  Tensor out = Tensor::zeros(x0.shape);
  for (size_t i = 0; i < out.data.size(); ++i) out.data[i] = a * x0.data[i] + b * eps.data[i];
  return out;
}

}  // namespace circuitscope
