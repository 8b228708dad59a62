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

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "circuitscope/tensor.hpp"
#include "circuitscope/trace.hpp"

namespace circuitscope {

// Row-stochastic attention weights for one head, plus provenance tags.
struct AttentionMap {
  Tensor weights;  // [queries, keys], each row sums to 1
  std::string layer;
  int head = -1;
  int timestep = -1;

  int queries() const { return weights.shape.size() == 2 ? weights.shape[0] : 0; }
  int keys() const { return weights.shape.size() == 2 ? weights.shape[1] : 0; }
};

enum class MetricKind { entropy, specialization, complexity, ife, divergence };

struct MetricValue {
  MetricKind kind;
  double value = 0;
  std::string layer;
  int head = -1;      // -1 when not head-specific
  int timestep = -1;  // -1 when not timestep-specific
  std::string arm;    // dataset arm tag, empty when not applicable
  int64_t sample_count = 0;
};

// A row-stochastic map does not sum to 1 over all (i,j); the default
// convention divides by the query count so the whole map is one joint
// distribution and specialization stays in [0,1] for any map shape.
// `per_row` instead averages per-row entropies (H_max = log2 keys).
enum class EntropyConvention { joint, per_row };

inline const char* entropy_convention_name(EntropyConvention c) {
  return c == EntropyConvention::joint ? "joint" : "per_row";
}

namespace detail {

inline void check_attention_rows(const AttentionMap& a, double tol = 1e-5) {
  if (a.weights.shape.size() != 2) {
    throw std::invalid_argument("attention map must be rank 2, got " + shape_str(a.weights.shape));
  }
  int q = a.queries(), k = a.keys();
  for (int i = 0; i < q; ++i) {
    double sum = 0;
    for (int j = 0; j < k; ++j) {
      float w = a.weights.data[static_cast<int64_t>(i) * k + j];
      if (w < -1e-7f || w > 1.0f + 1e-6f) {
        throw std::invalid_argument("attention weight outside [0,1] at row " + std::to_string(i));
      }
      sum += w;
    }
    if (std::abs(sum - 1.0) > tol) {
      throw std::invalid_argument("attention row " + std::to_string(i) +
                                  " sums to " + std::to_string(sum) + ", not 1");
    }
  }
}

inline double plogp_bits(double p) { return p > 0 ? -p * std::log2(p) : 0.0; }

}  // namespace detail

// Shannon entropy of the attention map in bits: H = -sum a~ log2 a~ with a~
// the map normalized to a joint distribution (zero entries contribute 0).
inline double attention_entropy(const AttentionMap& a,
                                EntropyConvention conv = EntropyConvention::joint) {
  detail::check_attention_rows(a);
  int q = a.queries(), k = a.keys();
  if (conv == EntropyConvention::joint) {
    double inv_q = 1.0 / q;
    double h = 0;
    for (int64_t i = 0; i < static_cast<int64_t>(q) * k; ++i) {
      h += detail::plogp_bits(a.weights.data[i] * inv_q);
    }
    return h;
  }
  double h = 0;
  for (int i = 0; i < q; ++i) {
    for (int j = 0; j < k; ++j) h += detail::plogp_bits(a.weights.data[static_cast<int64_t>(i) * k + j]);
  }
  return h / q;  // mean per-row entropy
}

inline double max_entropy_bits(int queries, int keys,
                               EntropyConvention conv = EntropyConvention::joint) {
  return conv == EntropyConvention::joint
             ? std::log2(static_cast<double>(queries) * keys)
             : std::log2(static_cast<double>(keys));
}

// Specialization degree S = (H_max - H) / H_max: 0 for uniform attention,
// 1 for deterministic single-query attention.
inline double specialization(const AttentionMap& a,
                             EntropyConvention conv = EntropyConvention::joint) {
  int q = a.queries(), k = a.keys();
  if (k < 2 && q * k < 2) {
    throw std::invalid_argument("specialization: degenerate map with a single cell");
  }
  double hmax = max_entropy_bits(q, k, conv);
  if (hmax <= 0) {
    throw std::invalid_argument("specialization: H_max is zero for " + shape_str(a.weights.shape));
  }
  double s = (hmax - attention_entropy(a, conv)) / hmax;
  // estimator roundoff can leave tiny negatives on exactly-uniform maps
  return std::clamp(s, 0.0, 1.0);
}

// Feature complexity: population std * dynamic range * near-zero fraction.
inline double feature_complexity(const std::vector<float>& values, double eps_sparsity = 1e-6) {
  if (values.empty()) throw std::invalid_argument("feature_complexity: empty input");
  double n = static_cast<double>(values.size());
  double mean = 0, mn = values[0], mx = values[0];
  int64_t near_zero = 0;
  for (float v : values) {
    mean += v;
    mn = std::min<double>(mn, v);
    mx = std::max<double>(mx, v);
    if (std::abs(static_cast<double>(v)) < eps_sparsity) ++near_zero;
  }
  mean /= n;
  double var = 0;
  for (float v : values) {
    double d = v - mean;
    var += d * d;
  }
  var /= n;
  double sparsity = static_cast<double>(near_zero) / n;
  return std::sqrt(var) * (mx - mn) * sparsity;
}

inline double feature_complexity(const Tensor& f, double eps_sparsity = 1e-6) {
  return feature_complexity(f.data, eps_sparsity);
}

// ---------------------------------------------------------------------------
// histogram plug-in estimators
// ---------------------------------------------------------------------------

namespace detail {

struct Binner {
  double lo, width;
  int bins;
  int index(double v) const {
    if (width <= 0) return 0;  // constant variable: everything in bin 0
    int i = static_cast<int>((v - lo) / width);
    return std::clamp(i, 0, bins - 1);
  }
};

inline Binner make_binner(const std::vector<float>& x, int bins) {
  double mn = x[0], mx = x[0];
  for (float v : x) {
    mn = std::min<double>(mn, v);
    mx = std::max<double>(mx, v);
  }
  return Binner{mn, (mx - mn) / bins, bins};
}

inline double entropy_from_counts(const std::vector<int64_t>& counts, int64_t n) {
  double h = 0;
  for (int64_t c : counts) {
    if (c > 0) h += plogp_bits(static_cast<double>(c) / n);
  }
  return h;
}

}  // namespace detail

// Entropy of x under equal-width binning over its observed range, in bits.
inline double binned_entropy(const std::vector<float>& x, int bins = 64) {
  if (x.empty()) throw std::invalid_argument("binned_entropy: empty input");
  auto b = detail::make_binner(x, bins);
  std::vector<int64_t> counts(bins, 0);
  for (float v : x) counts[b.index(v)]++;
  return detail::entropy_from_counts(counts, static_cast<int64_t>(x.size()));
}

// Histogram plug-in mutual information between paired samples, in bits.
// Computed as H(X) + H(Y) - H(X,Y) over the shared binning, which makes
// MI(X,X) equal the binned entropy exactly.
inline double mutual_information(const std::vector<float>& x, const std::vector<float>& y,
                                 int bins = 64) {
  if (x.size() != y.size()) {
    throw std::invalid_argument("mutual_information: length mismatch " +
                                std::to_string(x.size()) + " vs " + std::to_string(y.size()));
  }
  if (static_cast<int64_t>(x.size()) < bins) {
    throw std::invalid_argument("mutual_information: " + std::to_string(x.size()) +
                                " samples is fewer than " + std::to_string(bins) +
                                " bins; use a smaller bin count");
  }
  auto bx = detail::make_binner(x, bins);
  auto by = detail::make_binner(y, bins);
  std::vector<int64_t> cx(bins, 0), cy(bins, 0), cxy(static_cast<size_t>(bins) * bins, 0);
  for (size_t i = 0; i < x.size(); ++i) {
    int ix = bx.index(x[i]);
    int iy = by.index(y[i]);
    cx[ix]++;
    cy[iy]++;
    cxy[static_cast<size_t>(ix) * bins + iy]++;
  }
  int64_t n = static_cast<int64_t>(x.size());
  double hx = detail::entropy_from_counts(cx, n);
  double hy = detail::entropy_from_counts(cy, n);
  double hxy = detail::entropy_from_counts(cxy, n);
  return std::max(0.0, hx + hy - hxy);
}

struct IfeResult {
  double value = 0;  // reported value, clamped to [0,1]
  double raw = 0;    // unclamped MI / max(H,H)
};

// Information flow efficiency: MI(F_l, F_{l+1}) / max(H(F_l), H(F_{l+1})),
// all from the same plug-in histograms. Estimator noise can push the raw
// ratio a hair above 1; the reported value is clamped.
inline IfeResult information_flow_efficiency(const std::vector<float>& a,
                                             const std::vector<float>& b, int bins = 64) {
  double ha = binned_entropy(a, bins);
  double hb = binned_entropy(b, bins);
  double denom = std::max(ha, hb);
  if (denom <= 0) {
    throw std::invalid_argument(
        "information_flow_efficiency: constant input, zero entropy denominator "
        "(degenerate layer)");
  }
  double raw = mutual_information(a, b, bins) / denom;
  return IfeResult{std::min(raw, 1.0), raw};
}

// ---------------------------------------------------------------------------
// series and trace-level aggregates
// ---------------------------------------------------------------------------

// Per-timestep series of an across-heads mean metric for one dataset arm.
using MetricSeries = std::vector<std::pair<int, double>>;  // (timestep, value)

// Per-timestep |mean_A - mean_B|; both series must cover the same timesteps.
inline MetricSeries divergence(const MetricSeries& a, const MetricSeries& b) {
  if (a.size() != b.size()) {
    throw std::invalid_argument("divergence: series lengths differ");
  }
  MetricSeries out;
  out.reserve(a.size());
  for (size_t i = 0; i < a.size(); ++i) {
    if (a[i].first != b[i].first) {
      throw std::invalid_argument("divergence: timestep mismatch at position " +
                                  std::to_string(i) + ": " + std::to_string(a[i].first) + " vs " +
                                  std::to_string(b[i].first));
    }
    out.emplace_back(a[i].first, std::abs(a[i].second - b[i].second));
  }
  return out;
}

struct CircuitComplexity {
  double mean = 0;
  std::vector<std::pair<std::string, double>> per_layer;  // sorted by layer name
};

// Mean feature complexity over all hooked layers at one timestep; per-layer
// values pool every activation record of that (layer, timestep).
inline CircuitComplexity circuit_complexity(const std::vector<TraceRecord>& trace, uint32_t timestep,
                                            double eps_sparsity = 1e-6) {
  std::map<std::string, std::vector<float>> pooled;
  for (const auto& r : trace) {
    if (r.kind == TraceKind::activation && r.timestep == timestep) {
      auto& dst = pooled[r.name];
      dst.insert(dst.end(), r.payload.begin(), r.payload.end());
    }
  }
  if (pooled.empty()) {
    throw std::invalid_argument("circuit_complexity: no activation records at timestep " +
                                std::to_string(timestep));
  }
  CircuitComplexity out;
  for (const auto& [name, values] : pooled) {
    double c = feature_complexity(values, eps_sparsity);
    out.per_layer.emplace_back(name, c);
    out.mean += c;
  }
  out.mean /= static_cast<double>(out.per_layer.size());
  return out;
}

}  // namespace circuitscope
