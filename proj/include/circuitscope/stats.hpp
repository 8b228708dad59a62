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
#include <stdexcept>
#include <string>
#include <vector>

#include "circuitscope/rng.hpp"

namespace circuitscope {
namespace stats {

struct SampleSet {
  std::vector<double> values;
  std::string label;
};

inline double mean(const std::vector<double>& v) {
  double s = 0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

// Unbiased (n-1) sample variance.
inline double sample_variance(const std::vector<double>& v) {
  double m = mean(v);
  double s = 0;
  for (double x : v) s += (x - m) * (x - m);
  return s / static_cast<double>(v.size() - 1);
}

// ---------------------------------------------------------------------------
// special functions
// ---------------------------------------------------------------------------

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / 1.4142135623730951); }

// Acklam's rational approximation to the standard normal quantile
// (absolute error below 1.2e-9, refined by one Halley step).
inline double normal_quantile(double p) {
  if (p <= 0 || p >= 1) {
    throw std::invalid_argument("normal_quantile: p must be in (0,1)");
  }
  static const double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                             -2.759285104469687e+02, 1.383577518672690e+02,
                             -3.066479806614716e+01, 2.506628277459239e+00};
  static const double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                             -1.556989798598866e+02, 6.680131188771972e+01,
                             -1.328068155288572e+01};
  static const double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                             -2.400758277161838e+00, -2.549732539343734e+00,
                             4.374664141464968e+00,  2.938163982698783e+00};
  static const double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                             2.445134137142996e+00, 3.754408661907416e+00};
  const double plow = 0.02425;
  double x;
  if (p < plow) {
    double q = std::sqrt(-2 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1);
  } else if (p <= 1 - plow) {
    double q = p - 0.5, r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1);
  } else {
    double q = std::sqrt(-2 * std::log(1 - p));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1);
  }
  double e = normal_cdf(x) - p;
  double u = e * 2.5066282746310002 * std::exp(x * x / 2);
  return x - u / (1 + x * u / 2);
}

namespace detail {

// Continued fraction for the regularized incomplete beta (Lentz's method).
inline double betacf(double a, double b, double x) {
  const double tiny = 1e-300;
  double qab = a + b, qap = a + 1, qam = a - 1;
  double c = 1, d = 1 - qab * x / qap;
  if (std::abs(d) < tiny) d = tiny;
  d = 1 / d;
  double h = d;
  for (int m = 1; m <= 300; ++m) {
    int m2 = 2 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1 + aa * d;
    if (std::abs(d) < tiny) d = tiny;
    c = 1 + aa / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1 + aa * d;
    if (std::abs(d) < tiny) d = tiny;
    c = 1 + aa / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1 / d;
    double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < 3e-16) break;
  }
  return h;
}

}  // namespace detail

// Regularized incomplete beta I_x(a, b).
inline double ibeta(double a, double b, double x) {
  if (x <= 0) return 0;
  if (x >= 1) return 1;
  double ln_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) +
                    b * std::log1p(-x);
  double front = std::exp(ln_front);
  if (x < (a + 1) / (a + b + 2)) {
    return front * detail::betacf(a, b, x) / a;
  }
  return 1 - front * detail::betacf(b, a, 1 - x) / b;
}

// Two-sided tail probability P(|T_df| >= |t|).
inline double student_t_two_sided_p(double t, double df) {
  return ibeta(df / 2.0, 0.5, df / (df + t * t));
}

// ---------------------------------------------------------------------------
// tests
// ---------------------------------------------------------------------------

enum class TestKind { welch_t, ks, cohens_d, bootstrap_ci, power };

struct TestResult {
  TestKind kind;
  double statistic = 0;           // t, D, d, or power depending on kind
  double p_value = 1;             // 1 when not applicable
  double adjusted_p = -1;         // < 0 until a correction is applied
  double ci_low = 0, ci_high = 0; // bootstrap interval bounds
  double df = 0;                  // Welch-Satterthwaite df (welch_t only)
  std::string label;              // e.g. effect-size category
  int64_t n_a = 0, n_b = 0;
};

inline const char* effect_size_label(double d) {
  double a = std::abs(d);
  if (a < 0.2) return "negligible";
  if (a < 0.5) return "small";
  if (a < 0.8) return "medium";
  return "large";
}

// Cohen's d with the two-sample pooled standard deviation.
inline TestResult cohens_d(const SampleSet& a, const SampleSet& b) {
  if (a.values.size() < 2 || b.values.size() < 2) {
    throw std::invalid_argument("cohens_d: each sample needs at least 2 values");
  }
  double na = static_cast<double>(a.values.size());
  double nb = static_cast<double>(b.values.size());
  double pooled_var =
      ((na - 1) * sample_variance(a.values) + (nb - 1) * sample_variance(b.values)) /
      (na + nb - 2);
  if (pooled_var <= 0) {
    throw std::invalid_argument("cohens_d: zero pooled standard deviation");
  }
  TestResult r;
  r.kind = TestKind::cohens_d;
  r.statistic = (mean(a.values) - mean(b.values)) / std::sqrt(pooled_var);
  r.label = effect_size_label(r.statistic);
  r.n_a = static_cast<int64_t>(a.values.size());
  r.n_b = static_cast<int64_t>(b.values.size());
  return r;
}

// Percentile bootstrap interval for the mean difference (a - b).
inline TestResult bootstrap_ci(const SampleSet& a, const SampleSet& b, int resamples = 10000,
                               double coverage = 0.95, uint64_t seed = 0) {
  if (a.values.size() < 2 || b.values.size() < 2) {
    throw std::invalid_argument("bootstrap_ci: each sample needs at least 2 values");
  }
  Rng rng(mix_seed(seed, 0x626f6f74ULL));  // "boot"
  size_t na = a.values.size(), nb = b.values.size();
  std::vector<double> diffs(resamples);
  for (int r = 0; r < resamples; ++r) {
    double sa = 0, sb = 0;
    for (size_t i = 0; i < na; ++i) sa += a.values[rng.below(na)];
    for (size_t i = 0; i < nb; ++i) sb += b.values[rng.below(nb)];
    diffs[r] = sa / na - sb / nb;
  }
  std::sort(diffs.begin(), diffs.end());
  auto quantile = [&](double q) {
    double pos = q * (resamples - 1);
    size_t lo = static_cast<size_t>(pos);
    size_t hi = std::min(lo + 1, static_cast<size_t>(resamples - 1));
    double frac = pos - lo;
    return diffs[lo] * (1 - frac) + diffs[hi] * frac;
  };
  double alpha = 1 - coverage;
  TestResult r;
  r.kind = TestKind::bootstrap_ci;
  r.ci_low = quantile(alpha / 2);
  r.ci_high = quantile(1 - alpha / 2);
  r.statistic = mean(a.values) - mean(b.values);
  r.n_a = static_cast<int64_t>(na);
  r.n_b = static_cast<int64_t>(nb);
  return r;
}

// Welch's unequal-variance t test with two-sided p.
inline TestResult welch_t_test(const SampleSet& a, const SampleSet& b) {
  if (a.values.size() < 2 || b.values.size() < 2) {
    throw std::invalid_argument("welch_t_test: each sample needs at least 2 values");
  }
  double na = static_cast<double>(a.values.size());
  double nb = static_cast<double>(b.values.size());
  double va = sample_variance(a.values), vb = sample_variance(b.values);
  if (va <= 0 && vb <= 0) {
    throw std::invalid_argument("welch_t_test: zero variance in both samples");
  }
  double se2 = va / na + vb / nb;
  TestResult r;
  r.kind = TestKind::welch_t;
  r.statistic = (mean(a.values) - mean(b.values)) / std::sqrt(se2);
  r.df = se2 * se2 / (va * va / (na * na * (na - 1)) + vb * vb / (nb * nb * (nb - 1)));
  r.p_value = student_t_two_sided_p(r.statistic, r.df);
  r.n_a = static_cast<int64_t>(a.values.size());
  r.n_b = static_cast<int64_t>(b.values.size());
  return r;
}

// Two-sample Kolmogorov-Smirnov: D = max |ECDF_a - ECDF_b|, asymptotic p
// from the Kolmogorov distribution at sqrt(ne) * D with
// ne = n_a * n_b / (n_a + n_b).
inline TestResult ks_test(const SampleSet& a, const SampleSet& b) {
  if (a.values.empty() || b.values.empty()) {
    throw std::invalid_argument("ks_test: empty sample");
  }
  std::vector<double> sa = a.values, sb = b.values;
  std::sort(sa.begin(), sa.end());
  std::sort(sb.begin(), sb.end());
  size_t i = 0, j = 0;
  double d = 0;
  while (i < sa.size() && j < sb.size()) {
    double x = std::min(sa[i], sb[j]);
    while (i < sa.size() && sa[i] <= x) ++i;
    while (j < sb.size() && sb[j] <= x) ++j;
    d = std::max(d, std::abs(static_cast<double>(i) / sa.size() -
                             static_cast<double>(j) / sb.size()));
  }
  double ne = static_cast<double>(sa.size()) * sb.size() / (sa.size() + sb.size());
  double lambda = std::sqrt(ne) * d;
  double p = 1.0;
  if (lambda > 0.2) {
    p = 0;
    for (int k = 1; k <= 100; ++k) {
      double term = 2 * std::pow(-1.0, k - 1) * std::exp(-2.0 * k * k * lambda * lambda);
      p += term;
      if (std::abs(term) < 1e-12) break;
    }
    p = std::clamp(p, 0.0, 1.0);
  }
  TestResult r;
  r.kind = TestKind::ks;
  r.statistic = d;
  r.p_value = p;
  r.n_a = static_cast<int64_t>(a.values.size());
  r.n_b = static_cast<int64_t>(b.values.size());
  return r;
}

// Normal-approximation power of a two-sided two-sample t test:
// Phi(d * sqrt(n/2) - z_{1-alpha/2}). At d = 0 this reports alpha/2, the
// usual one-tail approximation artifact.
inline double power_two_sample(double d, int n_per_group, double alpha = 0.05) {
  if (d < 0 || n_per_group < 2) {
    throw std::invalid_argument("power_two_sample: need d >= 0 and n >= 2");
  }
  double z = normal_quantile(1 - alpha / 2);
  return normal_cdf(d * std::sqrt(n_per_group / 2.0) - z);
}

// Bonferroni adjustment over one family: p -> min(1, m * p).
inline std::vector<double> bonferroni(const std::vector<double>& p_values) {
  double m = static_cast<double>(p_values.size());
  std::vector<double> out;
  out.reserve(p_values.size());
  for (double p : p_values) {
    if (p < 0 || p > 1) {
      throw std::invalid_argument("bonferroni: p value " + std::to_string(p) + " outside [0,1]");
    }
    out.push_back(std::min(1.0, m * p));
  }
  return out;
}

// Human-readable p; full precision belongs in CSV output.
inline std::string format_p(double p) {
  if (p < 1e-12) return "<1e-12";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6g", p);
  return buf;
}

}  // namespace stats
}  // namespace circuitscope
