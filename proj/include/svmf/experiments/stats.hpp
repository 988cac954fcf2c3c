// Goodness-of-fit and summary statistics used by the experiment diagnostics.
#pragma once

#include <boost/math/distributions/chi_squared.hpp>

#include <algorithm>
#include <cmath>
#include <complex>
#include <functional>
#include <numbers>
#include <stdexcept>
#include <vector>

namespace svmf::stats {

struct MeanSe {
  double mean = 0.0;
  double se = 0.0;
};

/// Sample mean and its standard error (n - 1 variance).
inline MeanSe mean_se(const std::vector<double>& x) {
  if (x.empty()) throw std::invalid_argument("mean_se of empty sample");
  double s = 0.0;
  for (double v : x) s += v;
  const double mean = s / static_cast<double>(x.size());
  if (x.size() < 2) return {mean, 0.0};
  double ss = 0.0;
  for (double v : x) ss += (v - mean) * (v - mean);
  const double var = ss / static_cast<double>(x.size() - 1);
  return {mean, std::sqrt(var / static_cast<double>(x.size()))};
}

/// Welford accumulator for long Monte-Carlo runs.
class Running {
 public:
  void add(double v) {
    ++n_;
    const double delta = v - mean_;
    mean_ += delta / static_cast<double>(n_);
    m2_ += delta * (v - mean_);
  }
  [[nodiscard]] long count() const { return n_; }
  [[nodiscard]] double mean() const { return mean_; }
  [[nodiscard]] double variance() const { return n_ > 1 ? m2_ / static_cast<double>(n_ - 1) : 0.0; }
  [[nodiscard]] double se() const { return n_ > 0 ? std::sqrt(variance() / static_cast<double>(n_)) : 0.0; }

 private:
  long n_ = 0;
  double mean_ = 0.0;
  double m2_ = 0.0;
};

/// Upper tail P(X >= x) of a chi-squared variable with `dof` degrees of freedom.
inline double chi2_sf(double x, double dof) {
  boost::math::chi_squared dist(dof);
  return boost::math::cdf(boost::math::complement(dist, std::max(0.0, x)));
}

struct Chi2Result {
  double statistic = 0.0;
  int dof = 0;
  double p_value = 1.0;
};

/// Pearson chi-squared test of observed counts against expected counts. Bins
/// with expected count below `min_expected` are pooled into their neighbour.
inline Chi2Result chi2_test(const std::vector<double>& observed, const std::vector<double>& expected,
                            double min_expected = 5.0) {
  if (observed.size() != expected.size() || observed.empty())
    throw std::invalid_argument("chi2_test: bin count mismatch");
  std::vector<double> obs, exp;
  double o_acc = 0.0, e_acc = 0.0;
  for (std::size_t i = 0; i < observed.size(); ++i) {
    o_acc += observed[i];
    e_acc += expected[i];
    if (e_acc >= min_expected) {
      obs.push_back(o_acc);
      exp.push_back(e_acc);
      o_acc = e_acc = 0.0;
    }
  }
  if (e_acc > 0.0 || o_acc > 0.0) {
    if (exp.empty()) {
      obs.push_back(o_acc);
      exp.push_back(e_acc);
    } else {
      obs.back() += o_acc;
      exp.back() += e_acc;
    }
  }
  Chi2Result r;
  for (std::size_t i = 0; i < obs.size(); ++i) {
    const double d = obs[i] - exp[i];
    r.statistic += d * d / exp[i];
  }
  r.dof = static_cast<int>(obs.size()) - 1;
  r.p_value = r.dof > 0 ? chi2_sf(r.statistic, r.dof) : 1.0;
  return r;
}

/// Chi-squared test of samples on [lo, hi] against a distribution given by
/// its CDF, using `bins` equal-width bins.
inline Chi2Result chi2_against_cdf(const std::vector<double>& samples, double lo, double hi, int bins,
                                   const std::function<double(double)>& cdf) {
  std::vector<double> observed(bins, 0.0), expected(bins, 0.0);
  const double width = (hi - lo) / bins;
  for (double x : samples) {
    int b = static_cast<int>(std::floor((x - lo) / width));
    observed[std::clamp(b, 0, bins - 1)] += 1.0;
  }
  const auto n = static_cast<double>(samples.size());
  double prev = cdf(lo);
  for (int b = 0; b < bins; ++b) {
    const double next = b + 1 == bins ? cdf(hi) : cdf(lo + (b + 1) * width);
    expected[b] = n * (next - prev);
    prev = next;
  }
  return chi2_test(observed, expected);
}

/// Kolmogorov distribution upper tail Q(lambda) = 2 sum_{k>=1} (-1)^{k-1} exp(-2 k^2 lambda^2).
inline double kolmogorov_sf(double lambda) {
  if (lambda <= 0.0) return 1.0;
  if (lambda < 0.3) {
    // Dual form converges fast for small lambda:
    // P(K <= l) = sqrt(2 pi)/l sum_{k>=1} exp(-(2k-1)^2 pi^2 / (8 l^2)).
    const double pi2 = std::numbers::pi * std::numbers::pi;
    double s = 0.0;
    for (int k = 1; k < 50; ++k) {
      const double odd = 2.0 * k - 1.0;
      s += std::exp(-odd * odd * pi2 / (8.0 * lambda * lambda));
    }
    return 1.0 - std::sqrt(2.0 * std::numbers::pi) / lambda * s;
  }
  double s = 0.0;
  for (int k = 1; k < 200; ++k) {
    const double term = std::exp(-2.0 * k * k * lambda * lambda);
    s += (k % 2 == 1 ? term : -term);
    if (term < 1e-18) break;
  }
  return std::clamp(2.0 * s, 0.0, 1.0);
}

struct KsResult {
  double statistic = 0.0;
  double p_value = 1.0;
};

/// Asymptotic p-value with the Stephens small-sample correction.
inline double ks_p_value(double d, double effective_n) {
  const double root = std::sqrt(effective_n);
  return kolmogorov_sf((root + 0.12 + 0.11 / root) * d);
}

/// One-sample Kolmogorov-Smirnov test against a continuous CDF.
inline KsResult ks_one_sample(std::vector<double> x, const std::function<double(double)>& cdf) {
  if (x.empty()) throw std::invalid_argument("ks_one_sample of empty sample");
  std::sort(x.begin(), x.end());
  const auto n = static_cast<double>(x.size());
  double d = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double f = cdf(x[i]);
    d = std::max({d, (i + 1) / n - f, f - i / n});
  }
  return {d, ks_p_value(d, n)};
}

/// Two-sample Kolmogorov-Smirnov test.
inline KsResult ks_two_sample(std::vector<double> a, std::vector<double> b) {
  if (a.empty() || b.empty()) throw std::invalid_argument("ks_two_sample of empty sample");
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  const auto na = static_cast<double>(a.size());
  const auto nb = static_cast<double>(b.size());
  std::size_t i = 0, j = 0;
  double d = 0.0;
  while (i < a.size() && j < b.size()) {
    const double x = std::min(a[i], b[j]);
    while (i < a.size() && a[i] == x) ++i;
    while (j < b.size() && b[j] == x) ++j;
    d = std::max(d, std::abs(i / na - j / nb));
  }
  return {d, ks_p_value(d, na * nb / (na + nb))};
}

/// Best agreement between two angle sequences up to rotation and reflection:
/// max over s in {+1, -1} of |mean exp(i (a_k - s b_k))|. 1 means the angles
/// agree up to a rigid map of the circle.
inline double circular_alignment(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size() || a.empty()) throw std::invalid_argument("circular_alignment: size mismatch");
  double best = 0.0;
  for (double s : {1.0, -1.0}) {
    std::complex<double> acc = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) acc += std::polar(1.0, a[k] - s * b[k]);
    best = std::max(best, std::abs(acc) / static_cast<double>(a.size()));
  }
  return best;
}

}  // namespace svmf::stats
