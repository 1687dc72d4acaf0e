#pragma once

// Multi-chain effective sample size. Autocorrelations combine within- and
// between-chain variance; Geyer's initial monotone sequence truncates the sum.

#include "fsmcmc/lockstep.hpp"

#include <unsupported/Eigen/FFT>

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace fsmcmc {

struct EssSummary {
  std::vector<double> per_dimension;
  double pooled = 0.0;            // minimum over dimensions
  double per_cost = 0.0;          // pooled / charged model cost
  double per_second = 0.0;        // pooled / walltime
  bool capped = false;            // some dimension exceeded n * m and was capped
  std::vector<std::string> warnings;
};

namespace detail {

/// Biased autocovariance (divided by n) at lags 0..n-1 via zero-padded FFT.
inline std::vector<double> autocovariance(const std::vector<double>& x) {
  const std::size_t n = x.size();
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= static_cast<double>(n);
  std::size_t len = 1;
  while (len < 2 * n) len <<= 1;
  std::vector<double> padded(len, 0.0);
  for (std::size_t i = 0; i < n; ++i) padded[i] = x[i] - mean;
  Eigen::FFT<double> fft;
  std::vector<std::complex<double>> freq;
  fft.fwd(freq, padded);
  for (auto& c : freq) c = std::complex<double>(std::norm(c), 0.0);
  std::vector<double> back;
  fft.inv(back, freq);
  std::vector<double> acov(n);
  for (std::size_t t = 0; t < n; ++t) acov[t] = back[t] / static_cast<double>(n);
  return acov;
}

}  // namespace detail

/// ESS of one dimension from per-chain series of equal length.
inline double ess_from_chains(const std::vector<std::vector<double>>& chains, bool* capped = nullptr,
                              bool* constant = nullptr) {
  const std::size_t m = chains.size();
  if (m == 0) throw std::invalid_argument("ess: no chains");
  const std::size_t n = chains.front().size();
  if (n < 10) throw std::invalid_argument("ess: need at least 10 samples per chain");
  std::vector<std::vector<double>> acov(m);
  std::vector<double> means(m), vars(m);
  for (std::size_t j = 0; j < m; ++j) {
    if (chains[j].size() != n) throw std::invalid_argument("ess: chains differ in length");
    acov[j] = detail::autocovariance(chains[j]);
    double s = 0.0;
    for (double v : chains[j]) s += v;
    means[j] = s / static_cast<double>(n);
    vars[j] = acov[j][0] * static_cast<double>(n) / static_cast<double>(n - 1);
  }
  const double nd = static_cast<double>(n), md = static_cast<double>(m);
  double W = 0.0, grand = 0.0;
  for (std::size_t j = 0; j < m; ++j) {
    W += vars[j];
    grand += means[j];
  }
  W /= md;
  grand /= md;
  double B_over_n = 0.0;
  if (m > 1) {
    for (double mu : means) B_over_n += (mu - grand) * (mu - grand);
    B_over_n /= md - 1.0;
  }
  const double var_plus = (nd - 1.0) / nd * W + B_over_n;
  if (constant) *constant = false;
  if (!(var_plus > 0.0)) {
    if (constant) *constant = true;
    return 1.0;
  }
  auto rho = [&](std::size_t t) {
    double a = 0.0;
    for (std::size_t j = 0; j < m; ++j) a += acov[j][t];
    return 1.0 - (W - a / md) / var_plus;
  };
  double prev_pair = rho(0) + rho(1);
  double sum = prev_pair;
  for (std::size_t k = 1; 2 * k + 1 < n; ++k) {
    double pair = rho(2 * k) + rho(2 * k + 1);
    if (!(pair > 0.0)) break;
    pair = std::min(pair, prev_pair);
    sum += pair;
    prev_pair = pair;
  }
  const double tau = -1.0 + 2.0 * sum;
  const double total = nd * md;
  // tau <= 0 only arises from antithetic chains; treat it as above the cap.
  double ess = tau > 0.0 ? total / tau : std::numeric_limits<double>::infinity();
  if (capped) *capped = false;
  if (ess > total) {
    ess = total;
    if (capped) *capped = true;
  }
  return std::max(ess, 1.0);
}

/// Per-dimension and pooled ESS of an n x m x d sample array.
inline EssSummary effective_sample_size(const SampleArray& samples, double charged_cost = 0.0, double walltime = 0.0) {
  const std::size_t n = samples.n(), m = samples.m(), d = samples.d();
  if (n < 10) throw std::invalid_argument("ess: need at least 10 samples per chain");
  EssSummary out;
  out.per_dimension.resize(d);
  std::vector<std::vector<double>> chains(m, std::vector<double>(n));
  for (std::size_t k = 0; k < d; ++k) {
    for (std::size_t j = 0; j < m; ++j) {
      for (std::size_t i = 0; i < n; ++i) chains[j][i] = samples(i, j, k);
    }
    bool capped = false, constant = false;
    out.per_dimension[k] = ess_from_chains(chains, &capped, &constant);
    if (capped) {
      out.capped = true;
      out.warnings.push_back("dimension " + std::to_string(k) + ": ESS capped at n*m (antithetic chains)");
    }
    if (constant) out.warnings.push_back("dimension " + std::to_string(k) + ": constant chains, ESS set to 1");
  }
  out.pooled = d == 0 ? 0.0 : *std::min_element(out.per_dimension.begin(), out.per_dimension.end());
  out.per_cost = charged_cost > 0.0 ? out.pooled / charged_cost : 0.0;
  out.per_second = walltime > 0.0 ? out.pooled / walltime : 0.0;
  return out;
}

}  // namespace fsmcmc
