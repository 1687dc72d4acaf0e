#pragma once

// Efficiency ratio E(m) of the lockstep cost model and the bound
// R(m) = E[max_j N_j] / E[N_1].

#include "fsmcmc/cost.hpp"
#include "fsmcmc/prng.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <stdexcept>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

namespace fsmcmc {

struct EfficiencyReport {
  std::size_t m = 0;
  double E_of_m = 0.0;
  double R_of_m = 0.0;
  double mean_N = 0.0;
  double mean_max_N = 0.0;
  double standard_cost_per_sample = 0.0;
  double fsm_cost_per_sample = 0.0;
};

/// E(m) = (c_¬k + c_k E max N) / (α (c_¬k + c_k) (K - 1 + E N)), where block
/// `loop_block` is the iterated one.
inline double efficiency_model(const CostParams& params, std::size_t loop_block, double mean_N, double mean_max_N) {
  if (loop_block >= params.size()) throw std::invalid_argument("efficiency_model: loop block out of range");
  if (!(mean_N > 0.0)) throw std::invalid_argument("efficiency_model: mean_N must be positive");
  const double c_loop = params.block_costs()[loop_block];
  const double c_rest = params.total() - c_loop;
  const double K = static_cast<double>(params.size());
  const double denom = params.alpha() * (c_rest + c_loop) * (K - 1.0 + mean_N);
  if (!(denom > 0.0)) throw std::domain_error("efficiency_model: zero denominator");
  return (c_rest + c_loop * mean_max_N) / denom;
}

/// R(m) for N = B * Bernoulli(p).
inline double bernoulli_R(double p, std::size_t m) {
  if (!(p > 0.0 && p <= 1.0)) throw std::invalid_argument("bernoulli_R: p must be in (0, 1]");
  return (1.0 - std::pow(1.0 - p, static_cast<double>(m))) / p;
}

struct REstimate {
  double R = 0.0;
  double std_error = 0.0;
  double mean_N = 0.0;
  double mean_max_N = 0.0;
};

/// Exact E[max of m iid draws] for a discrete distribution.
inline double expected_max_discrete(std::vector<std::pair<double, double>> value_prob, std::size_t m) {
  std::sort(value_prob.begin(), value_prob.end());
  double cdf_prev = 0.0, out = 0.0;
  const double md = static_cast<double>(m);
  for (const auto& [v, p] : value_prob) {
    const double cdf = std::min(1.0, cdf_prev + p);
    out += v * (std::pow(cdf, md) - std::pow(cdf_prev, md));
    cdf_prev = cdf;
  }
  return out;
}

/// R(m) of the empirical distribution of `values` (exact under resampling).
inline REstimate bound_R_empirical(std::vector<double> values, std::size_t m) {
  if (values.empty()) throw std::invalid_argument("bound_R: empty sample");
  for (double v : values) {
    if (!(v >= 0.0)) throw std::invalid_argument("bound_R: N values must be nonnegative");
  }
  const double w = 1.0 / static_cast<double>(values.size());
  std::vector<std::pair<double, double>> vp;
  vp.reserve(values.size());
  for (double v : values) vp.emplace_back(v, w);
  REstimate r;
  r.mean_N = std::accumulate(values.begin(), values.end(), 0.0) * w;
  if (!(r.mean_N > 0.0)) throw std::invalid_argument("bound_R: mean of N must be positive");
  r.mean_max_N = expected_max_discrete(std::move(vp), m);
  r.R = r.mean_max_N / r.mean_N;
  return r;
}

/// R̂ from an N matrix (rows: samples, columns: chains): mean row max over
/// mean entry. The standard error bootstraps rows.
inline REstimate bound_R(const CostLedger& ledger, std::size_t bootstrap = 200, RngKey key = make_key(0x5EED)) {
  if (ledger.n == 0 || ledger.m == 0) throw std::invalid_argument("bound_R: empty ledger");
  const std::size_t n = ledger.n, m = ledger.m;
  std::vector<double> row_max(n), row_sum(n);
  for (std::size_t i = 0; i < n; ++i) {
    double hi = 0.0, s = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      const double v = ledger.iter_counts[i * m + j];
      hi = std::max(hi, v);
      s += v;
    }
    row_max[i] = hi;
    row_sum[i] = s / static_cast<double>(m);
  }
  auto ratio = [&](const std::vector<std::size_t>* idx) {
    double a = 0.0, b = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t r = idx ? (*idx)[i] : i;
      a += row_max[r];
      b += row_sum[r];
    }
    return std::pair{a / static_cast<double>(n), b / static_cast<double>(n)};
  };
  REstimate out;
  std::tie(out.mean_max_N, out.mean_N) = ratio(nullptr);
  if (!(out.mean_N > 0.0)) throw std::invalid_argument("bound_R: mean of N must be positive");
  out.R = out.mean_max_N / out.mean_N;
  if (bootstrap > 1) {
    std::vector<std::size_t> idx(n);
    double s = 0.0, s2 = 0.0;
    for (std::size_t b = 0; b < bootstrap; ++b) {
      for (auto& v : idx) {
        double u;
        std::tie(u, key) = uniform(key);
        v = std::min(n - 1, static_cast<std::size_t>(u * static_cast<double>(n)));
      }
      const auto [a, c] = ratio(&idx);
      const double r = c > 0.0 ? a / c : out.R;
      s += r;
      s2 += r * r;
    }
    const double mean = s / static_cast<double>(bootstrap);
    out.std_error = std::sqrt(std::max(0.0, s2 / static_cast<double>(bootstrap) - mean * mean));
  }
  return out;
}

/// Monte-Carlo R̂(m) from `replicates` groups of m draws of N; the mean of N
/// uses every draw. The standard error bootstraps replicates.
inline REstimate bound_R_monte_carlo(std::size_t m, std::size_t replicates,
                                     const std::function<std::pair<double, RngKey>(RngKey)>& draw, RngKey key,
                                     std::size_t bootstrap = 200) {
  if (m == 0 || replicates == 0) throw std::invalid_argument("bound_R: need m >= 1 and replicates >= 1");
  std::vector<double> maxima(replicates), means(replicates);
  for (std::size_t r = 0; r < replicates; ++r) {
    double hi = 0.0, s = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      double v;
      std::tie(v, key) = draw(key);
      if (!(v >= 0.0)) throw std::invalid_argument("bound_R: N draws must be nonnegative");
      hi = std::max(hi, v);
      s += v;
    }
    maxima[r] = hi;
    means[r] = s / static_cast<double>(m);
  }
  auto ratio = [&](const std::vector<std::size_t>* idx) {
    double a = 0.0, b = 0.0;
    for (std::size_t r = 0; r < replicates; ++r) {
      const std::size_t q = idx ? (*idx)[r] : r;
      a += maxima[q];
      b += means[q];
    }
    return std::pair{a / static_cast<double>(replicates), b / static_cast<double>(replicates)};
  };
  REstimate out;
  std::tie(out.mean_max_N, out.mean_N) = ratio(nullptr);
  if (!(out.mean_N > 0.0)) throw std::invalid_argument("bound_R: mean of N must be positive");
  out.R = out.mean_max_N / out.mean_N;
  if (bootstrap > 1) {
    std::vector<std::size_t> idx(replicates);
    double s = 0.0, s2 = 0.0;
    for (std::size_t b = 0; b < bootstrap; ++b) {
      for (auto& v : idx) {
        double u;
        std::tie(u, key) = uniform(key);
        v = std::min(replicates - 1, static_cast<std::size_t>(u * static_cast<double>(replicates)));
      }
      const auto [a, c] = ratio(&idx);
      const double r = c > 0.0 ? a / c : out.R;
      s += r;
      s2 += r * r;
    }
    const double mean = s / static_cast<double>(bootstrap);
    out.std_error = std::sqrt(std::max(0.0, s2 / static_cast<double>(bootstrap) - mean * mean));
  }
  return out;
}

/// Monte-Carlo R̂(m) for N ~ Bernoulli(p).
inline REstimate bernoulli_R_monte_carlo(double p, std::size_t m, std::size_t replicates, RngKey key,
                                         std::size_t bootstrap = 200) {
  return bound_R_monte_carlo(
      m, replicates,
      [p](RngKey k) {
        double u;
        std::tie(u, k) = uniform(k);
        return std::pair{u < p ? 1.0 : 0.0, k};
      },
      key, bootstrap);
}

struct PropBoundReport {
  std::size_t trials = 0;
  std::size_t violations = 0;
  std::size_t boundary_instances = 0;  // alpha at its lower bound
  std::size_t tight_instances = 0;
  double max_ratio = 0.0;              // max of E(m) / R(m)
  double max_tight_rel_error = 0.0;    // over K = 1, alpha = 1 instances
  std::vector<std::string> violation_details;
};

/// Random admissible instances (K in 1..6, nonnegative costs, alpha in its
/// interval, discrete N distributions, m in 1..256) checked against
/// E(m) <= R(m) with exact expectations. Every fifth instance is a tightness
/// instance (K = 1, alpha = 1) and every fourth puts alpha at its lower
/// bound.
inline PropBoundReport verify_prop_bound(std::size_t trials, RngKey key = make_key(0xB0B0)) {
  if (trials == 0) throw std::invalid_argument("verify_prop_bound: trials must be >= 1");
  auto draw = [&key]() {
    double u;
    std::tie(u, key) = uniform(key);
    return u;
  };
  PropBoundReport rep;
  rep.trials = trials;
  for (std::size_t t = 0; t < trials; ++t) {
    const bool tight = t % 5 == 0;
    const std::size_t K = tight ? 1 : 1 + static_cast<std::size_t>(draw() * 6.0);
    std::vector<double> c(K);
    for (double& v : c) v = draw() < 0.2 ? 0.0 : draw() * 10.0;
    const std::size_t loop = static_cast<std::size_t>(draw() * static_cast<double>(K));
    if (!(c[loop] > 0.0)) c[loop] = 0.5 + draw();
    double alpha = 1.0;
    if (!tight) {
      const double lo = CostParams::alpha_bounds(c).first;
      alpha = t % 4 == 0 ? lo : lo + draw() * (1.0 - lo);
      if (t % 4 == 0) ++rep.boundary_instances;
    }
    const CostParams params(c, alpha);
    const std::size_t support = 1 + static_cast<std::size_t>(draw() * 8.0);
    std::vector<std::pair<double, double>> dist(support);
    double mass = 0.0;
    for (auto& [v, p] : dist) {
      v = std::floor(draw() * 21.0);
      p = draw() + 1e-3;
      mass += p;
    }
    dist.front().first = std::max(dist.front().first, 1.0);  // E N > 0
    double mean = 0.0;
    for (auto& [v, p] : dist) {
      p /= mass;
      mean += v * p;
    }
    const std::size_t m = 1 + static_cast<std::size_t>(draw() * 256.0);
    const double emax = expected_max_discrete(dist, m);
    const double E = efficiency_model(params, loop, mean, emax);
    const double R = emax / mean;
    rep.max_ratio = std::max(rep.max_ratio, E / R);
    if (E > R * (1.0 + 1e-12)) {
      ++rep.violations;
      rep.violation_details.push_back("K=" + std::to_string(K) + " m=" + std::to_string(m) +
                                      " alpha=" + std::to_string(alpha) + " E=" + std::to_string(E) +
                                      " R=" + std::to_string(R));
    }
    if (tight) {
      ++rep.tight_instances;
      rep.max_tight_rel_error = std::max(rep.max_tight_rel_error, std::abs(E - R) / R);
    }
  }
  return rep;
}

}  // namespace fsmcmc
