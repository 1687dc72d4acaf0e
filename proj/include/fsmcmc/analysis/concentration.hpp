#pragma once

// Convergence rate of per-sample cost: deviations of C(m, n) from its
// large-n value across seeds, fitted against n on log-log axes.

#include "fsmcmc/prng.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <stdexcept>
#include <tuple>
#include <vector>

namespace fsmcmc {

/// Half-width of the two-sided Markov-chain Hoeffding interval for the mean
/// of f(Z_i) in [0, B]: B sqrt((1 + λ) / (2 n (1 - λ)) ln(2 m / δ)). m = 1 for
/// the synchronized cost and m chains for the desynchronized one.
inline double hoeffding_bound(std::size_t n, double delta, double B, double lambda, std::size_t m = 1) {
  if (n == 0 || !(delta > 0.0 && delta < 1.0) || !(lambda >= 0.0 && lambda < 1.0)) {
    throw std::invalid_argument("hoeffding_bound: need n >= 1, delta in (0,1), lambda in [0,1)");
  }
  return B * std::sqrt((1.0 + lambda) / (2.0 * static_cast<double>(n) * (1.0 - lambda)) *
                       std::log(2.0 * static_cast<double>(m) / delta));
}

struct ConcentrationReport {
  std::vector<std::size_t> n;
  std::vector<double> deviation;  // RMS over seeds of |C(n) - limit|
  double limit = 0.0;             // mean cost at the largest n
  double limit_se = 0.0;
  double slope = std::numeric_limits<double>::quiet_NaN();
  double intercept = std::numeric_limits<double>::quiet_NaN();
  double ci_lo = std::numeric_limits<double>::quiet_NaN();
  double ci_hi = std::numeric_limits<double>::quiet_NaN();
  bool degenerate = false;        // all deviations zero: nothing to fit
  bool rate_consistent = false;   // -1/2 inside [ci_lo, ci_hi]
};

namespace detail {

inline std::pair<double, double> ols(const std::vector<double>& x, const std::vector<double>& y) {
  const double k = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= k;
  my /= k;
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
  }
  const double slope = sxy / sxx;
  return {slope, my - slope * mx};
}

// Deviations and limit from one resample of the per-seed costs.
inline std::vector<double> cost_deviations(const std::vector<std::vector<double>>& costs, double& limit,
                                           double& limit_se) {
  const std::vector<double>& last = costs.back();
  const double s = static_cast<double>(last.size());
  limit = 0.0;
  for (double c : last) limit += c;
  limit /= s;
  double var = 0.0;
  for (double c : last) var += (c - limit) * (c - limit);
  var /= std::max(1.0, s - 1.0);
  limit_se = std::sqrt(var / s);
  std::vector<double> dev;
  dev.reserve(costs.size());
  for (const auto& row : costs) {
    double ms = 0.0;
    for (double c : row) ms += (c - limit) * (c - limit);
    ms /= static_cast<double>(row.size());
    // Remove the limit's own sampling variance when that leaves a positive value.
    const double folded = ms - limit_se * limit_se;
    dev.push_back(std::sqrt(folded > 0.0 ? folded : ms));
  }
  return dev;
}

}  // namespace detail

/// costs[g][s]: per-sample cost at n_grid[g] for seed s. Requires at least
/// four grid points spanning two decades and two seeds. The slope interval is
/// a percentile bootstrap over seeds at confidence 1 - delta.
inline ConcentrationReport concentration_check(const std::vector<std::size_t>& n_grid,
                                               const std::vector<std::vector<double>>& costs, double delta = 0.05,
                                               std::size_t bootstrap = 1000, RngKey key = make_key(0xC0C0)) {
  if (n_grid.size() < 4) throw std::invalid_argument("concentration_check: need at least 4 values of n");
  if (costs.size() != n_grid.size()) throw std::invalid_argument("concentration_check: one cost row per n");
  if (!std::is_sorted(n_grid.begin(), n_grid.end()) || n_grid.front() == 0) {
    throw std::invalid_argument("concentration_check: n grid must be increasing and positive");
  }
  if (static_cast<double>(n_grid.back()) < 100.0 * static_cast<double>(n_grid.front())) {
    throw std::invalid_argument("concentration_check: n grid must span at least two decades");
  }
  for (const auto& row : costs) {
    if (row.size() < 2) throw std::invalid_argument("concentration_check: need at least 2 seeds per n");
  }
  if (!(delta > 0.0 && delta < 1.0)) throw std::invalid_argument("concentration_check: delta must be in (0, 1)");

  ConcentrationReport rep;
  rep.n = n_grid;
  rep.deviation = detail::cost_deviations(costs, rep.limit, rep.limit_se);
  auto fit = [&](const std::vector<double>& dev, double& slope, double& intercept) {
    std::vector<double> lx, ly;
    for (std::size_t g = 0; g < n_grid.size(); ++g) {
      if (!(dev[g] > 0.0)) return false;
      lx.push_back(std::log(static_cast<double>(n_grid[g])));
      ly.push_back(std::log(dev[g]));
    }
    std::tie(slope, intercept) = detail::ols(lx, ly);
    return true;
  };
  if (std::all_of(rep.deviation.begin(), rep.deviation.end(), [](double v) { return v == 0.0; })) {
    rep.degenerate = true;
    return rep;
  }
  if (!fit(rep.deviation, rep.slope, rep.intercept)) {
    rep.degenerate = true;
    return rep;
  }

  std::vector<double> slopes;
  slopes.reserve(bootstrap);
  std::vector<std::vector<double>> resampled(costs.size());
  for (std::size_t b = 0; b < bootstrap; ++b) {
    for (std::size_t g = 0; g < costs.size(); ++g) {
      const std::size_t S = costs[g].size();
      resampled[g].resize(S);
      for (std::size_t s = 0; s < S; ++s) {
        double u;
        std::tie(u, key) = uniform(key);
        resampled[g][s] = costs[g][std::min(S - 1, static_cast<std::size_t>(u * static_cast<double>(S)))];
      }
    }
    double lim, se, slope, icpt;
    if (fit(detail::cost_deviations(resampled, lim, se), slope, icpt)) slopes.push_back(slope);
  }
  if (!slopes.empty()) {
    std::sort(slopes.begin(), slopes.end());
    auto q = [&](double p) {
      const double pos = p * static_cast<double>(slopes.size() - 1);
      const auto lo = static_cast<std::size_t>(std::floor(pos));
      const auto hi = std::min(slopes.size() - 1, lo + 1);
      return slopes[lo] + (pos - static_cast<double>(lo)) * (slopes[hi] - slopes[lo]);
    };
    rep.ci_lo = q(delta / 2.0);
    rep.ci_hi = q(1.0 - delta / 2.0);
    rep.rate_consistent = rep.ci_lo <= -0.5 && -0.5 <= rep.ci_hi;
  }
  return rep;
}

}  // namespace fsmcmc
