#pragma once

// Lockstep cost model parameters and the per-run cost ledger.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace fsmcmc {

/// Block costs c_1..c_K and the dispatch factor alpha of a batched step.
class CostParams {
 public:
  CostParams() = default;

  /// shared_cost is the per-tick cost of the amortized computation g; it is
  /// charged once per tick on top of alpha * sum(block_costs).
  explicit CostParams(std::vector<double> block_costs, double alpha = 1.0, double shared_cost = 0.0)
      : block_costs_(std::move(block_costs)), alpha_(alpha), shared_cost_(shared_cost) {
    if (block_costs_.empty()) throw std::invalid_argument("CostParams: need at least one block cost");
    for (double c : block_costs_) {
      if (!(c >= 0.0)) throw std::invalid_argument("CostParams: block costs must be nonnegative");
    }
    if (!(shared_cost_ >= 0.0)) throw std::invalid_argument("CostParams: shared cost must be nonnegative");
    const auto [lo, hi] = alpha_bounds(block_costs_);
    if (!(alpha_ >= lo - 1e-12 && alpha_ <= hi + 1e-12)) {
      throw std::invalid_argument("CostParams: alpha=" + std::to_string(alpha_) + " outside [" +
                                  std::to_string(lo) + ", 1]");
    }
  }

  /// Admissible alpha interval [max c / sum c, 1]. All-zero costs admit any
  /// alpha in (0, 1].
  static std::pair<double, double> alpha_bounds(const std::vector<double>& c) {
    const double total = std::accumulate(c.begin(), c.end(), 0.0);
    if (total <= 0.0) return {0.0, 1.0};
    return {*std::max_element(c.begin(), c.end()) / total, 1.0};
  }

  const std::vector<double>& block_costs() const noexcept { return block_costs_; }
  double alpha() const noexcept { return alpha_; }
  double shared_cost() const noexcept { return shared_cost_; }
  std::size_t size() const noexcept { return block_costs_.size(); }
  double total() const { return std::accumulate(block_costs_.begin(), block_costs_.end(), 0.0); }

  /// Cost of one batched step: every block runs for every chain.
  double per_tick() const { return alpha_ * total() + shared_cost_; }

 private:
  std::vector<double> block_costs_;
  double alpha_ = 1.0;
  double shared_cost_ = 0.0;
};

struct TickRecord {
  double lockstep_evaluations = 0.0;
  std::vector<std::uint32_t> executed;  // chains that ran each block this tick
};

/// Counts and charged cost of one batched run.
struct CostLedger {
  std::size_t n = 0;
  std::size_t m = 0;
  std::vector<std::string> block_labels;

  std::vector<std::uint32_t> iter_counts;  // N_{i,j} at [i * m + j]
  std::uint64_t tick_count = 0;
  std::vector<std::uint64_t> block_exec_counts;  // blocks actually run, summed over chains
  std::vector<double> lockstep_block_counts;     // blocks charged under lockstep
  double charged_cost = 0.0;
  double walltime = 0.0;
  std::vector<std::uint64_t> ticks_to_n;  // FSM only: ticks until chain j held n samples
  double lockstep_evaluations = 0.0;
  std::uint64_t native_evaluations = 0;
  std::uint64_t limit_hits = 0;
  std::vector<TickRecord> ticks;  // filled only on request

  std::uint32_t N(std::size_t i, std::size_t j) const { return iter_counts.at(i * m + j); }

  double cost_per_sample() const { return n == 0 ? 0.0 : charged_cost / static_cast<double>(n); }

  double mean_N() const {
    if (iter_counts.empty()) return 0.0;
    const double s = std::accumulate(iter_counts.begin(), iter_counts.end(), 0.0);
    return s / static_cast<double>(iter_counts.size());
  }

  /// Mean over iterations of max over chains of N_{i,j}.
  double mean_max_N() const {
    if (n == 0 || m == 0) return 0.0;
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      s += *std::max_element(iter_counts.begin() + static_cast<std::ptrdiff_t>(i * m),
                             iter_counts.begin() + static_cast<std::ptrdiff_t>((i + 1) * m));
    }
    return s / static_cast<double>(n);
  }
};

/// Σ_i max_j N_{i,j}: the synchronized loop-cost of an N matrix (rows = samples).
inline double synchronized_iterations(const std::vector<std::vector<double>>& N) {
  double s = 0.0;
  for (const auto& row : N) {
    if (!row.empty()) s += *std::max_element(row.begin(), row.end());
  }
  return s;
}

/// max_j Σ_i N_{i,j}: the loop-cost when chains run desynchronized.
inline double desynchronized_iterations(const std::vector<std::vector<double>>& N) {
  if (N.empty()) return 0.0;
  std::vector<double> col(N.front().size(), 0.0);
  for (const auto& row : N) {
    if (row.size() != col.size()) throw std::invalid_argument("N matrix rows must have equal length");
    for (std::size_t j = 0; j < row.size(); ++j) col[j] += row[j];
  }
  return col.empty() ? 0.0 : *std::max_element(col.begin(), col.end());
}

}  // namespace fsmcmc
