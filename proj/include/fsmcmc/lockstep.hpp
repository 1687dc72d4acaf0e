#pragma once

// Batched drivers for m chains.
//
// run_standard_batched draws sample i for every chain before any chain moves
// on to sample i + 1, and charges each while loop at the pace of its slowest
// chain. run_fsm_batched advances every chain by one step per tick and
// charges a full step per tick. Chains are simulated natively; the charged
// cost is the lockstep model, and the native counts sit beside it.

#include "fsmcmc/chain.hpp"
#include "fsmcmc/cost.hpp"
#include "fsmcmc/fsm.hpp"
#include "fsmcmc/parallel.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <bit>
#include <chrono>
#include <concepts>
#include <cstdint>
#include <limits>
#include <memory>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace fsmcmc {

enum class StepVariant { plain, bundled, amortized };

inline std::string to_string(StepVariant v) {
  switch (v) {
    case StepVariant::plain:
      return "plain";
    case StepVariant::bundled:
      return "bundled";
    case StepVariant::amortized:
      return "amortized";
  }
  return "?";
}

inline std::optional<StepVariant> parse_step_variant(const std::string& s) {
  if (s == "plain") return StepVariant::plain;
  if (s == "bundled") return StepVariant::bundled;
  if (s == "amortized") return StepVariant::amortized;
  return std::nullopt;
}

template <class K>
concept MonolithicKernel = requires(const K& k, const ChainState& s) {
  { K::shape } -> std::convertible_to<LoopShape>;
  { k.sample(s) } -> std::same_as<SampleResult>;
};

template <class K>
concept FsmKernel = MonolithicKernel<K> && requires(const K& k, const ChainState& s) {
  typename K::Locals;
  requires std::derived_from<typename K::Locals, LocalsBase>;
  { k.make_locals(s) } -> std::same_as<typename K::Locals>;
};

/// n x m x d samples; sample i of chain j at [(i * m + j) * d].
class SampleArray {
 public:
  SampleArray() = default;
  SampleArray(std::size_t n, std::size_t m, std::size_t d) : n_(n), m_(m), d_(d), data_(n * m * d, 0.0) {}

  std::size_t n() const noexcept { return n_; }
  std::size_t m() const noexcept { return m_; }
  std::size_t d() const noexcept { return d_; }
  const std::vector<double>& data() const noexcept { return data_; }

  double& operator()(std::size_t i, std::size_t j, std::size_t k) { return data_[(i * m_ + j) * d_ + k]; }
  double operator()(std::size_t i, std::size_t j, std::size_t k) const { return data_[(i * m_ + j) * d_ + k]; }

  void set(std::size_t i, std::size_t j, const Vector& x) {
    std::copy(x.data(), x.data() + d_, data_.begin() + static_cast<std::ptrdiff_t>((i * m_ + j) * d_));
  }

  /// Bitwise equality of the stored values.
  friend bool operator==(const SampleArray&, const SampleArray&) = default;

  /// Number of (i, j) positions whose d-vectors differ.
  std::size_t mismatches(const SampleArray& other) const {
    if (n_ != other.n_ || m_ != other.m_ || d_ != other.d_) return n_ * m_;
    std::size_t bad = 0;
    for (std::size_t p = 0; p < n_ * m_; ++p) {
      if (!std::equal(data_.begin() + static_cast<std::ptrdiff_t>(p * d_),
                      data_.begin() + static_cast<std::ptrdiff_t>((p + 1) * d_),
                      other.data_.begin() + static_cast<std::ptrdiff_t>(p * d_))) {
        ++bad;
      }
    }
    return bad;
  }

 private:
  std::size_t n_ = 0, m_ = 0, d_ = 0;
  std::vector<double> data_;
};

struct RunResult {
  SampleArray samples;
  CostLedger ledger;
  std::vector<ChainState> final_states;  // state after each chain's n-th sample
};

/// A chain failed; identifies where.
class RunError : public std::runtime_error {
 public:
  RunError(std::size_t chain, std::size_t iteration, std::string label, const std::string& what)
      : std::runtime_error("chain " + std::to_string(chain) + ", sample " + std::to_string(iteration) + " [" +
                           label + "]: " + what),
        chain_(chain),
        iteration_(iteration),
        label_(std::move(label)) {}
  std::size_t chain() const noexcept { return chain_; }
  std::size_t iteration() const noexcept { return iteration_; }
  const std::string& label() const noexcept { return label_; }

 private:
  std::size_t chain_, iteration_;
  std::string label_;
};

/// The FSM driver hit its tick cap before every chain held n samples.
class TickBudgetExceeded : public std::runtime_error {
 public:
  TickBudgetExceeded(std::uint64_t budget, CostLedger partial)
      : std::runtime_error("tick budget of " + std::to_string(budget) + " exceeded"), partial_(std::move(partial)) {}
  const CostLedger& partial_ledger() const noexcept { return partial_; }

 private:
  CostLedger partial_;
};

struct DriverOptions {
  std::size_t threads = 1;  // 0: hardware concurrency
  std::size_t chunk = 100;  // ticks (or samples) between loop-condition checks
};

struct FsmDriverOptions : DriverOptions {
  std::uint64_t tick_budget = std::numeric_limits<std::uint64_t>::max();
  bool record_ticks = false;
  std::vector<StateIndex> bundle_order;  // empty: FsmDefinition::default_bundle_order
  bool debug_cache = false;              // amortized: check the shared cache each tick
};

/// Block model of a kernel as used by the standard driver: costs and target
/// evaluations per block of the plain machine.
struct BlockModel {
  CostParams costs;
  std::vector<double> evaluations;
  std::vector<std::string> labels;
};

namespace detail {

struct ChainFailure {
  std::size_t iteration = std::numeric_limits<std::size_t>::max();
  std::string label;
  std::string what;
};

inline void raise_first(const std::vector<ChainFailure>& failures) {
  std::size_t best = failures.size();
  for (std::size_t j = 0; j < failures.size(); ++j) {
    if (failures[j].what.empty()) continue;
    if (best == failures.size() || failures[j].iteration < failures[best].iteration) best = j;
  }
  if (best != failures.size()) {
    throw RunError(best, failures[best].iteration, failures[best].label, failures[best].what);
  }
}

inline std::size_t dimension_of(std::span<const ChainState> states) {
  if (states.empty()) throw std::invalid_argument("driver: need at least one chain");
  const auto d = static_cast<std::size_t>(states.front().x.size());
  for (const ChainState& s : states) {
    if (static_cast<std::size_t>(s.x.size()) != d) throw std::invalid_argument("driver: chains differ in dimension");
  }
  return d;
}

}  // namespace detail

/// Monolithic kernel on every chain with a barrier after each sample.
template <MonolithicKernel K>
RunResult run_standard_batched(const K& kernel, std::span<const ChainState> initial, std::size_t n,
                               const BlockModel& model, const DriverOptions& opts = {}) {
  if (n == 0) throw std::invalid_argument("run_standard_batched: n must be >= 1");
  const std::size_t m = initial.size();
  const std::size_t d = detail::dimension_of(initial);
  const std::size_t K_blocks = plain_state_count(K::shape);
  if (model.costs.size() != K_blocks || model.evaluations.size() != K_blocks) {
    throw std::invalid_argument("run_standard_batched: block model does not match the loop shape");
  }
  const std::size_t chunk = std::max<std::size_t>(opts.chunk, 1);

  RunResult out;
  out.samples = SampleArray(n, m, d);
  out.final_states.assign(initial.begin(), initial.end());
  CostLedger& led = out.ledger;
  led.n = n;
  led.m = m;
  led.block_labels = model.labels;
  led.iter_counts.assign(n * m, 0);
  led.block_exec_counts.assign(K_blocks, 0);
  led.lockstep_block_counts.assign(K_blocks, 0.0);

  std::vector<SampleTrace> traces(chunk * m);
  std::vector<std::uint64_t> evals(m, 0), hits(m, 0);
  std::vector<detail::ChainFailure> failures(m);

  const auto t0 = std::chrono::steady_clock::now();
  for (std::size_t i0 = 0; i0 < n; i0 += chunk) {
    const std::size_t i1 = std::min(n, i0 + chunk);
    parallel_for(m, opts.threads, [&](std::size_t b, std::size_t e) {
      for (std::size_t j = b; j < e; ++j) {
        if (!failures[j].what.empty()) continue;
        for (std::size_t i = i0; i < i1; ++i) {
          try {
            SampleResult r = kernel.sample(out.final_states[j]);
            out.final_states[j] = std::move(r.state);
            traces[(i - i0) * m + j] = std::move(r.trace);
            evals[j] += r.evaluations;
            hits[j] += r.limit_hits;
            out.samples.set(i, j, out.final_states[j].x);
          } catch (const BlockFault& f) {
            failures[j] = {i, f.label(), f.what()};
            break;
          } catch (const NumericalFault& f) {
            failures[j] = {i, "sample", f.what()};
            break;
          }
        }
      }
    });
    detail::raise_first(failures);
    for (std::size_t i = i0; i < i1; ++i) {
      const std::span<const SampleTrace> batch(traces.data() + (i - i0) * m, m);
      const std::vector<double> counts = lockstep_block_counts(K::shape, batch);
      for (std::size_t b = 0; b < K_blocks; ++b) {
        led.lockstep_block_counts[b] += counts[b];
        led.charged_cost += model.costs.block_costs()[b] * counts[b];
        led.lockstep_evaluations += model.evaluations[b] * counts[b];
      }
      for (std::size_t j = 0; j < m; ++j) {
        led.iter_counts[i * m + j] = iteration_count(K::shape, batch[j]);
        for (StateIndex s : expand_block_trace(K::shape, batch[j])) ++led.block_exec_counts[s];
      }
    }
  }
  led.walltime = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  led.tick_count = n;
  for (std::size_t j = 0; j < m; ++j) {
    led.native_evaluations += evals[j];
    led.limit_hits += hits[j];
  }
  return out;
}

/// A machine plus the costs charged when stepping it.
template <class L>
struct FsmSpec {
  std::shared_ptr<const FsmDefinition<L>> fsm;
  CostParams costs;
  std::string name;
};

/// Lockstep target evaluations charged per tick.
template <class L>
double lockstep_evaluations_per_tick(const FsmDefinition<L>& fsm, StepVariant variant) {
  if (variant == StepVariant::amortized && fsm.shared()) return fsm.shared()->evaluations;
  const auto& ev = fsm.block_evaluations();
  return std::accumulate(ev.begin(), ev.end(), 0.0);
}

/// Steps every chain's machine until each holds n samples.
template <FsmKernel K>
RunResult run_fsm_batched(const K& kernel, const FsmSpec<typename K::Locals>& spec,
                          std::span<const ChainState> initial, std::size_t n, StepVariant variant,
                          const FsmDriverOptions& opts = {}) {
  using L = typename K::Locals;
  if (n == 0) throw std::invalid_argument("run_fsm_batched: n must be >= 1");
  if (!spec.fsm) throw std::invalid_argument("run_fsm_batched: no machine");
  const FsmDefinition<L>& fsm = *spec.fsm;
  const std::size_t m = initial.size();
  const std::size_t d = detail::dimension_of(initial);
  const std::size_t K_blocks = fsm.size();
  if (spec.costs.size() != K_blocks) throw std::invalid_argument("run_fsm_batched: one block cost per state required");

  std::vector<StateIndex> order = opts.bundle_order.empty() ? fsm.default_bundle_order() : opts.bundle_order;
  if (variant == StepVariant::bundled) {
    validate_order(fsm, order);
    // With the final block anywhere but first, a call entering INIT could
    // run DONE and leave it, and that sample would never be flagged.
    if (order.front() != fsm.final_state()) throw FsmError("bundle order must start with the final state");
  }
  const std::size_t chunk = std::max<std::size_t>(opts.chunk, 1);
  const double tick_cost = spec.costs.per_tick();
  const double tick_evals = lockstep_evaluations_per_tick(fsm, variant);

  RunResult out;
  out.samples = SampleArray(n, m, d);
  out.final_states.resize(m);
  CostLedger& led = out.ledger;
  led.n = n;
  led.m = m;
  led.block_labels = fsm.labels();
  led.iter_counts.assign(n * m, 0);
  led.block_exec_counts.assign(K_blocks, 0);
  led.lockstep_block_counts.assign(K_blocks, 0.0);
  led.ticks_to_n.assign(m, 0);

  std::vector<L> locals;
  locals.reserve(m);
  for (const ChainState& s : initial) locals.push_back(kernel.make_locals(s));
  std::vector<StateIndex> state(m, fsm.initial());
  std::vector<std::size_t> t(m, 0);
  std::vector<std::uint64_t> evals_at_n(m, 0), hits_at_n(m, 0);
  std::vector<std::uint64_t> executed(chunk * m, 0);
  std::vector<detail::ChainFailure> failures(m);

  auto step_one = [&](StateIndex k, L& z) -> StepOutcome {
    switch (variant) {
      case StepVariant::plain:
        return step(fsm, k, z);
      case StepVariant::bundled:
        return bundled_step(fsm, k, z, std::span<const StateIndex>(order));
      case StepVariant::amortized:
        return amortized_step(fsm, k, z, opts.debug_cache);
    }
    throw std::logic_error("unknown step variant");
  };

  std::uint64_t tick = 0;
  const auto t0 = std::chrono::steady_clock::now();
  while (*std::min_element(t.begin(), t.end()) < n) {
    if (tick >= opts.tick_budget) {
      led.tick_count = tick;
      led.charged_cost = static_cast<double>(tick) * tick_cost;
      led.walltime = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      throw TickBudgetExceeded(opts.tick_budget, led);
    }
    const std::size_t len = static_cast<std::size_t>(std::min<std::uint64_t>(chunk, opts.tick_budget - tick));
    parallel_for(m, opts.threads, [&](std::size_t b, std::size_t e) {
      for (std::size_t j = b; j < e; ++j) {
        if (!failures[j].what.empty()) continue;
        L& z = locals[j];
        for (std::size_t u = 0; u < len; ++u) {
          StateIndex k = state[j];
          if (t[j] >= n) {
            executed[u * m + j] = 0;  // finished chains are masked
            continue;
          }
          try {
            // The call that delivers the last sample runs the final block
            // alone, so the saved state is the one right after sample n.
            const bool last = k == fsm.final_state() && t[j] + 1 == n;
            const StepOutcome o = last ? step(fsm, k, z) : step_one(k, z);
            executed[u * m + j] = o.executed;
            state[j] = o.state;
            if (o.is_sample && t[j] < n) {
              out.samples.set(t[j], j, z.x);
              led.iter_counts[t[j] * m + j] = iteration_count(K::shape, z.completed);
              if (++t[j] == n) {
                led.ticks_to_n[j] = tick + u + 1;
                out.final_states[j] = static_cast<const ChainState&>(z);
                evals_at_n[j] = z.evaluations;
                hits_at_n[j] = z.limit_hits;
              }
            }
          } catch (const BlockFault& f) {
            failures[j] = {t[j], f.label(), f.what()};
            break;
          } catch (const FsmError& f) {
            failures[j] = {t[j], fsm.label(k), f.what()};
            break;
          }
        }
      }
    });
    detail::raise_first(failures);
    for (std::size_t u = 0; u < len; ++u) {
      TickRecord rec;
      if (opts.record_ticks) {
        rec.lockstep_evaluations = tick_evals;
        rec.executed.assign(K_blocks, 0);
      }
      for (std::size_t j = 0; j < m; ++j) {
        std::uint64_t mask = executed[u * m + j];
        while (mask != 0) {
          const auto s = static_cast<std::size_t>(std::countr_zero(mask));
          ++led.block_exec_counts[s];
          if (opts.record_ticks) ++rec.executed[s];
          mask &= mask - 1;
        }
      }
      if (opts.record_ticks) led.ticks.push_back(std::move(rec));
    }
    tick += len;
  }
  led.walltime = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  led.tick_count = tick;
  led.charged_cost = static_cast<double>(tick) * tick_cost;
  led.lockstep_evaluations = static_cast<double>(tick) * tick_evals;
  for (double& c : led.lockstep_block_counts) c = static_cast<double>(tick);
  for (std::size_t j = 0; j < m; ++j) {
    led.native_evaluations += evals_at_n[j];
    led.limit_hits += hits_at_n[j];
  }
  return out;
}

/// Keeps x at flagged ticks, at most n per chain. buffers[j][t] is chain j's
/// x after tick t.
inline std::vector<std::vector<Vector>> collect_samples(const std::vector<std::vector<Vector>>& buffers,
                                                        const std::vector<std::vector<bool>>& flags, std::size_t n) {
  if (buffers.size() != flags.size()) throw std::invalid_argument("collect_samples: one flag row per chain");
  std::vector<std::vector<Vector>> out(buffers.size());
  for (std::size_t j = 0; j < buffers.size(); ++j) {
    if (buffers[j].size() != flags[j].size()) throw std::invalid_argument("collect_samples: length mismatch");
    for (std::size_t t = 0; t < buffers[j].size() && out[j].size() < n; ++t) {
      if (flags[j][t]) out[j].push_back(buffers[j][t]);
    }
  }
  return out;
}

}  // namespace fsmcmc
