#pragma once

// Per-chain state carried between samples, and the per-sample loop trace.

#include "fsmcmc/fsm.hpp"
#include "fsmcmc/prng.hpp"
#include "fsmcmc/targets.hpp"

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <span>
#include <vector>

namespace fsmcmc {

/// What survives from one sample to the next.
struct ChainState {
  Vector x;
  double log_density = 0.0;  // cached at x (log f(x) for elliptical slice)
  Vector gradient;           // cached at x; empty unless the kernel uses it
  RngKey rng;
  std::uint64_t sample_index = 0;
};

/// Loop structure of a kernel's sample function.
enum class LoopShape { single, sequential, nested };

/// Loop body counts for one sample.
///   single:     {N}
///   sequential: {N_first, N_second}
///   nested:     {inner count of outer iteration 1, 2, ...}
struct SampleTrace {
  std::vector<std::uint32_t> loops;
  friend bool operator==(const SampleTrace&, const SampleTrace&) = default;
};

/// N_{i,j}: body executions of the kernel's iterative block. For the
/// sequential shape that is the second (shrink) loop; for the nested shape it
/// is the total inner count.
inline std::uint32_t iteration_count(LoopShape shape, const SampleTrace& trace) {
  switch (shape) {
    case LoopShape::single:
      return trace.loops.empty() ? 0 : trace.loops[0];
    case LoopShape::sequential:
      return trace.loops.size() < 2 ? 0 : trace.loops[1];
    case LoopShape::nested:
      return std::accumulate(trace.loops.begin(), trace.loops.end(), std::uint32_t{0});
  }
  return 0;
}

/// Number of states of the plain FSM for a shape.
inline std::size_t plain_state_count(LoopShape shape) { return shape == LoopShape::single ? 3 : 5; }

/// The block sequence the monolithic program executes for one sample,
/// expressed in the plain FSM's state indices.
inline std::vector<StateIndex> expand_block_trace(LoopShape shape, const SampleTrace& trace) {
  std::vector<StateIndex> out;
  switch (shape) {
    case LoopShape::single:
      out.push_back(0);
      out.insert(out.end(), trace.loops.at(0), 1);
      out.push_back(2);
      break;
    case LoopShape::sequential:
      out.push_back(0);
      out.insert(out.end(), trace.loops.at(0), 1);
      out.push_back(2);
      out.insert(out.end(), trace.loops.at(1), 3);
      out.push_back(4);
      break;
    case LoopShape::nested:
      out.push_back(0);
      for (std::uint32_t inner : trace.loops) {
        out.push_back(1);
        out.insert(out.end(), inner, 2);
        out.push_back(3);
      }
      out.push_back(4);
      break;
  }
  return out;
}

/// Block executions one lockstep call of the monolithic sample function
/// performs for a batch: every while loop runs until its slowest member is
/// done, with finished members masked.
inline std::vector<double> lockstep_block_counts(LoopShape shape, std::span<const SampleTrace> batch) {
  auto max_at = [&](std::size_t slot) {
    std::uint32_t hi = 0;
    for (const SampleTrace& t : batch) {
      if (slot < t.loops.size()) hi = std::max(hi, t.loops[slot]);
    }
    return static_cast<double>(hi);
  };
  switch (shape) {
    case LoopShape::single:
      return {1.0, max_at(0), 1.0};
    case LoopShape::sequential:
      return {1.0, max_at(0), 1.0, max_at(1), 1.0};
    case LoopShape::nested: {
      std::size_t outer = 0;
      for (const SampleTrace& t : batch) outer = std::max(outer, t.loops.size());
      double inner = 0.0;
      for (std::size_t o = 0; o < outer; ++o) inner += max_at(o);
      const double d = static_cast<double>(outer);
      return {1.0, d, inner, d, 1.0};
    }
  }
  return {};
}

/// Fields every kernel's FSM locals share.
struct LocalsBase : ChainState {
  SampleTrace trace;             // loop counts of the sample in progress
  SampleTrace completed;         // trace of the last finished sample
  bool do_computation = false;   // amortized step: g needed before δ
  std::uint64_t evaluations = 0; // target evaluations actually performed
  std::uint64_t limit_hits = 0;  // capped loops (expansion cap, max depth)
};

/// Called by every final block once x holds the new sample. The initial
/// block of the next sample may run in the same bundled call and reset
/// `trace`, so the finished trace is kept separately.
inline void finish_sample(LocalsBase& z) {
  z.completed = z.trace;
  ++z.sample_index;
}

/// Monolithic sample output.
struct SampleResult {
  ChainState state;
  SampleTrace trace;
  std::uint64_t evaluations = 0;
  std::uint64_t limit_hits = 0;
};

}  // namespace fsmcmc
