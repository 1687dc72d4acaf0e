#pragma once

// Finite-state-machine form of a transition kernel.
//
// A kernel with while loops is cut into while-loop-free blocks. The FSM holds
// one block per state plus a transition function that reads the loop
// predicates; stepping the machine one edge at a time lets every chain of a
// batch sit in a different block without waiting for the others.

#include <algorithm>
#include <array>
#include <concepts>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <queue>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace fsmcmc {

using StateIndex = std::size_t;

struct Edge {
  StateIndex from;
  StateIndex to;
  friend bool operator==(const Edge&, const Edge&) = default;
};

/// Malformed machine or a transition outside the declared topology.
class FsmError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Thrown by block bodies on non-finite numerics.
class NumericalFault : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A block failed; carries the label of the state that was running.
class BlockFault : public std::runtime_error {
 public:
  BlockFault(std::string state_label, const std::string& what)
      : std::runtime_error("[" + state_label + "] " + what), label_(std::move(state_label)) {}
  const std::string& label() const noexcept { return label_; }

 private:
  std::string label_;
};

/// Locals must expose the current sample and the amortization flag.
template <class L>
concept FsmLocals = requires(L& z) {
  { z.do_computation } -> std::convertible_to<bool>;
  { z.x.allFinite() } -> std::convertible_to<bool>;
};

/// A computation g shared by several blocks: blocks raise do_computation and
/// g refreshes the cached fields once per step.
template <class L>
struct SharedComputation {
  std::function<void(L&)> compute;
  /// Debug check that the cache matches a fresh evaluation.
  std::function<bool(const L&)> cache_consistent;
  /// Target evaluations one call of g performs in lockstep.
  double evaluations = 1.0;
};

template <class L>
class FsmDefinition {
 public:
  using Block = std::function<void(L&)>;
  using Transition = std::function<StateIndex(StateIndex, const L&)>;

  FsmDefinition(std::vector<std::string> labels, std::vector<Block> blocks, Transition transition,
                std::vector<Edge> edges, StateIndex initial = 0)
      : labels_(std::move(labels)),
        blocks_(std::move(blocks)),
        transition_(std::move(transition)),
        edges_(std::move(edges)),
        initial_(initial) {
    const std::size_t k = blocks_.size();
    if (k == 0) throw FsmError("fsm: need at least one state");
    if (k > 64) throw FsmError("fsm: at most 64 states");
    if (labels_.size() != k) throw FsmError("fsm: one label per state required");
    if (!transition_) throw FsmError("fsm: transition function missing");
    if (initial_ >= k) throw FsmError("fsm: initial state out of range");
    final_ = k - 1;
    allowed_.assign(k * k, false);
    for (const Edge& e : edges_) {
      if (e.from >= k || e.to >= k) throw FsmError("fsm: edge endpoint out of range");
      allowed_[e.from * k + e.to] = true;
    }
    if (!allowed_[final_ * k + initial_]) throw FsmError("fsm: missing wrap-around edge final -> initial");
    for (const Edge& e : edges_) {
      if (e.from == final_ && e.to != initial_) throw FsmError("fsm: final state may only wrap to initial");
    }
    std::vector<bool> seen(k, false);
    std::queue<StateIndex> frontier;
    frontier.push(initial_);
    seen[initial_] = true;
    while (!frontier.empty()) {
      const StateIndex s = frontier.front();
      frontier.pop();
      for (StateIndex t = 0; t < k; ++t) {
        if (allowed_[s * k + t] && !seen[t]) {
          seen[t] = true;
          frontier.push(t);
        }
      }
    }
    for (StateIndex s = 0; s < k; ++s) {
      if (!seen[s]) throw FsmError("fsm: state '" + labels_[s] + "' unreachable from initial");
    }
    block_evaluations_.assign(k, 0.0);
  }

  std::size_t size() const noexcept { return blocks_.size(); }
  StateIndex initial() const noexcept { return initial_; }
  StateIndex final_state() const noexcept { return final_; }
  const std::string& label(StateIndex k) const { return labels_.at(k); }
  const std::vector<std::string>& labels() const noexcept { return labels_; }
  const std::vector<Edge>& edges() const noexcept { return edges_; }
  const Block& block(StateIndex k) const { return blocks_.at(k); }
  const Transition& transition() const noexcept { return transition_; }

  /// Runs block k in place; empty blocks are no-ops.
  void run_block(StateIndex k, L& z) const {
    const Block& b = blocks_[k];
    if (!b) return;
    try {
      b(z);
    } catch (const NumericalFault& e) {
      throw BlockFault(labels_[k], e.what());
    }
    if constexpr (FsmLocals<L>) {
      if (!z.x.allFinite()) throw BlockFault(labels_[k], "non-finite sample after block");
    }
  }

  /// δ(k, z), checked against the declared edges.
  StateIndex next(StateIndex k, const L& z) const {
    const StateIndex t = transition_(k, z);
    const std::size_t n = size();
    if (t >= n) throw FsmError("fsm: transition from '" + labels_[k] + "' returned an out-of-range state");
    if (!allowed_[k * n + t]) {
      throw FsmError("fsm: undeclared transition " + labels_[k] + " -> " + labels_[t]);
    }
    return t;
  }

  bool has_edge(StateIndex from, StateIndex to) const {
    return from < size() && to < size() && allowed_[from * size() + to];
  }

  /// Target evaluations each block performs inline (lockstep accounting).
  const std::vector<double>& block_evaluations() const noexcept { return block_evaluations_; }
  void set_block_evaluations(std::vector<double> v) {
    if (v.size() != size()) throw FsmError("fsm: block evaluation counts must match state count");
    block_evaluations_ = std::move(v);
  }

  const SharedComputation<L>* shared() const noexcept { return shared_ ? &*shared_ : nullptr; }
  void set_shared(SharedComputation<L> g) { shared_ = std::move(g); }

  /// Default bundle order: the final state first, then the sampling path in
  /// index order. With the final state leading, a bundled call can only run
  /// the final block when it was the entry state.
  std::vector<StateIndex> default_bundle_order() const {
    std::vector<StateIndex> order{final_};
    for (StateIndex s = 0; s < size(); ++s) {
      if (s != final_) order.push_back(s);
    }
    return order;
  }

 private:
  std::vector<std::string> labels_;
  std::vector<Block> blocks_;
  Transition transition_;
  std::vector<Edge> edges_;
  std::vector<bool> allowed_;
  StateIndex initial_;
  StateIndex final_ = 0;
  std::vector<double> block_evaluations_;
  std::optional<SharedComputation<L>> shared_;
};

struct StepOutcome {
  StateIndex state;
  bool is_sample = false;
  bool do_computation = false;
  std::uint64_t executed = 0;  // bit s set when block s ran in this call
};

/// One edge of the machine: flag, block, transition.
template <class L>
StepOutcome step(const FsmDefinition<L>& fsm, StateIndex k, L& z) {
  if (k >= fsm.size()) throw FsmError("step: state index out of range");
  StepOutcome out;
  out.is_sample = (k == fsm.final_state());
  fsm.run_block(k, z);
  out.executed = std::uint64_t{1} << k;
  out.state = fsm.next(k, z);
  return out;
}

/// Runs the states as a chain of conditionals in the given order, so a
/// chain can cross several edges in one call. is_sample is taken at entry.
template <class L>
StepOutcome bundled_step(const FsmDefinition<L>& fsm, StateIndex k, L& z, std::span<const StateIndex> order) {
  if (k >= fsm.size()) throw FsmError("bundled_step: state index out of range");
  if (order.size() != fsm.size()) throw FsmError("bundled_step: order must be a permutation of the states");
  StepOutcome out;
  out.is_sample = (k == fsm.final_state());
  for (StateIndex s : order) {
    if (k == s) {
      fsm.run_block(s, z);
      out.executed |= std::uint64_t{1} << s;
      k = fsm.next(s, z);
    }
  }
  out.state = k;
  return out;
}

/// Block, then the shared computation g if the block asked for it, then the
/// transition. δ may therefore read the freshly computed cache.
template <class L>
  requires FsmLocals<L>
StepOutcome amortized_step(const FsmDefinition<L>& fsm, StateIndex k, L& z, bool debug = false) {
  if (k >= fsm.size()) throw FsmError("amortized_step: state index out of range");
  StepOutcome out;
  out.is_sample = (k == fsm.final_state());
  z.do_computation = false;
  fsm.run_block(k, z);
  out.executed = std::uint64_t{1} << k;
  out.do_computation = z.do_computation;
  if (const auto* g = fsm.shared(); g && z.do_computation) {
    try {
      g->compute(z);
    } catch (const NumericalFault& e) {
      throw BlockFault(fsm.label(k) + "/shared", e.what());
    }
  }
  if (debug) {
    if (const auto* g = fsm.shared(); g && g->cache_consistent && !g->cache_consistent(z)) {
      throw BlockFault(fsm.label(k), "stale shared cache read");
    }
  }
  out.state = fsm.next(k, z);
  return out;
}

template <class L>
void validate_order(const FsmDefinition<L>& fsm, std::span<const StateIndex> order) {
  std::vector<bool> seen(fsm.size(), false);
  if (order.size() != fsm.size()) throw FsmError("bundle order must list every state once");
  for (StateIndex s : order) {
    if (s >= fsm.size() || seen[s]) throw FsmError("bundle order must be a permutation of the states");
    seen[s] = true;
  }
}

// ---------------------------------------------------------------------------
// Composition rules.

/// pre; while (cond) body; post.
/// States: 0 = pre, 1 = body, 2 = post (final).
template <class L>
FsmDefinition<L> compose_single_loop(typename FsmDefinition<L>::Block pre, typename FsmDefinition<L>::Block body,
                                     typename FsmDefinition<L>::Block post, std::function<bool(const L&)> loop_condition,
                                     std::array<std::string, 3> labels = {"INIT", "BODY", "DONE"}) {
  if (!loop_condition) throw FsmError("compose_single_loop: loop condition missing");
  auto transition = [cond = std::move(loop_condition)](StateIndex k, const L& z) -> StateIndex {
    if (k == 2) return 0;
    return cond(z) ? 1 : 2;
  };
  return FsmDefinition<L>({labels[0], labels[1], labels[2]}, {std::move(pre), std::move(body), std::move(post)},
                          std::move(transition), {{0, 1}, {0, 2}, {1, 1}, {1, 2}, {2, 0}});
}

/// Two single-loop machines run back to back. The second machine's initial
/// block must be empty; its dispatch is absorbed by the first machine's final
/// state. States: S11, S12, S13, S22, S23.
template <class L>
FsmDefinition<L> compose_sequential(const FsmDefinition<L>& f1, const FsmDefinition<L>& f2) {
  if (f1.size() != 3 || f2.size() != 3) throw FsmError("compose_sequential: operands must be single-loop machines");
  if (f2.block(0)) throw FsmError("compose_sequential: second machine's initial block must be empty");
  // f2 states 1, 2 land on 3, 4.
  auto map2 = [](StateIndex s) -> StateIndex {
    if (s == 0) throw FsmError("compose_sequential: second machine re-entered its initial state");
    return s + 2;
  };
  auto transition = [d1 = f1.transition(), d2 = f2.transition(), map2](StateIndex k, const L& z) -> StateIndex {
    switch (k) {
      case 0:
      case 1:
        return d1(k, z);
      case 2:
        return map2(d2(0, z));
      case 3:
        return map2(d2(1, z));
      default:
        return 0;
    }
  };
  std::vector<Edge> edges;
  for (const Edge& e : f1.edges()) {
    if (e.from < 2) edges.push_back(e);
  }
  for (const Edge& e : f2.edges()) {
    if (e.from == 0) edges.push_back({2, map2(e.to)});
    if (e.from == 1) edges.push_back({3, map2(e.to)});
  }
  edges.push_back({4, 0});
  return FsmDefinition<L>({f1.label(0), f1.label(1), f1.label(2), f2.label(1), f2.label(2)},
                          {f1.block(0), f1.block(1), f1.block(2), f2.block(1), f2.block(2)}, std::move(transition),
                          std::move(edges));
}

/// pre; while (outer) { inner single-loop program }; post.
/// States: S1, Si1, Si2, Si3, S3. Leaving S1 or Si3 evaluates the outer
/// condition.
template <class L>
FsmDefinition<L> compose_nested(typename FsmDefinition<L>::Block pre, const FsmDefinition<L>& inner,
                                typename FsmDefinition<L>::Block post, std::function<bool(const L&)> outer_condition,
                                std::array<std::string, 2> labels = {"INIT", "DONE"}) {
  if (inner.size() != 3) throw FsmError("compose_nested: inner machine must be a single-loop machine");
  if (!outer_condition) throw FsmError("compose_nested: outer condition missing");
  auto transition = [di = inner.transition(), outer = std::move(outer_condition)](StateIndex k,
                                                                                 const L& z) -> StateIndex {
    switch (k) {
      case 0:
      case 3:
        return outer(z) ? 1 : 4;
      case 1:
      case 2: {
        const StateIndex t = di(k - 1, z);
        if (t == 0) throw FsmError("compose_nested: inner machine wrapped before its final state");
        return t + 1;
      }
      default:
        return 0;
    }
  };
  std::vector<Edge> edges{{0, 1}, {0, 4}, {3, 1}, {3, 4}, {4, 0}};
  for (const Edge& e : inner.edges()) {
    if (e.from < 2) edges.push_back({e.from + 1, e.to + 1});
  }
  return FsmDefinition<L>({labels[0], inner.label(0), inner.label(1), inner.label(2), labels[1]},
                          {std::move(pre), inner.block(0), inner.block(1), inner.block(2), std::move(post)},
                          std::move(transition), std::move(edges));
}

}  // namespace fsmcmc
