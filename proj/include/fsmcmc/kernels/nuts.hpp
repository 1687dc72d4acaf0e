#pragma once

// Iterative No-U-Turn sampler with multinomial trajectory sampling and an
// identity mass matrix.
//
// The outer loop doubles the trajectory in a random direction; the inner
// loop integrates the new subtree one leapfrog step at a time, sampling a
// subtree proposal progressively and checking U-turns of every power-of-two
// sub-subtree through momentum checkpoints. A finished subtree that neither
// turned nor diverged is merged with biased progressive sampling.

#include "fsmcmc/kernels/common.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <stdexcept>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

namespace fsmcmc {

struct NutsParams {
  double step_size = 0.1;
  std::uint32_t max_depth = 10;
  double divergence_threshold = 1000.0;
};

struct PhasePoint {
  Vector q, p, grad;
  double logp = 0.0;
};

struct NutsLocals : LocalsBase {
  double h0 = 0.0;  // initial Hamiltonian
  PhasePoint left, right;
  Vector prop_q, prop_grad;
  double prop_logp = 0.0;
  double log_weight = 0.0;
  Vector momentum_sum;
  std::uint32_t depth = 0;
  bool turning = false;
  bool diverging = false;
  std::uint64_t leapfrogs = 0;  // integration steps taken this sample

  // Subtree under construction.
  int direction = 1;
  std::uint32_t budget = 0;
  std::uint32_t count = 0;
  PhasePoint edge;  // newest leaf
  Vector sub_q, sub_grad;
  double sub_logp = 0.0;
  double sub_log_weight = kNegInf;
  Vector sub_momentum_sum;
  bool sub_turning = false;
  bool sub_diverging = false;
  std::vector<Vector> ckpt_p, ckpt_sum;
};

namespace nuts {

inline bool is_turning(const Vector& p_left, const Vector& p_right, const Vector& p_sum) {
  const Vector adj = p_sum - 0.5 * (p_left + p_right);
  return p_left.dot(adj) <= 0.0 || p_right.dot(adj) <= 0.0;
}

/// Checkpoint slots touched by leaf `n` of a subtree (0-based): an even leaf
/// stores into idx_max; an odd leaf closes the sub-subtrees idx_min..idx_max.
inline std::pair<int, int> checkpoint_range(std::uint32_t n) {
  const int idx_max = std::popcount(n >> 1);
  const int closes = std::countr_one(n);
  return {idx_max - closes + 1, idx_max};
}

inline double value_and_grad(const TargetModel& t, const Vector& q, Vector& g) {
  const double lp = t.value_and_gradient(q, g);
  if (std::isnan(lp) || lp == std::numeric_limits<double>::infinity()) throw NumericalFault("non-finite log-density");
  if (lp != kNegInf && !g.allFinite()) throw NumericalFault("non-finite gradient");
  return lp;
}

inline void init(NutsLocals& z) {
  Vector p;
  std::tie(p, z.rng) = standard_normal_vec(z.rng, z.x.size());
  z.h0 = -z.log_density + 0.5 * p.squaredNorm();
  z.left = PhasePoint{z.x, p, z.gradient, z.log_density};
  z.right = z.left;
  z.prop_q = z.x;
  z.prop_grad = z.gradient;
  z.prop_logp = z.log_density;
  z.log_weight = 0.0;
  z.momentum_sum = p;
  z.depth = 0;
  z.turning = z.diverging = false;
  z.leapfrogs = 0;
  z.trace.loops.clear();
}

inline bool expand_more(const NutsLocals& z, std::uint32_t max_depth) {
  return !z.turning && !z.diverging && z.depth < max_depth;
}

inline void begin_subtree(NutsLocals& z) {
  double u;
  std::tie(u, z.rng) = uniform(z.rng);
  z.direction = u < 0.5 ? -1 : 1;
  z.budget = std::uint32_t{1} << z.depth;
  z.count = 0;
  z.edge = z.direction < 0 ? z.left : z.right;
  z.sub_log_weight = kNegInf;
  z.sub_momentum_sum = Vector::Zero(z.x.size());
  z.sub_turning = z.sub_diverging = false;
  z.trace.loops.push_back(0);
}

inline bool integrate_more(const NutsLocals& z) { return z.count < z.budget && !z.sub_turning && !z.sub_diverging; }

inline void leapfrog_leaf(NutsLocals& z, const TargetModel& t, const NutsParams& prm) {
  const double h = z.direction * prm.step_size;
  PhasePoint& e = z.edge;
  e.p += 0.5 * h * e.grad;
  e.q += h * e.p;
  e.logp = value_and_grad(t, e.q, e.grad);
  ++z.evaluations;
  if (e.logp != kNegInf) e.p += 0.5 * h * e.grad;
  ++z.leapfrogs;
  ++z.trace.loops.back();

  const double energy = -e.logp + 0.5 * e.p.squaredNorm();
  const double delta = energy - z.h0;
  const bool divergent = !(delta <= prm.divergence_threshold);
  const double leaf_w = std::isnan(delta) ? kNegInf : -delta;

  const double total = detail::log_add_exp(z.sub_log_weight, leaf_w);
  double u;
  std::tie(u, z.rng) = uniform(z.rng);
  if (total != kNegInf && u < std::exp(leaf_w - total)) {
    z.sub_q = e.q;
    z.sub_grad = e.grad;
    z.sub_logp = e.logp;
  }
  z.sub_log_weight = total;
  z.sub_momentum_sum += e.p;

  const std::uint32_t n = z.count;
  const auto [lo, hi] = checkpoint_range(n);
  if (n % 2 == 0) {
    z.ckpt_p[static_cast<std::size_t>(hi)] = e.p;
    z.ckpt_sum[static_cast<std::size_t>(hi)] = z.sub_momentum_sum;
  } else {
    for (int i = hi; i >= lo; --i) {
      const auto s = static_cast<std::size_t>(i);
      const Vector sub_sum = z.sub_momentum_sum - z.ckpt_sum[s] + z.ckpt_p[s];
      if (is_turning(z.ckpt_p[s], e.p, sub_sum)) {
        z.sub_turning = true;
        break;
      }
    }
  }
  z.sub_diverging = divergent;
  ++z.count;
}

inline void merge_subtree(NutsLocals& z) {
  if (!z.sub_turning && !z.sub_diverging) {
    double u;
    std::tie(u, z.rng) = uniform(z.rng);
    if (u < std::exp(std::min(0.0, z.sub_log_weight - z.log_weight))) {
      z.prop_q = z.sub_q;
      z.prop_grad = z.sub_grad;
      z.prop_logp = z.sub_logp;
    }
    z.log_weight = detail::log_add_exp(z.log_weight, z.sub_log_weight);
    z.momentum_sum += z.sub_momentum_sum;
    (z.direction < 0 ? z.left : z.right) = z.edge;
    z.turning = is_turning(z.left.p, z.right.p, z.momentum_sum);
  } else {
    z.turning = z.sub_turning;
    z.diverging = z.sub_diverging;
  }
  ++z.depth;
}

inline void finish(NutsLocals& z, std::uint32_t max_depth) {
  if (!z.turning && !z.diverging && z.depth >= max_depth) ++z.limit_hits;
  z.x = z.prop_q;
  z.gradient = z.prop_grad;
  z.log_density = z.prop_logp;
  finish_sample(z);
}

}  // namespace nuts

class NutsKernel {
 public:
  using Locals = NutsLocals;
  static constexpr LoopShape shape = LoopShape::nested;

  NutsKernel(TargetPtr target, NutsParams params) : target_(std::move(target)), params_(params) {
    if (!target_) throw std::invalid_argument("nuts: no target");
    if (!target_->has_gradient()) throw std::invalid_argument("nuts: target has no gradient");
    if (!(params_.step_size > 0.0)) throw std::invalid_argument("nuts: step size must be positive");
    if (params_.max_depth < 1 || params_.max_depth > 30) throw std::invalid_argument("nuts: max_depth must be in [1, 30]");
    if (!(params_.divergence_threshold > 0.0)) throw std::invalid_argument("nuts: divergence threshold must be positive");
    build();
  }

  std::string name() const { return "nuts"; }
  const TargetModel& target() const { return *target_; }
  const NutsParams& params() const { return params_; }

  ChainState init(Vector x, RngKey key) const {
    ChainState s;
    s.gradient = Vector::Zero(x.size());
    s.log_density = nuts::value_and_grad(*target_, x, s.gradient);
    if (s.log_density == kNegInf) throw NumericalFault("nuts: initial point outside the support");
    s.x = std::move(x);
    s.rng = key;
    return s;
  }

  SampleResult sample(const ChainState& s) const {
    Locals z = make_locals(s);
    nuts::init(z);
    while (nuts::expand_more(z, params_.max_depth)) {
      nuts::begin_subtree(z);
      while (nuts::integrate_more(z)) nuts::leapfrog_leaf(z, *target_, params_);
      nuts::merge_subtree(z);
    }
    nuts::finish(z, params_.max_depth);
    SampleResult r;
    r.state = static_cast<const ChainState&>(z);
    r.trace = z.completed;
    r.evaluations = z.evaluations;
    r.limit_hits = z.limit_hits;
    return r;
  }

  Locals make_locals(const ChainState& s) const {
    Locals z;
    static_cast<ChainState&>(z) = s;
    const auto slots = static_cast<std::size_t>(params_.max_depth) + 1;
    z.ckpt_p.assign(slots, Vector::Zero(s.x.size()));
    z.ckpt_sum.assign(slots, Vector::Zero(s.x.size()));
    return z;
  }

  /// INIT, DOUBLE, INTEGRATE, CHECK, DONE.
  std::shared_ptr<const FsmDefinition<Locals>> plain_fsm() const { return plain_; }
  /// Each gradient evaluation feeds only the leapfrog step that requested it,
  /// so there is nothing to share: the amortized form is the plain machine.
  std::shared_ptr<const FsmDefinition<Locals>> amortized_fsm() const { return plain_; }

 private:
  void build() {
    const TargetPtr t = target_;
    const NutsParams p = params_;
    auto inner = compose_single_loop<Locals>(&nuts::begin_subtree,
                                             [t, p](Locals& z) { nuts::leapfrog_leaf(z, *t, p); },
                                             &nuts::merge_subtree, &nuts::integrate_more,
                                             {"DOUBLE", "INTEGRATE", "CHECK"});
    auto fsm = compose_nested<Locals>(
        &nuts::init, inner, [d = p.max_depth](Locals& z) { nuts::finish(z, d); },
        [d = p.max_depth](const Locals& z) { return nuts::expand_more(z, d); }, {"INIT", "DONE"});
    fsm.set_block_evaluations({0, 0, 1, 0, 0});
    plain_ = std::make_shared<const FsmDefinition<Locals>>(std::move(fsm));
  }

  TargetPtr target_;
  NutsParams params_;
  std::shared_ptr<const FsmDefinition<Locals>> plain_;
};

}  // namespace fsmcmc
