#pragma once

// Coordinate-wise slice sampling with stepping out and shrinkage. Sample t
// updates coordinate t mod d. With an expansion budget E the interval grows
// by at most J = floor((E + 1) V) steps left and E - J steps right, so the
// procedure stays reversible when the cap is hit.

#include "fsmcmc/kernels/common.hpp"

#include <cmath>
#include <cstdint>
#include <memory>
#include <stdexcept>
#include <string>
#include <tuple>

namespace fsmcmc {

struct SliceParams {
  double width = 1.0;
  std::uint32_t max_expansions = 100;
};

inline constexpr std::uint32_t kSliceShrinkCap = 1000;

struct SliceLocals : LocalsBase {
  Eigen::Index coord = 0;
  double log_y = 0.0;
  double left = 0.0, right = 0.0;
  double lp_left = kNegInf, lp_right = kNegInf;
  std::uint32_t budget_left = 0, budget_right = 0;
  double xp = 0.0;     // proposed coordinate value
  double lp_xp = kNegInf;
  // Amortized form: points waiting for the shared evaluation.
  bool pending_left = false, pending_right = false, pending_xp = false;
};

class SliceKernel {
 public:
  using Locals = SliceLocals;
  static constexpr LoopShape shape = LoopShape::sequential;

  SliceKernel(TargetPtr target, SliceParams params) : target_(std::move(target)), params_(params) {
    if (!target_) throw std::invalid_argument("slice: no target");
    if (!(params_.width > 0.0)) throw std::invalid_argument("slice: width must be positive");
    build();
  }

  std::string name() const { return "slice"; }
  const TargetModel& target() const { return *target_; }
  const SliceParams& params() const { return params_; }

  ChainState init(Vector x, RngKey key) const {
    ChainState s;
    s.log_density = detail::checked(target_->log_density(x), "log-density at the initial point");
    s.x = std::move(x);
    s.rng = key;
    return s;
  }

  SampleResult sample(const ChainState& s) const {
    SampleResult r{s, SampleTrace{{0, 0}}, 0, 0};
    ChainState& c = r.state;
    const Eigen::Index i = static_cast<Eigen::Index>(c.sample_index % static_cast<std::uint64_t>(c.x.size()));
    const double w = params_.width;
    const double x0 = c.x[i];
    Vector probe = c.x;
    auto lp_at = [&](double v) {
      probe[i] = v;
      ++r.evaluations;
      return detail::checked(target_->log_density(probe), "log-density");
    };

    double u, v, b;
    std::tie(u, c.rng) = uniform(c.rng);
    const double log_y = c.log_density + std::log1p(-u);
    std::tie(v, c.rng) = uniform(c.rng);
    std::tie(b, c.rng) = uniform(c.rng);
    double left = x0 - w * v;
    double right = left + w;
    auto j = static_cast<std::uint32_t>(std::floor((params_.max_expansions + 1.0) * b));
    j = std::min(j, params_.max_expansions);
    std::uint32_t k = params_.max_expansions - j;
    double lpl = lp_at(left);
    double lpr = lp_at(right);
    while ((j > 0 && lpl > log_y) || (k > 0 && lpr > log_y)) {
      if (j > 0 && lpl > log_y) {
        left -= w;
        --j;
        lpl = lp_at(left);
      }
      if (k > 0 && lpr > log_y) {
        right += w;
        --k;
        lpr = lp_at(right);
      }
      ++r.trace.loops[0];
    }
    if (lpl > log_y || lpr > log_y) ++r.limit_hits;

    std::tie(u, c.rng) = uniform(c.rng);
    double xp = left + u * (right - left);
    double lpx = lp_at(xp);
    while (!(lpx > log_y)) {
      if (++r.trace.loops[1] > kSliceShrinkCap) throw NumericalFault("slice: shrink cap exceeded");
      if (xp < x0) {
        left = xp;
      } else {
        right = xp;
      }
      std::tie(u, c.rng) = uniform(c.rng);
      xp = left + u * (right - left);
      lpx = lp_at(xp);
    }
    c.x[i] = xp;
    c.log_density = lpx;
    ++c.sample_index;
    return r;
  }

  Locals make_locals(const ChainState& s) const {
    Locals z;
    static_cast<ChainState&>(z) = s;
    z.trace.loops = {0, 0};
    return z;
  }

  /// INIT-E, EXPAND, INIT-S, SHRINK, DONE.
  std::shared_ptr<const FsmDefinition<Locals>> plain_fsm() const { return plain_; }
  /// Same topology; pending interval ends and proposals are evaluated by the
  /// shared computation (at most two points per tick).
  std::shared_ptr<const FsmDefinition<Locals>> amortized_fsm() const { return amortized_; }

 private:
  static double lp_at(const TargetModel& t, const Locals& z, double v) {
    Vector probe = z.x;
    probe[z.coord] = v;
    return detail::checked(t.log_density(probe), "log-density");
  }

  static void start_expand(Locals& z, const SliceParams& p) {
    z.trace.loops.assign(2, 0);
    z.coord = static_cast<Eigen::Index>(z.sample_index % static_cast<std::uint64_t>(z.x.size()));
    double u, v, b;
    std::tie(u, z.rng) = uniform(z.rng);
    z.log_y = z.log_density + std::log1p(-u);
    std::tie(v, z.rng) = uniform(z.rng);
    std::tie(b, z.rng) = uniform(z.rng);
    z.left = z.x[z.coord] - p.width * v;
    z.right = z.left + p.width;
    z.budget_left = std::min(static_cast<std::uint32_t>(std::floor((p.max_expansions + 1.0) * b)), p.max_expansions);
    z.budget_right = p.max_expansions - z.budget_left;
    z.pending_left = z.pending_right = true;
  }

  static bool grow_left(const Locals& z) { return z.budget_left > 0 && z.lp_left > z.log_y; }
  static bool grow_right(const Locals& z) { return z.budget_right > 0 && z.lp_right > z.log_y; }

  static void expand(Locals& z, const SliceParams& p) {
    if (grow_left(z)) {
      z.left -= p.width;
      --z.budget_left;
      z.pending_left = true;
    }
    if (grow_right(z)) {
      z.right += p.width;
      --z.budget_right;
      z.pending_right = true;
    }
    ++z.trace.loops[0];
  }

  static void start_shrink(Locals& z) {
    if (z.lp_left > z.log_y || z.lp_right > z.log_y) ++z.limit_hits;
    double u;
    std::tie(u, z.rng) = uniform(z.rng);
    z.xp = z.left + u * (z.right - z.left);
    z.pending_xp = true;
  }

  static void shrink(Locals& z) {
    if (++z.trace.loops[1] > kSliceShrinkCap) throw NumericalFault("slice: shrink cap exceeded");
    if (z.xp < z.x[z.coord]) {
      z.left = z.xp;
    } else {
      z.right = z.xp;
    }
    double u;
    std::tie(u, z.rng) = uniform(z.rng);
    z.xp = z.left + u * (z.right - z.left);
    z.pending_xp = true;
  }

  /// Evaluates every pending point, left end before right end.
  static void evaluate_pending(Locals& z, const TargetModel& t) {
    if (z.pending_left) {
      z.lp_left = lp_at(t, z, z.left);
      ++z.evaluations;
    }
    if (z.pending_right) {
      z.lp_right = lp_at(t, z, z.right);
      ++z.evaluations;
    }
    if (z.pending_xp) {
      z.lp_xp = lp_at(t, z, z.xp);
      ++z.evaluations;
    }
    z.pending_left = z.pending_right = z.pending_xp = false;
  }

  static void finish(Locals& z) {
    z.x[z.coord] = z.xp;
    z.log_density = z.lp_xp;
    finish_sample(z);
  }

  static FsmDefinition<Locals> assemble(FsmDefinition<Locals>::Block init_e, FsmDefinition<Locals>::Block expand_b,
                                        FsmDefinition<Locals>::Block init_s, FsmDefinition<Locals>::Block shrink_b) {
    auto f1 = compose_single_loop<Locals>(std::move(init_e), std::move(expand_b), std::move(init_s),
                                          [](const Locals& z) { return grow_left(z) || grow_right(z); },
                                          {"INIT-E", "EXPAND", "INIT-S"});
    auto f2 = compose_single_loop<Locals>(nullptr, std::move(shrink_b), &SliceKernel::finish,
                                          [](const Locals& z) { return !(z.lp_xp > z.log_y); },
                                          {"INIT-S", "SHRINK", "DONE"});
    return compose_sequential(f1, f2);
  }

  void build() {
    const TargetPtr t = target_;
    const SliceParams p = params_;
    {
      auto fsm = assemble(
          [t, p](Locals& z) {
            start_expand(z, p);
            evaluate_pending(z, *t);
          },
          [t, p](Locals& z) {
            expand(z, p);
            evaluate_pending(z, *t);
          },
          [t](Locals& z) {
            start_shrink(z);
            evaluate_pending(z, *t);
          },
          [t](Locals& z) {
            shrink(z);
            evaluate_pending(z, *t);
          });
      fsm.set_block_evaluations({2, 2, 1, 1, 0});
      plain_ = std::make_shared<const FsmDefinition<Locals>>(std::move(fsm));
    }
    {
      auto flag = [](auto fn) {
        return [fn](Locals& z) {
          fn(z);
          z.do_computation = true;
        };
      };
      auto fsm = assemble(flag([p](Locals& z) { start_expand(z, p); }), flag([p](Locals& z) { expand(z, p); }),
                          flag(&SliceKernel::start_shrink), flag(&SliceKernel::shrink));
      fsm.set_block_evaluations({0, 0, 0, 0, 0});
      fsm.set_shared(SharedComputation<Locals>{[t](Locals& z) { evaluate_pending(z, *t); }, nullptr, 2.0});
      amortized_ = std::make_shared<const FsmDefinition<Locals>>(std::move(fsm));
    }
  }

  TargetPtr target_;
  SliceParams params_;
  std::shared_ptr<const FsmDefinition<Locals>> plain_, amortized_;
};

}  // namespace fsmcmc
