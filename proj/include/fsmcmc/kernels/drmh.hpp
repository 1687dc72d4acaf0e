#pragma once

// Delayed-rejection Metropolis-Hastings with a random-walk chain of
// proposals: try i proposes y_i = y_{i-1} + scale * z and accepts with
// probability min{1, [π(y_i) - M_i]⁺ / [π(x) - M_i]}, where M_i is the largest
// density among the rejected y_1..y_{i-1} (M_1 = 0).

#include "fsmcmc/kernels/common.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <stdexcept>
#include <string>
#include <tuple>

namespace fsmcmc {

struct DrmhParams {
  std::uint32_t max_tries = 100;
  double scale = 0.1;
};

/// log of the acceptance probability at one stage. log_max is log M_i.
inline double drmh_log_accept(double lpx, double lpy, double log_max) {
  if (lpy >= lpx) return 0.0;
  if (!(lpy > log_max)) return kNegInf;
  if (log_max == kNegInf) return lpy - lpx;
  return lpy + detail::log1mexp(log_max - lpy) - lpx - detail::log1mexp(log_max - lpx);
}

struct DrmhLocals : LocalsBase {
  Vector y;
  Vector noise;
  double lpy = kNegInf;
  double log_max = kNegInf;
  std::uint32_t tries = 0;
  bool accepted = false;
  bool pending = false;  // amortized form: a proposal awaits its decision
};

class DrmhKernel {
 public:
  using Locals = DrmhLocals;
  static constexpr LoopShape shape = LoopShape::single;

  DrmhKernel(TargetPtr target, DrmhParams params) : target_(std::move(target)), params_(params) {
    if (!target_) throw std::invalid_argument("drmh: no target");
    if (params_.max_tries < 1) throw std::invalid_argument("drmh: max_tries must be >= 1");
    if (!(params_.scale > 0.0)) throw std::invalid_argument("drmh: proposal scale must be positive");
    build();
  }

  std::string name() const { return "drmh"; }
  const TargetModel& target() const { return *target_; }
  const DrmhParams& params() const { return params_; }

  ChainState init(Vector x, RngKey key) const {
    ChainState s;
    s.log_density = detail::checked(target_->log_density(x), "log-density at the initial point");
    s.x = std::move(x);
    s.rng = key;
    return s;
  }

  SampleResult sample(const ChainState& s) const {
    SampleResult r{s, SampleTrace{{0}}, 0, 0};
    ChainState& c = r.state;
    Vector y = c.x;
    double log_max = kNegInf;
    std::uint32_t tries = 0;
    bool accepted = false;
    while (!accepted && tries < params_.max_tries) {
      Vector z;
      std::tie(z, c.rng) = standard_normal_vec(c.rng, c.x.size());
      y += params_.scale * z;
      const double lpy = detail::checked(target_->log_density(y), "log-density");
      ++r.evaluations;
      ++tries;
      double u;
      std::tie(u, c.rng) = uniform(c.rng);
      if (u < std::exp(drmh_log_accept(c.log_density, lpy, log_max))) {
        accepted = true;
        c.x = y;
        c.log_density = lpy;
      } else {
        log_max = std::max(log_max, lpy);
      }
    }
    r.trace.loops[0] = tries;
    ++c.sample_index;
    return r;
  }

  Locals make_locals(const ChainState& s) const {
    Locals z;
    static_cast<ChainState&>(z) = s;
    z.y = s.x;
    z.noise = Vector::Zero(s.x.size());
    z.trace.loops = {0};
    return z;
  }

  /// INIT, PROPOSE, DONE.
  std::shared_ptr<const FsmDefinition<Locals>> plain_fsm() const { return plain_; }
  /// PROPOSE split into NOISE, EVAL, ACCEPT, UPDATE (K = 6).
  std::shared_ptr<const FsmDefinition<Locals>> split_fsm() const { return split_; }
  /// PROPOSE decides on the cached density of the pending proposal and
  /// draws the next one; the density is the shared computation.
  std::shared_ptr<const FsmDefinition<Locals>> amortized_fsm() const { return amortized_; }

 private:
  // Block helpers are static so the machines capture values, not the kernel.
  static void propose(Locals& z, double scale) {
    std::tie(z.noise, z.rng) = standard_normal_vec(z.rng, z.x.size());
    z.y += scale * z.noise;
    ++z.tries;
  }

  static void evaluate(Locals& z, const TargetModel& t) {
    z.lpy = detail::checked(t.log_density(z.y), "log-density");
    ++z.evaluations;
  }

  static void decide(Locals& z) {
    double u;
    std::tie(u, z.rng) = uniform(z.rng);
    if (u < std::exp(drmh_log_accept(z.log_density, z.lpy, z.log_max))) {
      z.accepted = true;
    } else {
      z.log_max = std::max(z.log_max, z.lpy);
    }
  }

  static void reset(Locals& z) {
    z.y = z.x;
    z.log_max = kNegInf;
    z.tries = 0;
    z.accepted = false;
    z.pending = false;
    z.trace.loops.assign(1, 0);
  }

  static void finish(Locals& z) {
    if (z.accepted) {
      z.x = z.y;
      z.log_density = z.lpy;
    }
    finish_sample(z);
  }

  void build() {
    const std::uint32_t M = params_.max_tries;
    const double scale = params_.scale;
    const TargetPtr t = target_;
    auto more = [M](const Locals& z) { return !z.accepted && z.tries < M; };

    {
      auto fsm = compose_single_loop<Locals>(
          &DrmhKernel::reset,
          [t, scale](Locals& z) {
            propose(z, scale);
            evaluate(z, *t);
            decide(z);
            ++z.trace.loops[0];
          },
          &DrmhKernel::finish, more, {"INIT", "PROPOSE", "DONE"});
      fsm.set_block_evaluations({0, 1, 0});
      plain_ = std::make_shared<const FsmDefinition<Locals>>(std::move(fsm));
    }

    {
      enum : StateIndex { kInit, kNoise, kEval, kAccept, kUpdate, kDone };
      std::vector<FsmDefinition<Locals>::Block> blocks{
          &DrmhKernel::reset,
          [scale](Locals& z) {
            propose(z, scale);
            ++z.trace.loops[0];
          },
          [t](Locals& z) { evaluate(z, *t); },
          [](Locals& z) {
            double u;
            std::tie(u, z.rng) = uniform(z.rng);
            z.accepted = u < std::exp(drmh_log_accept(z.log_density, z.lpy, z.log_max));
          },
          [](Locals& z) { z.log_max = std::max(z.log_max, z.lpy); },
          &DrmhKernel::finish};
      auto delta = [M](StateIndex k, const Locals& z) -> StateIndex {
        switch (k) {
          case kInit:
            return z.tries < M ? kNoise : kDone;
          case kNoise:
            return kEval;
          case kEval:
            return kAccept;
          case kAccept:
            return z.accepted ? kDone : kUpdate;
          case kUpdate:
            return z.tries < M ? kNoise : kDone;
          default:
            return kInit;
        }
      };
      FsmDefinition<Locals> fsm({"INIT", "NOISE", "EVAL", "ACCEPT", "UPDATE", "DONE"}, std::move(blocks), delta,
                                {{kInit, kNoise},
                                 {kInit, kDone},
                                 {kNoise, kEval},
                                 {kEval, kAccept},
                                 {kAccept, kDone},
                                 {kAccept, kUpdate},
                                 {kUpdate, kNoise},
                                 {kUpdate, kDone},
                                 {kDone, kInit}});
      fsm.set_block_evaluations({0, 0, 1, 0, 0, 0});
      split_ = std::make_shared<const FsmDefinition<Locals>>(std::move(fsm));
    }

    {
      auto fsm = compose_single_loop<Locals>(
          [scale](Locals& z) {
            reset(z);
            propose(z, scale);
            z.pending = true;
            z.do_computation = true;
          },
          [scale, M](Locals& z) {
            decide(z);
            z.pending = false;
            ++z.trace.loops[0];
            if (!z.accepted && z.tries < M) {
              propose(z, scale);
              z.pending = true;
              z.do_computation = true;
            }
          },
          &DrmhKernel::finish, [](const Locals& z) { return z.pending; }, {"INIT", "PROPOSE", "DONE"});
      fsm.set_block_evaluations({0, 0, 0});
      fsm.set_shared(SharedComputation<Locals>{
          [t](Locals& z) { evaluate(z, *t); },
          [t](const Locals& z) { return !z.pending || z.lpy == t->log_density(z.y); }, 1.0});
      amortized_ = std::make_shared<const FsmDefinition<Locals>>(std::move(fsm));
    }
  }

  TargetPtr target_;
  DrmhParams params_;
  std::shared_ptr<const FsmDefinition<Locals>> plain_, split_, amortized_;
};

}  // namespace fsmcmc
