#pragma once

// Elliptical slice sampling for p(x) ∝ f(x) N(x | 0, Σ). The chain caches
// log f(x) in ChainState::log_density.

#include "fsmcmc/kernels/common.hpp"

#include <cmath>
#include <cstdint>
#include <memory>
#include <numbers>
#include <stdexcept>
#include <string>
#include <tuple>

namespace fsmcmc {

/// Shrinks beyond this count mean the bracket collapsed without meeting the
/// threshold, which a continuous f cannot do.
inline constexpr std::uint32_t kEllipticalShrinkCap = 200;

struct EllipticalLocals : LocalsBase {
  Vector nu;
  Vector xp;              // proposal on the ellipse
  double log_y = 0.0;     // log threshold
  double theta = 0.0;
  double theta_min = 0.0;
  double theta_max = 0.0;
  double lfp = kNegInf;   // cached log f(xp)
  bool lfp_valid = false;
};

class EllipticalKernel {
 public:
  using Locals = EllipticalLocals;
  static constexpr LoopShape shape = LoopShape::single;

  explicit EllipticalKernel(TargetPtr target) : target_(std::move(target)) {
    if (!target_) throw std::invalid_argument("elliptical: no target");
    if (!target_->gaussian_prior) throw std::invalid_argument("elliptical: target has no Gaussian-prior decomposition");
    build();
  }

  std::string name() const { return "elliptical"; }
  const TargetModel& target() const { return *target_; }

  ChainState init(Vector x, RngKey key) const {
    ChainState s;
    s.log_density = detail::checked(loglik(*target_, x), "log f at the initial point");
    s.x = std::move(x);
    s.rng = key;
    return s;
  }

  SampleResult sample(const ChainState& s) const {
    SampleResult r{s, SampleTrace{{0}}, 0, 0};
    ChainState& c = r.state;
    const Matrix& L = target_->gaussian_prior->chol;
    Vector nu;
    std::tie(nu, c.rng) = normal_vec(c.rng, c.x.size(), L);
    double u;
    std::tie(u, c.rng) = uniform(c.rng);
    const double log_y = c.log_density + std::log1p(-u);  // 1 - u lies in (0, 1]
    std::tie(u, c.rng) = uniform(c.rng);
    double theta = 2.0 * std::numbers::pi * u;
    double lo = theta - 2.0 * std::numbers::pi;
    double hi = theta;
    Vector xp = c.x * std::cos(theta) + nu * std::sin(theta);
    double lfp = detail::checked(loglik(*target_, xp), "log f");
    ++r.evaluations;
    std::uint32_t shrinks = 0;
    while (lfp < log_y) {
      if (++shrinks > kEllipticalShrinkCap) throw NumericalFault("elliptical: shrink cap exceeded");
      if (theta < 0.0) {
        lo = theta;
      } else {
        hi = theta;
      }
      std::tie(u, c.rng) = uniform(c.rng);
      theta = lo + u * (hi - lo);
      xp = c.x * std::cos(theta) + nu * std::sin(theta);
      lfp = detail::checked(loglik(*target_, xp), "log f");
      ++r.evaluations;
    }
    c.x = std::move(xp);
    c.log_density = lfp;
    ++c.sample_index;
    r.trace.loops[0] = shrinks;
    return r;
  }

  Locals make_locals(const ChainState& s) const {
    Locals z;
    static_cast<ChainState&>(z) = s;
    z.nu = Vector::Zero(s.x.size());
    z.xp = s.x;
    z.trace.loops = {0};
    return z;
  }

  /// INIT, SHRINK, DONE with log f evaluated inside INIT and SHRINK.
  std::shared_ptr<const FsmDefinition<Locals>> plain_fsm() const { return plain_; }
  /// Same blocks with log f as the shared computation.
  std::shared_ptr<const FsmDefinition<Locals>> amortized_fsm() const { return amortized_; }

 private:
  static double loglik(const TargetModel& t, const Vector& x) { return t.gaussian_prior->log_likelihood(x); }

  static void start(Locals& z, const Matrix& L) {
    std::tie(z.nu, z.rng) = normal_vec(z.rng, z.x.size(), L);
    double u;
    std::tie(u, z.rng) = uniform(z.rng);
    z.log_y = z.log_density + std::log1p(-u);
    std::tie(u, z.rng) = uniform(z.rng);
    z.theta = 2.0 * std::numbers::pi * u;
    z.theta_min = z.theta - 2.0 * std::numbers::pi;
    z.theta_max = z.theta;
    z.xp = z.x * std::cos(z.theta) + z.nu * std::sin(z.theta);
    z.lfp_valid = false;
    z.trace.loops.assign(1, 0);
  }

  static void shrink(Locals& z) {
    if (++z.trace.loops[0] > kEllipticalShrinkCap) throw NumericalFault("elliptical: shrink cap exceeded");
    if (z.theta < 0.0) {
      z.theta_min = z.theta;
    } else {
      z.theta_max = z.theta;
    }
    double u;
    std::tie(u, z.rng) = uniform(z.rng);
    z.theta = z.theta_min + u * (z.theta_max - z.theta_min);
    z.xp = z.x * std::cos(z.theta) + z.nu * std::sin(z.theta);
    z.lfp_valid = false;
  }

  static void evaluate(Locals& z, const TargetModel& t) {
    z.lfp = detail::checked(loglik(t, z.xp), "log f");
    z.lfp_valid = true;
    ++z.evaluations;
  }

  static void finish(Locals& z) {
    z.x = z.xp;
    z.log_density = z.lfp;
    finish_sample(z);
  }

  void build() {
    const TargetPtr t = target_;
    const Matrix L = t->gaussian_prior->chol;
    auto more = [](const Locals& z) { return z.lfp < z.log_y; };
    {
      auto fsm = compose_single_loop<Locals>(
          [t, L](Locals& z) {
            start(z, L);
            evaluate(z, *t);
          },
          [t](Locals& z) {
            shrink(z);
            evaluate(z, *t);
          },
          &EllipticalKernel::finish, more, {"INIT", "SHRINK", "DONE"});
      fsm.set_block_evaluations({1, 1, 0});
      plain_ = std::make_shared<const FsmDefinition<Locals>>(std::move(fsm));
    }
    {
      auto fsm = compose_single_loop<Locals>(
          [L](Locals& z) {
            start(z, L);
            z.do_computation = true;
          },
          [](Locals& z) {
            shrink(z);
            z.do_computation = true;
          },
          &EllipticalKernel::finish, more, {"INIT", "SHRINK", "DONE"});
      fsm.set_block_evaluations({0, 0, 0});
      fsm.set_shared(SharedComputation<Locals>{
          [t](Locals& z) { evaluate(z, *t); },
          [t](const Locals& z) { return !z.lfp_valid || z.lfp == loglik(*t, z.xp); }, 1.0});
      amortized_ = std::make_shared<const FsmDefinition<Locals>>(std::move(fsm));
    }
  }

  TargetPtr target_;
  std::shared_ptr<const FsmDefinition<Locals>> plain_, amortized_;
};

}  // namespace fsmcmc
