#pragma once

// Helpers shared by the kernels.

#include "fsmcmc/chain.hpp"
#include "fsmcmc/cost.hpp"
#include "fsmcmc/fsm.hpp"
#include "fsmcmc/lockstep.hpp"
#include "fsmcmc/targets.hpp"

#include <cmath>
#include <limits>
#include <memory>
#include <string>
#include <vector>

namespace fsmcmc {

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

/// Per-block overhead of the nominal cost model, in evaluation units.
inline constexpr double kBlockOverhead = 0.01;

namespace detail {

/// log(1 - exp(a)) for a <= 0.
inline double log1mexp(double a) {
  return a > -0.6931471805599453 ? std::log(-std::expm1(a)) : std::log1p(-std::exp(a));
}

inline double log_add_exp(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  const double hi = std::max(a, b);
  return hi + std::log1p(std::exp(-std::abs(a - b)));
}

/// Rejects NaN and +inf; -inf means outside the support and is allowed.
inline double checked(double v, const char* what) {
  if (std::isnan(v) || v == std::numeric_limits<double>::infinity()) {
    throw NumericalFault(std::string("non-finite ") + what);
  }
  return v;
}

}  // namespace detail

/// Cost model choices for a machine.
enum class CostModel { nominal, unit };

/// Per-block costs of a machine. nominal: overhead plus inline target
/// evaluations times the target's evaluation cost. unit: every block and the
/// shared computation cost 1.
template <class L>
CostParams model_costs(const FsmDefinition<L>& fsm, StepVariant variant, double eval_cost, CostModel model,
                       double alpha = 1.0) {
  std::vector<double> c(fsm.size());
  for (std::size_t k = 0; k < fsm.size(); ++k) {
    c[k] = model == CostModel::unit ? 1.0 : kBlockOverhead + fsm.block_evaluations()[k] * eval_cost;
  }
  double shared = 0.0;
  if (variant == StepVariant::amortized && fsm.shared()) {
    shared = model == CostModel::unit ? 1.0 : fsm.shared()->evaluations * eval_cost;
  }
  return CostParams(std::move(c), alpha, shared);
}

/// Standard-regime block model from the plain machine.
template <class L>
BlockModel block_model(const FsmDefinition<L>& plain, const CostParams& costs) {
  return BlockModel{costs, plain.block_evaluations(), plain.labels()};
}

}  // namespace fsmcmc
