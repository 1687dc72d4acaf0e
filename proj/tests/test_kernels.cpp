#include "fsmcmc/experiment.hpp"
#include "fsmcmc/kernels.hpp"
#include "fsmcmc/lockstep.hpp"

#include <gtest/gtest.h>

#include <array>
#include <cmath>
#include <numbers>

using namespace fsmcmc;

namespace {

template <class K>
using MachinePtr = std::shared_ptr<const FsmDefinition<typename K::Locals>>;

/// Standard and FSM runs from the same initial states must agree bit for bit.
template <class K>
void expect_equivalent(const K& kernel, const MachinePtr<K>& fsm, StepVariant v, std::uint64_t seed,
                       std::size_t m = 4, std::size_t n = 60) {
  const auto init = initial_states(kernel, seed, m, 0, 1.0);
  const auto plain = kernel.plain_fsm();
  const BlockModel model = block_model(*plain, model_costs(*plain, StepVariant::plain, 1.0, CostModel::unit));
  const RunResult s = run_standard_batched(kernel, std::span<const ChainState>(init), n, model);
  const FsmSpec<typename K::Locals> spec{fsm, model_costs(*fsm, v, 1.0, CostModel::unit), "fsm"};
  FsmDriverOptions opts;
  opts.debug_cache = true;
  const RunResult f = run_fsm_batched(kernel, spec, std::span<const ChainState>(init), n, v, opts);
  EXPECT_EQ(f.samples.mismatches(s.samples), 0u) << kernel.name() << "/" << to_string(v) << " seed " << seed;
  EXPECT_EQ(f.ledger.iter_counts, s.ledger.iter_counts);
  EXPECT_EQ(f.ledger.native_evaluations, s.ledger.native_evaluations);
  for (std::size_t j = 0; j < m; ++j) {
    EXPECT_EQ(f.final_states[j].rng, s.final_states[j].rng);
    EXPECT_EQ(f.final_states[j].sample_index, n);
  }
}

/// Plain stepping visits exactly the blocks the monolithic program runs.
template <class K>
void expect_block_traces(const K& kernel, std::uint64_t seed, std::size_t samples = 40) {
  ChainState s = initial_states(kernel, seed, 1, 0, 1.0)[0];
  auto z = kernel.make_locals(s);
  const auto& fsm = *kernel.plain_fsm();
  StateIndex k = fsm.initial();
  for (std::size_t i = 0; i < samples; ++i) {
    const SampleResult r = kernel.sample(s);
    s = r.state;
    std::vector<StateIndex> path;
    for (;;) {
      path.push_back(k);
      const StepOutcome o = step(fsm, k, z);
      k = o.state;
      if (o.is_sample) break;
    }
    ASSERT_EQ(path, expand_block_trace(K::shape, r.trace)) << kernel.name() << " sample " << i;
    EXPECT_EQ(z.completed, r.trace);
    EXPECT_EQ(iteration_count(K::shape, z.completed), iteration_count(K::shape, r.trace));
    EXPECT_EQ(z.x, s.x);
  }
}

TargetPtr std_normal(Eigen::Index d = 1) { return gaussian_target(Vector::Zero(d), Matrix::Identity(d, d)); }

TargetPtr conjugate2() {
  Vector mu(2);
  mu << 1.0, -1.0;
  return conjugate_gaussian_target(Matrix::Identity(2, 2), mu, 0.5 * Matrix::Identity(2, 2));
}

}  // namespace

TEST(Equivalence, DrmhAllMachines) {
  const DrmhKernel k(std_normal(2), DrmhParams{100, 0.5});
  for (std::uint64_t seed : {0, 1}) {
    expect_equivalent(k, k.plain_fsm(), StepVariant::plain, seed);
    expect_equivalent(k, k.plain_fsm(), StepVariant::bundled, seed);
    expect_equivalent(k, k.amortized_fsm(), StepVariant::amortized, seed);
    expect_equivalent(k, k.split_fsm(), StepVariant::plain, seed);
    expect_equivalent(k, k.split_fsm(), StepVariant::bundled, seed);
  }
}

TEST(Equivalence, SliceAllMachines) {
  const SliceKernel k(correlated_mog_target(2, 0.5, {-2, 2}), SliceParams{1.0, 100});
  for (std::uint64_t seed : {0, 1}) {
    expect_equivalent(k, k.plain_fsm(), StepVariant::plain, seed);
    expect_equivalent(k, k.plain_fsm(), StepVariant::bundled, seed);
    expect_equivalent(k, k.amortized_fsm(), StepVariant::amortized, seed);
  }
}

TEST(Equivalence, EllipticalAllMachines) {
  const EllipticalKernel k(conjugate2());
  for (std::uint64_t seed : {0, 1}) {
    expect_equivalent(k, k.plain_fsm(), StepVariant::plain, seed);
    expect_equivalent(k, k.plain_fsm(), StepVariant::bundled, seed);
    expect_equivalent(k, k.amortized_fsm(), StepVariant::amortized, seed);
  }
}

TEST(Equivalence, NutsAllMachines) {
  const NutsKernel k(correlated_mog_target(2, 0.5, {-1, 1}), NutsParams{0.2, 6});
  for (std::uint64_t seed : {0, 1}) {
    expect_equivalent(k, k.plain_fsm(), StepVariant::plain, seed, 4, 30);
    expect_equivalent(k, k.plain_fsm(), StepVariant::bundled, seed, 4, 30);
    expect_equivalent(k, k.amortized_fsm(), StepVariant::amortized, seed, 4, 30);
  }
}

TEST(BlockTrace, PlainStepsFollowMonolithicProgram) {
  expect_block_traces(DrmhKernel(std_normal(), DrmhParams{100, 1.0}), 3);
  expect_block_traces(SliceKernel(std_normal(2), SliceParams{0.5, 10}), 3);
  expect_block_traces(EllipticalKernel(conjugate2()), 3);
  expect_block_traces(NutsKernel(std_normal(2), NutsParams{0.3, 5}), 3);
}

TEST(Drmh, AcceptanceRule) {
  EXPECT_EQ(drmh_log_accept(-3.0, -1.0, kNegInf), 0.0);  // uphill
  EXPECT_EQ(drmh_log_accept(-1.0, -1.0, -0.5), 0.0);
  EXPECT_NEAR(drmh_log_accept(-1.0, -2.0, kNegInf), -1.0, 1e-15);  // plain MH
  EXPECT_EQ(drmh_log_accept(-1.0, -2.0, -2.0), kNegInf);           // not above the earlier maximum
  // (e^-1.5 - e^-2) / (e^-1 - e^-2)
  const double expect = std::log((std::exp(-1.5) - std::exp(-2.0)) / (std::exp(-1.0) - std::exp(-2.0)));
  EXPECT_NEAR(drmh_log_accept(-1.0, -1.5, -2.0), expect, 1e-14);
}

TEST(Drmh, SingleTryIsRandomWalkMetropolis) {
  const auto t = gaussian_target(Vector::Zero(1), Matrix::Identity(1, 1));
  const double scale = 0.8;
  const DrmhKernel k(t, DrmhParams{1, scale});
  ChainState s = k.init(Vector::Constant(1, 0.3), make_key(12));
  Vector x = s.x;
  RngKey key = s.rng;
  for (int i = 0; i < 500; ++i) {
    s = k.sample(s).state;
    Vector z;
    std::tie(z, key) = standard_normal_vec(key, 1);
    const Vector y = x + scale * z;
    double u;
    std::tie(u, key) = uniform(key);
    if (u < std::exp(std::min(0.0, t->log_density(y) - t->log_density(x)))) x = y;
    ASSERT_EQ(s.x, x) << "step " << i;
  }
}

TEST(Drmh, DetailedBalanceOnRing) {
  // Ring of 5 states, proposals ±1 with probability ½ chaining from the last
  // rejected point, M = 3 tries. Exact transition matrix by path enumeration.
  const std::array<double, 5> pi{0.1, 0.3, 0.15, 0.25, 0.2};
  const int S = 5, M = 3;
  Matrix T = Matrix::Zero(S, S);
  auto rec = [&](auto&& self, int x, int y, int depth, double prob, double log_max) -> void {
    if (depth == M) {
      T(x, x) += prob;
      return;
    }
    for (int step : {-1, 1}) {
      const int yn = (y + step + S) % S;
      const double p = 0.5 * prob;
      const double a = std::exp(drmh_log_accept(std::log(pi[x]), std::log(pi[yn]), log_max));
      T(x, yn) += p * a;
      self(self, x, yn, depth + 1, p * (1 - a), std::max(log_max, std::log(pi[yn])));
    }
  };
  for (int x = 0; x < S; ++x) rec(rec, x, x, 0, 1.0, kNegInf);
  for (int x = 0; x < S; ++x) {
    EXPECT_NEAR(T.row(x).sum(), 1.0, 1e-14);
    for (int y = 0; y < S; ++y) EXPECT_NEAR(pi[x] * T(x, y), pi[y] * T(y, x), 1e-15);
  }
  Vector p(S);
  for (int i = 0; i < S; ++i) p[i] = pi[i];
  EXPECT_LT((T.transpose() * p - p).norm(), 1e-15);
}

TEST(Drmh, TriesBoundedAndCounted) {
  const DrmhKernel k(std_normal(), DrmhParams{5, 50.0});
  ChainState s = k.init(Vector::Zero(1), make_key(1));
  for (int i = 0; i < 200; ++i) {
    const SampleResult r = k.sample(s);
    EXPECT_GE(r.trace.loops[0], 1u);
    EXPECT_LE(r.trace.loops[0], 5u);
    EXPECT_EQ(r.evaluations, r.trace.loops[0]);
    s = r.state;
  }
  EXPECT_THROW(DrmhKernel(std_normal(), DrmhParams{0, 0.1}), std::invalid_argument);
  EXPECT_THROW(DrmhKernel(std_normal(), DrmhParams{10, 0.0}), std::invalid_argument);
}

TEST(Slice, NoExpansionWhenCapIsZero) {
  const SliceKernel k(std_normal(), SliceParams{0.1, 0});
  ChainState s = k.init(Vector::Zero(1), make_key(2));
  for (int i = 0; i < 300; ++i) {
    const SampleResult r = k.sample(s);
    EXPECT_EQ(r.trace.loops[0], 0u);
    s = r.state;
  }
  // Plain path: INIT-E straight to INIT-S.
  auto z = k.make_locals(k.init(Vector::Zero(1), make_key(2)));
  const auto& fsm = *k.plain_fsm();
  const StepOutcome o = step(fsm, fsm.initial(), z);
  EXPECT_EQ(o.state, 2u);
}

TEST(Slice, WideWindowOnUnitInterval) {
  const SliceKernel k(uniform_box_target(1, 0.0, 1.0), SliceParams{10.0, 100});
  ChainState s = k.init(Vector::Constant(1, 0.5), make_key(4));
  double sum = 0.0, sq = 0.0;
  const int n = 20'000;
  for (int i = 0; i < n; ++i) {
    const SampleResult r = k.sample(s);
    EXPECT_LE(r.trace.loops[0], 1u);
    s = r.state;
    ASSERT_GE(s.x[0], 0.0);
    ASSERT_LE(s.x[0], 1.0);
    sum += s.x[0];
    sq += s.x[0] * s.x[0];
  }
  EXPECT_NEAR(sum / n, 0.5, 0.01);
  EXPECT_NEAR(sq / n - (sum / n) * (sum / n), 1.0 / 12.0, 0.005);
}

TEST(Slice, SharedComputationChargesTwoEvaluations) {
  const SliceKernel k(std_normal(), SliceParams{});
  ASSERT_TRUE(k.amortized_fsm()->shared());
  EXPECT_DOUBLE_EQ(k.amortized_fsm()->shared()->evaluations, 2.0);
  EXPECT_THROW(SliceKernel(std_normal(), SliceParams{0.0, 10}), std::invalid_argument);
}

TEST(Elliptical, PurePriorNeverShrinks) {
  const EllipticalKernel k(std_normal(3));
  ChainState s = k.init(Vector::Zero(3), make_key(5));
  for (int i = 0; i < 500; ++i) {
    const SampleResult r = k.sample(s);
    EXPECT_EQ(r.trace.loops[0], 0u);
    EXPECT_EQ(r.evaluations, 1u);
    s = r.state;
  }
}

TEST(Elliptical, BracketShrinksAroundTheta) {
  Vector mu(2);
  mu << 3.0, -3.0;
  const EllipticalKernel k(conjugate_gaussian_target(Matrix::Identity(2, 2), mu, 0.2 * Matrix::Identity(2, 2)));
  auto z = k.make_locals(k.init(mu, make_key(6)));
  const auto& fsm = *k.plain_fsm();
  StateIndex st = fsm.initial();
  std::size_t shrinks = 0;
  double width = 0.0;
  for (int t = 0; t < 3000; ++t) {
    const StateIndex entered = st;
    st = step(fsm, st, z).state;
    if (entered == 0) {
      width = z.theta_max - z.theta_min;
      EXPECT_NEAR(width, 2 * std::numbers::pi, 1e-12);
    }
    if (entered == 0 || entered == 1) {
      EXPECT_GE(z.theta, z.theta_min);
      EXPECT_LE(z.theta, z.theta_max);
    }
    if (entered == 1) {
      // The first shrink lands on the endpoint θ itself (θ and θ - 2π are
      // the same point), so only later shrinks must narrow the bracket.
      const double w = z.theta_max - z.theta_min;
      if (z.trace.loops[0] == 1) {
        EXPECT_LE(w, width);
      } else {
        EXPECT_LT(w, width);
      }
      width = w;
      ++shrinks;
    }
  }
  EXPECT_GT(shrinks, 100u);
}

TEST(Elliptical, AmortizedUsesFewerLockstepEvaluations) {
  const EllipticalKernel k(gp_hyperparameter_target(synthetic_gp_data(10)));
  const auto init = initial_states(k, 7, 8, 0, 1.0);
  FsmDriverOptions opts;
  opts.chunk = 1;
  const auto p = k.plain_fsm();
  const auto a = k.amortized_fsm();
  const RunResult rp = run_fsm_batched(k, FsmSpec<EllipticalLocals>{p, CostParams({1, 1, 1}), "p"},
                                       std::span<const ChainState>(init), 40, StepVariant::plain, opts);
  const RunResult ra = run_fsm_batched(k, FsmSpec<EllipticalLocals>{a, CostParams({1, 1, 1}, 1.0, 1.0), "a"},
                                       std::span<const ChainState>(init), 40, StepVariant::amortized, opts);
  EXPECT_EQ(rp.samples, ra.samples);
  EXPECT_EQ(rp.ledger.native_evaluations, ra.ledger.native_evaluations);
  ASSERT_GT(std::accumulate(rp.ledger.iter_counts.begin(), rp.ledger.iter_counts.end(), 0u), 0u);
  EXPECT_LT(ra.ledger.lockstep_evaluations, rp.ledger.lockstep_evaluations);
  EXPECT_THROW(EllipticalKernel(uniform_box_target(1, 0, 1)), std::invalid_argument);
}

TEST(Nuts, DepthOneTakesAtMostTwoLeapfrogs) {
  const NutsKernel k(std_normal(2), NutsParams{0.1, 1});
  ChainState s = k.init(Vector::Zero(2), make_key(8));
  for (int i = 0; i < 200; ++i) {
    const SampleResult r = k.sample(s);
    EXPECT_LE(iteration_count(NutsKernel::shape, r.trace), 2u);
    EXPECT_LE(r.trace.loops.size(), 1u);
    s = r.state;
  }
}

TEST(Nuts, DepthAndStepCounterInvariants) {
  const NutsKernel k(correlated_mog_target(3, 0.9, {0}), NutsParams{0.05, 6});
  auto z = k.make_locals(k.init(Vector::Zero(3), make_key(9)));
  const auto& fsm = *k.plain_fsm();
  StateIndex st = fsm.initial();
  std::size_t samples = 0;
  while (samples < 50) {
    const StepOutcome o = step(fsm, st, z);
    st = o.state;
    EXPECT_LE(z.depth, 6u);
    EXPECT_EQ(z.leapfrogs, iteration_count(NutsKernel::shape, z.trace));
    samples += o.is_sample;
  }
  EXPECT_THROW(NutsKernel(uniform_box_target(1, 0, 1), NutsParams{}), std::invalid_argument);
  EXPECT_THROW(NutsKernel(std_normal(), NutsParams{0.1, 0}), std::invalid_argument);
}

TEST(Faults, NonFiniteDensityNamesTheBlock) {
  auto t = std::make_shared<TargetModel>(*std_normal());
  t->log_density = [](const Vector& x) { return x[0] > 0.3 ? std::nan("") : -0.5 * x.squaredNorm(); };
  const DrmhKernel k(t, DrmhParams{100, 1.0});
  std::vector<ChainState> init{k.init(Vector::Zero(1), make_key(1))};
  const FsmSpec<DrmhLocals> spec{k.plain_fsm(), CostParams({1, 1, 1}), "p"};
  try {
    run_fsm_batched(k, spec, std::span<const ChainState>(init), 100, StepVariant::plain);
    FAIL() << "expected RunError";
  } catch (const RunError& e) {
    EXPECT_EQ(e.chain(), 0u);
    EXPECT_EQ(e.label(), "PROPOSE");
  }
  const BlockModel model{CostParams({1, 1, 1}), {0, 1, 0}, {"INIT", "PROPOSE", "DONE"}};
  EXPECT_THROW(run_standard_batched(k, std::span<const ChainState>(init), 100, model), RunError);
}
