#include "fsmcmc/experiment.hpp"
#include "fsmcmc/kernels.hpp"
#include "fsmcmc/lockstep.hpp"

#include <gtest/gtest.h>

#include <memory>
#include <vector>

using namespace fsmcmc;

namespace {

/// Single-loop kernel whose loop count for (sample i, chain j) comes from a
/// table; x[0] holds the chain id. The body can be told to fail.
using Table = std::vector<std::vector<std::uint32_t>>;

struct ScriptedLocals : LocalsBase {
  std::uint32_t remaining = 0;
};

class ScriptedKernel {
 public:
  using Locals = ScriptedLocals;
  static constexpr LoopShape shape = LoopShape::single;

  ScriptedKernel(std::vector<std::vector<std::uint32_t>> table, int fail_chain = -1, std::uint64_t fail_sample = 0)
      : table_(std::make_shared<const std::vector<std::vector<std::uint32_t>>>(std::move(table))),
        fail_chain_(fail_chain),
        fail_sample_(fail_sample) {
    const auto tbl = table_;
    const int fc = fail_chain_;
    const std::uint64_t fs = fail_sample_;
    auto fsm = compose_single_loop<Locals>(
        [tbl](Locals& z) {
          z.remaining = lookup(*tbl, z);
          z.trace.loops.assign(1, 0);
        },
        [fc, fs](Locals& z) {
          if (static_cast<int>(z.x[0]) == fc && z.sample_index == fs) throw NumericalFault("scripted failure");
          --z.remaining;
          ++z.trace.loops[0];
          ++z.evaluations;
        },
        [](Locals& z) { finish_sample(z); }, [](const Locals& z) { return z.remaining > 0; },
        {"INIT", "BODY", "DONE"});
    fsm.set_block_evaluations({0, 1, 0});
    fsm_ = std::make_shared<const FsmDefinition<Locals>>(std::move(fsm));
  }

  SampleResult sample(const ChainState& s) const {
    SampleResult r{s, SampleTrace{{0}}, 0, 0};
    const std::uint32_t n = lookup(*table_, s);
    for (std::uint32_t k = 0; k < n; ++k) {
      if (static_cast<int>(s.x[0]) == fail_chain_ && s.sample_index == fail_sample_) {
        throw NumericalFault("scripted failure");
      }
      ++r.trace.loops[0];
      ++r.evaluations;
    }
    ++r.state.sample_index;
    return r;
  }

  Locals make_locals(const ChainState& s) const {
    Locals z;
    static_cast<ChainState&>(z) = s;
    z.trace.loops = {0};
    return z;
  }

  std::shared_ptr<const FsmDefinition<Locals>> plain_fsm() const { return fsm_; }

 private:
  static std::uint32_t lookup(const std::vector<std::vector<std::uint32_t>>& t, const ChainState& s) {
    const auto& row = t[s.sample_index % t.size()];
    return row[static_cast<std::size_t>(s.x[0]) % row.size()];
  }

  std::shared_ptr<const std::vector<std::vector<std::uint32_t>>> table_;
  int fail_chain_;
  std::uint64_t fail_sample_;
  std::shared_ptr<const FsmDefinition<Locals>> fsm_;
};

std::vector<ChainState> chain_ids(std::size_t m) {
  std::vector<ChainState> out(m);
  for (std::size_t j = 0; j < m; ++j) {
    out[j].x = Vector::Constant(1, static_cast<double>(j));
    out[j].rng = make_key(j);
  }
  return out;
}

BlockModel loop_only_model() { return BlockModel{CostParams({0.0, 1.0, 0.0}), {0, 1, 0}, {"INIT", "BODY", "DONE"}}; }

std::vector<ChainState> drmh_states(const DrmhKernel& k, std::uint64_t seed, std::size_t m) {
  return initial_states(k, seed, m, 0, 1.0);
}

DrmhKernel standard_drmh() {
  return DrmhKernel(gaussian_target(Vector::Zero(1), Matrix::Identity(1, 1)), DrmhParams{100, 0.1});
}

}  // namespace

TEST(StandardDriver, SynchronizedCostOfHandMatrix) {
  // N = [[3,1],[1,3]] (rows: samples), c_rest = 0, c_loop = 1: 3 + 3.
  ScriptedKernel k({{3, 1}, {1, 3}});
  const auto init = chain_ids(2);
  const RunResult r = run_standard_batched(k, std::span<const ChainState>(init), 2, loop_only_model());
  EXPECT_DOUBLE_EQ(r.ledger.charged_cost, 6.0);
  EXPECT_EQ(r.ledger.iter_counts, (std::vector<std::uint32_t>{3, 1, 1, 3}));
  EXPECT_DOUBLE_EQ(synchronized_iterations({{3, 1}, {1, 3}}), 6.0);
  EXPECT_DOUBLE_EQ(desynchronized_iterations({{3, 1}, {1, 3}}), 4.0);
}

TEST(StandardDriver, SingleChainCostIsRestPlusLoopTimesN) {
  const DrmhKernel k = standard_drmh();
  const auto init = drmh_states(k, 3, 1);
  const CostParams c({0.5, 2.0, 0.25});
  const RunResult r = run_standard_batched(k, std::span<const ChainState>(init), 500,
                                           BlockModel{c, {0, 1, 0}, {"INIT", "PROPOSE", "DONE"}});
  double expected = 0.0;
  for (std::size_t i = 0; i < 500; ++i) expected += 0.75 + 2.0 * r.ledger.N(i, 0);
  EXPECT_NEAR(r.ledger.charged_cost, expected, 1e-9 * expected);
}

TEST(StandardDriver, MaxExceedsMeanForManyDrmhChains) {
  const DrmhKernel k = standard_drmh();
  const auto init = drmh_states(k, 1, 64);
  const RunResult r = run_standard_batched(k, std::span<const ChainState>(init), 10000,
                                           block_model(*k.plain_fsm(), model_costs(*k.plain_fsm(), StepVariant::plain,
                                                                                   1.0, CostModel::nominal)));
  EXPECT_GT(r.ledger.mean_max_N(), r.ledger.mean_N());
}

TEST(StandardDriver, ChargedCostNondecreasingInChainCount) {
  const DrmhKernel k = standard_drmh();
  const BlockModel model =
      block_model(*k.plain_fsm(), model_costs(*k.plain_fsm(), StepVariant::plain, 1.0, CostModel::nominal));
  double previous = 0.0;
  for (std::size_t m : {1, 2, 4, 8, 16, 32}) {
    const auto init = drmh_states(k, 9, m);
    const RunResult r = run_standard_batched(k, std::span<const ChainState>(init), 300, model);
    EXPECT_GE(r.ledger.charged_cost, previous) << "m=" << m;
    previous = r.ledger.charged_cost;
  }
}

TEST(FsmDriver, TicksToFirstSampleAreTwoPlusN) {
  ScriptedKernel k(Table{{4}});
  const auto init = chain_ids(1);
  const FsmSpec<ScriptedLocals> spec{k.plain_fsm(), CostParams({1, 1, 1}), "plain"};
  const RunResult r = run_fsm_batched(k, spec, std::span<const ChainState>(init), 1, StepVariant::plain,
                                      FsmDriverOptions{{1, 1}});
  EXPECT_EQ(r.ledger.ticks_to_n[0], 2u + 4u);
}

TEST(FsmDriver, LedgerIdentityTicksEqualSumOfTwoPlusN) {
  const std::vector<std::vector<std::uint32_t>> N{{3, 1, 0}, {1, 3, 5}, {2, 0, 2}, {0, 0, 1}};
  ScriptedKernel k(N);
  const auto init = chain_ids(3);
  const FsmSpec<ScriptedLocals> spec{k.plain_fsm(), CostParams({1, 1, 1}), "plain"};
  const RunResult r = run_fsm_batched(k, spec, std::span<const ChainState>(init), N.size(), StepVariant::plain);
  for (std::size_t j = 0; j < 3; ++j) {
    std::uint64_t expect = 0;
    for (const auto& row : N) expect += 2 + row[j];
    EXPECT_EQ(r.ledger.ticks_to_n[j], expect) << "chain " << j;
  }
  // Chunked by 100: the run stops at the first chunk boundary past the slowest chain.
  EXPECT_EQ(r.ledger.tick_count, 100u);
  EXPECT_DOUBLE_EQ(r.ledger.charged_cost, 100.0 * 3.0);
}

TEST(FsmDriver, BlockExecutionCountsMatchHandMatrix) {
  ScriptedKernel k({{3, 1}, {1, 3}});
  const auto init = chain_ids(2);
  const FsmSpec<ScriptedLocals> spec{k.plain_fsm(), CostParams({0, 1, 0}), "plain"};
  FsmDriverOptions opts;
  opts.chunk = 1;
  const RunResult r = run_fsm_batched(k, spec, std::span<const ChainState>(init), 2, StepVariant::plain, opts);
  // Each chain needs 2 + 3 + 2 + 1 = 8 ticks; desynchronized loop work is 4 per chain.
  EXPECT_EQ(r.ledger.tick_count, 8u);
  EXPECT_EQ(r.ledger.ticks_to_n, (std::vector<std::uint64_t>{8, 8}));
  EXPECT_EQ(r.ledger.block_exec_counts, (std::vector<std::uint64_t>{4, 8, 4}));
}

TEST(FsmDriver, BundledNeverSlowerThanPlainForDrmh) {
  const DrmhKernel k = standard_drmh();
  const auto plain = k.plain_fsm();
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto init = drmh_states(k, seed, 8);
    const FsmSpec<DrmhLocals> spec{plain, model_costs(*plain, StepVariant::plain, 1.0, CostModel::nominal), "x"};
    FsmDriverOptions opts;
    opts.chunk = 1;
    const auto a = run_fsm_batched(k, spec, std::span<const ChainState>(init), 200, StepVariant::plain, opts);
    const auto b = run_fsm_batched(k, spec, std::span<const ChainState>(init), 200, StepVariant::bundled, opts);
    EXPECT_EQ(a.samples, b.samples);
    for (std::size_t j = 0; j < 8; ++j) EXPECT_LE(b.ledger.ticks_to_n[j], a.ledger.ticks_to_n[j]);
    EXPECT_LE(b.ledger.tick_count, a.ledger.tick_count);
  }
}

TEST(FsmDriver, SplitBundledDrmhMatchesCondensedMachineTickForTick) {
  const DrmhKernel k = standard_drmh();
  const auto init = drmh_states(k, 5, 16);
  FsmDriverOptions opts;
  opts.chunk = 1;
  const FsmSpec<DrmhLocals> condensed{k.plain_fsm(), CostParams({1, 1, 1}), "condensed"};
  const FsmSpec<DrmhLocals> split{k.split_fsm(), CostParams({1, 1, 1, 1, 1, 1}), "split"};
  const auto a = run_fsm_batched(k, condensed, std::span<const ChainState>(init), 300, StepVariant::bundled, opts);
  const auto b = run_fsm_batched(k, split, std::span<const ChainState>(init), 300, StepVariant::bundled, opts);
  EXPECT_EQ(a.samples, b.samples);
  EXPECT_EQ(a.ledger.ticks_to_n, b.ledger.ticks_to_n);
  const auto c = run_fsm_batched(k, split, std::span<const ChainState>(init), 300, StepVariant::plain, opts);
  EXPECT_EQ(a.samples, c.samples);
  for (std::size_t j = 0; j < 16; ++j) EXPECT_LT(a.ledger.ticks_to_n[j], c.ledger.ticks_to_n[j]);
}

TEST(FsmDriver, BundleOrderMustStartWithFinalState) {
  const DrmhKernel k = standard_drmh();
  const auto init = drmh_states(k, 5, 2);
  FsmDriverOptions opts;
  opts.bundle_order = {0, 1, 2};
  const FsmSpec<DrmhLocals> spec{k.plain_fsm(), CostParams({1, 1, 1}), "x"};
  EXPECT_THROW(run_fsm_batched(k, spec, std::span<const ChainState>(init), 5, StepVariant::bundled, opts), FsmError);
}

TEST(FsmDriver, ResultsIndependentOfThreadCount) {
  const DrmhKernel k = standard_drmh();
  const auto init = drmh_states(k, 12, 13);
  const FsmSpec<DrmhLocals> spec{k.plain_fsm(), CostParams({1, 1, 1}), "x"};
  FsmDriverOptions one, many;
  many.threads = 4;
  const auto a = run_fsm_batched(k, spec, std::span<const ChainState>(init), 400, StepVariant::bundled, one);
  const auto b = run_fsm_batched(k, spec, std::span<const ChainState>(init), 400, StepVariant::bundled, many);
  EXPECT_EQ(a.samples, b.samples);
  EXPECT_EQ(a.ledger.tick_count, b.ledger.tick_count);
  EXPECT_EQ(a.ledger.block_exec_counts, b.ledger.block_exec_counts);
  EXPECT_EQ(a.ledger.iter_counts, b.ledger.iter_counts);
  const BlockModel model{CostParams({1, 1, 1}), {0, 1, 0}, {"INIT", "PROPOSE", "DONE"}};
  DriverOptions s1, s4;
  s4.threads = 4;
  const auto c = run_standard_batched(k, std::span<const ChainState>(init), 400, model, s1);
  const auto d = run_standard_batched(k, std::span<const ChainState>(init), 400, model, s4);
  EXPECT_EQ(c.samples, d.samples);
  EXPECT_EQ(c.ledger.charged_cost, d.ledger.charged_cost);
}

TEST(FsmDriver, TickBudgetOverrunCarriesPartialLedger) {
  ScriptedKernel k(Table{{50}});
  const auto init = chain_ids(2);
  const FsmSpec<ScriptedLocals> spec{k.plain_fsm(), CostParams({1, 1, 1}), "x"};
  FsmDriverOptions opts;
  opts.tick_budget = 30;
  try {
    run_fsm_batched(k, spec, std::span<const ChainState>(init), 1, StepVariant::plain, opts);
    FAIL() << "expected TickBudgetExceeded";
  } catch (const TickBudgetExceeded& e) {
    EXPECT_EQ(e.partial_ledger().tick_count, 30u);
    EXPECT_DOUBLE_EQ(e.partial_ledger().charged_cost, 90.0);
  }
}

TEST(Drivers, FailureReportsChainAndIteration) {
  ScriptedKernel k({{2, 2, 2}}, 1, 3);
  const auto init = chain_ids(3);
  try {
    run_standard_batched(k, std::span<const ChainState>(init), 6, loop_only_model());
    FAIL() << "expected RunError";
  } catch (const RunError& e) {
    EXPECT_EQ(e.chain(), 1u);
    EXPECT_EQ(e.iteration(), 3u);
  }
  const FsmSpec<ScriptedLocals> spec{k.plain_fsm(), CostParams({1, 1, 1}), "x"};
  try {
    run_fsm_batched(k, spec, std::span<const ChainState>(init), 6, StepVariant::plain);
    FAIL() << "expected RunError";
  } catch (const RunError& e) {
    EXPECT_EQ(e.chain(), 1u);
    EXPECT_EQ(e.iteration(), 3u);
    EXPECT_EQ(e.label(), "BODY");
  }
}

TEST(Drivers, OracleEquivalenceOnScriptedKernel) {
  ScriptedKernel k({{3, 0, 1, 7}, {0, 0, 2, 1}, {5, 1, 1, 1}});
  const auto init = chain_ids(4);
  const auto s = run_standard_batched(k, std::span<const ChainState>(init), 9, loop_only_model());
  const FsmSpec<ScriptedLocals> spec{k.plain_fsm(), CostParams({1, 1, 1}), "x"};
  for (StepVariant v : {StepVariant::plain, StepVariant::bundled}) {
    const auto f = run_fsm_batched(k, spec, std::span<const ChainState>(init), 9, v);
    EXPECT_EQ(f.samples, s.samples);
    EXPECT_EQ(f.ledger.iter_counts, s.ledger.iter_counts);
  }
}

TEST(CollectSamples, FilterAndTruncate) {
  auto v = [](double a) { return Vector::Constant(1, a); };
  EXPECT_TRUE(collect_samples({{v(1), v(2)}}, {{false, false}}, 5)[0].empty());
  const auto out = collect_samples({{v(1), v(2), v(3), v(4)}}, {{false, true, false, true}}, 10);
  ASSERT_EQ(out[0].size(), 2u);
  EXPECT_EQ(out[0][0][0], 2.0);
  EXPECT_EQ(out[0][1][0], 4.0);
  const auto trunc = collect_samples({{v(1), v(2), v(3), v(4)}}, {{true, true, true, true}}, 2);
  EXPECT_EQ(trunc[0].size(), 2u);
  EXPECT_THROW(collect_samples({{v(1)}}, {{true, false}}, 1), std::invalid_argument);
}

TEST(CostParamsTest, AlphaMustBeAdmissible) {
  EXPECT_NO_THROW(CostParams({1, 2, 1}, 0.5));
  EXPECT_NO_THROW(CostParams({1, 2, 1}, 1.0));
  EXPECT_THROW(CostParams({1, 2, 1}, 0.49), std::invalid_argument);
  EXPECT_THROW(CostParams({1, 2, 1}, 1.01), std::invalid_argument);
  EXPECT_THROW(CostParams({1, -1, 1}, 1.0), std::invalid_argument);
  EXPECT_DOUBLE_EQ(CostParams({1, 2, 1}, 0.5, 3.0).per_tick(), 5.0);
}

TEST(LockstepCounts, ShapesChargeMaxPerSegment) {
  const std::vector<SampleTrace> single{{{2}}, {{5}}};
  EXPECT_EQ(lockstep_block_counts(LoopShape::single, single), (std::vector<double>{1, 5, 1}));
  const std::vector<SampleTrace> seq{{{2, 1}}, {{0, 4}}};
  EXPECT_EQ(lockstep_block_counts(LoopShape::sequential, seq), (std::vector<double>{1, 2, 1, 4, 1}));
  const std::vector<SampleTrace> nested{{{1, 2}}, {{3}}};
  // depth max 2; inner sums over max per outer iteration: max(1,3) + 2.
  EXPECT_EQ(lockstep_block_counts(LoopShape::nested, nested), (std::vector<double>{1, 2, 5, 2, 1}));
}
