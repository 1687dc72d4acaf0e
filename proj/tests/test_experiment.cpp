#include "fsmcmc/experiment.hpp"

#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace fsmcmc;

namespace fs = std::filesystem;

namespace {

RunConfig drmh_config() {
  RunConfig c;
  c.kernel = "drmh";
  c.target = "gaussian";
  c.chains = 4;
  c.samples = 300;
  c.seeds = {0, 1};
  return c;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("fsmcmc_test_" + name);
  fs::remove_all(p);
  return p;
}

int exit_code(int status) {
#ifdef WEXITSTATUS
  return WEXITSTATUS(status);
#else
  return status;
#endif
}

}  // namespace

TEST(Config, ValidationReportsEveryError) {
  RunConfig c;
  c.kernel = "nuts";
  c.target = "uniform";
  c.chains = 0;
  c.variant = "foo";
  const auto errors = validate(c);
  EXPECT_GE(errors.size(), 3u);
  auto mentions = [&](const std::string& key) {
    return std::any_of(errors.begin(), errors.end(), [&](const std::string& e) { return e.find(key) != std::string::npos; });
  };
  EXPECT_TRUE(mentions("chains"));
  EXPECT_TRUE(mentions("variant"));
  EXPECT_TRUE(mentions("gradient"));
  EXPECT_THROW(run_experiment(c), ConfigError);

  RunConfig e = drmh_config();
  e.kernel = "elliptical";
  e.target = "mog";
  EXPECT_FALSE(validate(e).empty());
  RunConfig x = drmh_config();
  x.cost_model = "explicit";
  x.block_costs = {1, 2};
  EXPECT_FALSE(validate(x).empty());
  x.block_costs = {1, 2, 1};
  EXPECT_TRUE(validate(x).empty());
  EXPECT_TRUE(validate(drmh_config()).empty());
}

TEST(Config, HashIgnoresRuntimeKnobsAndRoundTrips) {
  RunConfig a = drmh_config();
  RunConfig b = a;
  b.out = "elsewhere";
  b.threads = 3;
  EXPECT_EQ(config_hash(a), config_hash(b));
  b.samples = 301;
  EXPECT_NE(config_hash(a), config_hash(b));
  a.block_costs = {0.5, 1.5, 0.25};
  a.modes = {-1, 2};
  const RunConfig r = config_from_json(config_to_json(a));
  EXPECT_EQ(config_text(r), config_text(a));
  EXPECT_EQ(config_hash(r), config_hash(a));
}

TEST(Experiment, SingleChainRatioIsControlFlowFactor) {
  // m = 1: no synchronization; the FSM pays only for its extra dispatches.
  RunConfig c = drmh_config();
  c.chains = 1;
  c.variant = "plain";
  c.chunk = 1;
  const ExperimentResult r = run_experiment(c);
  for (const SeedResult& s : r.seeds) {
    EXPECT_DOUBLE_EQ(s.R.R, 1.0);
    const double ratio = s.standard.ledger.cost_per_sample() / s.fsm.ledger.cost_per_sample();
    EXPECT_NEAR(ratio, s.E_hat, 1e-9 * s.E_hat);
    EXPECT_LT(ratio, 1.0);
  }
}

TEST(Experiment, RowsPairRegimesPerSeed) {
  const ExperimentResult r = run_experiment(drmh_config());
  ASSERT_EQ(r.rows.size(), 4u);
  EXPECT_EQ(r.rows[0].variant, "standard");
  EXPECT_EQ(r.rows[1].variant, "bundled");
  EXPECT_EQ(r.rows[0].seed, 0u);
  EXPECT_EQ(r.rows[2].seed, 1u);
  EXPECT_EQ(r.rows[0].ticks, 300u);
  EXPECT_GE(r.rows[1].ticks, 300u);
  for (const ResultRow& row : r.rows) {
    EXPECT_EQ(row.config_hash, r.hash);
    EXPECT_GT(row.ess, 0.0);
    EXPECT_LE(row.ess, 4.0 * 300.0);
    EXPECT_GE(row.R_hat, 1.0);
  }
}

TEST(Experiment, ChainSweepFlatForFsmRisingForStandard) {
  RunConfig c = drmh_config();
  c.samples = 2000;
  c.seeds = {3};
  c.chunk = 1;  // keeps chunk overshoot out of the flatness check
  const SweepResult s = sweep(c, SweepAxis::m, {1, 4, 16, 64});
  double lo = 1e300, hi = 0.0, prev = 0.0;
  for (const SweepPoint& p : s.points) {
    ASSERT_TRUE(p.ok) << p.error;
    lo = std::min(lo, p.fsm_cost);
    hi = std::max(hi, p.fsm_cost);
    EXPECT_GT(p.standard_cost, prev);
    prev = p.standard_cost;
  }
  // The slowest chain's lead shrinks like n^-1/2; at this n it is still ~10%.
  EXPECT_LE(hi / lo, 1.2);
  EXPECT_GT(s.points.back().standard_cost / s.points.front().standard_cost, 5.0);
  EXPECT_GT(s.points.back().ratio, 2.0);
}

TEST(Experiment, SingleValueSweepEqualsRun) {
  RunConfig c = drmh_config();
  c.chains = 8;
  const SweepResult s = sweep(c, SweepAxis::m, {8});
  ASSERT_TRUE(s.points[0].ok);
  const ExperimentResult r = run_experiment(c);
  ASSERT_EQ(s.points[0].result->rows.size(), r.rows.size());
  for (std::size_t i = 0; i < r.rows.size(); ++i) {
    EXPECT_EQ(result_line(s.points[0].result->rows[i]), result_line(r.rows[i]));
  }
}

TEST(Experiment, SweepRecordsFailingPoints) {
  const SweepResult s = sweep(drmh_config(), SweepAxis::m, {0, 2});
  EXPECT_FALSE(s.points[0].ok);
  EXPECT_FALSE(s.points[0].error.empty());
  EXPECT_TRUE(s.points[1].ok);
  EXPECT_THROW(sweep(drmh_config(), SweepAxis::m, {}), ConfigError);
  EXPECT_THROW(sweep(drmh_config(), SweepAxis::dataset_size, {10}), ConfigError);
}

TEST(Experiment, GpDatasetSweepAmortizesEvaluations) {
  RunConfig c;
  c.kernel = "elliptical";
  c.target = "gp";
  c.variant = "amortized";
  c.chains = 8;
  c.samples = 100;
  c.seeds = {0, 1};
  const SweepResult s = sweep(c, SweepAxis::dataset_size, {25, 50});
  ASSERT_TRUE(s.points[0].ok) << s.points[0].error;
  ASSERT_TRUE(s.points[1].ok) << s.points[1].error;
  for (const SweepPoint& p : s.points) {
    EXPECT_GT(p.ratio, 1.0);
    for (const SeedResult& r : p.result->seeds) {
      EXPECT_DOUBLE_EQ(r.fsm.ledger.lockstep_evaluations, static_cast<double>(r.fsm.ledger.tick_count));
    }
  }
  EXPECT_EQ(s.points[1].result->config.gp_size, 50);
}

TEST(Experiment, OutputsAreDeterministic) {
  const fs::path a = scratch("det_a"), b = scratch("det_b");
  RunConfig c = drmh_config();
  write_outputs(run_experiment(c), a);
  c.threads = 2;
  write_outputs(run_experiment(c), b);
  EXPECT_EQ(slurp(a / "results.csv"), slurp(b / "results.csv"));
  EXPECT_TRUE(fs::exists(a / "manifest.json"));
  EXPECT_TRUE(fs::exists(a / "timing.csv"));
  const auto manifest = nlohmann::json::parse(slurp(a / "manifest.json"));
  EXPECT_EQ(manifest.at("config_hash").get<std::string>(), config_hash(c));
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST(Experiment, TickBudgetAbortCarriesLedger) {
  RunConfig c = drmh_config();
  c.tick_budget = 50;
  try {
    run_experiment(c);
    FAIL() << "expected BudgetAbort";
  } catch (const BudgetAbort& e) {
    EXPECT_EQ(e.seed(), 0u);
    EXPECT_EQ(e.partial_ledger().tick_count, 50u);
  }
}

TEST(Cli, RerunAndConfigFileGiveIdenticalCsv) {
  const fs::path a = scratch("cli_a"), b = scratch("cli_b"), d = scratch("cli_c");
  const std::string exe = FSMCMC_CLI_PATH;
  const std::string flags = " run --kernel slice --target mog --dim 2 --chains 3 --samples 50 --seeds 4,5 --out ";
  ASSERT_EQ(exit_code(std::system((exe + flags + a.string() + " > /dev/null").c_str())), 0);
  ASSERT_EQ(exit_code(std::system((exe + flags + b.string() + " > /dev/null").c_str())), 0);
  EXPECT_EQ(slurp(a / "results.csv"), slurp(b / "results.csv"));
  ASSERT_EQ(exit_code(std::system(
                (exe + " run --config " + (a / "config.ini").string() + " --out " + d.string() + " > /dev/null").c_str())),
            0);
  EXPECT_EQ(slurp(a / "results.csv"), slurp(d / "results.csv"));
  const std::string csv = slurp(a / "results.csv");
  EXPECT_EQ(csv.substr(0, csv.find('\n')), result_header());
  for (const auto& p : {a, b, d}) fs::remove_all(p);
}

TEST(Cli, ExitCodes) {
  const fs::path o = scratch("cli_codes");
  const std::string exe = FSMCMC_CLI_PATH;
  const std::string quiet = " > /dev/null 2>&1";
  EXPECT_EQ(exit_code(std::system((exe + " run --chains 0 --variant foo --out " + o.string() + quiet).c_str())), 2);
  EXPECT_EQ(exit_code(std::system((exe + " run --tick-budget 5 --out " + o.string() + quiet).c_str())), 3);
  EXPECT_TRUE(fs::exists(o / "partial_ledger.json"));
  EXPECT_EQ(exit_code(std::system((exe + " export-fsm --kernel nuts --target mog" + quiet).c_str())), 0);
  fs::remove_all(o);
}
