#pragma once

// Experiment harness: a run configuration, paired standard/FSM runs on
// identical streams, and CSV/JSON output.
//
// results.csv is a pure function of the configuration; walltimes go to
// timing.csv so that re-running a configuration reproduces results.csv byte
// for byte.

#include "fsmcmc/analysis.hpp"
#include "fsmcmc/fsm_export.hpp"
#include "fsmcmc/kernels.hpp"
#include "fsmcmc/lockstep.hpp"
#include "fsmcmc/targets.hpp"

#include <json.hpp>

#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <memory>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace fsmcmc {

struct RunConfig {
  std::string kernel = "drmh";
  std::string target = "gaussian";

  // Kernel hyperparameters.
  std::uint32_t drmh_max_tries = 100;
  double drmh_scale = 0.1;
  bool drmh_split = false;  // plain/bundled FSM use the 4-way split PROPOSE
  double slice_width = 1.0;
  std::uint32_t slice_max_expansions = 100;
  double nuts_step_size = 0.1;
  std::uint32_t nuts_max_depth = 10;

  // Target parameters.
  std::int64_t dim = 1;
  double rho = 0.0;
  std::vector<double> modes{-5.0, 0.0, 5.0};
  double box_lo = 0.0;
  double box_hi = 1.0;
  std::int64_t gp_size = 50;
  std::string gp_data;  // CSV path; empty: synthetic data of gp_size points

  std::size_t chains = 4;
  std::size_t samples = 1000;
  std::size_t warmup = 0;  // monolithic samples per chain before the paired runs
  double init_scale = 1.0;
  std::string variant = "bundled";

  std::string cost_model = "nominal";  // nominal | unit | explicit | measured
  std::vector<double> block_costs;     // explicit model
  double shared_cost = 0.0;            // explicit model, amortized variant
  double alpha = 1.0;

  std::vector<std::uint64_t> seeds{0};
  std::string out = "out";
  std::uint64_t tick_budget = 0;  // 0: unlimited
  std::size_t threads = 1;
  std::size_t chunk = 100;
};

/// Every configuration problem at once.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(std::vector<std::string> errors)
      : std::runtime_error(join(errors)), errors_(std::move(errors)) {}
  const std::vector<std::string>& errors() const noexcept { return errors_; }

 private:
  static std::string join(const std::vector<std::string>& e) {
    std::string s = "invalid configuration";
    for (const auto& x : e) s += "; " + x;
    return s;
  }
  std::vector<std::string> errors_;
};

/// The FSM regime's samples differ from the standard regime's.
class EquivalenceFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

inline std::string fmt_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

template <class T>
std::string fmt_list(const std::vector<T>& v) {
  std::string s = "[";
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += ",";
    if constexpr (std::is_floating_point_v<T>) {
      s += fmt_double(v[i]);
    } else {
      s += std::to_string(v[i]);
    }
  }
  return s + "]";
}

inline std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

}  // namespace detail

/// Key-value text mirroring the CLI flags. With `include_runtime` false the
/// keys that cannot change results (out, threads) are left out.
inline std::string config_text(const RunConfig& c, bool include_runtime = true) {
  using detail::fmt_double;
  using detail::fmt_list;
  std::ostringstream os;
  os << "kernel=" << c.kernel << "\n"
     << "target=" << c.target << "\n"
     << "chains=" << c.chains << "\n"
     << "samples=" << c.samples << "\n"
     << "variant=" << c.variant << "\n"
     << "seeds=" << fmt_list(c.seeds) << "\n"
     << "cost-model=" << c.cost_model << "\n"
     << (c.block_costs.empty() ? "" : "block-costs=" + fmt_list(c.block_costs) + "\n")
     << "shared-cost=" << fmt_double(c.shared_cost) << "\n"
     << "alpha=" << fmt_double(c.alpha) << "\n"
     << "tick-budget=" << c.tick_budget << "\n"
     << "warmup=" << c.warmup << "\n"
     << "init-scale=" << fmt_double(c.init_scale) << "\n"
     << "chunk=" << c.chunk << "\n"
     << "dim=" << c.dim << "\n"
     << "rho=" << fmt_double(c.rho) << "\n"
     << "modes=" << fmt_list(c.modes) << "\n"
     << "box-lo=" << fmt_double(c.box_lo) << "\n"
     << "box-hi=" << fmt_double(c.box_hi) << "\n"
     << "gp-size=" << c.gp_size << "\n"
     << (c.gp_data.empty() ? "" : "gp-data=" + c.gp_data + "\n")
     << "drmh-max-tries=" << c.drmh_max_tries << "\n"
     << "drmh-scale=" << fmt_double(c.drmh_scale) << "\n"
     << "drmh-split=" << (c.drmh_split ? "true" : "false") << "\n"
     << "slice-width=" << fmt_double(c.slice_width) << "\n"
     << "slice-max-expansions=" << c.slice_max_expansions << "\n"
     << "nuts-step-size=" << fmt_double(c.nuts_step_size) << "\n"
     << "nuts-max-depth=" << c.nuts_max_depth << "\n";
  if (include_runtime) os << "out=" << c.out << "\n" << "threads=" << c.threads << "\n";
  return os.str();
}

/// FNV-1a of the result-determining part of the configuration, as hex.
inline std::string config_hash(const RunConfig& c) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(detail::fnv1a(config_text(c, false))));
  return buf;
}

inline nlohmann::json config_to_json(const RunConfig& c) {
  return {{"kernel", c.kernel},
          {"target", c.target},
          {"chains", c.chains},
          {"samples", c.samples},
          {"variant", c.variant},
          {"seeds", c.seeds},
          {"cost-model", c.cost_model},
          {"block-costs", c.block_costs},
          {"shared-cost", c.shared_cost},
          {"alpha", c.alpha},
          {"tick-budget", c.tick_budget},
          {"warmup", c.warmup},
          {"init-scale", c.init_scale},
          {"chunk", c.chunk},
          {"dim", c.dim},
          {"rho", c.rho},
          {"modes", c.modes},
          {"box-lo", c.box_lo},
          {"box-hi", c.box_hi},
          {"gp-size", c.gp_size},
          {"gp-data", c.gp_data},
          {"drmh-max-tries", c.drmh_max_tries},
          {"drmh-scale", c.drmh_scale},
          {"drmh-split", c.drmh_split},
          {"slice-width", c.slice_width},
          {"slice-max-expansions", c.slice_max_expansions},
          {"nuts-step-size", c.nuts_step_size},
          {"nuts-max-depth", c.nuts_max_depth},
          {"out", c.out},
          {"threads", c.threads}};
}

inline RunConfig config_from_json(const nlohmann::json& j) {
  RunConfig c;
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  get("kernel", c.kernel);
  get("target", c.target);
  get("chains", c.chains);
  get("samples", c.samples);
  get("variant", c.variant);
  get("seeds", c.seeds);
  get("cost-model", c.cost_model);
  get("block-costs", c.block_costs);
  get("shared-cost", c.shared_cost);
  get("alpha", c.alpha);
  get("tick-budget", c.tick_budget);
  get("warmup", c.warmup);
  get("init-scale", c.init_scale);
  get("chunk", c.chunk);
  get("dim", c.dim);
  get("rho", c.rho);
  get("modes", c.modes);
  get("box-lo", c.box_lo);
  get("box-hi", c.box_hi);
  get("gp-size", c.gp_size);
  get("gp-data", c.gp_data);
  get("drmh-max-tries", c.drmh_max_tries);
  get("drmh-scale", c.drmh_scale);
  get("drmh-split", c.drmh_split);
  get("slice-width", c.slice_width);
  get("slice-max-expansions", c.slice_max_expansions);
  get("nuts-step-size", c.nuts_step_size);
  get("nuts-max-depth", c.nuts_max_depth);
  get("out", c.out);
  get("threads", c.threads);
  return c;
}

/// Builds the configured target. Throws on invalid parameters.
inline TargetPtr make_target(const RunConfig& c) {
  const Eigen::Index d = static_cast<Eigen::Index>(c.dim);
  if (c.target == "gaussian") return gaussian_target(Vector::Zero(d), equicorrelation_chol(d, c.rho));
  if (c.target == "mog") return correlated_mog_target(d, c.rho, c.modes);
  if (c.target == "uniform") return uniform_box_target(d, c.box_lo, c.box_hi);
  if (c.target == "conjugate") {
    // Prior N(0, I), likelihood N(x | (1, -1, 1, ...), 0.25 I).
    Vector mean(d);
    for (Eigen::Index i = 0; i < d; ++i) mean[i] = i % 2 == 0 ? 1.0 : -1.0;
    return conjugate_gaussian_target(Matrix::Identity(d, d), mean, 0.5 * Matrix::Identity(d, d));
  }
  if (c.target == "gp") {
    GpData data = c.gp_data.empty() ? synthetic_gp_data(static_cast<Eigen::Index>(c.gp_size)) : read_gp_csv(c.gp_data);
    return gp_hyperparameter_target(std::move(data));
  }
  throw std::invalid_argument("unknown target '" + c.target + "'");
}

namespace detail {

inline const std::vector<std::string>& kernel_names() {
  static const std::vector<std::string> k{"drmh", "slice", "elliptical", "nuts"};
  return k;
}

inline bool known(const std::vector<std::string>& v, const std::string& s) {
  return std::find(v.begin(), v.end(), s) != v.end();
}

}  // namespace detail

/// Calls fn(kernel) with the configured kernel.
template <class Fn>
decltype(auto) with_kernel(const RunConfig& c, TargetPtr target, Fn&& fn) {
  if (c.kernel == "drmh") return fn(DrmhKernel(std::move(target), DrmhParams{c.drmh_max_tries, c.drmh_scale}));
  if (c.kernel == "slice") return fn(SliceKernel(std::move(target), SliceParams{c.slice_width, c.slice_max_expansions}));
  if (c.kernel == "elliptical") return fn(EllipticalKernel(std::move(target)));
  if (c.kernel == "nuts") {
    NutsParams p;
    p.step_size = c.nuts_step_size;
    p.max_depth = c.nuts_max_depth;
    return fn(NutsKernel(std::move(target), p));
  }
  throw std::invalid_argument("unknown kernel '" + c.kernel + "'");
}

/// Machine stepped in the FSM regime.
template <class K>
std::shared_ptr<const FsmDefinition<typename K::Locals>> fsm_for(const K& kernel, StepVariant v, bool split) {
  if (v == StepVariant::amortized) return kernel.amortized_fsm();
  if constexpr (std::is_same_v<K, DrmhKernel>) {
    if (split) return kernel.split_fsm();
  }
  return kernel.plain_fsm();
}

/// Field checks plus construction of target, kernel and cost parameters;
/// returns every problem found.
inline std::vector<std::string> validate(const RunConfig& c) {
  std::vector<std::string> e;
  if (!detail::known(detail::kernel_names(), c.kernel)) e.push_back("kernel: unknown '" + c.kernel + "'");
  if (!detail::known({"gaussian", "mog", "uniform", "conjugate", "gp"}, c.target)) {
    e.push_back("target: unknown '" + c.target + "'");
  }
  if (c.chains < 1) e.push_back("chains: must be >= 1");
  if (c.samples < 1) e.push_back("samples: must be >= 1");
  if (!parse_step_variant(c.variant)) e.push_back("variant: must be plain, bundled or amortized");
  if (c.seeds.empty()) e.push_back("seeds: need at least one seed");
  if (!detail::known({"nominal", "unit", "explicit", "measured"}, c.cost_model)) {
    e.push_back("cost-model: must be nominal, unit, explicit or measured");
  }
  if (c.cost_model == "explicit" && c.block_costs.empty()) e.push_back("block-costs: required by the explicit model");
  if (c.cost_model != "explicit" && !c.block_costs.empty()) e.push_back("block-costs: only used by the explicit model");
  if (!(c.alpha > 0.0 && c.alpha <= 1.0)) e.push_back("alpha: must be in (0, 1]");
  if (!(c.shared_cost >= 0.0)) e.push_back("shared-cost: must be >= 0");
  if (c.dim < 1) e.push_back("dim: must be >= 1");
  if (c.target == "gp" && c.gp_data.empty() && c.gp_size < 2) e.push_back("gp-size: must be >= 2");
  if (c.drmh_split && c.kernel != "drmh") e.push_back("drmh-split: only applies to the drmh kernel");
  if (c.chunk < 1) e.push_back("chunk: must be >= 1");
  if (!(c.init_scale > 0.0)) e.push_back("init-scale: must be positive");
  if (c.out.empty()) e.push_back("out: output directory required");

  // Compatibility checks need the built target; they run whenever the
  // kernel and target fields are usable so that all problems surface at once.
  const bool kernel_ok = detail::known(detail::kernel_names(), c.kernel);
  const bool target_ok = detail::known({"gaussian", "mog", "uniform", "conjugate", "gp"}, c.target) && c.dim >= 1 &&
                         (c.target != "gp" || !c.gp_data.empty() || c.gp_size >= 2);
  if (!target_ok) return e;
  TargetPtr target;
  try {
    target = make_target(c);
  } catch (const std::exception& ex) {
    e.push_back(std::string("target: ") + ex.what());
    return e;
  }
  if (!kernel_ok) return e;
  if (c.kernel == "nuts" && !target->has_gradient()) e.push_back("kernel: nuts requires a target with a gradient");
  if (c.kernel == "elliptical" && !target->gaussian_prior) {
    e.push_back("kernel: elliptical requires a target with a Gaussian-prior decomposition");
  }
  if (!e.empty()) return e;
  try {
    with_kernel(c, target, [&](const auto& kernel) {
      const StepVariant v = *parse_step_variant(c.variant);
      const auto fsm = fsm_for(kernel, v, c.drmh_split);
      if (c.cost_model == "explicit") {
        if (c.block_costs.size() != fsm->size()) {
          e.push_back("block-costs: need " + std::to_string(fsm->size()) + " values for this machine");
        } else if (kernel.plain_fsm()->size() != fsm->size()) {
          e.push_back("block-costs: the explicit model needs the FSM and standard machines to have equal size");
        } else {
          CostParams(c.block_costs, c.alpha, c.shared_cost);
        }
      } else if (c.cost_model != "measured") {
        model_costs(*fsm, v, target->eval_cost, c.cost_model == "unit" ? CostModel::unit : CostModel::nominal,
                    c.alpha);
      }
    });
  } catch (const std::exception& ex) {
    e.push_back(ex.what());
  }
  return e;
}

/// One row of results.csv.
struct ResultRow {
  std::string config_hash, kernel, target;
  std::size_t m = 0, n = 0;
  std::string variant;  // "standard" or the FSM step variant
  std::uint64_t seed = 0;
  double cost_per_sample = 0.0;
  std::uint64_t ticks = 0;  // FSM: ticks; standard: synchronized sample steps (n)
  double mean_N = 0.0, mean_max_N = 0.0;
  double R_hat = 0.0, R_se = 0.0, E_hat = 0.0;
  double ess = 0.0, ess_per_cost = 0.0;
  std::uint64_t native_evaluations = 0;
  double lockstep_evaluations = 0.0;
  std::uint64_t limit_hits = 0;
  double walltime = 0.0;  // written to timing.csv only
};

inline const char* result_header() {
  return "config_hash,kernel,target,m,n,variant,seed,cost_per_sample,ticks,mean_N,mean_max_N,R_hat,R_hat_se,E_hat,"
         "ess,ess_per_cost,native_evaluations,lockstep_evaluations,limit_hits";
}

inline std::string result_line(const ResultRow& r) {
  using detail::fmt_double;
  std::ostringstream os;
  os << r.config_hash << ',' << r.kernel << ',' << r.target << ',' << r.m << ',' << r.n << ',' << r.variant << ','
     << r.seed << ',' << fmt_double(r.cost_per_sample) << ',' << r.ticks << ',' << fmt_double(r.mean_N) << ','
     << fmt_double(r.mean_max_N) << ',' << fmt_double(r.R_hat) << ',' << fmt_double(r.R_se) << ','
     << fmt_double(r.E_hat) << ',' << fmt_double(r.ess) << ',' << fmt_double(r.ess_per_cost) << ','
     << r.native_evaluations << ',' << fmt_double(r.lockstep_evaluations) << ',' << r.limit_hits;
  return os.str();
}

/// Both regimes of one seed.
struct SeedResult {
  std::uint64_t seed = 0;
  RunResult standard, fsm;
  REstimate R;
  double E_hat = std::numeric_limits<double>::quiet_NaN();
  EssSummary ess_standard, ess_fsm;
};

struct ExperimentResult {
  RunConfig config;
  std::string hash;
  std::vector<ResultRow> rows;  // (seed, regime) order: standard first
  std::vector<SeedResult> seeds;
  CostParams standard_costs, fsm_costs;
  nlohmann::json machines;
};

/// Thrown when the FSM regime hits the tick budget; carries what ran.
class BudgetAbort : public std::runtime_error {
 public:
  BudgetAbort(const std::string& what, std::uint64_t seed, CostLedger partial)
      : std::runtime_error(what), seed_(seed), partial_(std::move(partial)) {}
  std::uint64_t seed() const noexcept { return seed_; }
  const CostLedger& partial_ledger() const noexcept { return partial_; }

 private:
  std::uint64_t seed_;
  CostLedger partial_;
};

/// Initial point for one chain: a prior draw when the target has a Gaussian
/// prior, otherwise N(0, init_scale² I) redrawn until the density is positive.
inline Vector initial_point(const TargetModel& t, RngKey key, double init_scale) {
  if (t.gaussian_prior) return normal_vec(key, t.dim, t.gaussian_prior->chol).first;
  for (int attempt = 0; attempt < 1000; ++attempt) {
    Vector x;
    std::tie(x, key) = standard_normal_vec(key, t.dim);
    x *= init_scale;
    if (t.log_density(x) > kNegInf) return x;
  }
  throw std::runtime_error("no initial point with positive density found; adjust init-scale");
}

/// Per-chain initial states for a seed. Chain j's stream and starting point
/// do not depend on the chain count.
template <MonolithicKernel K>
std::vector<ChainState> initial_states(const K& kernel, std::uint64_t seed, std::size_t m, std::size_t warmup,
                                       double init_scale) {
  const auto roots = split(make_key(seed), 2);
  const auto chain_keys = split(roots[0], m);
  const auto init_keys = split(roots[1], m);
  std::vector<ChainState> out;
  out.reserve(m);
  for (std::size_t j = 0; j < m; ++j) {
    ChainState s = kernel.init(initial_point(kernel.target(), init_keys[j], init_scale), chain_keys[j]);
    for (std::size_t w = 0; w < warmup; ++w) s = kernel.sample(s).state;
    s.sample_index = 0;
    out.push_back(std::move(s));
  }
  return out;
}

/// Mean walltime (microseconds) of each block, and of the shared computation
/// when the machine has one, over `ticks` plain steps of every chain.
template <FsmKernel K>
CostParams measure_costs(const K& kernel, const FsmDefinition<typename K::Locals>& fsm, StepVariant v,
                         std::span<const ChainState> initial, double alpha, std::size_t ticks = 200) {
  using Clock = std::chrono::steady_clock;
  std::vector<double> total(fsm.size(), 0.0), count(fsm.size(), 0.0);
  double g_total = 0.0, g_count = 0.0;
  const bool amortized = v == StepVariant::amortized && fsm.shared();
  for (const ChainState& s : initial) {
    auto z = kernel.make_locals(s);
    StateIndex k = fsm.initial();
    for (std::size_t t = 0; t < ticks; ++t) {
      z.do_computation = false;
      const auto a = Clock::now();
      fsm.run_block(k, z);
      const auto b = Clock::now();
      total[k] += std::chrono::duration<double, std::micro>(b - a).count();
      count[k] += 1.0;
      if (amortized && z.do_computation) {
        fsm.shared()->compute(z);
        g_total += std::chrono::duration<double, std::micro>(Clock::now() - b).count();
        g_count += 1.0;
      }
      k = fsm.next(k, z);
    }
  }
  std::vector<double> c(fsm.size());
  double floor = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < c.size(); ++k) {
    if (count[k] > 0) floor = std::min(floor, total[k] / count[k]);
  }
  for (std::size_t k = 0; k < c.size(); ++k) c[k] = count[k] > 0 ? total[k] / count[k] : floor;
  const double shared = g_count > 0 ? g_total / g_count : 0.0;
  // Measured costs can put α below its lower bound; clamp it there.
  const double lo = CostParams::alpha_bounds(c).first;
  return CostParams(std::move(c), std::max(alpha, lo), shared);
}

/// Runs the standard and FSM regimes for every seed.
inline ExperimentResult run_experiment(const RunConfig& config) {
  if (auto errors = validate(config); !errors.empty()) throw ConfigError(std::move(errors));
  const StepVariant variant = *parse_step_variant(config.variant);
  TargetPtr target = make_target(config);
  ExperimentResult res;
  res.config = config;
  res.hash = config_hash(config);

  with_kernel(config, target, [&](const auto& kernel) {
    using Kernel = std::decay_t<decltype(kernel)>;
    const auto plain = kernel.plain_fsm();
    const auto machine = fsm_for(kernel, variant, config.drmh_split);
    res.machines = {{"standard", fsm_to_json(*plain, kernel.name() + "/plain")},
                    {"fsm", fsm_to_json(*machine, kernel.name() + "/" + config.variant)}};

    std::optional<CostParams> std_costs, fsm_costs;
    if (config.cost_model == "explicit") {
      std_costs.emplace(config.block_costs, 1.0, 0.0);
      fsm_costs.emplace(config.block_costs, config.alpha,
                        variant == StepVariant::amortized && machine->shared() ? config.shared_cost : 0.0);
    } else if (config.cost_model != "measured") {
      const CostModel cm = config.cost_model == "unit" ? CostModel::unit : CostModel::nominal;
      std_costs = model_costs(*plain, StepVariant::plain, target->eval_cost, cm, 1.0);
      fsm_costs = model_costs(*machine, variant, target->eval_cost, cm, config.alpha);
    }

    DriverOptions sopts;
    sopts.threads = config.threads;
    sopts.chunk = config.chunk;
    FsmDriverOptions fopts;
    fopts.threads = config.threads;
    fopts.chunk = config.chunk;
    if (config.tick_budget > 0) fopts.tick_budget = config.tick_budget;

    for (std::uint64_t seed : config.seeds) {
      const std::vector<ChainState> init =
          initial_states(kernel, seed, config.chains, config.warmup, config.init_scale);
      if (config.cost_model == "measured" && !std_costs) {
        // Calibrated once, on the first seed's starting states.
        std_costs = measure_costs(kernel, *plain, StepVariant::plain, init, 1.0);
        fsm_costs = measure_costs(kernel, *machine, variant, init, config.alpha);
      }
      SeedResult sr;
      sr.seed = seed;
      sr.standard = run_standard_batched(kernel, std::span<const ChainState>(init), config.samples,
                                         block_model(*plain, *std_costs), sopts);
      try {
        sr.fsm = run_fsm_batched(kernel, FsmSpec<typename Kernel::Locals>{machine, *fsm_costs, config.variant},
                                 std::span<const ChainState>(init), config.samples, variant, fopts);
      } catch (const TickBudgetExceeded& ex) {
        throw BudgetAbort(std::string(ex.what()) + " (seed " + std::to_string(seed) + ")", seed,
                          ex.partial_ledger());
      }
      if (const std::size_t bad = sr.standard.samples.mismatches(sr.fsm.samples); bad != 0) {
        throw EquivalenceFailure("seed " + std::to_string(seed) + ": " + std::to_string(bad) +
                                 " sample positions differ between the standard and FSM regimes");
      }
      sr.R = bound_R(sr.standard.ledger, 200, make_key(seed ^ 0x5EEDull));
      if (Kernel::shape == LoopShape::single && sr.R.mean_N > 0.0) {
        // Model prediction for the plain machine of the standard block costs.
        const auto& c = std_costs->block_costs();
        const double a = std::max(fsm_costs->alpha(), CostParams::alpha_bounds(c).first);
        sr.E_hat = efficiency_model(CostParams(c, a, 0.0), 1, sr.R.mean_N, sr.R.mean_max_N);
      }
      if (config.samples >= 10) {
        sr.ess_standard = effective_sample_size(sr.standard.samples, sr.standard.ledger.charged_cost,
                                                sr.standard.ledger.walltime);
        sr.ess_fsm = effective_sample_size(sr.fsm.samples, sr.fsm.ledger.charged_cost, sr.fsm.ledger.walltime);
      }

      for (int regime = 0; regime < 2; ++regime) {
        const RunResult& rr = regime == 0 ? sr.standard : sr.fsm;
        const EssSummary& es = regime == 0 ? sr.ess_standard : sr.ess_fsm;
        ResultRow row;
        row.config_hash = res.hash;
        row.kernel = config.kernel;
        row.target = config.target;
        row.m = config.chains;
        row.n = config.samples;
        row.variant = regime == 0 ? "standard" : config.variant;
        row.seed = seed;
        row.cost_per_sample = rr.ledger.cost_per_sample();
        row.ticks = rr.ledger.tick_count;
        row.mean_N = rr.ledger.mean_N();
        row.mean_max_N = rr.ledger.mean_max_N();
        row.R_hat = sr.R.R;
        row.R_se = sr.R.std_error;
        row.E_hat = sr.E_hat;
        row.ess = es.pooled;
        row.ess_per_cost = es.per_cost;
        row.native_evaluations = rr.ledger.native_evaluations;
        row.lockstep_evaluations = rr.ledger.lockstep_evaluations;
        row.limit_hits = rr.ledger.limit_hits;
        row.walltime = rr.ledger.walltime;
        res.rows.push_back(std::move(row));
      }
      res.seeds.push_back(std::move(sr));
    }
    res.standard_costs = *std_costs;
    res.fsm_costs = *fsm_costs;
  });
  return res;
}

inline nlohmann::json ledger_to_json(const CostLedger& l) {
  return {{"n", l.n},
          {"m", l.m},
          {"block_labels", l.block_labels},
          {"tick_count", l.tick_count},
          {"block_exec_counts", l.block_exec_counts},
          {"lockstep_block_counts", l.lockstep_block_counts},
          {"charged_cost", l.charged_cost},
          {"lockstep_evaluations", l.lockstep_evaluations},
          {"native_evaluations", l.native_evaluations},
          {"limit_hits", l.limit_hits},
          {"ticks_to_n", l.ticks_to_n},
          {"walltime", l.walltime}};
}

inline nlohmann::json costs_to_json(const CostParams& c) {
  return {{"block_costs", c.block_costs()}, {"alpha", c.alpha()}, {"shared_cost", c.shared_cost()}};
}

/// Manifest: full configuration, hash, machines, costs and per-seed summaries.
inline nlohmann::json manifest_json(const ExperimentResult& r) {
  nlohmann::json seeds = nlohmann::json::array();
  for (const SeedResult& s : r.seeds) {
    nlohmann::json warnings = s.ess_fsm.warnings;
    seeds.push_back({{"seed", s.seed},
                     {"samples_identical", true},
                     {"R_hat", s.R.R},
                     {"R_hat_se", s.R.std_error},
                     {"E_hat", std::isnan(s.E_hat) ? nlohmann::json(nullptr) : nlohmann::json(s.E_hat)},
                     {"ess_capped", s.ess_fsm.capped},
                     {"ess_warnings", warnings}});
  }
  return {{"config", config_to_json(r.config)},
          {"config_hash", r.hash},
          {"config_text", config_text(r.config, false)},
          {"machines", r.machines},
          {"costs", {{"standard", costs_to_json(r.standard_costs)}, {"fsm", costs_to_json(r.fsm_costs)}}},
          {"seeds", seeds},
          {"outputs", {"results.csv", "timing.csv", "manifest.json", "config.ini"}}};
}

inline void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + p.string());
  out << text;
}

/// Writes results.csv, timing.csv, manifest.json and config.ini under dir.
inline void write_outputs(const ExperimentResult& r, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::string results = std::string(result_header()) + "\n";
  std::string timing = "config_hash,kernel,target,m,n,variant,seed,walltime_s\n";
  for (const ResultRow& row : r.rows) {
    results += result_line(row) + "\n";
    timing += row.config_hash + "," + row.kernel + "," + row.target + "," + std::to_string(row.m) + "," +
              std::to_string(row.n) + "," + row.variant + "," + std::to_string(row.seed) + "," +
              detail::fmt_double(row.walltime) + "\n";
  }
  write_text(dir / "results.csv", results);
  write_text(dir / "timing.csv", timing);
  write_text(dir / "manifest.json", manifest_json(r).dump(2) + "\n");
  write_text(dir / "config.ini", config_text(r.config));
}

/// Writes the partial ledger of an aborted run.
inline void write_partial(const RunConfig& c, const BudgetAbort& ex, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  nlohmann::json j{{"config", config_to_json(c)},
                   {"config_hash", config_hash(c)},
                   {"error", ex.what()},
                   {"seed", ex.seed()},
                   {"partial_ledger", ledger_to_json(ex.partial_ledger())}};
  write_text(dir / "partial_ledger.json", j.dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// Sweeps.

enum class SweepAxis { m, n, dataset_size };

inline std::optional<SweepAxis> parse_sweep_axis(const std::string& s) {
  if (s == "m") return SweepAxis::m;
  if (s == "n") return SweepAxis::n;
  if (s == "dataset_size") return SweepAxis::dataset_size;
  return std::nullopt;
}

inline std::string to_string(SweepAxis a) {
  switch (a) {
    case SweepAxis::m:
      return "m";
    case SweepAxis::n:
      return "n";
    case SweepAxis::dataset_size:
      return "dataset_size";
  }
  return "?";
}

struct SweepPoint {
  std::int64_t value = 0;
  bool ok = false;
  std::string error;
  std::optional<ExperimentResult> result;
  double standard_cost = std::numeric_limits<double>::quiet_NaN();  // per sample, mean over seeds
  double fsm_cost = std::numeric_limits<double>::quiet_NaN();
  double ratio = std::numeric_limits<double>::quiet_NaN();          // standard / FSM
  double R_hat = std::numeric_limits<double>::quiet_NaN();
  double E_hat = std::numeric_limits<double>::quiet_NaN();
};

struct SweepResult {
  SweepAxis axis = SweepAxis::m;
  std::vector<SweepPoint> points;
};

inline RunConfig with_axis(RunConfig c, SweepAxis axis, std::int64_t v) {
  switch (axis) {
    case SweepAxis::m:
      c.chains = static_cast<std::size_t>(std::max<std::int64_t>(v, 0));
      break;
    case SweepAxis::n:
      c.samples = static_cast<std::size_t>(std::max<std::int64_t>(v, 0));
      break;
    case SweepAxis::dataset_size:
      c.gp_size = v;
      break;
  }
  return c;
}

/// run_experiment per axis value. A failing point is recorded and the sweep
/// moves on.
inline SweepResult sweep(const RunConfig& base, SweepAxis axis, const std::vector<std::int64_t>& values) {
  if (values.empty()) throw ConfigError({"sweep: axis values must be nonempty"});
  if (axis == SweepAxis::dataset_size && (base.target != "gp" || !base.gp_data.empty())) {
    throw ConfigError({"sweep: dataset_size applies only to the synthetic gp target"});
  }
  SweepResult out;
  out.axis = axis;
  for (std::int64_t v : values) {
    SweepPoint p;
    p.value = v;
    try {
      ExperimentResult r = run_experiment(with_axis(base, axis, v));
      double sc = 0.0, fc = 0.0, R = 0.0, E = 0.0;
      for (const SeedResult& s : r.seeds) {
        sc += s.standard.ledger.cost_per_sample();
        fc += s.fsm.ledger.cost_per_sample();
        R += s.R.R;
        E += s.E_hat;
      }
      const double k = static_cast<double>(r.seeds.size());
      p.standard_cost = sc / k;
      p.fsm_cost = fc / k;
      p.ratio = p.standard_cost / p.fsm_cost;
      p.R_hat = R / k;
      p.E_hat = E / k;
      p.ok = true;
      p.result = std::move(r);
    } catch (const ConfigError& ex) {
      p.error = ex.what();
    } catch (const std::exception& ex) {
      p.error = ex.what();
    }
    out.points.push_back(std::move(p));
  }
  return out;
}

inline std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string o = "\"";
  for (char ch : s) {
    if (ch == '"') o += '"';
    o += ch == '\n' ? ' ' : ch;
  }
  return o + "\"";
}

/// sweep.csv (every row, prefixed by axis and value), sweep_summary.csv (one
/// line per value with the standard/FSM ratio) and timing.csv.
inline void write_sweep(const SweepResult& s, const RunConfig& base, const std::filesystem::path& dir) {
  using detail::fmt_double;
  std::filesystem::create_directories(dir);
  const std::string axis = to_string(s.axis);
  std::string rows = "axis,value," + std::string(result_header()) + "\n";
  std::string timing = "axis,value,config_hash,variant,seed,walltime_s\n";
  std::string summary = "axis,value,config_hash,status,standard_cost_per_sample,fsm_cost_per_sample,ratio,R_hat,E_hat,error\n";
  nlohmann::json points = nlohmann::json::array();
  for (const SweepPoint& p : s.points) {
    const std::string prefix = axis + "," + std::to_string(p.value) + ",";
    const RunConfig c = with_axis(base, s.axis, p.value);
    if (p.result) {
      for (const ResultRow& r : p.result->rows) {
        rows += prefix + result_line(r) + "\n";
        timing += prefix + r.config_hash + "," + r.variant + "," + std::to_string(r.seed) + "," +
                  fmt_double(r.walltime) + "\n";
      }
    }
    summary += prefix + config_hash(c) + "," + (p.ok ? "ok" : "failed") + "," + fmt_double(p.standard_cost) + "," +
               fmt_double(p.fsm_cost) + "," + fmt_double(p.ratio) + "," + fmt_double(p.R_hat) + "," +
               fmt_double(p.E_hat) + "," + csv_escape(p.error) + "\n";
    points.push_back({{"value", p.value}, {"config_hash", config_hash(c)}, {"ok", p.ok}, {"error", p.error}});
  }
  write_text(dir / "sweep.csv", rows);
  write_text(dir / "sweep_summary.csv", summary);
  write_text(dir / "timing.csv", timing);
  nlohmann::json manifest{{"config", config_to_json(base)}, {"axis", axis}, {"points", points}};
  write_text(dir / "manifest.json", manifest.dump(2) + "\n");
  write_text(dir / "config.ini", config_text(base));
}

}  // namespace fsmcmc
