// Command-line front end: paired runs, sweeps, FSM export and GP data.
//
// Exit codes: 0 success, 2 invalid configuration or runtime error, 3 tick
// budget exceeded (partial ledger saved), 4 standard/FSM sample mismatch.
// Errors go to stderr as {"errors": [...]}.

#include "fsmcmc/experiment.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <fstream>
#include <iostream>
#include <string>
#include <vector>

namespace {

using fsmcmc::RunConfig;

int fail(int code, const std::vector<std::string>& errors) {
  std::cerr << nlohmann::json{{"errors", errors}}.dump() << "\n";
  return code;
}

void add_run_flags(CLI::App* app, RunConfig& c) {
  app->set_config("--config", "", "key=value file mirroring the flags");
  app->add_option("--kernel", c.kernel, "drmh | slice | elliptical | nuts")->capture_default_str();
  app->add_option("--target", c.target, "gaussian | mog | uniform | conjugate | gp")->capture_default_str();
  app->add_option("--chains", c.chains, "chain count m")->capture_default_str();
  app->add_option("--samples", c.samples, "samples per chain n")->capture_default_str();
  app->add_option("--variant", c.variant, "plain | bundled | amortized")->capture_default_str();
  app->add_option("--seeds", c.seeds, "seed list")->delimiter(',')->capture_default_str();
  app->add_option("--cost-model", c.cost_model, "nominal | unit | explicit | measured")->capture_default_str();
  app->add_option("--block-costs", c.block_costs, "explicit per-block costs")->delimiter(',');
  app->add_option("--shared-cost", c.shared_cost, "explicit shared-computation cost")->capture_default_str();
  app->add_option("--alpha", c.alpha, "dispatch factor of a batched step")->capture_default_str();
  app->add_option("--out", c.out, "output directory")->capture_default_str();
  app->add_option("--tick-budget", c.tick_budget, "FSM tick cap, 0 for none")->capture_default_str();
  app->add_option("--warmup", c.warmup, "monolithic samples per chain before the runs")->capture_default_str();
  app->add_option("--init-scale", c.init_scale, "scale of N(0, I) starting points")->capture_default_str();
  app->add_option("--threads", c.threads, "worker threads, 0 for all cores")->capture_default_str();
  app->add_option("--chunk", c.chunk, "ticks between loop-condition checks")->capture_default_str();
  app->add_option("--dim", c.dim, "target dimension")->capture_default_str();
  app->add_option("--rho", c.rho, "equicorrelation")->capture_default_str();
  app->add_option("--modes", c.modes, "mixture mode offsets")->delimiter(',')->capture_default_str();
  app->add_option("--box-lo", c.box_lo, "uniform box lower bound")->capture_default_str();
  app->add_option("--box-hi", c.box_hi, "uniform box upper bound")->capture_default_str();
  app->add_option("--gp-size", c.gp_size, "synthetic GP data points")->capture_default_str();
  app->add_option("--gp-data", c.gp_data, "GP data CSV (x0..,y)");
  app->add_option("--drmh-max-tries", c.drmh_max_tries, "DRMH tries per sample")->capture_default_str();
  app->add_option("--drmh-scale", c.drmh_scale, "DRMH random-walk scale")->capture_default_str();
  app->add_flag("--drmh-split", c.drmh_split, "split DRMH PROPOSE into four blocks");
  app->add_option("--slice-width", c.slice_width, "slice step-out width")->capture_default_str();
  app->add_option("--slice-max-expansions", c.slice_max_expansions, "slice expansion budget")->capture_default_str();
  app->add_option("--nuts-step-size", c.nuts_step_size, "leapfrog step size")->capture_default_str();
  app->add_option("--nuts-max-depth", c.nuts_max_depth, "tree depth cap")->capture_default_str();
}

int run(const RunConfig& c) {
  try {
    const fsmcmc::ExperimentResult r = fsmcmc::run_experiment(c);
    fsmcmc::write_outputs(r, c.out);
    std::cout << "wrote " << r.rows.size() << " rows to " << (std::filesystem::path(c.out) / "results.csv").string()
              << " (config " << r.hash << ")\n";
    return 0;
  } catch (const fsmcmc::ConfigError& e) {
    return fail(2, e.errors());
  } catch (const fsmcmc::BudgetAbort& e) {
    try {
      fsmcmc::write_partial(c, e, c.out);
    } catch (const std::exception& w) {
      return fail(3, {e.what(), w.what()});
    }
    return fail(3, {e.what(), "partial ledger written to " + (std::filesystem::path(c.out) / "partial_ledger.json").string()});
  } catch (const fsmcmc::EquivalenceFailure& e) {
    return fail(4, {e.what()});
  } catch (const std::exception& e) {
    return fail(2, {e.what()});
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-chain MCMC with FSM-transformed kernels and lockstep cost accounting"};
  app.require_subcommand(1);

  // Run flags live on the top-level app so that --config reads flat
  // key=value files; run and sweep fall through to them.
  RunConfig run_cfg;
  add_run_flags(&app, run_cfg);
  CLI::App* run_cmd = app.add_subcommand("run", "paired standard/FSM runs for every seed")->fallthrough();

  std::string axis = "m";
  std::vector<std::int64_t> values;
  CLI::App* sweep_cmd =
      app.add_subcommand("sweep", "run once per axis value and tabulate standard/FSM ratios")->fallthrough();
  sweep_cmd->add_option("--axis", axis, "m | n | dataset_size")->capture_default_str();
  sweep_cmd->add_option("--values", values, "axis values")->delimiter(',')->required();

  std::string manifest_path, replay_out;
  CLI::App* replay_cmd = app.add_subcommand("replay", "re-run the configuration stored in a manifest");
  replay_cmd->add_option("manifest", manifest_path, "manifest.json of an earlier run")->required()->check(CLI::ExistingFile);
  replay_cmd->add_option("--out", replay_out, "output directory (default: the manifest's)");

  RunConfig export_cfg;
  std::string format = "dot";
  CLI::App* export_cmd = app.add_subcommand("export-fsm", "print a kernel's machine as Graphviz or JSON");
  export_cmd->add_option("--kernel", export_cfg.kernel)->capture_default_str();
  export_cmd->add_option("--target", export_cfg.target)->capture_default_str();
  export_cmd->add_option("--dim", export_cfg.dim)->capture_default_str();
  export_cmd->add_option("--variant", export_cfg.variant)->capture_default_str();
  export_cmd->add_flag("--drmh-split", export_cfg.drmh_split);
  export_cmd->add_option("--format", format, "dot | json")->capture_default_str();

  std::int64_t gp_n = 50;
  std::uint64_t gp_seed = fsmcmc::kGpDataSeed;
  std::string gp_file;
  CLI::App* gp_cmd = app.add_subcommand("write-gp-data", "write the synthetic GP regression data set as CSV");
  gp_cmd->add_option("--gp-size", gp_n)->capture_default_str();
  gp_cmd->add_option("--seed", gp_seed)->capture_default_str();
  gp_cmd->add_option("--file", gp_file)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail(2, {e.what()});
  }

  if (*run_cmd) return run(run_cfg);

  if (*sweep_cmd) {
    const auto ax = fsmcmc::parse_sweep_axis(axis);
    if (!ax) return fail(2, {"axis: must be m, n or dataset_size"});
    try {
      const fsmcmc::SweepResult s = fsmcmc::sweep(run_cfg, *ax, values);
      fsmcmc::write_sweep(s, run_cfg, run_cfg.out);
      std::vector<std::string> failed;
      for (const auto& p : s.points) {
        if (!p.ok) failed.push_back(axis + "=" + std::to_string(p.value) + ": " + p.error);
      }
      std::cout << "wrote " << s.points.size() << " sweep points to " << run_cfg.out << "\n";
      return failed.empty() ? 0 : fail(2, failed);
    } catch (const fsmcmc::ConfigError& e) {
      return fail(2, e.errors());
    } catch (const std::exception& e) {
      return fail(2, {e.what()});
    }
  }

  if (*replay_cmd) {
    try {
      std::ifstream in(manifest_path);
      const nlohmann::json j = nlohmann::json::parse(in);
      RunConfig c = fsmcmc::config_from_json(j.at("config"));
      if (!replay_out.empty()) c.out = replay_out;
      if (j.contains("config_hash") && j.at("config_hash").get<std::string>() != fsmcmc::config_hash(c)) {
        return fail(2, {"manifest hash does not match its configuration"});
      }
      return run(c);
    } catch (const std::exception& e) {
      return fail(2, {e.what()});
    }
  }

  if (*export_cmd) {
    try {
      const auto v = fsmcmc::parse_step_variant(export_cfg.variant);
      if (!v) return fail(2, {"variant: must be plain, bundled or amortized"});
      return fsmcmc::with_kernel(export_cfg, fsmcmc::make_target(export_cfg), [&](const auto& kernel) {
        const auto fsm = fsmcmc::fsm_for(kernel, *v, export_cfg.drmh_split);
        const std::string name = kernel.name() + "/" + export_cfg.variant;
        if (format == "json") {
          std::cout << fsmcmc::fsm_to_json(*fsm, name).dump(2) << "\n";
        } else if (format == "dot") {
          std::cout << fsmcmc::fsm_to_dot(*fsm, name);
        } else {
          return fail(2, {"format: must be dot or json"});
        }
        return 0;
      });
    } catch (const std::exception& e) {
      return fail(2, {e.what()});
    }
  }

  if (*gp_cmd) {
    try {
      fsmcmc::write_gp_csv(fsmcmc::synthetic_gp_data(static_cast<Eigen::Index>(gp_n), 3, gp_seed), gp_file);
      return 0;
    } catch (const std::exception& e) {
      return fail(2, {e.what()});
    }
  }
  return 0;
}
