// Command-line experiment runner.
//
//   mtsel --workload syn --syn-config syn.cfg --policy rr --policy hybrid --out results/

#include <cstdio>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mtsel/errors.hpp"
#include "mtsel/harness.hpp"

namespace {

using namespace mtsel;

int run(int argc, char** argv) {
  CLI::App app{"Multi-tenant GP-UCB model selection simulator"};

  std::string workload_kind = "syn";
  std::string quality_path, cost_path, syn_path, out_dir = "out";
  std::vector<std::string> policies;
  bool cost_aware = false;
  double delta = 0.1;
  std::string beta_mode = "alg1";
  std::size_t budget_rounds = 0;
  double budget_cost = 0.0, budget_frac = 0.0;
  std::size_t repeats = 50, test_tenants = 10, hybrid_s = 10, jobs = 1;
  std::uint64_t seed = 0;
  double train_frac = 0.9, noise_std = 0.0, gp_noise = 0.05;
  std::string user_pick = "max-gap";
  bool resample = false;

  app.add_option("--workload", workload_kind, "Workload source")
      ->check(CLI::IsMember({"csv", "syn"}));
  app.add_option("--quality", quality_path, "Quality matrix CSV");
  app.add_option("--cost", cost_path, "Cost matrix CSV (one row broadcasts)");
  app.add_option("--syn-config", syn_path, "Synthetic generator config (key = value)");
  app.add_option("--policy", policies, "Scheduling policy; repeat to compare several")
      ->check(CLI::IsMember({"fcfs", "random", "rr", "greedy", "hybrid"}));
  app.add_flag("--cost-aware", cost_aware, "Scale exploration by 1/sqrt(cost)");
  app.add_option("--delta", delta, "Confidence parameter of the beta schedule");
  app.add_option("--beta-mode", beta_mode, "Beta schedule")
      ->check(CLI::IsMember({"alg1", "thm1", "thm23"}));
  auto* rounds_opt = app.add_option("--budget-rounds", budget_rounds, "Budget in plays");
  auto* cost_opt = app.add_option("--budget-cost", budget_cost, "Budget in cost units");
  auto* frac_opt = app.add_option("--budget-frac", budget_frac,
                                  "Budget as a fraction of the total cost of the test tenants");
  rounds_opt->excludes(cost_opt)->excludes(frac_opt);
  cost_opt->excludes(frac_opt);
  app.add_option("--repeats", repeats, "Number of seeded repeats");
  app.add_option("--seed", seed, "Base seed; repeat r uses seed + r");
  app.add_option("--train-frac", train_frac, "Fraction of users used to fit the prior");
  app.add_option("--test-tenants", test_tenants, "Tenants served per repeat");
  app.add_option("--hybrid-s", hybrid_s, "Stalled steps before HYBRID falls back to round-robin");
  app.add_option("--user-pick", user_pick, "Rule for picking a user from the candidate set")
      ->check(CLI::IsMember({"max-gap", "max-sigma", "random"}));
  app.add_option("--noise-std", noise_std, "Std of Gaussian noise on observed qualities");
  app.add_option("--gp-noise", gp_noise, "Noise std assumed by the fitted GP priors");
  app.add_flag("--resample", resample, "Draw a new synthetic matrix for every repeat");
  app.add_option("--jobs", jobs, "Worker threads for repeats");
  app.add_option("--out", out_dir, "Output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  harness::ExperimentConfig cfg;
  if (workload_kind == "csv") {
    if (quality_path.empty() || cost_path.empty()) {
      throw InputError("--workload csv needs --quality and --cost");
    }
    cfg.source = harness::CsvSource{quality_path, cost_path};
  } else {
    std::istringstream empty;
    harness::SyntheticSource s{
        syn_path.empty() ? harness::parse_syn_config(empty) : harness::load_syn_config(syn_path),
        resample};
    cfg.source = s;
  }
  if (policies.empty()) policies = {"rr", "greedy", "hybrid"};
  for (const auto& p : policies) {
    harness::PolicyEntry e;
    e.name = p;
    e.config.policy = harness::parse_policy(p);
    e.config.cost_aware = cost_aware;
    e.config.beta_mode.variant = harness::parse_beta_variant(beta_mode);
    e.config.beta_mode.delta = delta;
    e.config.hybrid_s = hybrid_s;
    e.config.user_pick_rule = harness::parse_user_pick(user_pick);
    e.config.observation_noise_std = noise_std;
    cfg.policies.push_back(e);
  }
  cfg.repeats = repeats;
  cfg.base_seed = seed;
  cfg.test_tenant_count = test_tenants;
  cfg.train_fraction = train_frac;
  cfg.gp_noise_std = gp_noise;
  cfg.jobs = jobs;
  if (*rounds_opt) cfg.budget = sched::RoundBudget{budget_rounds};
  if (*cost_opt) cfg.budget = sched::CostBudget{budget_cost};
  if (*frac_opt) cfg.budget = harness::CostFraction{budget_frac};

  const auto report = harness::run_experiment(cfg);
  harness::emit_outputs(report, out_dir);

  for (const auto& c : report.policies) {
    std::printf("%-8s final mean loss %.4f  worst %.4f  mean R %.4f  mean R' %.4f\n",
                c.name.c_str(), c.mean_loss.back(), c.worst_loss.back(), c.mean_regret.back(),
                c.mean_easeml.back());
  }
  std::fprintf(stderr, "%zu runs in %.2f s, output in %s\n", report.runs.size(),
               report.wall_clock_seconds, out_dir.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const mtsel::NumericalError& e) {
    std::fprintf(stderr, "numerical failure: %s\n", e.what());
    return 2;
  } catch (const mtsel::InputError& e) {
    std::fprintf(stderr, "input error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
