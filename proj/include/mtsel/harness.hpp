#pragma once

// Experiment runner. Each seeded repeat runs every policy on the same split
// and noise stream; curves are aggregated over repeats and written as CSV
// and JSON.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "mtsel/metrics.hpp"
#include "mtsel/sched.hpp"
#include "mtsel/workload.hpp"

namespace mtsel::harness {

struct CsvSource {
  std::filesystem::path quality;
  std::filesystem::path cost;
};

struct SyntheticSource {
  workload::SynGenConfig config;
  /// Draw a fresh matrix per repeat (generator seed + repeat index) instead
  /// of one matrix shared by all repeats.
  bool resample_per_repeat = false;
};

using WorkloadSource = std::variant<CsvSource, SyntheticSource, workload::WorkloadMatrix>;

/// Fraction of all (tenant, model) plays of the test tenants; a round budget.
struct PlayFraction {
  double fraction = 0.5;
};

/// Fraction of the summed cost of every test-tenant model; a cost budget.
struct CostFraction {
  double fraction = 0.1;
};

using BudgetSpec = std::variant<sched::RoundBudget, sched::CostBudget, PlayFraction, CostFraction>;

struct PolicyEntry {
  std::string name;
  /// `budget` and `seed` are overwritten per repeat.
  sched::SchedulerConfig config;
};

struct ExperimentConfig {
  WorkloadSource source;
  std::vector<PolicyEntry> policies;
  std::size_t repeats = 50;
  std::uint64_t base_seed = 0;
  std::size_t test_tenant_count = 10;
  double train_fraction = 0.9;
  /// Noise level of the fitted GP priors (not of the observations).
  double gp_noise_std = 0.05;
  /// Unset: 10% of total cost if any policy is cost-aware, else half of all plays.
  std::optional<BudgetSpec> budget;
  /// Cost-axis curves are resampled on this many intervals.
  std::size_t cost_grid_intervals = 100;
  /// Worker threads for repeats; results never depend on it.
  std::size_t jobs = 1;

  void validate() const;
  BudgetSpec effective_budget() const;
  bool cost_axis() const;
};

/// Canonical JSON text of everything that affects results.
std::string config_json(const ExperimentConfig& config);
/// FNV-1a of config_json.
std::uint64_t config_hash(const ExperimentConfig& config);

/// Inputs of one repeat, shared by every policy.
struct RepeatInput {
  std::size_t repeat = 0;
  std::uint64_t seed = 0;
  std::vector<std::size_t> tenant_ids;  // rows of the full workload
  workload::WorkloadMatrix tenants;
  std::vector<gp::GpPrior> priors;
  sched::Budget budget;
};

RepeatInput prepare_repeat(const ExperimentConfig& config, const workload::WorkloadMatrix& full,
                           std::size_t repeat);

struct RunResult {
  std::size_t repeat = 0;
  std::uint64_t seed = 0;
  std::size_t policy = 0;  // index into ExperimentConfig::policies
  sched::ScheduleTrace trace;
  metrics::RegretSeries series;
};

/// Every policy on one prepared repeat, in policy order.
std::vector<RunResult> run_repeat(const ExperimentConfig& config, const RepeatInput& input);

struct PolicyCurves {
  std::string name;
  std::vector<double> mean_loss;
  std::vector<double> worst_loss;
  std::vector<double> mean_regret;
  std::vector<double> worst_regret;
  std::vector<double> mean_easeml;
  std::vector<double> worst_easeml;
};

struct ExperimentReport {
  bool cost_axis = false;
  std::vector<double> axis;  // round index or cumulative cost
  std::vector<PolicyCurves> policies;
  std::vector<RunResult> runs;  // repeat-major, then policy order
  std::vector<std::uint64_t> seeds;
  std::string config_json;
  std::uint64_t config_hash = 0;
  double wall_clock_seconds = 0.0;
};

/// The workload the source describes for one repeat.
workload::WorkloadMatrix materialize(const WorkloadSource& source, std::size_t repeat);

ExperimentReport run_experiment(const ExperimentConfig& config);

using SeriesMember = std::vector<double> metrics::RegretSeries::*;

/// The curve a run contributes on the report axis.
std::vector<double> run_curve(const ExperimentReport& report, const RunResult& run,
                              SeriesMember member);

/// Writes trace.csv and summary.json into `dir` (created if missing).
void emit_outputs(const ExperimentReport& report, const std::filesystem::path& dir);

inline constexpr std::string_view kTraceHeader =
    "run_id,round,cum_cost,policy,tenant,arm,cost,observation,avg_accuracy_loss,cum_regret,"
    "easeml_regret";

// --- text forms of enums and config files ------------------------------------

sched::Policy parse_policy(std::string_view text);
std::string_view policy_token(sched::Policy policy);
sched::UserPickRule parse_user_pick(std::string_view text);
std::string_view user_pick_token(sched::UserPickRule rule);
bandit::BetaVariant parse_beta_variant(std::string_view text);
std::string_view beta_variant_token(bandit::BetaVariant variant);

/// Flat key = value lines; '#' starts a comment. Keys: sigma_m, alpha,
/// sigma_b, mu_b_list (comma separated), n_users, n_models, sigma_w, seed,
/// and optionally sigma_u, cost_model (uniform | loguniform), cost_low,
/// cost_high.
workload::SynGenConfig parse_syn_config(std::istream& in);
workload::SynGenConfig load_syn_config(const std::filesystem::path& path);

}  // namespace mtsel::harness
