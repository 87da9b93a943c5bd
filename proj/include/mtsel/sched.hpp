#pragma once

// Multi-tenant scheduling: which tenant gets the next GP-UCB step.
//
// Every tenant runs its own single-tenant GP-UCB. A policy decides, round by
// round, which tenant is served; the served tenant plays one arm and pays its
// cost. GREEDY serves tenants whose empirical confidence bound is at or above
// the cross-tenant average; HYBRID falls back to round-robin once GREEDY
// stops making visible progress.

#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <variant>
#include <vector>

#include "mtsel/bandit.hpp"
#include "mtsel/gp.hpp"
#include "mtsel/random.hpp"
#include "mtsel/workload.hpp"

namespace mtsel::sched {

enum class Policy { kFcfs, kRandom, kRoundRobin, kGreedy, kHybrid };

enum class UserPickRule { kMaxGap, kMaxSigma, kRandomInSet };

/// hybrid_s value for which the freeze detector never fires.
inline constexpr std::size_t kHybridDisabled = std::numeric_limits<std::size_t>::max();

struct RoundBudget {
  std::size_t rounds = 0;
};

/// Rounds run while the cumulative cost is below `total`; the last round may
/// overshoot by at most one play.
struct CostBudget {
  double total = 0.0;
};

using Budget = std::variant<RoundBudget, CostBudget>;

struct SchedulerConfig {
  Policy policy = Policy::kGreedy;
  bandit::BetaMode beta_mode;
  bool cost_aware = false;
  std::size_t hybrid_s = 10;
  UserPickRule user_pick_rule = UserPickRule::kMaxGap;
  Budget budget = RoundBudget{100};
  std::uint64_t seed = 0;
  /// Std of zero-mean Gaussian noise added to each observed quality.
  double observation_noise_std = 0.0;
  /// FCFS service order; empty means tenant id order.
  std::vector<std::size_t> arrival_order;

  void validate() const;
};

/// Whether a policy runs the one-step-per-tenant initialization first.
bool initializes_all_tenants(Policy policy);

struct TenantState {
  std::size_t tenant_id = 0;
  bandit::BanditState bandit;
  /// Empirical confidence bound sigma~ per play, clamped at 0.
  std::vector<double> empirical_bound;
  /// B(a) = winning UCB score at the time of each play.
  std::vector<double> play_ucb;
  std::optional<double> best_observed;
  std::optional<std::size_t> last_served_round;

  static TenantState initial(std::size_t id, bandit::BanditState bandit);

  /// t_i: 1 + number of observations.
  std::size_t step() const { return bandit.step; }
  std::span<const gp::Observation> observations() const { return bandit.history(); }
  bool served() const { return !observations().empty(); }
  /// sigma~ of the latest play; throws StateError if never served.
  double current_bound() const;
};

enum class Phase {
  kInitialization,      // one step per tenant before the policy loop
  kPolicy,              // pick made by the configured policy
  kRoundRobinFallback,  // HYBRID after the freeze detector fired
};

struct ScheduleEvent {
  std::size_t round = 0;  // 1-based
  std::size_t tenant = 0;
  std::size_t arm = 0;
  double cost = 0.0;
  double cumulative_cost = 0.0;
  double observation = 0.0;
  double beta = 0.0;
  double ucb = 0.0;
  double played_std = 0.0;  // sigma_{t-1}(a_t) of the served tenant
  Phase phase = Phase::kPolicy;
  std::vector<std::optional<double>> best_observed;  // per tenant, after the play
};

struct ScheduleTrace {
  std::vector<ScheduleEvent> events;
  double cumulative_cost = 0.0;
  std::size_t tenant_count = 0;
  /// First round served by the HYBRID round-robin fallback, if it fired.
  std::optional<std::size_t> hybrid_switch_round;

  std::size_t rounds() const { return events.size(); }
};

// --- user-picking rules ----------------------------------------------------

/// t mod n.
std::size_t round_robin_pick(std::size_t t, std::size_t n);

/// Earliest arrival that has not yet played every one of its arms; the
/// earliest arrival overall once everybody is exhausted.
std::size_t fcfs_pick(std::span<const std::size_t> arrival_order,
                      std::span<const TenantState> states);

/// Uniform over [0, n).
std::size_t random_pick(Rng& rng, std::size_t n);

/// min{B, min over earlier plays of (y' + sigma~')} - y, clamped at 0.
double empirical_bound(double ucb, double y, std::span<const double> earlier_empirical_ucbs);

/// Appends sigma~ for the tenant's latest play. Throws StateError when the
/// tenant has never been served or the bound is already up to date.
void refine_empirical_bound(TenantState& state);

/// Tenants whose current sigma~ is at least the mean over all tenants.
std::vector<std::size_t> candidate_set(std::span<const TenantState> states);

struct ScoringContext {
  bandit::BetaMode beta_mode;
  bool cost_aware = false;
};

/// Largest current UCB score over the tenant's arms minus its best observed
/// quality (0 if never served). Uses beta for the tenant's next step.
double user_gap(const TenantState& state, const ScoringContext& ctx);

std::size_t greedy_pick_user(std::span<const std::size_t> candidates,
                             std::span<const TenantState> states, UserPickRule rule,
                             const ScoringContext& ctx, Rng& rng);

/// Fires once the last `window` recorded steps all saw the same candidate set
/// and the same total best-observed quality. Latches once fired.
class FreezeDetector {
 public:
  explicit FreezeDetector(std::size_t window) : window_(window) {}

  void record(std::span<const std::size_t> candidates, double best_observed_sum);
  bool frozen() const { return frozen_; }
  std::size_t window() const { return window_; }

 private:
  std::size_t window_;
  std::size_t streak_ = 0;
  std::vector<std::size_t> last_candidates_;
  double last_sum_ = 0.0;
  bool frozen_ = false;
};

/// Greedy pick until the detector fires, round-robin on `round` afterwards.
std::size_t hybrid_pick(std::span<const TenantState> states, const FreezeDetector& detector,
                        std::size_t round, UserPickRule rule, const ScoringContext& ctx, Rng& rng);

/// Drives the whole multi-tenant loop. Tenant i uses priors[i] over the
/// first priors[i].arm_count() models of row i of the workload.
ScheduleTrace run_schedule(const workload::WorkloadMatrix& workload, const SchedulerConfig& config,
                           std::span<const gp::GpPrior> priors);

/// Observation noise for the `play_index`-th play of (tenant, arm), keyed so
/// that identical plays draw identical noise under any policy.
double observation_noise(std::uint64_t seed, std::size_t tenant, std::size_t arm,
                         std::size_t play_index, double stddev);

}  // namespace mtsel::sched
