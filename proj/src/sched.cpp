#include "mtsel/sched.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

#include "mtsel/errors.hpp"

namespace mtsel::sched {

namespace {

enum StreamTag : std::uint64_t { kUserPicks = 101, kObservationNoise = 102 };

// Relative slack for the "at least the mean" comparison; the mean of n equal
// values need not round back to that value.
constexpr double kMeanSlack = 1e-12;

bandit::BetaMode resolve_beta_mode(bandit::BetaMode mode, const workload::WorkloadMatrix& w,
                                   std::span<const gp::GpPrior> priors) {
  if (mode.c_star <= 0.0) {
    double c_star = 0.0;
    for (std::size_t i = 0; i < priors.size(); ++i) {
      const auto k = static_cast<Eigen::Index>(priors[i].arm_count());
      c_star = std::max(c_star, w.cost().row(static_cast<Eigen::Index>(i)).head(k).maxCoeff());
    }
    mode.c_star = c_star;
  }
  if (mode.n_users == 0) mode.n_users = priors.size();
  if (mode.k_star == 0) {
    for (const auto& p : priors) mode.k_star = std::max(mode.k_star, p.arm_count());
  }
  mode.validate();
  return mode;
}

double best_sum(std::span<const TenantState> states) {
  double sum = 0.0;
  for (const auto& s : states) sum += s.best_observed.value_or(0.0);
  return sum;
}

}  // namespace

void SchedulerConfig::validate() const {
  beta_mode.validate();
  if (hybrid_s == 0) throw InputError("hybrid_s must be >= 1");
  if (!(observation_noise_std >= 0.0)) throw InputError("observation noise std must be >= 0");
  std::visit(
      [](const auto& b) {
        using B = std::decay_t<decltype(b)>;
        if constexpr (std::is_same_v<B, RoundBudget>) {
          if (b.rounds == 0) throw InputError("round budget must be positive");
        } else {
          if (!(b.total > 0.0)) throw InputError("cost budget must be positive");
        }
      },
      budget);
}

bool initializes_all_tenants(Policy policy) {
  return policy == Policy::kGreedy || policy == Policy::kHybrid;
}

TenantState TenantState::initial(std::size_t id, bandit::BanditState bandit) {
  TenantState s;
  s.tenant_id = id;
  s.bandit = std::move(bandit);
  return s;
}

double TenantState::current_bound() const {
  if (empirical_bound.empty()) {
    throw StateError("tenant " + std::to_string(tenant_id) + " has no empirical bound yet");
  }
  return empirical_bound.back();
}

std::size_t round_robin_pick(std::size_t t, std::size_t n) {
  if (n == 0) throw InputError("round robin needs at least one tenant");
  return t % n;
}

std::size_t fcfs_pick(std::span<const std::size_t> arrival_order,
                      std::span<const TenantState> states) {
  if (arrival_order.empty()) throw InputError("FCFS needs a non-empty arrival order");
  for (std::size_t id : arrival_order) {
    if (id >= states.size()) throw InputError("arrival order references an unknown tenant");
    const auto& s = states[id];
    std::vector<bool> played(s.bandit.arm_count(), false);
    std::size_t distinct = 0;
    for (const auto& o : s.observations()) {
      if (!played[o.arm]) {
        played[o.arm] = true;
        ++distinct;
      }
    }
    if (distinct < played.size()) return id;
  }
  return arrival_order.front();
}

std::size_t random_pick(Rng& rng, std::size_t n) {
  if (n == 0) throw InputError("random pick needs at least one tenant");
  return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
}

double empirical_bound(double ucb, double y, std::span<const double> earlier_empirical_ucbs) {
  double bound = ucb;
  for (double e : earlier_empirical_ucbs) bound = std::min(bound, e);
  return std::max(0.0, bound - y);
}

void refine_empirical_bound(TenantState& state) {
  const auto obs = state.observations();
  if (obs.empty()) {
    throw StateError("tenant " + std::to_string(state.tenant_id) + " has never been served");
  }
  if (state.empirical_bound.size() + 1 != obs.size() || state.play_ucb.size() != obs.size()) {
    throw StateError("empirical bound bookkeeping is out of step with the observations");
  }
  std::vector<double> earlier(state.empirical_bound.size());
  for (std::size_t s = 0; s < earlier.size(); ++s) earlier[s] = obs[s].y + state.empirical_bound[s];
  state.empirical_bound.push_back(empirical_bound(state.play_ucb.back(), obs.back().y, earlier));
}

std::vector<std::size_t> candidate_set(std::span<const TenantState> states) {
  if (states.empty()) return {};
  double sum = 0.0;
  for (const auto& s : states) sum += s.current_bound();
  const double mean = sum / static_cast<double>(states.size());
  const double threshold = mean - kMeanSlack * std::max(1.0, std::abs(mean));
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < states.size(); ++i) {
    if (states[i].current_bound() >= threshold) out.push_back(i);
  }
  return out;
}

double user_gap(const TenantState& state, const ScoringContext& ctx) {
  const double beta = bandit::beta_schedule(ctx.beta_mode, state.step(), state.bandit.arm_count());
  const Eigen::VectorXd scores =
      bandit::ucb_scores(state.bandit.posterior, beta, state.bandit.costs, ctx.cost_aware);
  return scores.maxCoeff() - state.best_observed.value_or(0.0);
}

std::size_t greedy_pick_user(std::span<const std::size_t> candidates,
                             std::span<const TenantState> states, UserPickRule rule,
                             const ScoringContext& ctx, Rng& rng) {
  if (candidates.empty()) throw StateError("candidate set is empty");
  std::vector<std::size_t> ordered(candidates.begin(), candidates.end());
  std::sort(ordered.begin(), ordered.end());
  for (auto id : ordered) {
    if (id >= states.size()) throw InputError("candidate references an unknown tenant");
  }

  if (rule == UserPickRule::kRandomInSet) {
    return ordered[random_pick(rng, ordered.size())];
  }
  std::size_t best = ordered.front();
  double best_value = 0.0;
  for (std::size_t k = 0; k < ordered.size(); ++k) {
    const auto& s = states[ordered[k]];
    const double value = rule == UserPickRule::kMaxGap ? user_gap(s, ctx) : s.current_bound();
    if (k == 0 || value > best_value) {
      best = ordered[k];
      best_value = value;
    }
  }
  return best;
}

void FreezeDetector::record(std::span<const std::size_t> candidates, double best_observed_sum) {
  const bool same = streak_ > 0 && best_observed_sum == last_sum_ &&
                    std::equal(candidates.begin(), candidates.end(), last_candidates_.begin(),
                               last_candidates_.end());
  streak_ = same ? streak_ + 1 : 1;
  last_candidates_.assign(candidates.begin(), candidates.end());
  last_sum_ = best_observed_sum;
  if (window_ != kHybridDisabled && streak_ >= window_) frozen_ = true;
}

std::size_t hybrid_pick(std::span<const TenantState> states, const FreezeDetector& detector,
                        std::size_t round, UserPickRule rule, const ScoringContext& ctx, Rng& rng) {
  if (detector.frozen()) return round_robin_pick(round, states.size());
  const auto candidates = candidate_set(states);
  return greedy_pick_user(candidates, states, rule, ctx, rng);
}

double observation_noise(std::uint64_t seed, std::size_t tenant, std::size_t arm,
                         std::size_t play_index, double stddev) {
  if (stddev == 0.0) return 0.0;
  Rng rng = make_rng({seed, kObservationNoise, tenant, arm, play_index});
  return std::normal_distribution<double>(0.0, stddev)(rng);
}

ScheduleTrace run_schedule(const workload::WorkloadMatrix& workload, const SchedulerConfig& config,
                           std::span<const gp::GpPrior> priors) {
  config.validate();
  const std::size_t n = workload.user_count();
  if (priors.size() != n) {
    throw InputError("got " + std::to_string(priors.size()) + " priors for " + std::to_string(n) +
                     " tenants");
  }
  for (const auto& p : priors) {
    if (p.arm_count() == 0 || p.arm_count() > workload.model_count()) {
      throw InputError("prior arm count must lie in [1, model count]");
    }
  }
  const ScoringContext ctx{resolve_beta_mode(config.beta_mode, workload, priors), config.cost_aware};

  std::vector<TenantState> states;
  states.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto k = static_cast<Eigen::Index>(priors[i].arm_count());
    const Eigen::VectorXd row = workload.cost().row(static_cast<Eigen::Index>(i)).head(k);
    bandit::ArmCosts costs(std::vector<double>(row.data(), row.data() + row.size()));
    states.push_back(TenantState::initial(
        i, bandit::BanditState::initial(priors[i], std::move(costs), config.cost_aware)));
  }

  std::vector<std::size_t> arrival = config.arrival_order;
  if (arrival.empty()) {
    arrival.resize(n);
    for (std::size_t i = 0; i < n; ++i) arrival[i] = i;
  }

  std::vector<std::vector<std::size_t>> plays(n);
  for (std::size_t i = 0; i < n; ++i) plays[i].assign(priors[i].arm_count(), 0);

  Rng pick_rng = make_rng({config.seed, kUserPicks});
  ScheduleTrace trace;
  trace.tenant_count = n;

  const auto budget_left = [&] {
    if (const auto* r = std::get_if<RoundBudget>(&config.budget)) return trace.rounds() < r->rounds;
    return trace.cumulative_cost < std::get<CostBudget>(config.budget).total;
  };

  const auto serve = [&](std::size_t j, Phase phase) {
    TenantState& s = states[j];
    const auto observe = [&](std::size_t arm) {
      const std::size_t index = plays[j][arm]++;
      return workload.quality(j, arm) +
             observation_noise(config.seed, j, arm, index, config.observation_noise_std);
    };
    auto step = bandit::single_tenant_step(s.bandit, ctx.beta_mode, observe);
    s.bandit = std::move(step.state);
    s.play_ucb.push_back(step.ucb);
    s.best_observed = std::max(s.best_observed.value_or(step.observation), step.observation);

    ScheduleEvent e;
    e.round = trace.rounds() + 1;
    s.last_served_round = e.round;
    refine_empirical_bound(s);
    e.tenant = j;
    e.arm = step.arm;
    e.cost = workload.cost(j, step.arm);
    trace.cumulative_cost += e.cost;
    e.cumulative_cost = trace.cumulative_cost;
    e.observation = step.observation;
    e.beta = step.beta;
    e.ucb = step.ucb;
    e.played_std = step.played_std;
    e.phase = phase;
    e.best_observed.reserve(n);
    for (const auto& t : states) e.best_observed.push_back(t.best_observed);
    trace.events.push_back(std::move(e));
  };

  if (initializes_all_tenants(config.policy)) {
    if (const auto* r = std::get_if<RoundBudget>(&config.budget); r && r->rounds < n) {
      throw InputError("round budget " + std::to_string(r->rounds) + " is smaller than the " +
                       std::to_string(n) + " initialization steps");
    }
    for (std::size_t i = 0; i < n; ++i) {
      if (!budget_left()) {
        throw InputError("budget is exhausted before every tenant was initialized");
      }
      serve(i, Phase::kInitialization);
    }
  }

  FreezeDetector detector(config.policy == Policy::kHybrid ? config.hybrid_s : kHybridDisabled);
  while (budget_left()) {
    const std::size_t round = trace.rounds() + 1;
    switch (config.policy) {
      case Policy::kFcfs:
        serve(fcfs_pick(arrival, states), Phase::kPolicy);
        break;
      case Policy::kRandom:
        serve(random_pick(pick_rng, n), Phase::kPolicy);
        break;
      case Policy::kRoundRobin:
        serve(round_robin_pick(round, n), Phase::kPolicy);
        break;
      case Policy::kGreedy:
        serve(greedy_pick_user(candidate_set(states), states, config.user_pick_rule, ctx, pick_rng),
              Phase::kPolicy);
        break;
      case Policy::kHybrid: {
        const auto candidates = candidate_set(states);
        if (detector.frozen()) {
          if (!trace.hybrid_switch_round) trace.hybrid_switch_round = round;
          serve(round_robin_pick(round, n), Phase::kRoundRobinFallback);
        } else {
          serve(greedy_pick_user(candidates, states, config.user_pick_rule, ctx, pick_rng),
                Phase::kPolicy);
        }
        detector.record(candidates, best_sum(states));
        break;
      }
    }
  }
  return trace;
}

}  // namespace mtsel::sched
