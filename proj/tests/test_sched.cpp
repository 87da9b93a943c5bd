#include <doctest.h>

#include <algorithm>
#include <map>
#include <random>
#include <set>
#include <vector>

#include "mtsel/errors.hpp"
#include "mtsel/random.hpp"
#include "mtsel/sched.hpp"

using namespace mtsel;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

gp::GpPrior unit_prior(int k) { return {VectorXd::Zero(k), MatrixXd::Identity(k, k), 0.1}; }

sched::TenantState blank_state(std::size_t id, int k) {
  return sched::TenantState::initial(
      id, bandit::BanditState::initial(unit_prior(k), bandit::ArmCosts::unit(k), false));
}

// A tenant whose history and bounds are set by hand.
sched::TenantState scripted(std::size_t id, int k, std::vector<gp::Observation> history,
                            std::vector<double> bounds) {
  auto s = blank_state(id, k);
  s.bandit.posterior.history = std::move(history);
  s.bandit.step = 1 + s.bandit.posterior.history.size();
  s.play_ucb.assign(s.bandit.posterior.history.size(), 0.0);
  s.empirical_bound = std::move(bounds);
  for (const auto& o : s.observations()) {
    s.best_observed = std::max(s.best_observed.value_or(o.y), o.y);
  }
  return s;
}

// A served tenant with a fixed posterior (zero std, so UCB = mean).
sched::TenantState with_means(std::size_t id, std::vector<double> means, double best, double bound) {
  const int k = static_cast<int>(means.size());
  auto s = scripted(id, k, {{0, best}}, {bound});
  s.bandit.posterior.mean = Eigen::Map<VectorXd>(means.data(), k);
  s.bandit.posterior.std = VectorXd::Zero(k);
  return s;
}

struct Instance {
  workload::WorkloadMatrix w;
  std::vector<gp::GpPrior> priors;
};

Instance random_instance(std::uint64_t seed, int n, int k) {
  Rng rng = make_rng({seed, 31});
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  MatrixXd q(n, k), c(n, k);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < k; ++j) {
      q(i, j) = unit(rng);
      c(i, j) = 0.05 + unit(rng);
    }
  std::vector<VectorXd> f;
  for (int j = 0; j < k; ++j) f.push_back(VectorXd::Constant(1, unit(rng)));
  const gp::GpPrior p{VectorXd::Constant(k, 0.5), gp::build_rbf_kernel(f, {0.3, 0.1}), 0.05};
  return {workload::WorkloadMatrix(q, c), std::vector<gp::GpPrior>(n, p)};
}

sched::SchedulerConfig config(sched::Policy policy, std::size_t rounds, std::uint64_t seed = 0) {
  sched::SchedulerConfig c;
  c.policy = policy;
  c.budget = sched::RoundBudget{rounds};
  c.seed = seed;
  return c;
}

const sched::Policy kAllPolicies[] = {sched::Policy::kFcfs, sched::Policy::kRandom,
                                      sched::Policy::kRoundRobin, sched::Policy::kGreedy,
                                      sched::Policy::kHybrid};

}  // namespace

TEST_CASE("round robin picks") {
  CHECK(sched::round_robin_pick(1, 2) == 1);
  CHECK(sched::round_robin_pick(2, 2) == 0);
  CHECK(sched::round_robin_pick(3, 2) == 1);
  CHECK(sched::round_robin_pick(4, 2) == 0);
  for (std::size_t t = 1; t < 10; ++t) CHECK(sched::round_robin_pick(t, 1) == 0);
  std::vector<int> count(5, 0);
  for (std::size_t t = 1; t <= 5 * 7; ++t) ++count[sched::round_robin_pick(t, 5)];
  CHECK(std::all_of(count.begin(), count.end(), [](int c) { return c == 7; }));
  CHECK_THROWS_AS(sched::round_robin_pick(1, 0), InputError);
}

TEST_CASE("fcfs picks") {
  std::vector<sched::TenantState> states{blank_state(0, 2), blank_state(1, 2)};
  const std::vector<std::size_t> arrival{0, 1};
  CHECK(sched::fcfs_pick(arrival, states) == 0);
  states[0] = scripted(0, 2, {{0, 0.1}, {0, 0.1}}, {0.0, 0.0});
  CHECK(sched::fcfs_pick(arrival, states) == 0);  // arm 1 still unplayed
  states[0] = scripted(0, 2, {{0, 0.1}, {1, 0.2}}, {0.0, 0.0});
  CHECK(sched::fcfs_pick(arrival, states) == 1);
  const std::vector<std::size_t> reversed{1, 0};
  CHECK(sched::fcfs_pick(reversed, states) == 1);
  CHECK_THROWS_AS(sched::fcfs_pick({}, states), InputError);
}

TEST_CASE("random picks") {
  Rng a = make_rng({5}), b = make_rng({5});
  for (int i = 0; i < 20; ++i) CHECK(sched::random_pick(a, 7) == sched::random_pick(b, 7));
  CHECK(sched::random_pick(a, 1) == 0);
  std::vector<int> count(4, 0);
  Rng rng = make_rng({6});
  for (int i = 0; i < 10000; ++i) ++count[sched::random_pick(rng, 4)];
  for (int c : count) {
    CHECK(c >= 2200);
    CHECK(c <= 2800);
  }
}

TEST_CASE("empirical bound recurrence") {
  CHECK(sched::empirical_bound(0.9, 0.7, {}) == doctest::Approx(0.2));
  const std::vector<double> earlier{0.9};
  CHECK(sched::empirical_bound(0.95, 0.85, earlier) == doctest::Approx(0.05));
  CHECK(sched::empirical_bound(0.6, 0.7, {}) == 0.0);

  auto s = scripted(0, 2, {{0, 0.7}}, {});
  s.play_ucb = {0.9};
  sched::refine_empirical_bound(s);
  CHECK(s.current_bound() == doctest::Approx(0.2));
  s.bandit.posterior.history.push_back({1, 0.85});
  s.play_ucb.push_back(0.95);
  sched::refine_empirical_bound(s);
  CHECK(s.current_bound() == doctest::Approx(0.05));
  CHECK_THROWS_AS(sched::refine_empirical_bound(s), StateError);  // already up to date

  auto never = blank_state(1, 2);
  CHECK_THROWS_AS(sched::refine_empirical_bound(never), StateError);
  CHECK_THROWS_AS(never.current_bound(), StateError);
}

TEST_CASE("candidate set") {
  std::vector<sched::TenantState> equal{scripted(0, 1, {{0, 0.1}}, {0.2}),
                                        scripted(1, 1, {{0, 0.1}}, {0.2}),
                                        scripted(2, 1, {{0, 0.1}}, {0.2})};
  CHECK(sched::candidate_set(equal) == std::vector<std::size_t>{0, 1, 2});

  // Means of equal values that do not round-trip exactly still qualify.
  std::vector<sched::TenantState> tenth(3, scripted(0, 1, {{0, 0.1}}, {0.1}));
  CHECK(sched::candidate_set(tenth).size() == 3);

  std::vector<sched::TenantState> mixed{scripted(0, 1, {{0, 0.1}}, {0.3}),
                                        scripted(1, 1, {{0, 0.1}}, {0.1}),
                                        scripted(2, 1, {{0, 0.1}}, {0.2})};
  CHECK(sched::candidate_set(mixed) == std::vector<std::size_t>{0, 2});

  std::vector<sched::TenantState> one{scripted(0, 1, {{0, 0.1}}, {0.7})};
  CHECK(sched::candidate_set(one) == std::vector<std::size_t>{0});
}

TEST_CASE("candidate set does not depend on tenant order") {
  Rng rng = make_rng({7});
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<sched::TenantState> states;
    for (std::size_t i = 0; i < 6; ++i) states.push_back(scripted(i, 1, {{0, 0.1}}, {unit(rng)}));
    std::vector<std::size_t> perm{0, 1, 2, 3, 4, 5};
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<sched::TenantState> shuffled;
    for (auto p : perm) shuffled.push_back(states[p]);
    std::set<std::size_t> a, b;
    for (auto i : sched::candidate_set(states)) a.insert(i);
    for (auto i : sched::candidate_set(shuffled)) b.insert(perm[i]);
    CHECK(a == b);
  }
}

TEST_CASE("greedy user picks") {
  Rng rng = make_rng({8});
  const sched::ScoringContext ctx{bandit::BetaMode{}, false};
  std::vector<sched::TenantState> states{with_means(0, {0.65, 0.2}, 0.5, 0.3),
                                         with_means(1, {1.4, 0.2}, 0.5, 0.0),
                                         with_means(2, {0.3, 0.95}, 0.7, 0.1)};
  CHECK(sched::user_gap(states[0], ctx) == doctest::Approx(0.15));
  CHECK(sched::user_gap(states[2], ctx) == doctest::Approx(0.25));
  const std::vector<std::size_t> V{0, 2};
  CHECK(sched::greedy_pick_user(V, states, sched::UserPickRule::kMaxGap, ctx, rng) == 2);
  CHECK(sched::greedy_pick_user(V, states, sched::UserPickRule::kMaxSigma, ctx, rng) == 0);
  const std::vector<std::size_t> single{1};
  CHECK(sched::greedy_pick_user(single, states, sched::UserPickRule::kMaxGap, ctx, rng) == 1);

  std::vector<sched::TenantState> tied{with_means(0, {0.6}, 0.5, 0.1), with_means(1, {0.6}, 0.5, 0.1)};
  const std::vector<std::size_t> both{1, 0};
  CHECK(sched::greedy_pick_user(both, tied, sched::UserPickRule::kMaxGap, ctx, rng) == 0);
  CHECK(sched::greedy_pick_user(both, tied, sched::UserPickRule::kMaxSigma, ctx, rng) == 0);

  std::set<std::size_t> seen;
  for (int i = 0; i < 50; ++i) {
    seen.insert(sched::greedy_pick_user(V, states, sched::UserPickRule::kRandomInSet, ctx, rng));
  }
  CHECK(seen == std::set<std::size_t>{0, 2});
  CHECK_THROWS_AS(sched::greedy_pick_user({}, states, sched::UserPickRule::kMaxGap, ctx, rng),
                  StateError);
}

TEST_CASE("max-gap pick is invariant to a common shift") {
  Rng rng = make_rng({9});
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const sched::ScoringContext ctx{bandit::BetaMode{}, false};
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<sched::TenantState> a, b;
    std::vector<std::size_t> V;
    for (std::size_t i = 0; i < 5; ++i) {
      auto s = with_means(i, {unit(rng), unit(rng), unit(rng)}, unit(rng), 0.1);
      s.bandit.posterior.std = VectorXd{{unit(rng), unit(rng), unit(rng)}};
      a.push_back(s);
      s.bandit.posterior.mean.array() += 0.37;
      s.best_observed = *s.best_observed + 0.37;
      b.push_back(s);
      V.push_back(i);
    }
    CHECK(sched::greedy_pick_user(V, a, sched::UserPickRule::kMaxGap, ctx, rng) ==
          sched::greedy_pick_user(V, b, sched::UserPickRule::kMaxGap, ctx, rng));
  }
}

TEST_CASE("freeze detector") {
  sched::FreezeDetector d(10);
  const std::vector<std::size_t> V{0, 1};
  for (int i = 0; i < 9; ++i) d.record(V, 1.5);
  CHECK_FALSE(d.frozen());
  d.record(V, 1.6);  // progress resets the streak
  for (int i = 0; i < 9; ++i) d.record(V, 1.6);
  CHECK(d.frozen());
  d.record(std::vector<std::size_t>{2}, 2.0);
  CHECK(d.frozen());  // latched

  sched::FreezeDetector changing(3);
  changing.record(V, 1.0);
  changing.record(std::vector<std::size_t>{0}, 1.0);
  changing.record(V, 1.0);
  CHECK_FALSE(changing.frozen());

  sched::FreezeDetector off(sched::kHybridDisabled);
  for (int i = 0; i < 1000; ++i) off.record(V, 1.0);
  CHECK_FALSE(off.frozen());
}

TEST_CASE("hybrid pick switches to round robin after s stalled steps") {
  Rng rng = make_rng({10});
  const sched::ScoringContext ctx{bandit::BetaMode{}, false};
  std::vector<sched::TenantState> states{with_means(0, {0.9}, 0.5, 0.5),
                                         with_means(1, {0.6}, 0.5, 0.0),
                                         with_means(2, {0.6}, 0.5, 0.0)};
  sched::FreezeDetector d(10);
  const auto V = sched::candidate_set(states);
  for (int step = 0; step < 10; ++step) {
    CHECK(sched::hybrid_pick(states, d, 20 + step, sched::UserPickRule::kMaxGap, ctx, rng) == 0);
    d.record(V, 1.5);
  }
  CHECK(d.frozen());
  CHECK(sched::hybrid_pick(states, d, 31, sched::UserPickRule::kMaxGap, ctx, rng) == 31 % 3);
  CHECK(sched::hybrid_pick(states, d, 32, sched::UserPickRule::kMaxGap, ctx, rng) == 32 % 3);
}

TEST_CASE("two-tenant worked example") {
  MatrixXd q(2, 3);
  q << 0.90, 0.95, 1.00, 0.70, 0.95, 1.00;
  const workload::WorkloadMatrix w(q, MatrixXd::Ones(1, 3));
  const std::vector<gp::GpPrior> priors(2, unit_prior(3));
  const auto fcfs = sched::run_schedule(w, config(sched::Policy::kFcfs, 2), priors);
  REQUIRE(fcfs.rounds() == 2);
  CHECK(fcfs.events[0].tenant == 0);
  CHECK(fcfs.events[0].arm == 0);
  CHECK(fcfs.events[1].tenant == 0);
  CHECK(fcfs.events[1].arm == 1);

  const auto greedy = sched::run_schedule(w, config(sched::Policy::kGreedy, 2), priors);
  CHECK(greedy.events[0].tenant == 0);
  CHECK(greedy.events[1].tenant == 1);
  CHECK(greedy.events[1].arm == 0);
  CHECK(greedy.events[1].phase == sched::Phase::kInitialization);
}

TEST_CASE("one tenant reduces to single-tenant GP-UCB") {
  const auto inst = random_instance(1, 1, 6);
  for (auto policy : kAllPolicies) {
    auto cfg = config(policy, 15, 42);
    cfg.observation_noise_std = 0.05;
    const auto trace = sched::run_schedule(inst.w, cfg, inst.priors);

    auto s = bandit::BanditState::initial(inst.priors[0], bandit::ArmCosts(std::vector<double>(
                                                              inst.w.cost().data(), inst.w.cost().data() + 6)),
                                          false);
    std::map<std::size_t, std::size_t> plays;
    REQUIRE(trace.rounds() == 15);
    for (const auto& e : trace.events) {
      auto r = bandit::single_tenant_step(s, bandit::BetaMode{}, [&](std::size_t a) {
        return inst.w.quality(0, a) + sched::observation_noise(42, 0, a, plays[a]++, 0.05);
      });
      CHECK(e.tenant == 0);
      CHECK(e.arm == r.arm);
      CHECK(e.observation == r.observation);
      s = std::move(r.state);
    }
  }
}

TEST_CASE("cost budget arithmetic") {
  MatrixXd q(1, 4);
  q << 0.2, 0.4, 0.6, 0.8;
  const workload::WorkloadMatrix w(q, MatrixXd::Constant(1, 4, 3.0));
  const std::vector<gp::GpPrior> priors{unit_prior(4)};
  auto cfg = config(sched::Policy::kGreedy, 1);
  cfg.budget = sched::CostBudget{10.0};
  const auto trace = sched::run_schedule(w, cfg, priors);
  REQUIRE(trace.rounds() == 4);
  CHECK(trace.events[0].phase == sched::Phase::kInitialization);
  CHECK(std::count_if(trace.events.begin(), trace.events.end(), [](const auto& e) {
          return e.phase == sched::Phase::kPolicy;
        }) == 3);
  CHECK(trace.cumulative_cost == 12.0);
}

TEST_CASE("budgets too small for the initialization are rejected") {
  const auto inst = random_instance(2, 3, 4);
  CHECK_THROWS_AS(sched::run_schedule(inst.w, config(sched::Policy::kGreedy, 2), inst.priors),
                  InputError);
  auto cfg = config(sched::Policy::kHybrid, 1);
  cfg.budget = sched::CostBudget{0.01};
  CHECK_THROWS_AS(sched::run_schedule(inst.w, cfg, inst.priors), InputError);
  // Policies without an initialization phase accept any positive budget.
  CHECK(sched::run_schedule(inst.w, config(sched::Policy::kRoundRobin, 2), inst.priors).rounds() == 2);
}

TEST_CASE("run_schedule input checks") {
  const auto inst = random_instance(3, 2, 4);
  const std::vector<gp::GpPrior> one{inst.priors[0]};
  CHECK_THROWS_AS(sched::run_schedule(inst.w, config(sched::Policy::kGreedy, 10), one), InputError);
  auto cfg = config(sched::Policy::kGreedy, 10);
  cfg.hybrid_s = 0;
  CHECK_THROWS_AS(sched::run_schedule(inst.w, cfg, inst.priors), InputError);
  cfg = config(sched::Policy::kGreedy, 10);
  cfg.budget = sched::CostBudget{-1.0};
  CHECK_THROWS_AS(sched::run_schedule(inst.w, cfg, inst.priors), InputError);
}

TEST_CASE("trace invariants under every policy") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto inst = random_instance(seed, 4, 6);
    for (auto policy : kAllPolicies) {
      for (bool aware : {false, true}) {
        auto cfg = config(policy, 30, seed);
        cfg.cost_aware = aware;
        const auto trace = sched::run_schedule(inst.w, cfg, inst.priors);
        REQUIRE(trace.rounds() == 30);
        double cum = 0.0;
        std::vector<std::optional<double>> best(4);
        for (std::size_t t = 0; t < trace.rounds(); ++t) {
          const auto& e = trace.events[t];
          CHECK(e.round == t + 1);
          CHECK(e.cost == inst.w.cost()(static_cast<Eigen::Index>(e.tenant), static_cast<Eigen::Index>(e.arm)));
          cum += e.cost;
          CHECK(e.cumulative_cost == cum);
          best[e.tenant] = std::max(best[e.tenant].value_or(e.observation), e.observation);
          CHECK(e.best_observed == best);
        }
      }
    }
  }
}

TEST_CASE("round robin keeps service counts within one") {
  const auto inst = random_instance(4, 5, 4);
  const auto trace = sched::run_schedule(inst.w, config(sched::Policy::kRoundRobin, 37), inst.priors);
  std::vector<int> served(5, 0);
  for (const auto& e : trace.events) {
    ++served[e.tenant];
    const auto [lo, hi] = std::minmax_element(served.begin(), served.end());
    CHECK(*hi - *lo <= 1);
  }
}

TEST_CASE("schedules are deterministic") {
  const auto inst = random_instance(5, 4, 6);
  for (auto policy : kAllPolicies) {
    auto cfg = config(policy, 25, 9);
    cfg.observation_noise_std = 0.1;
    cfg.user_pick_rule = sched::UserPickRule::kRandomInSet;
    const auto a = sched::run_schedule(inst.w, cfg, inst.priors);
    const auto b = sched::run_schedule(inst.w, cfg, inst.priors);
    for (std::size_t t = 0; t < a.rounds(); ++t) {
      CHECK(a.events[t].tenant == b.events[t].tenant);
      CHECK(a.events[t].arm == b.events[t].arm);
      CHECK(a.events[t].observation == b.events[t].observation);
    }
  }
}

TEST_CASE("disabled freeze detection makes hybrid identical to greedy") {
  const auto inst = random_instance(6, 5, 6);
  auto cfg = config(sched::Policy::kGreedy, 60, 3);
  const auto greedy = sched::run_schedule(inst.w, cfg, inst.priors);
  cfg.policy = sched::Policy::kHybrid;
  cfg.hybrid_s = sched::kHybridDisabled;
  const auto hybrid = sched::run_schedule(inst.w, cfg, inst.priors);
  CHECK_FALSE(hybrid.hybrid_switch_round.has_value());
  for (std::size_t t = 0; t < greedy.rounds(); ++t) {
    CHECK(greedy.events[t].tenant == hybrid.events[t].tenant);
    CHECK(greedy.events[t].arm == hybrid.events[t].arm);
  }
}

TEST_CASE("observation noise is keyed by the play") {
  CHECK(sched::observation_noise(1, 2, 3, 0, 0.0) == 0.0);
  CHECK(sched::observation_noise(1, 2, 3, 4, 0.1) == sched::observation_noise(1, 2, 3, 4, 0.1));
  CHECK(sched::observation_noise(1, 2, 3, 4, 0.1) != sched::observation_noise(1, 2, 3, 5, 0.1));
  CHECK(sched::observation_noise(1, 2, 3, 4, 0.1) != sched::observation_noise(2, 2, 3, 4, 0.1));
}
