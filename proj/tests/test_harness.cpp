#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include <json.hpp>

#include "mtsel/errors.hpp"
#include "mtsel/harness.hpp"

using namespace mtsel;
using namespace mtsel::harness;
using json = nlohmann::json;

namespace {

std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("mtsel_harness_" + name);
  std::filesystem::remove_all(dir);
  return dir;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

PolicyEntry entry(const std::string& name, sched::Policy policy, bool cost_aware = false) {
  PolicyEntry e;
  e.name = name;
  e.config.policy = policy;
  e.config.cost_aware = cost_aware;
  e.config.observation_noise_std = 0.02;
  return e;
}

ExperimentConfig small_config() {
  ExperimentConfig c;
  const double means[] = {0.75, 0.25};
  c.source = SyntheticSource{workload::SynGenConfig::basic(means, 0.1, 30, 6, 0.5, 1.0, 3), true};
  c.policies = {entry("rr", sched::Policy::kRoundRobin), entry("greedy", sched::Policy::kGreedy),
                entry("hybrid", sched::Policy::kHybrid)};
  c.repeats = 4;
  c.base_seed = 100;
  c.test_tenant_count = 3;
  return c;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> cells;
  std::stringstream in(line);
  std::string cell;
  while (std::getline(in, cell, ',')) cells.push_back(cell);
  return cells;
}

}  // namespace

TEST_CASE("experiment defaults") {
  ExperimentConfig c;
  CHECK(c.repeats == 50);
  CHECK(c.test_tenant_count == 10);
  CHECK(c.train_fraction == 0.9);
  c.policies = {entry("rr", sched::Policy::kRoundRobin)};
  CHECK(std::get<PlayFraction>(c.effective_budget()).fraction == 0.5);
  CHECK_FALSE(c.cost_axis());
  c.policies.push_back(entry("rr-ca", sched::Policy::kRoundRobin, true));
  CHECK(std::get<CostFraction>(c.effective_budget()).fraction == 0.1);
  CHECK(c.cost_axis());
  c.budget = sched::RoundBudget{5};
  CHECK_FALSE(c.cost_axis());
}

TEST_CASE("experiment validation") {
  auto c = small_config();
  CHECK_NOTHROW(c.validate());
  c.repeats = 0;
  CHECK_THROWS_AS(c.validate(), InputError);
  c = small_config();
  c.policies.push_back(entry("rr", sched::Policy::kGreedy));
  CHECK_THROWS_AS(c.validate(), InputError);
  c = small_config();
  c.budget = CostFraction{1.5};
  CHECK_THROWS_AS(c.validate(), InputError);
  c = small_config();
  c.test_tenant_count = 4;  // 30 users leave 3 for testing
  CHECK_THROWS_AS(run_experiment(c), InputError);
}

TEST_CASE("repeat preparation") {
  const auto c = small_config();
  const auto full = materialize(c.source, 2);
  const auto in = prepare_repeat(c, full, 2);
  CHECK(in.seed == 102);
  CHECK(in.tenant_ids.size() == 3);
  const auto split = workload::split_train_test(30, {0.9, 102});
  for (auto id : in.tenant_ids) {
    CHECK(std::find(split.train.begin(), split.train.end(), id) == split.train.end());
  }
  CHECK(in.tenants == full.select_users(in.tenant_ids));
  CHECK(std::get<sched::RoundBudget>(in.budget).rounds == 9);  // half of 3 x 6
  CHECK(in.priors.size() == 3);
  CHECK_FALSE(materialize(c.source, 2) == materialize(c.source, 3));
}

TEST_CASE("outputs agree with the runs and with a recomputation") {
  const auto c = small_config();
  const auto report = run_experiment(c);
  const auto dir = scratch_dir("outputs");
  emit_outputs(report, dir);

  std::ifstream trace(dir / "trace.csv");
  std::string line;
  REQUIRE(std::getline(trace, line));
  CHECK(line == kTraceHeader);

  // Regroup the rows by (run, policy) and replay them against the true workload.
  std::map<std::pair<std::size_t, std::string>, std::vector<std::vector<std::string>>> rows;
  std::size_t count = 0;
  while (std::getline(trace, line)) {
    const auto cells = split_csv(line);
    REQUIRE(cells.size() == 11);
    rows[{std::stoul(cells[0]), cells[3]}].push_back(cells);
    ++count;
  }
  std::size_t expected = 0;
  for (const auto& r : report.runs) expected += r.trace.rounds();
  CHECK(count == expected);
  CHECK(rows.size() == 12);

  for (const auto& [key, run_rows] : rows) {
    const auto in = prepare_repeat(c, materialize(c.source, key.first), key.first);
    const auto& w = in.tenants;
    const std::size_t n = w.user_count();
    std::vector<double> last(n, 0.0), best(n, 0.0);
    double regret = 0.0, easeml = 0.0, cum = 0.0;
    std::size_t round = 0;
    for (const auto& cells : run_rows) {
      CHECK(std::stoul(cells[1]) == ++round);
      const auto i = std::stoul(cells[4]);
      const auto a = std::stoul(cells[5]);
      const double cost = std::stod(cells[6]);
      CHECK(cost == w.cost(i, a));
      cum += cost;
      CHECK(std::stod(cells[2]) == doctest::Approx(cum).epsilon(1e-12));
      last[i] = w.quality(i, a);
      best[i] = std::max(best[i], last[i]);
      double loss = 0.0;
      for (std::size_t u = 0; u < n; ++u) {
        regret += cost * (w.mu_star(u) - last[u]);
        easeml += cost * (w.mu_star(u) - best[u]);
        loss += (w.mu_star(u) - best[u]) / static_cast<double>(n);
      }
      CHECK(std::stod(cells[8]) == doctest::Approx(loss).epsilon(1e-12));
      CHECK(std::stod(cells[9]) == doctest::Approx(regret).epsilon(1e-12));
      CHECK(std::stod(cells[10]) == doctest::Approx(easeml).epsilon(1e-12));
    }
  }

  const auto summary = json::parse(slurp(dir / "summary.json"));
  CHECK(summary["axis_kind"] == "round");
  CHECK(summary["seeds"] == json({100, 101, 102, 103}));
  CHECK_FALSE(summary.contains("wall_clock_seconds"));
  for (std::size_t p = 0; p < c.policies.size(); ++p) {
    std::vector<std::vector<double>> loss;
    for (const auto& r : report.runs) {
      if (r.policy == p) loss.push_back(r.series.avg_loss);
    }
    const auto mean = metrics::aggregate_runs(loss, metrics::Statistic::kMean);
    const auto worst = metrics::aggregate_runs(loss, metrics::Statistic::kWorst);
    const auto& node = summary["policies"][c.policies[p].name];
    CHECK(std::abs(node["mean_accuracy_loss"].back().get<double>() - mean.back()) <= 1e-12);
    CHECK(std::abs(node["worst_accuracy_loss"].back().get<double>() - worst.back()) <= 1e-12);
    CHECK(node["hybrid_switch_round"].size() == 4);
  }
}

TEST_CASE("outputs are reproducible and independent of the thread count") {
  auto c = small_config();
  const auto a = scratch_dir("repro_a"), b = scratch_dir("repro_b");
  emit_outputs(run_experiment(c), a);
  c.jobs = 3;
  emit_outputs(run_experiment(c), b);
  CHECK(slurp(a / "trace.csv") == slurp(b / "trace.csv"));
  CHECK(slurp(a / "summary.json") == slurp(b / "summary.json"));
}

TEST_CASE("config hash") {
  auto c = small_config();
  const auto h = config_hash(c);
  CHECK(config_hash(c) == h);
  std::uint64_t fnv = 0xcbf29ce484222325ull;
  for (unsigned char ch : config_json(c)) {
    fnv ^= ch;
    fnv *= 0x100000001b3ull;
  }
  CHECK(fnv == h);
  c.jobs = 4;
  CHECK(config_hash(c) == h);
  c.base_seed = 1;
  CHECK(config_hash(c) != h);
  c = small_config();
  c.policies[0].config.hybrid_s = 3;
  CHECK(config_hash(c) != h);
}

TEST_CASE("cost budgets stop within one play of the budget") {
  auto c = small_config();
  for (auto& p : c.policies) p.config.cost_aware = true;
  c.budget = CostFraction{0.3};
  const auto report = run_experiment(c);
  CHECK(report.cost_axis);
  CHECK(report.axis.size() == 101);
  double lowest = std::numeric_limits<double>::infinity();
  for (const auto& r : report.runs) {
    const auto in = prepare_repeat(c, materialize(c.source, r.repeat), r.repeat);
    const double budget = std::get<sched::CostBudget>(in.budget).total;
    lowest = std::min(lowest, budget);
    CHECK(r.trace.cumulative_cost >= budget);
    CHECK(r.trace.cumulative_cost <= budget + in.tenants.max_cost());
    CHECK(r.trace.cumulative_cost - r.trace.events.back().cost < budget);
  }
  CHECK(report.axis.back() == lowest);
  for (const auto& p : report.policies) CHECK(p.mean_loss.size() == 101);
}

TEST_CASE("fixed matrix and csv sources") {
  auto c = small_config();
  const auto w = materialize(c.source, 0);
  const auto dir = scratch_dir("csv");
  std::filesystem::create_directories(dir);
  workload::save_workload(w, dir / "q.csv", dir / "c.csv");
  c.source = CsvSource{dir / "q.csv", dir / "c.csv"};
  c.repeats = 2;
  const auto from_csv = run_experiment(c);
  c.source = w;
  const auto from_matrix = run_experiment(c);
  REQUIRE(from_csv.runs.size() == from_matrix.runs.size());
  for (std::size_t r = 0; r < from_csv.runs.size(); ++r) {
    CHECK(from_csv.runs[r].series.avg_loss == from_matrix.runs[r].series.avg_loss);
  }
  CHECK(from_csv.config_hash != from_matrix.config_hash);
}

TEST_CASE("enum text forms") {
  for (auto p : {sched::Policy::kFcfs, sched::Policy::kRandom, sched::Policy::kRoundRobin,
                 sched::Policy::kGreedy, sched::Policy::kHybrid}) {
    CHECK(parse_policy(policy_token(p)) == p);
  }
  for (auto r : {sched::UserPickRule::kMaxGap, sched::UserPickRule::kMaxSigma,
                 sched::UserPickRule::kRandomInSet}) {
    CHECK(parse_user_pick(user_pick_token(r)) == r);
  }
  CHECK(parse_policy("rr") == sched::Policy::kRoundRobin);
  CHECK(parse_beta_variant(beta_variant_token(bandit::BetaVariant::kThm23Multi)) ==
        bandit::BetaVariant::kThm23Multi);
  CHECK_THROWS_AS(parse_policy("lottery"), InputError);
  CHECK_THROWS_AS(parse_user_pick("max"), InputError);
  CHECK_THROWS_AS(parse_beta_variant("thm2"), InputError);
}

TEST_CASE("synthetic config files") {
  std::istringstream empty;
  const auto d = parse_syn_config(empty);
  CHECK(d.user_count() == 100);
  CHECK(d.model_count() == 20);
  REQUIRE(d.baseline_groups.size() == 2);
  CHECK(d.baseline_groups[0].mean == 0.75);
  CHECK(d.baseline_groups[1].stddev == 0.1);
  CHECK(d.model_groups[0].sigma_m == 0.5);
  CHECK(d.user_groups.empty());

  std::istringstream text(
      "# comment\n sigma_m = 0.01  # trailing\nn_users=40\nn_models = 8\nmu_b_list = 0.5, 0.6, 0.7\n"
      "sigma_w = 0.02\nseed = 12\nalpha = 0.5\nsigma_u = 0.3\ncost_model = loguniform\n"
      "cost_low = 0.1\ncost_high = 10\n");
  const auto c = parse_syn_config(text);
  CHECK(c.model_groups[0].sigma_m == 0.01);
  CHECK(c.user_count() == 40);
  CHECK(c.model_count() == 8);
  CHECK(c.baseline_groups.size() == 3);
  CHECK(c.noise_std == 0.02);
  CHECK(c.seed == 12);
  CHECK(c.alpha == 0.5);
  REQUIRE(c.user_groups.size() == 1);
  CHECK(c.user_groups[0].sigma_u == 0.3);
  CHECK(c.cost_model == workload::CostModel::kLogUniform);
  CHECK(c.cost_high == 10.0);

  const auto bad = [](const std::string& s) {
    std::istringstream in(s);
    return parse_syn_config(in);
  };
  CHECK_THROWS_AS(bad("sigma_q = 1\n"), InputError);
  CHECK_THROWS_AS(bad("alpha = 1\nalpha = 2\n"), InputError);
  CHECK_THROWS_AS(bad("alpha = lots\n"), InputError);
  CHECK_THROWS_AS(bad("n_users = -3\n"), InputError);
  CHECK_THROWS_AS(bad("just a line\n"), InputError);
  CHECK_THROWS_AS(bad("cost_model = gamma\n"), InputError);
  CHECK_THROWS_AS(load_syn_config("/nonexistent/syn.cfg"), InputError);
}
