#include "mtsel/harness.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <limits>
#include <istream>
#include <map>
#include <set>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "mtsel/errors.hpp"

namespace mtsel::harness {

using nlohmann::json;

namespace {

template <class... Fs>
struct Overloaded : Fs... {
  using Fs::operator()...;
};
template <class... Fs>
Overloaded(Fs...) -> Overloaded<Fs...>;

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

double parse_double(const std::string& key, const std::string& text) {
  double v = 0.0;
  const auto* end = text.data() + text.size();
  const auto [p, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || p != end || !std::isfinite(v)) {
    throw InputError("syn config: bad number '" + text + "' for " + key);
  }
  return v;
}

std::uint64_t parse_uint(const std::string& key, const std::string& text) {
  std::uint64_t v = 0;
  const auto* end = text.data() + text.size();
  const auto [p, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || p != end) {
    throw InputError("syn config: bad integer '" + text + "' for " + key);
  }
  return v;
}

json syn_to_json(const workload::SynGenConfig& c) {
  json j;
  json groups = json::array();
  for (std::size_t b = 0; b < c.baseline_groups.size(); ++b) {
    groups.push_back({{"mean", c.baseline_groups[b].mean},
                      {"stddev", c.baseline_groups[b].stddev},
                      {"users", c.users_per_group[b]}});
  }
  j["baseline_groups"] = groups;
  json models = json::array();
  for (const auto& m : c.model_groups) models.push_back({{"sigma_m", m.sigma_m}, {"count", m.count}});
  j["model_groups"] = models;
  json users = json::array();
  for (const auto& u : c.user_groups) users.push_back(u.sigma_u);
  j["user_groups_sigma_u"] = users;
  j["sigma_w"] = c.noise_std;
  j["alpha"] = c.alpha;
  j["seed"] = c.seed;
  j["cost_model"] = c.cost_model == workload::CostModel::kLogUniform ? "loguniform" : "uniform";
  j["cost_low"] = c.cost_low;
  j["cost_high"] = c.cost_high;
  return j;
}

json budget_to_json(const BudgetSpec& b) {
  return std::visit(Overloaded{
                        [](const sched::RoundBudget& r) { return json{{"rounds", r.rounds}}; },
                        [](const sched::CostBudget& c) { return json{{"cost", c.total}}; },
                        [](const PlayFraction& f) { return json{{"play_fraction", f.fraction}}; },
                        [](const CostFraction& f) { return json{{"cost_fraction", f.fraction}}; },
                    },
                    b);
}

std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace

void ExperimentConfig::validate() const {
  if (repeats == 0) throw InputError("repeats must be >= 1");
  if (policies.empty()) throw InputError("at least one policy is required");
  if (test_tenant_count == 0) throw InputError("test tenant count must be >= 1");
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw InputError("train fraction must lie in (0, 1)");
  }
  if (!(gp_noise_std > 0.0)) throw InputError("GP noise std must be positive");
  if (cost_grid_intervals == 0) throw InputError("cost grid needs at least one interval");
  std::set<std::string> names;
  for (const auto& p : policies) {
    if (p.name.empty()) throw InputError("policy names must be non-empty");
    if (!names.insert(p.name).second) throw InputError("duplicate policy name '" + p.name + "'");
    p.config.validate();
  }
  std::visit(Overloaded{
                 [](const sched::RoundBudget& r) {
                   if (r.rounds == 0) throw InputError("round budget must be positive");
                 },
                 [](const sched::CostBudget& c) {
                   if (!(c.total > 0.0)) throw InputError("cost budget must be positive");
                 },
                 [](const auto& f) {
                   if (!(f.fraction > 0.0 && f.fraction <= 1.0)) {
                     throw InputError("budget fraction must lie in (0, 1]");
                   }
                 },
             },
             effective_budget());
}

BudgetSpec ExperimentConfig::effective_budget() const {
  if (budget) return *budget;
  const bool any_cost_aware = std::any_of(policies.begin(), policies.end(),
                                          [](const PolicyEntry& p) { return p.config.cost_aware; });
  if (any_cost_aware) return CostFraction{0.1};
  return PlayFraction{0.5};
}

bool ExperimentConfig::cost_axis() const {
  const auto b = effective_budget();
  return std::holds_alternative<sched::CostBudget>(b) || std::holds_alternative<CostFraction>(b);
}

std::string config_json(const ExperimentConfig& config) {
  json j;
  j["source"] = std::visit(
      Overloaded{
          [](const CsvSource& s) {
            return json{{"kind", "csv"}, {"quality", s.quality.string()}, {"cost", s.cost.string()}};
          },
          [](const SyntheticSource& s) {
            return json{{"kind", "synthetic"},
                        {"resample_per_repeat", s.resample_per_repeat},
                        {"config", syn_to_json(s.config)}};
          },
          [](const workload::WorkloadMatrix& w) {
            std::ostringstream values;
            for (Eigen::Index i = 0; i < w.quality().rows(); ++i) {
              for (Eigen::Index k = 0; k < w.quality().cols(); ++k) {
                values << fmt_double(w.quality()(i, k)) << ':' << fmt_double(w.cost()(i, k)) << ';';
              }
            }
            std::uint64_t h = 14695981039346656037ull;
            for (unsigned char c : values.str()) h = (h ^ c) * 1099511628211ull;
            return json{{"kind", "matrix"},
                        {"users", w.user_count()},
                        {"models", w.model_count()},
                        {"fingerprint", hex64(h)}};
          },
      },
      config.source);
  json policies = json::array();
  for (const auto& p : config.policies) {
    const auto& c = p.config;
    policies.push_back({{"name", p.name},
                        {"policy", policy_token(c.policy)},
                        {"cost_aware", c.cost_aware},
                        {"beta_mode", beta_variant_token(c.beta_mode.variant)},
                        {"delta", c.beta_mode.delta},
                        {"c_star", c.beta_mode.c_star},
                        {"n_users", c.beta_mode.n_users},
                        {"k_star", c.beta_mode.k_star},
                        {"hybrid_s", c.hybrid_s == sched::kHybridDisabled ? json(nullptr)
                                                                           : json(c.hybrid_s)},
                        {"user_pick", user_pick_token(c.user_pick_rule)},
                        {"observation_noise_std", c.observation_noise_std},
                        {"arrival_order", c.arrival_order}});
  }
  j["policies"] = policies;
  j["repeats"] = config.repeats;
  j["base_seed"] = config.base_seed;
  j["test_tenants"] = config.test_tenant_count;
  j["train_fraction"] = config.train_fraction;
  j["gp_noise_std"] = config.gp_noise_std;
  j["budget"] = budget_to_json(config.effective_budget());
  j["cost_grid_intervals"] = config.cost_grid_intervals;
  return j.dump();
}

std::uint64_t config_hash(const ExperimentConfig& config) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : config_json(config)) h = (h ^ c) * 1099511628211ull;
  return h;
}

workload::WorkloadMatrix materialize(const WorkloadSource& source, std::size_t repeat) {
  return std::visit(Overloaded{
                        [](const CsvSource& s) { return workload::load_workload(s.quality, s.cost); },
                        [repeat](const SyntheticSource& s) {
                          auto c = s.config;
                          if (s.resample_per_repeat) c.seed += repeat;
                          return workload::generate_synthetic(c);
                        },
                        [](const workload::WorkloadMatrix& w) { return w; },
                    },
                    source);
}

RepeatInput prepare_repeat(const ExperimentConfig& config, const workload::WorkloadMatrix& full,
                           std::size_t repeat) {
  RepeatInput in;
  in.repeat = repeat;
  in.seed = config.base_seed + repeat;
  const auto split = workload::split_train_test(full.user_count(), {config.train_fraction, in.seed});
  if (split.test.size() < config.test_tenant_count) {
    throw InputError("split leaves " + std::to_string(split.test.size()) + " test users, " +
                     std::to_string(config.test_tenant_count) + " requested");
  }
  in.tenant_ids.assign(split.test.begin(),
                       split.test.begin() + static_cast<std::ptrdiff_t>(config.test_tenant_count));
  in.tenants = full.select_users(in.tenant_ids);

  const auto grid = workload::default_hyperparam_grid(full, split.train);
  for (std::size_t id : in.tenant_ids) {
    in.priors.push_back(
        workload::build_prior(full, split.train, id, grid, config.gp_noise_std).raw_scale());
  }

  const double plays = static_cast<double>(in.tenants.user_count() * in.tenants.model_count());
  in.budget = std::visit(
      Overloaded{
          [](const sched::RoundBudget& r) -> sched::Budget { return r; },
          [](const sched::CostBudget& c) -> sched::Budget { return c; },
          [plays](const PlayFraction& f) -> sched::Budget {
            return sched::RoundBudget{
                std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(f.fraction * plays)))};
          },
          [&in](const CostFraction& f) -> sched::Budget {
            return sched::CostBudget{f.fraction * in.tenants.total_cost()};
          },
      },
      config.effective_budget());
  return in;
}

std::vector<RunResult> run_repeat(const ExperimentConfig& config, const RepeatInput& input) {
  std::vector<RunResult> out;
  for (std::size_t p = 0; p < config.policies.size(); ++p) {
    auto sc = config.policies[p].config;
    sc.budget = input.budget;
    sc.seed = input.seed;
    RunResult r;
    r.repeat = input.repeat;
    r.seed = input.seed;
    r.policy = p;
    r.trace = sched::run_schedule(input.tenants, sc, input.priors);
    r.series = metrics::compute_series(r.trace, input.tenants);
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<double> run_curve(const ExperimentReport& report, const RunResult& run,
                              SeriesMember member) {
  const auto& ys = run.series.*member;
  if (report.cost_axis) return metrics::resample_step(run.series.cumulative_cost, ys, report.axis);
  if (ys.size() != report.axis.size()) throw StateError("run length differs from the round axis");
  return ys;
}

ExperimentReport run_experiment(const ExperimentConfig& config) {
  config.validate();
  const auto started = std::chrono::steady_clock::now();

  ExperimentReport report;
  report.cost_axis = config.cost_axis();
  report.config_json = config_json(config);
  report.config_hash = config_hash(config);

  const bool shared = !std::holds_alternative<SyntheticSource>(config.source) ||
                      !std::get<SyntheticSource>(config.source).resample_per_repeat;
  std::optional<workload::WorkloadMatrix> shared_workload;
  if (shared) shared_workload = materialize(config.source, 0);

  std::vector<RepeatInput> inputs(config.repeats);
  std::vector<std::vector<RunResult>> results(config.repeats);
  const auto work = [&](std::size_t r) {
    const auto full = shared ? *shared_workload : materialize(config.source, r);
    inputs[r] = prepare_repeat(config, full, r);
    results[r] = run_repeat(config, inputs[r]);
  };

  const std::size_t jobs = std::clamp<std::size_t>(config.jobs, 1, config.repeats);
  if (jobs == 1) {
    for (std::size_t r = 0; r < config.repeats; ++r) work(r);
  } else {
    std::vector<std::exception_ptr> errors(jobs);
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < jobs; ++w) {
      pool.emplace_back([&, w] {
        try {
          for (std::size_t r = w; r < config.repeats; r += jobs) work(r);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }

  for (std::size_t r = 0; r < config.repeats; ++r) {
    report.seeds.push_back(inputs[r].seed);
    for (auto& run : results[r]) report.runs.push_back(std::move(run));
  }

  if (report.cost_axis) {
    double hi = std::numeric_limits<double>::infinity();
    for (const auto& in : inputs) hi = std::min(hi, std::get<sched::CostBudget>(in.budget).total);
    report.axis = metrics::linear_grid(0.0, hi, config.cost_grid_intervals);
  } else {
    const std::size_t rounds = std::get<sched::RoundBudget>(inputs.front().budget).rounds;
    for (const auto& in : inputs) {
      if (std::get<sched::RoundBudget>(in.budget).rounds != rounds) {
        throw StateError("repeats disagree on the round budget");
      }
    }
    report.axis.resize(rounds + 1);
    for (std::size_t t = 0; t <= rounds; ++t) report.axis[t] = static_cast<double>(t);
  }

  for (std::size_t p = 0; p < config.policies.size(); ++p) {
    std::vector<std::vector<double>> loss, regret, easeml;
    for (const auto& run : report.runs) {
      if (run.policy != p) continue;
      loss.push_back(run_curve(report, run, &metrics::RegretSeries::avg_loss));
      regret.push_back(run_curve(report, run, &metrics::RegretSeries::cumulative_regret));
      easeml.push_back(run_curve(report, run, &metrics::RegretSeries::easeml_regret));
    }
    PolicyCurves c;
    c.name = config.policies[p].name;
    c.mean_loss = metrics::aggregate_runs(loss, metrics::Statistic::kMean);
    c.worst_loss = metrics::aggregate_runs(loss, metrics::Statistic::kWorst);
    c.mean_regret = metrics::aggregate_runs(regret, metrics::Statistic::kMean);
    c.worst_regret = metrics::aggregate_runs(regret, metrics::Statistic::kWorst);
    c.mean_easeml = metrics::aggregate_runs(easeml, metrics::Statistic::kMean);
    c.worst_easeml = metrics::aggregate_runs(easeml, metrics::Statistic::kWorst);
    report.policies.push_back(std::move(c));
  }

  report.wall_clock_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return report;
}

void emit_outputs(const ExperimentReport& report, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw InputError("cannot create output directory " + dir.string() + ": " + ec.message());

  const auto trace_path = dir / "trace.csv";
  std::ofstream trace(trace_path, std::ios::binary);
  if (!trace) throw InputError("cannot open " + trace_path.string() + " for writing");
  trace << kTraceHeader << '\n';
  for (const auto& run : report.runs) {
    const auto& name = report.policies.at(run.policy).name;
    for (std::size_t t = 1; t <= run.trace.rounds(); ++t) {
      const auto& e = run.trace.events[t - 1];
      trace << run.repeat << ',' << e.round << ',' << fmt_double(e.cumulative_cost) << ',' << name
            << ',' << e.tenant << ',' << e.arm << ',' << fmt_double(e.cost) << ','
            << fmt_double(e.observation) << ',' << fmt_double(run.series.avg_loss[t]) << ','
            << fmt_double(run.series.cumulative_regret[t]) << ','
            << fmt_double(run.series.easeml_regret[t]) << '\n';
    }
  }
  trace.flush();
  if (!trace) throw InputError("write failed for " + trace_path.string());

  json j;
  j["config"] = json::parse(report.config_json);
  j["config_hash"] = hex64(report.config_hash);
  j["seeds"] = report.seeds;
  j["axis_kind"] = report.cost_axis ? "cost" : "round";
  j["axis"] = report.axis;
  json policies = json::object();
  for (std::size_t p = 0; p < report.policies.size(); ++p) {
    const auto& c = report.policies[p];
    json switches = json::array();
    for (const auto& run : report.runs) {
      if (run.policy != p) continue;
      switches.push_back(run.trace.hybrid_switch_round ? json(*run.trace.hybrid_switch_round)
                                                       : json(nullptr));
    }
    policies[c.name] = {{"mean_accuracy_loss", c.mean_loss},
                        {"worst_accuracy_loss", c.worst_loss},
                        {"mean_cum_regret", c.mean_regret},
                        {"worst_cum_regret", c.worst_regret},
                        {"mean_easeml_regret", c.mean_easeml},
                        {"worst_easeml_regret", c.worst_easeml},
                        {"hybrid_switch_round", switches}};
  }
  j["policies"] = policies;

  const auto summary_path = dir / "summary.json";
  std::ofstream summary(summary_path, std::ios::binary);
  if (!summary) throw InputError("cannot open " + summary_path.string() + " for writing");
  summary << j.dump(2) << '\n';
  summary.flush();
  if (!summary) throw InputError("write failed for " + summary_path.string());
}

sched::Policy parse_policy(std::string_view text) {
  if (text == "fcfs") return sched::Policy::kFcfs;
  if (text == "random") return sched::Policy::kRandom;
  if (text == "rr") return sched::Policy::kRoundRobin;
  if (text == "greedy") return sched::Policy::kGreedy;
  if (text == "hybrid") return sched::Policy::kHybrid;
  throw InputError("unknown policy '" + std::string(text) + "'");
}

std::string_view policy_token(sched::Policy policy) {
  switch (policy) {
    case sched::Policy::kFcfs: return "fcfs";
    case sched::Policy::kRandom: return "random";
    case sched::Policy::kRoundRobin: return "rr";
    case sched::Policy::kGreedy: return "greedy";
    case sched::Policy::kHybrid: return "hybrid";
  }
  return "?";
}

sched::UserPickRule parse_user_pick(std::string_view text) {
  if (text == "max-gap") return sched::UserPickRule::kMaxGap;
  if (text == "max-sigma") return sched::UserPickRule::kMaxSigma;
  if (text == "random") return sched::UserPickRule::kRandomInSet;
  throw InputError("unknown user pick rule '" + std::string(text) + "'");
}

std::string_view user_pick_token(sched::UserPickRule rule) {
  switch (rule) {
    case sched::UserPickRule::kMaxGap: return "max-gap";
    case sched::UserPickRule::kMaxSigma: return "max-sigma";
    case sched::UserPickRule::kRandomInSet: return "random";
  }
  return "?";
}

bandit::BetaVariant parse_beta_variant(std::string_view text) {
  if (text == "alg1") return bandit::BetaVariant::kAlg1;
  if (text == "thm1") return bandit::BetaVariant::kThm1Cost;
  if (text == "thm23") return bandit::BetaVariant::kThm23Multi;
  throw InputError("unknown beta mode '" + std::string(text) + "'");
}

std::string_view beta_variant_token(bandit::BetaVariant variant) {
  switch (variant) {
    case bandit::BetaVariant::kAlg1: return "alg1";
    case bandit::BetaVariant::kThm1Cost: return "thm1";
    case bandit::BetaVariant::kThm23Multi: return "thm23";
  }
  return "?";
}

workload::SynGenConfig parse_syn_config(std::istream& in) {
  std::map<std::string, std::string> kv;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const std::string body = trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) {
      throw InputError("syn config line " + std::to_string(lineno) + ": expected key = value");
    }
    const std::string key = trim(std::string_view(body).substr(0, eq));
    const std::string value = trim(std::string_view(body).substr(eq + 1));
    if (!kv.emplace(key, value).second) throw InputError("syn config: duplicate key " + key);
  }

  static const std::set<std::string> known = {"sigma_m",  "alpha",   "sigma_b",    "mu_b_list",
                                              "n_users",  "n_models", "sigma_w",   "seed",
                                              "sigma_u",  "cost_model", "cost_low", "cost_high"};
  for (const auto& [key, value] : kv) {
    if (!known.count(key)) throw InputError("syn config: unknown key " + key);
  }
  const auto get = [&](const std::string& key, const std::string& fallback) {
    const auto it = kv.find(key);
    return it == kv.end() ? fallback : it->second;
  };

  std::vector<double> means;
  {
    std::stringstream list(get("mu_b_list", "0.75,0.25"));
    std::string item;
    while (std::getline(list, item, ',')) means.push_back(parse_double("mu_b_list", trim(item)));
  }
  auto c = workload::SynGenConfig::basic(
      means, parse_double("sigma_b", get("sigma_b", "0.1")),
      parse_uint("n_users", get("n_users", "100")), parse_uint("n_models", get("n_models", "20")),
      parse_double("sigma_m", get("sigma_m", "0.5")), parse_double("alpha", get("alpha", "1")),
      parse_uint("seed", get("seed", "0")));
  c.noise_std = parse_double("sigma_w", get("sigma_w", "0"));
  if (kv.count("sigma_u")) c.user_groups.push_back({parse_double("sigma_u", kv["sigma_u"])});
  const std::string cost_model = get("cost_model", "uniform");
  if (cost_model == "uniform") {
    c.cost_model = workload::CostModel::kShiftedUniform;
  } else if (cost_model == "loguniform") {
    c.cost_model = workload::CostModel::kLogUniform;
  } else {
    throw InputError("syn config: cost_model must be uniform or loguniform");
  }
  c.cost_low = parse_double("cost_low", get("cost_low", "0.01"));
  c.cost_high = parse_double("cost_high", get("cost_high", "1"));
  c.validate();
  return c;
}

workload::SynGenConfig load_syn_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open syn config " + path.string());
  return parse_syn_config(in);
}

}  // namespace mtsel::harness
