#include "mtsel/metrics.hpp"

#include <algorithm>
#include <string>

#include "mtsel/errors.hpp"

namespace mtsel::metrics {

namespace {

void check_compatible(const sched::ScheduleTrace& trace, const workload::WorkloadMatrix& w) {
  if (trace.tenant_count != w.user_count()) {
    throw InputError("trace has " + std::to_string(trace.tenant_count) + " tenants, workload has " +
                     std::to_string(w.user_count()));
  }
  for (const auto& e : trace.events) {
    if (e.tenant >= w.user_count() || e.arm >= w.model_count()) {
      throw InputError("trace event outside the workload shape");
    }
  }
}

void check_horizon(const sched::ScheduleTrace& trace, std::size_t T) {
  if (T > trace.rounds()) {
    throw InputError("T = " + std::to_string(T) + " beyond a trace of " +
                     std::to_string(trace.rounds()) + " rounds");
  }
}

// Walks the first T rounds, tracking last-served and best-so-far quality.
struct Replay {
  Eigen::VectorXd last;
  Eigen::VectorXd best;
  double regret = 0.0;
  double easeml = 0.0;

  Replay(const sched::ScheduleTrace& trace, const workload::WorkloadMatrix& w, std::size_t T)
      : last(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(w.user_count()))), best(last) {
    for (std::size_t t = 0; t < T; ++t) advance(trace.events[t], w);
  }

  void advance(const sched::ScheduleEvent& e, const workload::WorkloadMatrix& w) {
    const auto i = static_cast<Eigen::Index>(e.tenant);
    last(i) = w.quality(e.tenant, e.arm);
    best(i) = std::max(best(i), last(i));
    regret += e.cost * (w.mu_star() - last).sum();
    easeml += e.cost * (w.mu_star() - best).sum();
  }
};

}  // namespace

RegretSeries compute_series(const sched::ScheduleTrace& trace,
                            const workload::WorkloadMatrix& workload) {
  check_compatible(trace, workload);
  const std::size_t T = trace.rounds();
  const auto n = static_cast<Eigen::Index>(workload.user_count());

  RegretSeries s;
  s.round_cost.assign(T + 1, 0.0);
  s.cumulative_cost.assign(T + 1, 0.0);
  s.cumulative_regret.assign(T + 1, 0.0);
  s.easeml_regret.assign(T + 1, 0.0);
  s.avg_loss.assign(T + 1, 0.0);
  s.tenant_regret.resize(static_cast<Eigen::Index>(T + 1), n);
  s.tenant_loss.resize(static_cast<Eigen::Index>(T + 1), n);

  Replay r(trace, workload, 0);
  s.tenant_regret.row(0) = (workload.mu_star() - r.last).transpose();
  s.tenant_loss.row(0) = (workload.mu_star() - r.best).transpose();
  s.avg_loss[0] = s.tenant_loss.row(0).mean();
  for (std::size_t t = 1; t <= T; ++t) {
    const auto& e = trace.events[t - 1];
    r.advance(e, workload);
    const auto row = static_cast<Eigen::Index>(t);
    s.round_cost[t] = e.cost;
    s.cumulative_cost[t] = s.cumulative_cost[t - 1] + e.cost;
    s.cumulative_regret[t] = r.regret;
    s.easeml_regret[t] = r.easeml;
    s.tenant_regret.row(row) = (workload.mu_star() - r.last).transpose();
    s.tenant_loss.row(row) = (workload.mu_star() - r.best).transpose();
    s.avg_loss[t] = s.tenant_loss.row(row).mean();
  }
  return s;
}

AccuracyLoss accuracy_loss(const sched::ScheduleTrace& trace,
                           const workload::WorkloadMatrix& workload, std::size_t T) {
  check_compatible(trace, workload);
  check_horizon(trace, T);
  const Replay r(trace, workload, T);
  AccuracyLoss out;
  out.per_tenant = workload.mu_star() - r.best;
  out.average = out.per_tenant.size() > 0 ? out.per_tenant.mean() : 0.0;
  return out;
}

double multitenant_cumulative_regret(const sched::ScheduleTrace& trace,
                                     const workload::WorkloadMatrix& workload, std::size_t T) {
  check_compatible(trace, workload);
  check_horizon(trace, T);
  return Replay(trace, workload, T).regret;
}

double easeml_regret(const sched::ScheduleTrace& trace, const workload::WorkloadMatrix& workload,
                     std::size_t T) {
  check_compatible(trace, workload);
  check_horizon(trace, T);
  return Replay(trace, workload, T).easeml;
}

std::vector<double> aggregate_runs(std::span<const std::vector<double>> curves, Statistic stat) {
  if (curves.empty()) throw InputError("cannot aggregate zero runs");
  const std::size_t len = curves.front().size();
  for (const auto& c : curves) {
    if (c.size() != len) throw InputError("runs are not aligned: curve lengths differ");
  }
  std::vector<double> out(len);
  for (std::size_t t = 0; t < len; ++t) {
    double acc = stat == Statistic::kMean ? 0.0 : curves.front()[t];
    for (const auto& c : curves) {
      acc = stat == Statistic::kMean ? acc + c[t] : std::max(acc, c[t]);
    }
    out[t] = stat == Statistic::kMean ? acc / static_cast<double>(curves.size()) : acc;
  }
  return out;
}

std::vector<double> resample_step(std::span<const double> xs, std::span<const double> ys,
                                  std::span<const double> grid) {
  if (xs.size() != ys.size() || xs.empty()) throw InputError("resample needs equal, non-empty xs and ys");
  if (!std::is_sorted(xs.begin(), xs.end())) throw InputError("resample xs must be nondecreasing");
  std::vector<double> out;
  out.reserve(grid.size());
  for (double g : grid) {
    const auto it = std::upper_bound(xs.begin(), xs.end(), g);
    if (it == xs.begin()) throw InputError("grid point lies before the first sample");
    out.push_back(ys[static_cast<std::size_t>(it - xs.begin()) - 1]);
  }
  return out;
}

std::vector<double> linear_grid(double lo, double hi, std::size_t n) {
  if (n == 0 || !(hi >= lo)) throw InputError("grid needs n >= 1 and hi >= lo");
  std::vector<double> g(n + 1);
  for (std::size_t k = 0; k <= n; ++k) {
    g[k] = lo + (hi - lo) * static_cast<double>(k) / static_cast<double>(n);
  }
  g[n] = hi;
  return g;
}

std::optional<std::size_t> rounds_to_threshold(std::span<const double> curve, double threshold) {
  for (std::size_t t = 0; t < curve.size(); ++t) {
    if (curve[t] <= threshold) return t;
  }
  return std::nullopt;
}

std::optional<double> cost_to_threshold(std::span<const double> cumulative_cost,
                                        std::span<const double> curve, double threshold) {
  if (cumulative_cost.size() != curve.size()) throw InputError("cost and curve lengths differ");
  const auto t = rounds_to_threshold(curve, threshold);
  if (!t) return std::nullopt;
  return cumulative_cost[*t];
}

}  // namespace mtsel::metrics
