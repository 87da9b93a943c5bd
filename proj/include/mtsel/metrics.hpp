#pragma once

// Regret and accuracy loss over schedule traces.
//
// Everything is indexed by T = 0..rounds, where T = 0 is the state before any
// play. Metrics score the true quality of the played models (the workload
// entry), not the possibly noisy observation.

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "mtsel/sched.hpp"
#include "mtsel/workload.hpp"

namespace mtsel::metrics {

struct RegretSeries {
  std::vector<double> round_cost;         // C_T; 0 at T = 0
  std::vector<double> cumulative_cost;    // sum of C_1..C_T
  std::vector<double> cumulative_regret;  // R_T
  std::vector<double> easeml_regret;      // R'_T
  std::vector<double> avg_loss;           // l_T
  Eigen::MatrixXd tenant_regret;          // (rounds+1) x n, r^i in effect after round T
  Eigen::MatrixXd tenant_loss;            // (rounds+1) x n, l_{i,T}

  std::size_t rounds() const { return cumulative_regret.empty() ? 0 : cumulative_regret.size() - 1; }
};

/// All per-round quantities in one pass.
RegretSeries compute_series(const sched::ScheduleTrace& trace,
                            const workload::WorkloadMatrix& workload);

struct AccuracyLoss {
  Eigen::VectorXd per_tenant;  // l_{i,T}
  double average = 0.0;        // l_T
};

AccuracyLoss accuracy_loss(const sched::ScheduleTrace& trace,
                           const workload::WorkloadMatrix& workload, std::size_t T);

/// R_T: sum over rounds of C_t times the summed gap between each tenant's
/// optimum and the model it was served last (quality 0 before first service).
double multitenant_cumulative_regret(const sched::ScheduleTrace& trace,
                                     const workload::WorkloadMatrix& workload, std::size_t T);

/// R'_T: as R_T with the best model served so far in place of the last one.
double easeml_regret(const sched::ScheduleTrace& trace, const workload::WorkloadMatrix& workload,
                     std::size_t T);

enum class Statistic { kMean, kWorst };

/// Pointwise mean or maximum over equally long curves.
std::vector<double> aggregate_runs(std::span<const std::vector<double>> curves, Statistic stat);

/// Step-function resampling: value at g is ys[k] for the last k with
/// xs[k] <= g. xs must be nondecreasing and start at or below the first
/// grid point.
std::vector<double> resample_step(std::span<const double> xs, std::span<const double> ys,
                                  std::span<const double> grid);

/// n + 1 evenly spaced points over [lo, hi].
std::vector<double> linear_grid(double lo, double hi, std::size_t n);

/// First index T with curve[T] <= threshold.
std::optional<std::size_t> rounds_to_threshold(std::span<const double> curve, double threshold);

/// Cumulative cost at the first index where curve <= threshold.
std::optional<double> cost_to_threshold(std::span<const double> cumulative_cost,
                                        std::span<const double> curve, double threshold);

}  // namespace mtsel::metrics
