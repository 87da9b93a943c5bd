#pragma once

// Single-tenant GP-UCB: exploration schedules, cost-aware scoring, arm
// selection and the one-step state transition.

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "mtsel/gp.hpp"

namespace mtsel::bandit {

enum class BetaVariant {
  kAlg1,        // ln(K t^2 / delta)
  kThm1Cost,    // 2 c* ln(pi^2 K t^2 / (6 delta))
  kThm23Multi,  // 2 c* ln(pi^2 n K* t^2 / (6 delta))
};

struct BetaMode {
  BetaVariant variant = BetaVariant::kAlg1;
  double delta = 0.1;
  double c_star = 0.0;       // required by kThm1Cost and kThm23Multi
  std::size_t n_users = 0;   // required by kThm23Multi
  std::size_t k_star = 0;    // required by kThm23Multi

  void validate() const;
};

/// Exploration weight beta_t for round t >= 1 over `arm_count` arms.
double beta_schedule(const BetaMode& mode, std::size_t t, std::size_t arm_count);

/// Per-arm evaluation costs; every entry strictly positive.
class ArmCosts {
 public:
  ArmCosts() = default;
  explicit ArmCosts(std::vector<double> costs);

  static ArmCosts unit(std::size_t arm_count);

  std::size_t size() const { return costs_.size(); }
  double operator[](std::size_t arm) const { return costs_[arm]; }
  std::span<const double> values() const { return costs_; }
  double max() const;

 private:
  std::vector<double> costs_;
};

/// mu(k) + sqrt(beta) sigma(k), or mu(k) + sqrt(beta / c_k) sigma(k) when
/// cost-aware.
Eigen::VectorXd ucb_scores(const gp::GpPosterior& posterior, double beta, const ArmCosts& costs,
                           bool cost_aware);

/// Index of the largest score; ties go to the lowest index.
std::size_t select_arm(const Eigen::VectorXd& scores);

struct BanditState {
  gp::GpPrior prior;
  gp::GpPosterior posterior;
  std::size_t step = 1;  // 1 + number of observations
  ArmCosts costs;
  bool cost_aware = false;

  /// Validates the prior and cost vector and returns the t = 1 state.
  static BanditState initial(gp::GpPrior prior, ArmCosts costs, bool cost_aware);

  std::size_t arm_count() const { return prior.arm_count(); }
  std::span<const gp::Observation> history() const { return posterior.history; }
};

struct StepResult {
  BanditState state;
  std::size_t arm = 0;
  double observation = 0.0;
  double beta = 0.0;
  double ucb = 0.0;         // B_t(a_t): the winning score
  double played_std = 0.0;  // sigma_{t-1}(a_t)
};

using ObserveFn = std::function<double(std::size_t)>;

/// One round of GP-UCB: beta, scores, argmax, observe, condition, advance.
StepResult single_tenant_step(const BanditState& state, const BetaMode& mode,
                              const ObserveFn& observe);

struct InfoGain {
  double value = 0.0;          // I(T)
  double per_unit_cost = 0.0;  // I(T) / c*
};

/// I(T) = 4 c* beta_T / ln(1 + sigma^-2) * sum_t ln(1 + sigma^-2 sigma_{t-1}(a_t)^2)
/// over the standard deviations of the played arms just before each play.
InfoGain info_gain(std::span<const double> played_stds, double noise_std, double beta_T,
                   double c_star);

}  // namespace mtsel::bandit
