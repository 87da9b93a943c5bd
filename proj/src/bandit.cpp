#include "mtsel/bandit.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "mtsel/errors.hpp"

namespace mtsel::bandit {

void BetaMode::validate() const {
  if (!(delta > 0.0 && delta < 1.0)) throw InputError("delta must lie in (0, 1)");
  if (variant != BetaVariant::kAlg1 && !(c_star > 0.0)) {
    throw InputError("theorem beta schedules need a positive c*");
  }
  if (variant == BetaVariant::kThm23Multi && (n_users == 0 || k_star == 0)) {
    throw InputError("multi-tenant beta schedule needs n_users and k_star");
  }
}

double beta_schedule(const BetaMode& mode, std::size_t t, std::size_t arm_count) {
  mode.validate();
  if (t == 0) throw InputError("beta schedule is defined for t >= 1");
  if (arm_count == 0) throw InputError("beta schedule needs at least one arm");
  const double t2 = static_cast<double>(t) * static_cast<double>(t);
  const double pi2 = std::numbers::pi * std::numbers::pi;
  switch (mode.variant) {
    case BetaVariant::kAlg1:
      return std::log(static_cast<double>(arm_count) * t2 / mode.delta);
    case BetaVariant::kThm1Cost:
      return 2.0 * mode.c_star *
             std::log(pi2 * static_cast<double>(arm_count) * t2 / (6.0 * mode.delta));
    case BetaVariant::kThm23Multi:
      return 2.0 * mode.c_star *
             std::log(pi2 * static_cast<double>(mode.n_users) *
                      static_cast<double>(mode.k_star) * t2 / (6.0 * mode.delta));
  }
  throw InputError("unknown beta variant");
}

ArmCosts::ArmCosts(std::vector<double> costs) : costs_(std::move(costs)) {
  for (double c : costs_) {
    if (!(c > 0.0) || !std::isfinite(c)) throw InputError("arm costs must be positive and finite");
  }
}

ArmCosts ArmCosts::unit(std::size_t arm_count) {
  return ArmCosts(std::vector<double>(arm_count, 1.0));
}

double ArmCosts::max() const {
  if (costs_.empty()) throw StateError("max() of an empty cost vector");
  return *std::max_element(costs_.begin(), costs_.end());
}

Eigen::VectorXd ucb_scores(const gp::GpPosterior& posterior, double beta, const ArmCosts& costs,
                           bool cost_aware) {
  if (beta < 0.0) throw InputError("beta must be nonnegative");
  const auto k = posterior.mean.size();
  if (posterior.std.size() != k) throw InputError("posterior mean and std differ in length");
  if (cost_aware && costs.size() != static_cast<std::size_t>(k)) {
    throw InputError("cost vector length differs from the arm count");
  }
  Eigen::VectorXd scores(k);
  for (Eigen::Index a = 0; a < k; ++a) {
    const double weight =
        cost_aware ? std::sqrt(beta / costs[static_cast<std::size_t>(a)]) : std::sqrt(beta);
    scores(a) = posterior.mean(a) + weight * posterior.std(a);
  }
  return scores;
}

std::size_t select_arm(const Eigen::VectorXd& scores) {
  if (scores.size() == 0) throw InputError("cannot select from an empty score vector");
  Eigen::Index best = 0;
  for (Eigen::Index a = 1; a < scores.size(); ++a) {
    if (scores(a) > scores(best)) best = a;
  }
  return static_cast<std::size_t>(best);
}

BanditState BanditState::initial(gp::GpPrior prior, ArmCosts costs, bool cost_aware) {
  prior.validate();
  if (prior.arm_count() == 0) throw InputError("a bandit needs at least one arm");
  if (costs.size() != prior.arm_count()) {
    throw InputError("cost vector has " + std::to_string(costs.size()) + " entries for " +
                     std::to_string(prior.arm_count()) + " arms");
  }
  BanditState s;
  s.posterior = gp::posterior(prior, {});
  s.prior = std::move(prior);
  s.costs = std::move(costs);
  s.cost_aware = cost_aware;
  return s;
}

StepResult single_tenant_step(const BanditState& state, const BetaMode& mode,
                              const ObserveFn& observe) {
  StepResult out;
  out.beta = beta_schedule(mode, state.step, state.arm_count());
  const Eigen::VectorXd scores = ucb_scores(state.posterior, out.beta, state.costs, state.cost_aware);
  out.arm = select_arm(scores);
  out.ucb = scores(static_cast<Eigen::Index>(out.arm));
  out.played_std = state.posterior.std(static_cast<Eigen::Index>(out.arm));
  out.observation = observe(out.arm);

  std::vector<gp::Observation> history = state.posterior.history;
  history.push_back({out.arm, out.observation});
  out.state.prior = state.prior;
  out.state.posterior = gp::posterior(state.prior, history);
  out.state.step = state.step + 1;
  out.state.costs = state.costs;
  out.state.cost_aware = state.cost_aware;
  return out;
}

InfoGain info_gain(std::span<const double> played_stds, double noise_std, double beta_T,
                   double c_star) {
  if (played_stds.empty()) throw InputError("information gain needs a non-empty trace");
  if (!(noise_std > 0.0) || !(c_star > 0.0)) {
    throw InputError("information gain needs positive noise_std and c*");
  }
  const double inv_noise2 = 1.0 / (noise_std * noise_std);
  double sum = 0.0;
  for (double s : played_stds) sum += std::log1p(inv_noise2 * s * s);
  InfoGain out;
  out.value = 4.0 * c_star * beta_T / std::log1p(inv_noise2) * sum;
  out.per_unit_cost = out.value / c_star;
  return out;
}

}  // namespace mtsel::bandit
