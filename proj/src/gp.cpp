#include "mtsel/gp.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include "mtsel/errors.hpp"

namespace mtsel::gp {

namespace {

constexpr double kSymmetryTol = 1e-12;
constexpr double kPsdTol = 1e-8;

void check_arm(std::size_t arm, std::size_t arm_count) {
  if (arm >= arm_count) {
    throw InputError("observation references arm " + std::to_string(arm) +
                     " but the prior has " + std::to_string(arm_count) + " arms");
  }
}

struct Conditioned {
  Eigen::LLT<Eigen::MatrixXd> llt;
  Eigen::VectorXd residual;  // y - mu_0 over observed arms
};

// Factor (Sigma_t + sigma^2 I + jitter) and collect the centred observations.
Conditioned factor_observed(const GpPrior& prior, std::span<const Observation> obs) {
  const auto n = static_cast<Eigen::Index>(obs.size());
  const double diag = prior.noise_std * prior.noise_std + kJitter;
  Eigen::MatrixXd system(n, n);
  Eigen::VectorXd residual(n);
  for (Eigen::Index s = 0; s < n; ++s) {
    const auto a = static_cast<Eigen::Index>(obs[s].arm);
    residual(s) = obs[s].y - prior.mean(a);
    for (Eigen::Index r = 0; r < n; ++r) {
      system(s, r) = prior.cov(a, static_cast<Eigen::Index>(obs[r].arm));
    }
    system(s, s) += diag;
  }
  Conditioned out{Eigen::LLT<Eigen::MatrixXd>(system), std::move(residual)};
  if (out.llt.info() != Eigen::Success) {
    throw NumericalError("observation covariance is not positive definite after jitter");
  }
  return out;
}

double lml_from_factor(const Eigen::LLT<Eigen::MatrixXd>& llt, const Eigen::VectorXd& residual) {
  const auto n = residual.size();
  const Eigen::VectorXd alpha = llt.solve(residual);
  const Eigen::MatrixXd& lower = llt.matrixLLT();
  double log_det_half = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) log_det_half += std::log(lower(i, i));
  return -0.5 * residual.dot(alpha) - log_det_half -
         0.5 * static_cast<double>(n) * std::log(2.0 * std::numbers::pi);
}

}  // namespace

void KernelHyperparams::validate() const {
  if (!(length_scale > 0.0) || !(signal_variance > 0.0)) {
    throw InputError("kernel hyperparameters must be strictly positive");
  }
}

void GpPrior::validate() const {
  if (cov.rows() != cov.cols() || cov.rows() != mean.size()) {
    throw InputError("prior covariance must be square and match the mean dimension");
  }
  if (!(noise_std > 0.0) || !std::isfinite(noise_std)) {
    throw InputError("prior noise_std must be positive");
  }
  if (!mean.allFinite() || !cov.allFinite()) {
    throw InputError("prior contains non-finite entries");
  }
  if (cov.size() > 0 && (cov - cov.transpose()).cwiseAbs().maxCoeff() > kSymmetryTol) {
    throw InputError("prior covariance is not symmetric");
  }
  if (cov.size() > 0) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov, Eigen::EigenvaluesOnly);
    if (eig.eigenvalues().minCoeff() < -kPsdTol) {
      throw InputError("prior covariance is not positive semidefinite");
    }
  }
}

Eigen::MatrixXd build_rbf_kernel(std::span<const Eigen::VectorXd> features,
                                 const KernelHyperparams& hp) {
  hp.validate();
  const auto k = static_cast<Eigen::Index>(features.size());
  if (k > 0) {
    const auto dim = features.front().size();
    for (const auto& f : features) {
      if (f.size() != dim) throw InputError("feature vectors differ in dimension");
    }
  }
  const double inv_l2 = 1.0 / (hp.length_scale * hp.length_scale);
  Eigen::MatrixXd out(k, k);
  for (Eigen::Index i = 0; i < k; ++i) {
    out(i, i) = hp.signal_variance;
    for (Eigen::Index j = 0; j < i; ++j) {
      const double d2 = (features[i] - features[j]).squaredNorm();
      out(i, j) = out(j, i) = hp.signal_variance * std::exp(-d2 * inv_l2);
    }
  }
  return out;
}

double log_marginal_likelihood(const GpPrior& prior, std::span<const Observation> observations) {
  if (observations.empty()) return 0.0;
  for (const auto& o : observations) check_arm(o.arm, prior.arm_count());
  const auto c = factor_observed(prior, observations);
  return lml_from_factor(c.llt, c.residual);
}

std::vector<KernelHyperparams> make_hyperparam_grid(double length_scale_center,
                                                    double variance_center,
                                                    std::size_t length_scales,
                                                    std::size_t variances) {
  if (!(length_scale_center > 0.0) || !(variance_center > 0.0) || length_scales == 0 ||
      variances == 0) {
    throw InputError("hyperparameter grid needs positive centres and sizes");
  }
  std::vector<KernelHyperparams> grid;
  grid.reserve(length_scales * variances);
  const double ls_mid = 0.5 * static_cast<double>(length_scales - 1);
  const double var_mid = 0.5 * static_cast<double>(variances - 1);
  for (std::size_t i = 0; i < length_scales; ++i) {
    const double ls = length_scale_center * std::exp2(static_cast<double>(i) - ls_mid);
    for (std::size_t j = 0; j < variances; ++j) {
      grid.push_back({ls, variance_center * std::exp2(static_cast<double>(j) - var_mid)});
    }
  }
  return grid;
}

KernelHyperparams fit_kernel_hyperparams(std::span<const Eigen::VectorXd> features,
                                         std::span<const Eigen::VectorXd> targets,
                                         std::span<const KernelHyperparams> grid,
                                         double noise_std) {
  if (grid.empty()) throw InputError("hyperparameter grid is empty");
  if (!(noise_std > 0.0)) throw InputError("noise_std must be positive");
  const auto k = static_cast<Eigen::Index>(features.size());
  for (const auto& t : targets) {
    if (t.size() != k) throw InputError("target function length differs from the arm count");
  }

  // Every target observes every arm once, in arm order, so one factorization
  // per grid point serves all targets.
  std::vector<Observation> all_arms(features.size());
  for (std::size_t a = 0; a < all_arms.size(); ++a) all_arms[a].arm = a;

  const KernelHyperparams* best = nullptr;
  double best_score = -std::numeric_limits<double>::infinity();
  for (const auto& hp : grid) {
    GpPrior prior{Eigen::VectorXd::Zero(k), build_rbf_kernel(features, hp), noise_std};
    double score = 0.0;
    try {
      const auto c = factor_observed(prior, all_arms);
      for (const auto& t : targets) score += lml_from_factor(c.llt, t);
    } catch (const NumericalError&) {
      continue;
    }
    if (!std::isfinite(score)) continue;
    const bool better =
        best == nullptr || score > best_score ||
        (score == best_score &&
         (hp.length_scale < best->length_scale ||
          (hp.length_scale == best->length_scale && hp.signal_variance < best->signal_variance)));
    if (better) {
      best = &hp;
      best_score = score;
    }
  }
  if (best == nullptr) throw NumericalError("no grid point produced a finite likelihood");
  return *best;
}

GpPosterior posterior(const GpPrior& prior, std::span<const Observation> history) {
  const auto k = static_cast<Eigen::Index>(prior.arm_count());
  if (prior.cov.rows() != k || prior.cov.cols() != k) {
    throw InputError("prior covariance does not match the mean dimension");
  }
  GpPosterior out;
  out.history.assign(history.begin(), history.end());
  if (history.empty()) {
    out.mean = prior.mean;
    out.std = prior.cov.diagonal().cwiseMax(0.0).cwiseSqrt();
    return out;
  }
  for (const auto& o : history) check_arm(o.arm, prior.arm_count());

  const auto c = factor_observed(prior, history);
  const auto n = static_cast<Eigen::Index>(history.size());
  Eigen::MatrixXd cross(n, k);  // Sigma_t(k) stacked as columns
  for (Eigen::Index s = 0; s < n; ++s) {
    cross.row(s) = prior.cov.row(static_cast<Eigen::Index>(history[s].arm));
  }
  const Eigen::VectorXd alpha = c.llt.solve(c.residual);
  out.mean = prior.mean + cross.transpose() * alpha;

  const Eigen::MatrixXd whitened = c.llt.matrixL().solve(cross);
  const Eigen::VectorXd reduction = whitened.colwise().squaredNorm().transpose();
  out.std = (prior.cov.diagonal() - reduction).cwiseMax(0.0).cwiseSqrt();

  if (!out.mean.allFinite() || !out.std.allFinite()) {
    throw NumericalError("posterior produced non-finite values");
  }
  return out;
}

}  // namespace mtsel::gp
