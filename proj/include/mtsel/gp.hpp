#pragma once

// Gaussian-process machinery over a finite set of arms.
//
// Arms are indexed 0..K-1. A prior is a mean vector, a K x K covariance and
// an observation noise level; a posterior is the per-arm marginal mean and
// standard deviation after conditioning on a list of (arm, y) observations.

#include <cstddef>
#include <span>
#include <vector>

#include <Eigen/Dense>

namespace mtsel::gp {

/// Added to the diagonal of (Sigma_t + sigma^2 I) before every solve.
inline constexpr double kJitter = 1e-8;

struct Observation {
  std::size_t arm = 0;
  double y = 0.0;

  bool operator==(const Observation&) const = default;
};

struct KernelHyperparams {
  double length_scale = 1.0;
  double signal_variance = 1.0;

  void validate() const;
  bool operator==(const KernelHyperparams&) const = default;
};

struct GpPrior {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
  double noise_std = 1.0;

  std::size_t arm_count() const { return static_cast<std::size_t>(mean.size()); }

  /// Throws InputError unless cov is square, matches mean, is symmetric to
  /// 1e-12, has smallest eigenvalue >= -1e-8, and noise_std > 0.
  void validate() const;
};

struct GpPosterior {
  Eigen::VectorXd mean;
  Eigen::VectorXd std;
  std::vector<Observation> history;
};

/// Squared-exponential kernel over per-arm feature vectors:
///   k(i, j) = signal_variance * exp(-|f_i - f_j|^2 / length_scale^2).
/// There is no factor 2 in the exponent.
Eigen::MatrixXd build_rbf_kernel(std::span<const Eigen::VectorXd> features,
                                 const KernelHyperparams& hp);

/// log N(y; mu_0[obs], Sigma[obs, obs] + sigma^2 I). Zero for no observations.
double log_marginal_likelihood(const GpPrior& prior,
                               std::span<const Observation> observations);

/// Log-spaced grid centred on the given values: `length_scales` points spaced
/// by factors of two around `length_scale_center`, `variances` points spaced
/// by factors of two around `variance_center`.
std::vector<KernelHyperparams> make_hyperparam_grid(double length_scale_center,
                                                    double variance_center,
                                                    std::size_t length_scales = 7,
                                                    std::size_t variances = 5);

/// Grid search for the hyperparameters maximizing the summed log marginal
/// likelihood of `targets` (each a fully observed function over the arms,
/// zero prior mean). Ties go to the smallest length_scale, then the smallest
/// signal_variance, then the earliest grid entry.
KernelHyperparams fit_kernel_hyperparams(std::span<const Eigen::VectorXd> features,
                                         std::span<const Eigen::VectorXd> targets,
                                         std::span<const KernelHyperparams> grid,
                                         double noise_std);

/// Exact conditioning of the prior on `history`. Negative variances from
/// round-off are clamped to zero.
GpPosterior posterior(const GpPrior& prior, std::span<const Observation> history);

}  // namespace mtsel::gp
