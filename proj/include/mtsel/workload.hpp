#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mtsel/gp.hpp"

namespace mtsel::workload {

/// Ground truth for tenants (rows) and models (columns). Qualities lie in
/// [0, 1] and costs are strictly positive.
class WorkloadMatrix {
 public:
  WorkloadMatrix() = default;

  /// `cost` is either n x K or a single 1 x K row broadcast to every user.
  /// Empty label lists are filled with "u<i>" / "m<j>".
  WorkloadMatrix(Eigen::MatrixXd quality, const Eigen::MatrixXd& cost,
                 std::vector<std::string> user_ids = {}, std::vector<std::string> model_ids = {});

  std::size_t user_count() const { return static_cast<std::size_t>(quality_.rows()); }
  std::size_t model_count() const { return static_cast<std::size_t>(quality_.cols()); }

  const Eigen::MatrixXd& quality() const { return quality_; }
  const Eigen::MatrixXd& cost() const { return cost_; }
  double quality(std::size_t user, std::size_t model) const;
  double cost(std::size_t user, std::size_t model) const;
  const Eigen::VectorXd& mu_star() const { return mu_star_; }
  double mu_star(std::size_t user) const { return mu_star_(static_cast<Eigen::Index>(user)); }
  const std::vector<std::string>& user_ids() const { return user_ids_; }
  const std::vector<std::string>& model_ids() const { return model_ids_; }

  double total_cost() const { return cost_.sum(); }
  double max_cost() const { return cost_.maxCoeff(); }

  /// Rows restricted to `users`, in the given order.
  WorkloadMatrix select_users(std::span<const std::size_t> users) const;
  /// Same qualities with a replacement cost matrix (n x K or 1 x K).
  WorkloadMatrix with_costs(const Eigen::MatrixXd& cost) const;

  /// Equal values and labels.
  bool operator==(const WorkloadMatrix& other) const;

 private:
  Eigen::MatrixXd quality_;
  Eigen::MatrixXd cost_;
  std::vector<std::string> user_ids_;
  std::vector<std::string> model_ids_;
  Eigen::VectorXd mu_star_;
};

// ---------------------------------------------------------------------------
// Synthetic generator
//
// x_ij = b_i + alpha * m_ij + u_ij + eps_ij, clipped to [0, 1].
//   b_i   ~ N(mu_b, sigma_b^2) for the user's baseline group
//   m_i.  ~ N(0, Sigma_M) drawn per user; Sigma_M is block-diagonal over model
//           groups with Sigma_M[j,j'] = exp(-(f_j - f_j')^2 / sigma_M^2),
//           f_j ~ U(0, 1)
//   u_.j  ~ N(0, Sigma_U) drawn per model over the users of one user group,
//           built the same way from per-user hidden features
//   eps   ~ N(0, sigma_W^2) i.i.d.

struct BaselineGroup {
  double mean = 0.5;
  double stddev = 0.1;
};

struct ModelGroup {
  double sigma_m = 0.5;
  std::size_t count = 1;
};

struct UserGroup {
  double sigma_u = 0.5;
};

enum class CostModel {
  kShiftedUniform,  // U(0, 1) + 0.01
  kLogUniform,      // exp(U(ln lo, ln hi))
};

struct SynGenConfig {
  std::vector<BaselineGroup> baseline_groups;
  std::vector<ModelGroup> model_groups;
  /// Empty disables the user-correlation term (u = 0).
  std::vector<UserGroup> user_groups;
  /// users_per_group[b][g]: users in baseline group b and user group g. With
  /// no user groups each inner list holds a single count.
  std::vector<std::vector<std::size_t>> users_per_group;
  double noise_std = 0.0;
  double alpha = 1.0;
  std::uint64_t seed = 0;
  CostModel cost_model = CostModel::kShiftedUniform;
  double cost_low = 0.01;  // log-uniform range
  double cost_high = 1.0;

  void validate() const;
  std::size_t user_count() const;
  std::size_t model_count() const;

  /// The main-text generator: baseline groups of equal size with the given
  /// means, one model group, no user groups, no white noise.
  static SynGenConfig basic(std::span<const double> baseline_means, double sigma_b,
                            std::size_t users, std::size_t models, double sigma_m, double alpha,
                            std::uint64_t seed);
};

/// Every intermediate of one synthetic draw, for inspection and testing.
struct SyntheticDraw {
  WorkloadMatrix workload;
  Eigen::VectorXd model_features;   // f_j
  Eigen::MatrixXd model_cov;        // Sigma_M (block-diagonal)
  Eigen::VectorXd baseline;         // b_i
  Eigen::MatrixXd model_component;  // m_ij, before the alpha weight
  Eigen::MatrixXd user_component;   // u_ij
  Eigen::MatrixXd noise;            // eps_ij
};

/// exp(-(f_i - f_j)^2 / sigma^2); sigma = 0 gives the identity.
Eigen::MatrixXd hidden_feature_cov(const Eigen::VectorXd& features, double sigma);

SyntheticDraw generate_synthetic_detailed(const SynGenConfig& config);
WorkloadMatrix generate_synthetic(const SynGenConfig& config);

// ---------------------------------------------------------------------------
// CSV files: first row is "<corner>,<model labels...>", each further row is
// "<user label>,<values...>". A cost file with one data row is broadcast.

WorkloadMatrix load_workload(const std::filesystem::path& quality_csv,
                             const std::filesystem::path& cost_csv);
void save_workload(const WorkloadMatrix& workload, const std::filesystem::path& quality_csv,
                   const std::filesystem::path& cost_csv);

// ---------------------------------------------------------------------------
// Protocol

struct SplitSpec {
  double train_fraction = 0.9;
  std::uint64_t seed = 0;
};

struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;  // in shuffled order
};

/// Seeded uniform partition; |train| = round(train_fraction * n).
Split split_train_test(std::size_t user_count, const SplitSpec& spec);

struct PriorFit {
  gp::GpPrior prior;  // zero mean, on the centred scale
  double center = 0.0;  // global mean quality of the training users
  gp::KernelHyperparams hyperparams;
  bool degenerate = false;  // all model features identical; diagonal prior used

  /// The same prior expressed on the raw quality scale (mean = center).
  gp::GpPrior raw_scale() const;
};

/// Default grid for `build_prior`: 7 length scales around the median pairwise
/// distance of model feature vectors and 5 variances around the centred
/// training-quality variance, both log-spaced by factors of two.
std::vector<gp::KernelHyperparams> default_hyperparam_grid(const WorkloadMatrix& workload,
                                                           std::span<const std::size_t> train);

/// Prior over the models for `tenant`, using each model's quality column over
/// the training users as its feature vector.
PriorFit build_prior(const WorkloadMatrix& workload, std::span<const std::size_t> train,
                     std::size_t tenant, std::span<const gp::KernelHyperparams> grid,
                     double noise_std);

}  // namespace mtsel::workload
