#include "mtsel/workload.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "mtsel/errors.hpp"
#include "mtsel/random.hpp"

namespace mtsel::workload {

namespace {

// Independent streams per generator component, so that changing one knob
// (e.g. sigma_M) leaves the other draws of the same seed untouched.
enum StreamTag : std::uint64_t {
  kFeatures = 1,
  kBaseline,
  kUserFeatures,
  kModelComponent,
  kUserComponent,
  kNoise,
  kCosts,
  kSplit,
};

std::vector<std::string> default_labels(char prefix, std::size_t n) {
  std::vector<std::string> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = prefix + std::to_string(i);
  return out;
}

// L with L L^T = cov, tolerant of singular covariances.
Eigen::MatrixXd psd_factor(const Eigen::MatrixXd& cov) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  return eig.eigenvectors() * eig.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal();
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

struct CsvTable {
  std::vector<std::string> columns;  // header without the corner cell
  std::vector<std::string> rows;     // row labels
  Eigen::MatrixXd values;
};

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

double parse_number(const std::string& text, const std::filesystem::path& path, std::size_t line) {
  const char* begin = text.data();
  const char* end = begin + text.size();
  while (begin < end && (*begin == ' ' || *begin == '\t')) ++begin;
  while (end > begin && (end[-1] == ' ' || end[-1] == '\t')) --end;
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(begin, end, v);
  if (ec != std::errc() || ptr != end || begin == end) {
    throw InputError(path.string() + ":" + std::to_string(line) + ": cannot parse '" + text + "'");
  }
  return v;
}

CsvTable read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open " + path.string());
  CsvTable t;
  std::vector<std::vector<double>> rows;
  std::string line;
  std::size_t line_no = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line_no == 1 && line.starts_with("\xEF\xBB\xBF")) line.erase(0, 3);
    if (line.empty()) continue;
    auto cells = split_line(line);
    if (!have_header) {
      if (cells.size() < 2) throw InputError(path.string() + ": header needs at least one model");
      t.columns.assign(cells.begin() + 1, cells.end());
      have_header = true;
      continue;
    }
    if (cells.size() != t.columns.size() + 1) {
      throw InputError(path.string() + ":" + std::to_string(line_no) + ": expected " +
                       std::to_string(t.columns.size() + 1) + " cells, found " +
                       std::to_string(cells.size()));
    }
    t.rows.push_back(cells.front());
    std::vector<double> values;
    values.reserve(t.columns.size());
    for (std::size_t c = 1; c < cells.size(); ++c) values.push_back(parse_number(cells[c], path, line_no));
    rows.push_back(std::move(values));
  }
  if (!have_header) throw InputError(path.string() + ": empty file");
  if (rows.empty()) throw InputError(path.string() + ": no data rows");
  t.values.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(t.columns.size()));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t c = 0; c < rows[r].size(); ++c) {
      t.values(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
    }
  }
  return t;
}

void write_csv(const std::filesystem::path& path, const std::vector<std::string>& columns,
               const std::vector<std::string>& rows, const Eigen::MatrixXd& values) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path.string());
  out << "user";
  for (const auto& c : columns) out << ',' << c;
  out << '\n';
  for (Eigen::Index r = 0; r < values.rows(); ++r) {
    out << rows[static_cast<std::size_t>(r)];
    for (Eigen::Index c = 0; c < values.cols(); ++c) out << ',' << format_double(values(r, c));
    out << '\n';
  }
  if (!out) throw InputError("failed writing " + path.string());
}

double centred_variance(const Eigen::MatrixXd& block) {
  if (block.size() == 0) return 0.0;
  const double mean = block.mean();
  return (block.array() - mean).square().mean();
}

std::vector<Eigen::VectorXd> model_features(const WorkloadMatrix& w,
                                            std::span<const std::size_t> train) {
  std::vector<Eigen::VectorXd> features(w.model_count(),
                                        Eigen::VectorXd(static_cast<Eigen::Index>(train.size())));
  for (std::size_t j = 0; j < w.model_count(); ++j) {
    for (std::size_t r = 0; r < train.size(); ++r) {
      features[j](static_cast<Eigen::Index>(r)) = w.quality(train[r], j);
    }
  }
  return features;
}

Eigen::MatrixXd train_block(const WorkloadMatrix& w, std::span<const std::size_t> train) {
  Eigen::MatrixXd block(static_cast<Eigen::Index>(train.size()),
                        static_cast<Eigen::Index>(w.model_count()));
  for (std::size_t r = 0; r < train.size(); ++r) {
    block.row(static_cast<Eigen::Index>(r)) = w.quality().row(static_cast<Eigen::Index>(train[r]));
  }
  return block;
}

void check_users(std::span<const std::size_t> users, std::size_t n, const char* what) {
  for (auto u : users) {
    if (u >= n) throw InputError(std::string(what) + " index " + std::to_string(u) + " out of range");
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// WorkloadMatrix

WorkloadMatrix::WorkloadMatrix(Eigen::MatrixXd quality, const Eigen::MatrixXd& cost,
                               std::vector<std::string> user_ids,
                               std::vector<std::string> model_ids)
    : quality_(std::move(quality)), user_ids_(std::move(user_ids)), model_ids_(std::move(model_ids)) {
  const auto n = quality_.rows();
  const auto k = quality_.cols();
  if (n == 0 || k == 0) throw InputError("workload needs at least one user and one model");
  if (cost.cols() != k) {
    throw InputError("cost has " + std::to_string(cost.cols()) + " columns but quality has " +
                     std::to_string(k));
  }
  if (cost.rows() == n) {
    cost_ = cost;
  } else if (cost.rows() == 1) {
    cost_ = cost.replicate(n, 1);
  } else {
    throw InputError("cost has " + std::to_string(cost.rows()) + " rows but quality has " +
                     std::to_string(n));
  }
  if (!quality_.allFinite() || (quality_.array() < 0.0).any() || (quality_.array() > 1.0).any()) {
    throw InputError("quality entries must lie in [0, 1]");
  }
  if (!cost_.allFinite() || (cost_.array() <= 0.0).any()) {
    throw InputError("cost entries must be positive");
  }
  if (user_ids_.empty()) user_ids_ = default_labels('u', static_cast<std::size_t>(n));
  if (model_ids_.empty()) model_ids_ = default_labels('m', static_cast<std::size_t>(k));
  if (user_ids_.size() != static_cast<std::size_t>(n) ||
      model_ids_.size() != static_cast<std::size_t>(k)) {
    throw InputError("label count does not match the matrix shape");
  }
  mu_star_ = quality_.rowwise().maxCoeff();
}

double WorkloadMatrix::quality(std::size_t user, std::size_t model) const {
  return quality_(static_cast<Eigen::Index>(user), static_cast<Eigen::Index>(model));
}

double WorkloadMatrix::cost(std::size_t user, std::size_t model) const {
  return cost_(static_cast<Eigen::Index>(user), static_cast<Eigen::Index>(model));
}

WorkloadMatrix WorkloadMatrix::select_users(std::span<const std::size_t> users) const {
  check_users(users, user_count(), "user");
  const auto k = quality_.cols();
  Eigen::MatrixXd q(static_cast<Eigen::Index>(users.size()), k);
  Eigen::MatrixXd c(static_cast<Eigen::Index>(users.size()), k);
  std::vector<std::string> ids;
  ids.reserve(users.size());
  for (std::size_t r = 0; r < users.size(); ++r) {
    q.row(static_cast<Eigen::Index>(r)) = quality_.row(static_cast<Eigen::Index>(users[r]));
    c.row(static_cast<Eigen::Index>(r)) = cost_.row(static_cast<Eigen::Index>(users[r]));
    ids.push_back(user_ids_[users[r]]);
  }
  return WorkloadMatrix(std::move(q), c, std::move(ids), model_ids_);
}

WorkloadMatrix WorkloadMatrix::with_costs(const Eigen::MatrixXd& cost) const {
  return WorkloadMatrix(quality_, cost, user_ids_, model_ids_);
}

bool WorkloadMatrix::operator==(const WorkloadMatrix& other) const {
  return quality_.rows() == other.quality_.rows() && quality_.cols() == other.quality_.cols() &&
         quality_ == other.quality_ && cost_ == other.cost_ && user_ids_ == other.user_ids_ &&
         model_ids_ == other.model_ids_;
}

// ---------------------------------------------------------------------------
// Synthetic generator

void SynGenConfig::validate() const {
  if (baseline_groups.empty()) throw InputError("synthetic config needs a baseline group");
  if (model_groups.empty()) throw InputError("synthetic config needs a model group");
  for (const auto& b : baseline_groups) {
    if (!(b.stddev >= 0.0)) throw InputError("baseline stddev must be nonnegative");
  }
  for (const auto& m : model_groups) {
    if (!(m.sigma_m >= 0.0)) throw InputError("sigma_M must be nonnegative");
    if (m.count == 0) throw InputError("model group sizes must be >= 1");
  }
  for (const auto& u : user_groups) {
    if (!(u.sigma_u >= 0.0)) throw InputError("sigma_U must be nonnegative");
  }
  if (users_per_group.size() != baseline_groups.size()) {
    throw InputError("users_per_group needs one entry per baseline group");
  }
  const std::size_t width = std::max<std::size_t>(1, user_groups.size());
  for (const auto& row : users_per_group) {
    if (row.size() != width) throw InputError("users_per_group row has the wrong width");
    for (auto c : row) {
      if (c == 0) throw InputError("user group sizes must be >= 1");
    }
  }
  if (!(noise_std >= 0.0)) throw InputError("sigma_W must be nonnegative");
  if (!(alpha >= 0.0)) throw InputError("alpha must be nonnegative");
  if (cost_model == CostModel::kLogUniform && !(cost_low > 0.0 && cost_high >= cost_low)) {
    throw InputError("log-uniform cost range must satisfy 0 < low <= high");
  }
}

std::size_t SynGenConfig::user_count() const {
  std::size_t n = 0;
  for (const auto& row : users_per_group) n = std::accumulate(row.begin(), row.end(), n);
  return n;
}

std::size_t SynGenConfig::model_count() const {
  std::size_t k = 0;
  for (const auto& m : model_groups) k += m.count;
  return k;
}

SynGenConfig SynGenConfig::basic(std::span<const double> baseline_means, double sigma_b,
                                 std::size_t users, std::size_t models, double sigma_m,
                                 double alpha, std::uint64_t seed) {
  if (baseline_means.empty() || users < baseline_means.size()) {
    throw InputError("need at least one user per baseline group");
  }
  SynGenConfig c;
  const std::size_t groups = baseline_means.size();
  for (std::size_t g = 0; g < groups; ++g) {
    c.baseline_groups.push_back({baseline_means[g], sigma_b});
    c.users_per_group.push_back({users / groups + (g < users % groups ? 1 : 0)});
  }
  c.model_groups.push_back({sigma_m, models});
  c.alpha = alpha;
  c.seed = seed;
  return c;
}

Eigen::MatrixXd hidden_feature_cov(const Eigen::VectorXd& features, double sigma) {
  const auto k = features.size();
  Eigen::MatrixXd cov = Eigen::MatrixXd::Identity(k, k);
  if (sigma <= 0.0) return cov;
  const double inv = 1.0 / (sigma * sigma);
  for (Eigen::Index i = 0; i < k; ++i) {
    for (Eigen::Index j = 0; j < i; ++j) {
      const double d = features(i) - features(j);
      cov(i, j) = cov(j, i) = std::exp(-d * d * inv);
    }
  }
  return cov;
}

SyntheticDraw generate_synthetic_detailed(const SynGenConfig& config) {
  config.validate();
  const auto n = static_cast<Eigen::Index>(config.user_count());
  const auto k = static_cast<Eigen::Index>(config.model_count());
  std::normal_distribution<double> std_normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  SyntheticDraw d;

  // Hidden model features and the block-diagonal model covariance.
  {
    Rng rng = make_rng({config.seed, kFeatures});
    d.model_features.resize(k);
    for (Eigen::Index j = 0; j < k; ++j) d.model_features(j) = unit(rng);
  }
  d.model_cov = Eigen::MatrixXd::Zero(k, k);
  std::vector<std::pair<Eigen::Index, Eigen::Index>> model_blocks;  // (offset, size)
  {
    Eigen::Index offset = 0;
    for (const auto& g : config.model_groups) {
      const auto size = static_cast<Eigen::Index>(g.count);
      d.model_cov.block(offset, offset, size, size) =
          hidden_feature_cov(d.model_features.segment(offset, size), g.sigma_m);
      model_blocks.emplace_back(offset, size);
      offset += size;
    }
  }

  // User layout: baseline group major, user group minor.
  std::vector<std::size_t> baseline_of(static_cast<std::size_t>(n));
  std::vector<std::size_t> user_group_of(static_cast<std::size_t>(n));
  {
    std::size_t u = 0;
    for (std::size_t b = 0; b < config.users_per_group.size(); ++b) {
      for (std::size_t g = 0; g < config.users_per_group[b].size(); ++g) {
        for (std::size_t c = 0; c < config.users_per_group[b][g]; ++c, ++u) {
          baseline_of[u] = b;
          user_group_of[u] = g;
        }
      }
    }
  }

  {
    Rng rng = make_rng({config.seed, kBaseline});
    d.baseline.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto& g = config.baseline_groups[baseline_of[static_cast<std::size_t>(i)]];
      d.baseline(i) = g.mean + g.stddev * std_normal(rng);
    }
  }

  {
    Rng rng = make_rng({config.seed, kModelComponent});
    d.model_component.resize(n, k);
    std::vector<Eigen::MatrixXd> factors;
    for (const auto& [offset, size] : model_blocks) {
      factors.push_back(psd_factor(d.model_cov.block(offset, offset, size, size)));
    }
    for (Eigen::Index i = 0; i < n; ++i) {
      for (std::size_t b = 0; b < model_blocks.size(); ++b) {
        const auto [offset, size] = model_blocks[b];
        Eigen::VectorXd z(size);
        for (Eigen::Index j = 0; j < size; ++j) z(j) = std_normal(rng);
        d.model_component.row(i).segment(offset, size) = (factors[b] * z).transpose();
      }
    }
  }

  d.user_component = Eigen::MatrixXd::Zero(n, k);
  if (!config.user_groups.empty()) {
    Rng feature_rng = make_rng({config.seed, kUserFeatures});
    Rng rng = make_rng({config.seed, kUserComponent});
    for (std::size_t g = 0; g < config.user_groups.size(); ++g) {
      std::vector<Eigen::Index> members;
      for (Eigen::Index i = 0; i < n; ++i) {
        if (user_group_of[static_cast<std::size_t>(i)] == g) members.push_back(i);
      }
      Eigen::VectorXd features(static_cast<Eigen::Index>(members.size()));
      for (Eigen::Index m = 0; m < features.size(); ++m) features(m) = unit(feature_rng);
      const Eigen::MatrixXd factor =
          psd_factor(hidden_feature_cov(features, config.user_groups[g].sigma_u));
      for (Eigen::Index j = 0; j < k; ++j) {
        Eigen::VectorXd z(features.size());
        for (Eigen::Index m = 0; m < z.size(); ++m) z(m) = std_normal(rng);
        const Eigen::VectorXd u = factor * z;
        for (Eigen::Index m = 0; m < u.size(); ++m) {
          d.user_component(members[static_cast<std::size_t>(m)], j) = u(m);
        }
      }
    }
  }

  d.noise = Eigen::MatrixXd::Zero(n, k);
  if (config.noise_std > 0.0) {
    Rng rng = make_rng({config.seed, kNoise});
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index j = 0; j < k; ++j) d.noise(i, j) = config.noise_std * std_normal(rng);
    }
  }

  Eigen::MatrixXd cost(n, k);
  {
    Rng rng = make_rng({config.seed, kCosts});
    const double log_lo = std::log(config.cost_low);
    const double log_hi = std::log(config.cost_high);
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index j = 0; j < k; ++j) {
        const double r = unit(rng);
        cost(i, j) = config.cost_model == CostModel::kShiftedUniform
                         ? r + 0.01
                         : std::exp(log_lo + r * (log_hi - log_lo));
      }
    }
  }

  Eigen::MatrixXd quality = (config.alpha * d.model_component + d.user_component + d.noise)
                                .colwise() + d.baseline;
  quality = quality.cwiseMax(0.0).cwiseMin(1.0);
  d.workload = WorkloadMatrix(std::move(quality), cost);
  return d;
}

WorkloadMatrix generate_synthetic(const SynGenConfig& config) {
  return generate_synthetic_detailed(config).workload;
}

// ---------------------------------------------------------------------------
// CSV

WorkloadMatrix load_workload(const std::filesystem::path& quality_csv,
                             const std::filesystem::path& cost_csv) {
  const CsvTable q = read_csv(quality_csv);
  const CsvTable c = read_csv(cost_csv);
  if (c.columns.size() != q.columns.size()) {
    throw InputError("cost file has " + std::to_string(c.columns.size()) +
                     " model columns but quality file has " + std::to_string(q.columns.size()));
  }
  if (c.columns != q.columns) throw InputError("cost and quality files disagree on model labels");
  if (c.values.rows() != 1 && c.values.rows() != q.values.rows()) {
    throw InputError("cost file must have one row or one row per user");
  }
  return WorkloadMatrix(q.values, c.values, q.rows, q.columns);
}

void save_workload(const WorkloadMatrix& workload, const std::filesystem::path& quality_csv,
                   const std::filesystem::path& cost_csv) {
  write_csv(quality_csv, workload.model_ids(), workload.user_ids(), workload.quality());
  write_csv(cost_csv, workload.model_ids(), workload.user_ids(), workload.cost());
}

// ---------------------------------------------------------------------------
// Protocol

Split split_train_test(std::size_t user_count, const SplitSpec& spec) {
  if (user_count < 2) throw InputError("splitting needs at least two users");
  if (!(spec.train_fraction > 0.0 && spec.train_fraction < 1.0)) {
    throw InputError("train fraction must lie in (0, 1)");
  }
  const auto train_size =
      static_cast<std::size_t>(std::llround(spec.train_fraction * static_cast<double>(user_count)));
  if (train_size >= user_count) throw InputError("split leaves the test set empty");
  if (train_size == 0) throw InputError("split leaves the training set empty");

  std::vector<std::size_t> order(user_count);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng = make_rng({spec.seed, kSplit});
  std::shuffle(order.begin(), order.end(), rng);

  Split s;
  s.train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(train_size));
  s.test.assign(order.begin() + static_cast<std::ptrdiff_t>(train_size), order.end());
  std::sort(s.train.begin(), s.train.end());
  return s;
}

gp::GpPrior PriorFit::raw_scale() const {
  gp::GpPrior p = prior;
  p.mean = (prior.mean.array() + center).matrix();
  return p;
}

std::vector<gp::KernelHyperparams> default_hyperparam_grid(const WorkloadMatrix& workload,
                                                           std::span<const std::size_t> train) {
  if (train.empty()) throw InputError("training set is empty");
  check_users(train, workload.user_count(), "training user");
  const auto features = model_features(workload, train);
  std::vector<double> distances;
  for (std::size_t i = 0; i < features.size(); ++i) {
    for (std::size_t j = 0; j < i; ++j) {
      const double d = (features[i] - features[j]).norm();
      if (d > 0.0) distances.push_back(d);
    }
  }
  double length_center = 1.0;
  if (!distances.empty()) {
    auto mid = distances.begin() + static_cast<std::ptrdiff_t>(distances.size() / 2);
    std::nth_element(distances.begin(), mid, distances.end());
    length_center = *mid;
  }
  double variance_center = centred_variance(train_block(workload, train));
  if (!(variance_center > 0.0)) variance_center = 1e-4;
  return gp::make_hyperparam_grid(length_center, variance_center);
}

PriorFit build_prior(const WorkloadMatrix& workload, std::span<const std::size_t> train,
                     std::size_t tenant, std::span<const gp::KernelHyperparams> grid,
                     double noise_std) {
  if (train.empty()) throw InputError("training set is empty");
  check_users(train, workload.user_count(), "training user");
  if (tenant >= workload.user_count()) throw InputError("tenant index out of range");
  if (std::find(train.begin(), train.end(), tenant) != train.end()) {
    throw InputError("tenant " + std::to_string(tenant) + " is part of the training set");
  }
  if (!(noise_std > 0.0)) throw InputError("prior noise_std must be positive");

  const Eigen::MatrixXd block = train_block(workload, train);
  const auto k = static_cast<Eigen::Index>(workload.model_count());
  PriorFit fit;
  fit.center = block.mean();

  const auto features = model_features(workload, train);
  bool all_identical = true;
  for (std::size_t j = 1; j < features.size() && all_identical; ++j) {
    all_identical = features[j] == features[0];
  }

  fit.prior.mean = Eigen::VectorXd::Zero(k);
  fit.prior.noise_std = noise_std;
  if (all_identical) {
    double variance = centred_variance(block);
    if (!(variance > 0.0)) variance = 1e-4;
    fit.degenerate = true;
    fit.hyperparams = {1.0, variance};
    fit.prior.cov = variance * Eigen::MatrixXd::Identity(k, k);
  } else {
    std::vector<Eigen::VectorXd> targets;
    targets.reserve(train.size());
    for (Eigen::Index r = 0; r < block.rows(); ++r) {
      targets.emplace_back((block.row(r).array() - fit.center).matrix().transpose());
    }
    fit.hyperparams = gp::fit_kernel_hyperparams(features, targets, grid, noise_std);
    fit.prior.cov = gp::build_rbf_kernel(features, fit.hyperparams);
  }
  fit.prior.validate();
  return fit;
}

}  // namespace mtsel::workload
