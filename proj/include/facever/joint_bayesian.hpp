#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace facever {

/// Feature model x = mu + eps with mu ~ N(0, S_mu) shared by an identity and
/// eps ~ N(0, S_eps) per image. Scoring caches the factorizations it needs.
class JbModel {
 public:
  JbModel() = default;
  /// Throws FittingError unless both matrices are symmetric, S_mu is PSD
  /// and S_eps is positive definite.
  JbModel(Eigen::MatrixXd s_mu, Eigen::MatrixXd s_eps);

  std::size_t dim() const { return static_cast<std::size_t>(s_mu_.rows()); }
  const Eigen::MatrixXd& s_mu() const noexcept { return s_mu_; }
  const Eigen::MatrixXd& s_eps() const noexcept { return s_eps_; }

  /// log N([x1;x2]; 0, S_I) - log N([x1;x2]; 0, S_E). Larger = more likely
  /// the same identity.
  double score(std::span<const double> x1, std::span<const double> x2) const;

  std::uint64_t fold_mask = 0;  // folds whose data the fit consumed

 private:
  Eigen::MatrixXd s_mu_, s_eps_;
  // With x+- = (x1 +- x2)/sqrt(2) the matched covariance block-diagonalizes
  // into (2 S_mu + S_eps, S_eps); the unmatched one is diag(T, T), T = S_mu + S_eps.
  // Expanding both quadratic forms back in x1, x2 gives
  //   r = (x1'A x1 + x2'A x2 - 2 x1'G x2) / 2 + offset.
  // A, G and offset are exactly zero when S_mu is.
  Eigen::MatrixXd a_, g_;
  double offset_ = 0;
};

/// Direct evaluation over the full 2d x 2d joint covariances, kept as the
/// reference for the fast path.
double jb_score_direct(const Eigen::MatrixXd& s_mu, const Eigen::MatrixXd& s_eps,
                       std::span<const double> x1, std::span<const double> x2);

struct JbFitOptions {
  double tol = 1e-6;
  std::size_t max_iter = 500;
};

struct JbFitReport {
  std::size_t iterations = 0;  // M-steps run, counting the scatter initialization
  double final_change = 0.0;   // max relative Frobenius change of the last M-step
  bool converged = false;
  std::size_t ridge_corrections = 0;
  std::vector<std::string> warnings;
};

/// Groups are one matrix per identity, one (centred) sample per row.
/// Initializes from between/within scatter, then runs exact EM. Singleton
/// identities inform S_mu only. Regularizes S_eps with a ridge whenever it
/// would stop being safely positive definite.
JbModel jb_fit(const std::vector<Eigen::MatrixXd>& groups, const JbFitOptions& options = {},
               JbFitReport* report = nullptr);

/// FVJ1 container: d in the metadata, S_mu and S_eps as f64 row-major.
void save_jb(const std::filesystem::path& path, const JbModel& model);
JbModel load_jb(const std::filesystem::path& path);

}  // namespace facever
