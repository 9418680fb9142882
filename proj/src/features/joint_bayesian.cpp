#include "facever/joint_bayesian.hpp"

#include <cmath>
#include <limits>
#include <map>

#include <Eigen/Eigenvalues>

#include "facever/container.hpp"
#include "facever/error.hpp"

namespace facever {
namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;

double log_det(const Eigen::LLT<MatrixXd>& llt) {
  return 2.0 * llt.matrixLLT().diagonal().array().log().sum();
}

double quad(const Eigen::LLT<MatrixXd>& llt, const VectorXd& x) {
  return llt.matrixL().solve(x).squaredNorm();
}

MatrixXd symmetric_inverse(const Eigen::LLT<MatrixXd>& llt) {
  const MatrixXd inv = llt.solve(MatrixXd::Identity(llt.rows(), llt.rows()));
  return 0.5 * (inv + inv.transpose());
}

Eigen::LLT<MatrixXd> factor(const MatrixXd& m, const char* what) {
  Eigen::LLT<MatrixXd> llt(m);
  if (llt.info() != Eigen::Success) {
    throw FittingError(std::string(what) + " is not positive definite");
  }
  return llt;
}

void check_symmetric(const MatrixXd& m, const char* what) {
  const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
  if ((m - m.transpose()).cwiseAbs().maxCoeff() > 1e-10 * scale) {
    throw FittingError(std::string(what) + " is not symmetric");
  }
}

VectorXd as_vector(std::span<const double> x) {
  return Eigen::Map<const VectorXd>(x.data(), static_cast<Eigen::Index>(x.size()));
}

double relative_change(const MatrixXd& next, const MatrixXd& prev) {
  const double base = prev.norm();
  if (base == 0.0) return next.norm() == 0.0 ? 0.0 : 1.0;
  return (next - prev).norm() / base;
}

}  // namespace

JbModel::JbModel(MatrixXd s_mu, MatrixXd s_eps) : s_mu_(std::move(s_mu)), s_eps_(std::move(s_eps)) {
  if (s_mu_.rows() != s_mu_.cols() || s_eps_.rows() != s_eps_.cols() || s_mu_.rows() != s_eps_.rows() ||
      s_mu_.rows() == 0) {
    throw DimensionError("Joint Bayesian covariances must be square and of equal size");
  }
  check_symmetric(s_mu_, "S_mu");
  check_symmetric(s_eps_, "S_eps");
  s_mu_ = 0.5 * (s_mu_ + s_mu_.transpose());
  s_eps_ = 0.5 * (s_eps_ + s_eps_.transpose());
  const Eigen::SelfAdjointEigenSolver<MatrixXd> mu_eig(s_mu_, Eigen::EigenvaluesOnly);
  if (mu_eig.eigenvalues().minCoeff() < -1e-10 * std::max(1.0, mu_eig.eigenvalues().maxCoeff())) {
    throw FittingError("S_mu is not positive semidefinite");
  }
  const auto eps_llt = factor(s_eps_, "S_eps");
  const auto total_llt = factor(s_mu_ + s_eps_, "S_mu + S_eps");
  const auto sum_llt = factor(2.0 * s_mu_ + s_eps_, "2 S_mu + S_eps");
  const MatrixXd eps_inv = symmetric_inverse(eps_llt);
  const MatrixXd total_inv = symmetric_inverse(total_llt);
  const MatrixXd sum_inv = symmetric_inverse(sum_llt);
  a_ = total_inv - 0.5 * (sum_inv + eps_inv);
  g_ = 0.5 * (sum_inv - eps_inv);
  offset_ = -0.5 * (log_det(sum_llt) + log_det(eps_llt) - 2.0 * log_det(total_llt));
}

double JbModel::score(std::span<const double> x1, std::span<const double> x2) const {
  if (x1.size() != dim() || x2.size() != dim()) {
    throw DimensionError("Joint Bayesian model has d=" + std::to_string(dim()) + ", got vectors of " +
                         std::to_string(x1.size()) + " and " + std::to_string(x2.size()));
  }
  const auto a = Eigen::Map<const VectorXd>(x1.data(), static_cast<Eigen::Index>(x1.size()));
  const auto b = Eigen::Map<const VectorXd>(x2.data(), static_cast<Eigen::Index>(x2.size()));
  return 0.5 * (a.dot(a_ * a) + b.dot(a_ * b) - 2.0 * a.dot(g_ * b)) + offset_;
}

double jb_score_direct(const MatrixXd& s_mu, const MatrixXd& s_eps, std::span<const double> x1,
                       std::span<const double> x2) {
  const auto d = s_mu.rows();
  if (static_cast<Eigen::Index>(x1.size()) != d || static_cast<Eigen::Index>(x2.size()) != d) {
    throw DimensionError("direct Joint Bayesian score: dimension mismatch");
  }
  const MatrixXd total = s_mu + s_eps;
  MatrixXd intra(2 * d, 2 * d), extra = MatrixXd::Zero(2 * d, 2 * d);
  intra << total, s_mu, s_mu, total;
  extra.topLeftCorner(d, d) = total;
  extra.bottomRightCorner(d, d) = total;
  VectorXd z(2 * d);
  z << as_vector(x1), as_vector(x2);
  auto log_density = [&](const MatrixXd& cov) {
    const auto llt = factor(cov, "joint covariance");
    return -0.5 * (static_cast<double>(2 * d) * std::log(2.0 * M_PI) + log_det(llt) + quad(llt, z));
  };
  return log_density(intra) - log_density(extra);
}

JbModel jb_fit(const std::vector<MatrixXd>& groups, const JbFitOptions& options, JbFitReport* report) {
  JbFitReport local;
  JbFitReport& rep = report ? *report : local;
  rep = {};
  if (groups.size() < 2) throw FittingError("Joint Bayesian fitting needs at least 2 identities");
  const Eigen::Index d = groups.front().cols();
  if (d == 0) throw FittingError("Joint Bayesian fitting needs nonempty feature vectors");
  const auto n_id = static_cast<Eigen::Index>(groups.size());

  MatrixXd sums(n_id, d);
  std::vector<Eigen::Index> counts(groups.size());
  MatrixXd second = MatrixXd::Zero(d, d);  // sum of x x^T over non-singleton groups
  double n_multi = 0.0;
  for (std::size_t i = 0; i < groups.size(); ++i) {
    const auto& g = groups[i];
    if (g.rows() == 0) throw FittingError("identity group " + std::to_string(i) + " is empty");
    if (g.cols() != d) throw DimensionError("identity groups differ in feature dimension");
    if (!g.allFinite()) throw FittingError("identity group " + std::to_string(i) + " has non-finite features");
    counts[i] = g.rows();
    sums.row(static_cast<Eigen::Index>(i)) = g.colwise().sum();
    if (g.rows() >= 2) {
      second.noalias() += g.transpose() * g;
      n_multi += static_cast<double>(g.rows());
    }
  }
  if (n_multi == 0.0) throw FittingError("every identity has a single sample; S_eps is unidentifiable");

  // Initialization: between-class scatter of the group means and pooled
  // within-class scatter.
  MatrixXd means = sums;
  for (Eigen::Index i = 0; i < n_id; ++i) means.row(i) /= static_cast<double>(counts[static_cast<std::size_t>(i)]);
  MatrixXd s_mu = means.transpose() * means / static_cast<double>(n_id);
  MatrixXd within = second;
  for (Eigen::Index i = 0; i < n_id; ++i) {
    const auto m = counts[static_cast<std::size_t>(i)];
    if (m >= 2) within.noalias() -= sums.row(i).transpose() * sums.row(i) / static_cast<double>(m);
  }
  MatrixXd s_eps = within / n_multi;

  const double floor = 1e-6 * (s_mu + s_eps).trace() / static_cast<double>(d);
  if (!(floor > 0.0)) throw FittingError("features carry no variance");

  // Keep S_eps safely positive definite: lift its spectrum to the floor with
  // a ridge whenever it dips below.
  auto regularize = [&](MatrixXd& s, std::size_t iteration) {
    s = 0.5 * (s + s.transpose());
    const Eigen::SelfAdjointEigenSolver<MatrixXd> eig(s, Eigen::EigenvaluesOnly);
    const double lowest = eig.eigenvalues().minCoeff();
    if (lowest < floor) {
      s.diagonal().array() += floor - lowest;
      ++rep.ridge_corrections;
      if (rep.warnings.size() < 8) {
        rep.warnings.push_back("S_eps regularized at iteration " + std::to_string(iteration) +
                               " (lowest eigenvalue " + std::to_string(lowest) + ", ridge " +
                               std::to_string(floor - lowest) + ")");
      }
    }
  };
  regularize(s_eps, 1);
  rep.iterations = 1;
  // The initialization counts as a full change from nothing, so an infinite
  // tolerance stops right here.
  rep.final_change = 1.0;
  if (rep.final_change < options.tol) {
    rep.converged = true;
  }

  std::map<Eigen::Index, std::size_t> size_histogram;
  for (auto m : counts) ++size_histogram[m];
  VectorXd multi(n_id), weights(n_id);
  for (Eigen::Index i = 0; i < n_id; ++i) {
    const auto m = counts[static_cast<std::size_t>(i)];
    multi(i) = m >= 2 ? 1.0 : 0.0;
    weights(i) = m >= 2 ? static_cast<double>(m) : 0.0;
  }

  MatrixXd post_means(n_id, d);
  while (!rep.converged && rep.iterations < options.max_iter) {
    // E-step: posterior of each identity mean given its m samples.
    //   mean = S_mu (m S_mu + S_eps)^-1 sum,  cov = S_mu - m S_mu (m S_mu + S_eps)^-1 S_mu
    std::map<Eigen::Index, MatrixXd> gain, post_cov;
    for (const auto& [m, count] : size_histogram) {
      const double md = static_cast<double>(m);
      Eigen::LLT<MatrixXd> llt(md * s_mu + s_eps);
      if (llt.info() != Eigen::Success) throw FittingError("m S_mu + S_eps lost positive definiteness");
      MatrixXd w = llt.solve(s_mu).transpose();  // S_mu K (K symmetric)
      MatrixXd c = s_mu - md * w * s_mu;
      gain[m] = std::move(w);
      post_cov[m] = 0.5 * (c + c.transpose());
    }
    for (Eigen::Index i = 0; i < n_id; ++i) {
      post_means.row(i) = (gain[counts[static_cast<std::size_t>(i)]] * sums.row(i).transpose()).transpose();
    }

    // M-step.
    MatrixXd next_mu = post_means.transpose() * post_means;
    // Residual scatter over non-singleton groups:
    //   sum_j (x_j - mu)(x_j - mu)^T = sum_j x_j x_j^T - s mu^T - mu s^T + m mu mu^T
    const MatrixXd multi_means = multi.asDiagonal() * post_means;
    const MatrixXd cross = sums.transpose() * multi_means;
    MatrixXd next_eps = second - cross - cross.transpose();
    next_eps.noalias() += post_means.transpose() * weights.asDiagonal() * post_means;
    for (const auto& [m, count] : size_histogram) {
      next_mu += static_cast<double>(count) * post_cov[m];
      if (m >= 2) next_eps += static_cast<double>(count * static_cast<std::size_t>(m)) * post_cov[m];
    }
    next_mu /= static_cast<double>(n_id);
    next_mu = 0.5 * (next_mu + next_mu.transpose());
    next_eps /= n_multi;
    ++rep.iterations;
    regularize(next_eps, rep.iterations);

    rep.final_change = std::max(relative_change(next_mu, s_mu), relative_change(next_eps, s_eps));
    s_mu = std::move(next_mu);
    s_eps = std::move(next_eps);
    if (rep.final_change < options.tol) rep.converged = true;
  }
  if (!rep.converged) {
    rep.warnings.push_back("EM stopped at max_iter=" + std::to_string(options.max_iter) +
                           " with relative change " + std::to_string(rep.final_change));
  }
  return JbModel(std::move(s_mu), std::move(s_eps));
}

void save_jb(const std::filesystem::path& path, const JbModel& model) {
  Container c{magic::joint_bayesian};
  c.metadata()["kind"] = "joint-bayesian";
  c.metadata()["d"] = model.dim();
  c.metadata()["fold_mask"] = model.fold_mask;
  const auto d = model.dim();
  Tensor<double> mu({d, d}), eps({d, d});
  for (std::size_t r = 0; r < d; ++r) {
    for (std::size_t col = 0; col < d; ++col) {
      mu[r * d + col] = model.s_mu()(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(col));
      eps[r * d + col] = model.s_eps()(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(col));
    }
  }
  c.add("S_mu", mu);
  c.add("S_eps", eps);
  c.save(path);
}

JbModel load_jb(const std::filesystem::path& path) {
  const auto c = Container::load(path, magic::joint_bayesian);
  const auto mu = c.get_double("S_mu");
  const auto eps = c.get_double("S_eps");
  std::size_t d = 0;
  try {
    d = c.metadata().at("d").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": malformed Joint Bayesian metadata: " + e.what());
  }
  if (mu.shape() != Shape{d, d} || eps.shape() != Shape{d, d}) {
    throw FormatError(path.string() + ": covariance shapes do not match d=" + std::to_string(d));
  }
  MatrixXd s_mu(d, d), s_eps(d, d);
  for (std::size_t r = 0; r < d; ++r) {
    for (std::size_t col = 0; col < d; ++col) {
      s_mu(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(col)) = mu[r * d + col];
      s_eps(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(col)) = eps[r * d + col];
    }
  }
  JbModel model(std::move(s_mu), std::move(s_eps));
  model.fold_mask = c.metadata().value("fold_mask", std::uint64_t{0});
  return model;
}

}  // namespace facever
