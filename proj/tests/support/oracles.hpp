#pragma once

// Independent reference computations. Nothing here calls the library code
// it is used to check.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace facever::testing {

inline double naive_mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

inline double naive_pearson(const std::vector<double>& x, const std::vector<double>& y) {
  const double mx = naive_mean(x), my = naive_mean(y);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  return sxy / std::sqrt(sxx * syy);
}

/// Rank by counting: 1 + #smaller + (#equal - 1) / 2. O(n^2), no sorting.
inline std::vector<double> counting_ranks(const std::vector<double>& v) {
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    double less = 0, equal = 0;
    for (double x : v) {
      if (x < v[i]) ++less;
      if (x == v[i]) ++equal;
    }
    r[i] = 1.0 + less + (equal - 1.0) / 2.0;
  }
  return r;
}

/// Ranks via an index sort with tie groups averaged.
inline std::vector<double> sorted_ranks(const std::vector<double>& v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[order[k]] = avg;
    i = j + 1;
  }
  return r;
}

/// The six distances written out as plain loops, keyed by lowercase name.
inline double naive_distance(const std::string& kind, const std::vector<double>& x,
                             const std::vector<double>& y) {
  if (kind == "euclidean") {
    double s = 0;
    for (std::size_t i = 0; i < x.size(); ++i) s += (x[i] - y[i]) * (x[i] - y[i]);
    return std::sqrt(s);
  }
  if (kind == "cityblock") {
    double s = 0;
    for (std::size_t i = 0; i < x.size(); ++i) s += std::abs(x[i] - y[i]);
    return s;
  }
  if (kind == "chebychev") {
    double m = 0;
    for (std::size_t i = 0; i < x.size(); ++i) m = std::max(m, std::abs(x[i] - y[i]));
    return m;
  }
  if (kind == "cosine") {
    double xy = 0, xx = 0, yy = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      xy += x[i] * y[i];
      xx += x[i] * x[i];
      yy += y[i] * y[i];
    }
    return 1.0 - xy / std::sqrt(xx * yy);
  }
  if (kind == "correlation") return 1.0 - naive_pearson(x, y);
  if (kind == "spearman") return 1.0 - naive_pearson(counting_ranks(x), counting_ranks(y));
  return std::numeric_limits<double>::quiet_NaN();
}

/// log N(z; 0, C) via a fresh full-pivot LU of C.
inline double gaussian_log_density(const Eigen::VectorXd& z, const Eigen::MatrixXd& c) {
  Eigen::FullPivLU<Eigen::MatrixXd> lu(c);
  const double log_det = std::log(std::abs(lu.determinant()));
  const double quad = z.dot(lu.solve(z));
  return -0.5 * (static_cast<double>(z.size()) * std::log(2.0 * M_PI) + log_det + quad);
}

/// Scalar model: both 2x2 joint covariances written out by hand.
inline double jb_scalar_oracle(double s_mu, double s_eps, double x1, double x2) {
  const double t = s_mu + s_eps;
  auto log_n2 = [](double a, double b, double x, double y) {  // [[a, b], [b, a]]
    const double det = a * a - b * b;
    const double quad = (a * x * x - 2 * b * x * y + a * y * y) / det;
    return -0.5 * (2 * std::log(2 * M_PI) + std::log(det) + quad);
  };
  return log_n2(t, s_mu, x1, x2) - log_n2(t, 0.0, x1, x2);
}

/// Best accuracy over every possible cut: each score value as a threshold
/// plus one below everything. O(n^2).
inline double brute_best_accuracy(const std::vector<double>& scores, const std::vector<bool>& matched,
                                  bool lower_is_match) {
  std::vector<double> cuts = scores;
  cuts.push_back(*std::min_element(scores.begin(), scores.end()) - 1.0);
  cuts.push_back(*std::max_element(scores.begin(), scores.end()) + 1.0);
  double best = 0.0;
  for (double t : cuts) {
    // For higher-is-match, "score >= t" over the same cut values.
    std::size_t correct = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
      const bool says = lower_is_match ? scores[i] <= t : scores[i] >= t;
      correct += says == matched[i];
    }
    best = std::max(best, static_cast<double>(correct) / static_cast<double>(scores.size()));
  }
  return best;
}

/// Textbook two-pass sample standard deviation / sqrt(n).
inline std::pair<double, double> textbook_mean_sem(const std::vector<double>& v) {
  const double n = static_cast<double>(v.size());
  double sum = 0;
  for (double x : v) sum += x;
  const double mean = sum / n;
  double ss = 0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return {mean, std::sqrt(ss / (n - 1.0)) / std::sqrt(n)};
}

/// Cyclic Jacobi eigenvalues of a symmetric matrix, descending.
inline std::vector<double> jacobi_eigenvalues(Eigen::MatrixXd a, int sweeps = 100) {
  const Eigen::Index n = a.rows();
  for (int s = 0; s < sweeps; ++s) {
    double off = 0;
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = i + 1; j < n; ++j) off += a(i, j) * a(i, j);
    if (off < 1e-30) break;
    for (Eigen::Index p = 0; p < n; ++p)
      for (Eigen::Index q = p + 1; q < n; ++q) {
        if (std::abs(a(p, q)) < 1e-300) continue;
        const double theta = (a(q, q) - a(p, p)) / (2 * a(p, q));
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1));
        const double c = 1 / std::sqrt(t * t + 1), sn = t * c;
        for (Eigen::Index k = 0; k < n; ++k) {
          const double akp = a(k, p), akq = a(k, q);
          a(k, p) = c * akp - sn * akq;
          a(k, q) = sn * akp + c * akq;
        }
        for (Eigen::Index k = 0; k < n; ++k) {
          const double apk = a(p, k), aqk = a(q, k);
          a(p, k) = c * apk - sn * aqk;
          a(q, k) = sn * apk + c * aqk;
        }
      }
  }
  std::vector<double> ev(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) ev[static_cast<std::size_t>(i)] = a(i, i);
  std::sort(ev.rbegin(), ev.rend());
  return ev;
}

/// Draws from N(0, cov) with a Cholesky factor.
class GaussianSampler {
 public:
  explicit GaussianSampler(const Eigen::MatrixXd& cov) : l_(cov.llt().matrixL()) {}
  Eigen::VectorXd operator()(std::mt19937_64& rng) const {
    std::normal_distribution<double> n(0.0, 1.0);
    Eigen::VectorXd z(l_.rows());
    for (Eigen::Index i = 0; i < z.size(); ++i) z[i] = n(rng);
    return l_ * z;
  }

 private:
  Eigen::MatrixXd l_;
};

/// Identities x_ij = mu_i + eps_ij from the two-covariance model.
inline std::vector<Eigen::MatrixXd> sample_jb_groups(const Eigen::MatrixXd& s_mu, const Eigen::MatrixXd& s_eps,
                                                     std::size_t identities, std::size_t per_identity,
                                                     std::mt19937_64& rng) {
  GaussianSampler mu(s_mu), eps(s_eps);
  std::vector<Eigen::MatrixXd> groups;
  for (std::size_t i = 0; i < identities; ++i) {
    const Eigen::VectorXd m = mu(rng);
    Eigen::MatrixXd g(static_cast<Eigen::Index>(per_identity), s_mu.rows());
    for (std::size_t j = 0; j < per_identity; ++j) g.row(static_cast<Eigen::Index>(j)) = (m + eps(rng)).transpose();
    groups.push_back(std::move(g));
  }
  return groups;
}

inline double relative_frobenius(const Eigen::MatrixXd& estimate, const Eigen::MatrixXd& truth) {
  return (estimate - truth).norm() / truth.norm();
}

}  // namespace facever::testing
