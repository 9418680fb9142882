#include "facever/similarity.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "facever/error.hpp"

namespace facever {
namespace {

double pearson_distance(std::span<const double> x, std::span<const double> y, const char* what) {
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx, dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx <= 0.0 || syy <= 0.0) throw DegenerateInput(std::string(what) + " distance of a constant vector");
  return 1.0 - sxy / std::sqrt(sxx * syy);
}

}  // namespace

std::string to_string(DistanceKind kind) {
  switch (kind) {
    case DistanceKind::euclidean: return "euclidean";
    case DistanceKind::cityblock: return "cityblock";
    case DistanceKind::chebychev: return "chebychev";
    case DistanceKind::cosine: return "cosine";
    case DistanceKind::correlation: return "correlation";
    case DistanceKind::spearman: return "spearman";
  }
  return "unknown";
}

DistanceKind parse_distance(const std::string& name) {
  for (auto k : kAllDistances) {
    if (to_string(k) == name) return k;
  }
  throw ConfigError("unknown distance '" + name +
                    "' (expected euclidean, cityblock, chebychev, cosine, correlation or spearman)");
}

std::vector<double> average_ranks(std::span<const double> v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i + 1;
    while (j < order.size() && v[order[j]] == v[order[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j - 1) + 1.0;
    for (std::size_t k = i; k < j; ++k) ranks[order[k]] = avg;
    i = j;
  }
  return ranks;
}

double distance(DistanceKind kind, std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) {
    throw DimensionError("distance between vectors of length " + std::to_string(x.size()) + " and " +
                         std::to_string(y.size()));
  }
  if (x.empty()) throw DimensionError("distance of empty vectors");
  switch (kind) {
    case DistanceKind::euclidean: {
      double s = 0.0;
      for (std::size_t i = 0; i < x.size(); ++i) s += (x[i] - y[i]) * (x[i] - y[i]);
      return std::sqrt(s);
    }
    case DistanceKind::cityblock: {
      double s = 0.0;
      for (std::size_t i = 0; i < x.size(); ++i) s += std::abs(x[i] - y[i]);
      return s;
    }
    case DistanceKind::chebychev: {
      double m = 0.0;
      for (std::size_t i = 0; i < x.size(); ++i) m = std::max(m, std::abs(x[i] - y[i]));
      return m;
    }
    case DistanceKind::cosine: {
      double xy = 0.0, xx = 0.0, yy = 0.0;
      for (std::size_t i = 0; i < x.size(); ++i) {
        xy += x[i] * y[i];
        xx += x[i] * x[i];
        yy += y[i] * y[i];
      }
      if (xx <= 0.0 || yy <= 0.0) throw DegenerateInput("cosine distance of a zero vector");
      return 1.0 - xy / std::sqrt(xx * yy);
    }
    case DistanceKind::correlation:
      return pearson_distance(x, y, "correlation");
    case DistanceKind::spearman: {
      const auto rx = average_ranks(x);
      const auto ry = average_ranks(y);
      return pearson_distance(rx, ry, "spearman");
    }
  }
  throw ConfigError("unknown distance kind");
}

}  // namespace facever
