#pragma once

#include <array>
#include <span>
#include <string>
#include <vector>

namespace facever {

enum class DistanceKind { euclidean, cityblock, chebychev, cosine, correlation, spearman };

inline constexpr std::array<DistanceKind, 6> kAllDistances{
    DistanceKind::euclidean, DistanceKind::cityblock,   DistanceKind::chebychev,
    DistanceKind::cosine,    DistanceKind::correlation, DistanceKind::spearman};

std::string to_string(DistanceKind kind);
/// Lowercase names as above; throws ConfigError otherwise.
DistanceKind parse_distance(const std::string& name);

/// Smaller always means more alike: similarity measures are reported as
/// 1 - similarity. Throws DimensionError on length mismatch or empty input
/// and DegenerateInput for a zero vector (cosine) or a constant vector
/// (correlation, spearman).
double distance(DistanceKind kind, std::span<const double> x, std::span<const double> y);

/// 1-based ranks; tied values share the average of their positions.
std::vector<double> average_ranks(std::span<const double> v);

}  // namespace facever
