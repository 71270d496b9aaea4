#pragma once

#include <cstdint>
#include <span>
#include <string>

#include "noisetrans/geometry.hpp"

namespace noisetrans {

enum class NoiseDistribution { gaussian, laplace, uniform };
enum class ScaleReference { bounding_sphere_radius, bounding_box_diagonal };

// Per-coordinate i.i.d. noise whose standard deviation is
// level * reference_length(cloud, scale_reference).
struct NoiseSpec {
  NoiseDistribution distribution = NoiseDistribution::gaussian;
  double level = 0.02;
  ScaleReference scale_reference = ScaleReference::bounding_sphere_radius;
  std::uint64_t seed = 0;
};

// bounding_sphere_radius is the max distance from the centroid (not the
// minimal enclosing sphere); bounding_box_diagonal is |max corner - min corner|.
double reference_length(std::span<const Vec3> cloud, ScaleReference ref);

PointCloud perturb(const PointCloud& cloud, const NoiseSpec& spec);

std::string to_string(NoiseDistribution d);
std::string to_string(ScaleReference r);
NoiseDistribution parse_noise_distribution(const std::string& s);
ScaleReference parse_scale_reference(const std::string& s);

}  // namespace noisetrans
