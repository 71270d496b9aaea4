#include "noisetrans/corruption.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "noisetrans/error.hpp"

namespace noisetrans {

double reference_length(std::span<const Vec3> cloud, ScaleReference ref) {
  if (cloud.empty()) throw ArgumentError("reference_length: empty cloud");
  if (ref == ScaleReference::bounding_sphere_radius) {
    const Vec3 c = centroid(cloud);
    double max_sq = 0.0;
    for (const Vec3& p : cloud) max_sq = std::max(max_sq, squared_distance(p, c));
    return std::sqrt(max_sq);
  }
  Vec3 lo = cloud.front(), hi = cloud.front();
  for (const Vec3& p : cloud) {
    for (int i = 0; i < 3; ++i) {
      lo[i] = std::min(lo[i], p[i]);
      hi[i] = std::max(hi[i], p[i]);
    }
  }
  return norm(hi - lo);
}

PointCloud perturb(const PointCloud& cloud, const NoiseSpec& spec) {
  if (!(spec.level > 0.0)) throw ArgumentError("perturb: noise level must be > 0");
  const double ref = reference_length(cloud.coords, spec.scale_reference);
  if (!(ref > 0.0)) throw DegenerateError("perturb: reference length is zero");
  const double sigma = spec.level * ref;

  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> gauss(0.0, sigma);
  // Laplace(b) has std b*sqrt(2); U(-a, a) has std a/sqrt(3).
  const double laplace_b = sigma / std::sqrt(2.0);
  const double uniform_a = sigma * std::sqrt(3.0);
  std::uniform_real_distribution<double> unit(-0.5, 0.5);
  std::uniform_real_distribution<double> box(-uniform_a, uniform_a);

  auto draw = [&]() -> double {
    switch (spec.distribution) {
      case NoiseDistribution::gaussian: return gauss(rng);
      case NoiseDistribution::laplace: {
        double u = unit(rng);
        while (u == -0.5) u = unit(rng);
        return -laplace_b * std::copysign(1.0, u) * std::log1p(-2.0 * std::abs(u));
      }
      case NoiseDistribution::uniform: return box(rng);
    }
    return 0.0;
  };

  PointCloud out;
  out.norm_record = cloud.norm_record;
  out.coords.reserve(cloud.size());
  for (const Vec3& p : cloud.coords) {
    const double dx = draw();
    const double dy = draw();
    const double dz = draw();
    out.coords.push_back({p[0] + dx, p[1] + dy, p[2] + dz});
  }
  return out;
}

std::string to_string(NoiseDistribution d) {
  switch (d) {
    case NoiseDistribution::gaussian: return "gaussian";
    case NoiseDistribution::laplace: return "laplace";
    case NoiseDistribution::uniform: return "uniform";
  }
  return "?";
}

std::string to_string(ScaleReference r) {
  return r == ScaleReference::bounding_sphere_radius ? "bounding_sphere_radius"
                                                     : "bounding_box_diagonal";
}

NoiseDistribution parse_noise_distribution(const std::string& s) {
  if (s == "gaussian") return NoiseDistribution::gaussian;
  if (s == "laplace") return NoiseDistribution::laplace;
  if (s == "uniform") return NoiseDistribution::uniform;
  throw ArgumentError("unknown noise distribution '" + s + "'");
}

ScaleReference parse_scale_reference(const std::string& s) {
  if (s == "bounding_sphere_radius" || s == "radius") return ScaleReference::bounding_sphere_radius;
  if (s == "bounding_box_diagonal" || s == "diagonal") return ScaleReference::bounding_box_diagonal;
  throw ArgumentError("unknown noise reference '" + s + "'");
}

}  // namespace noisetrans
