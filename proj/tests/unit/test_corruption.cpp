#include <cmath>
#include <vector>

#include "doctest.h"

#include "noisetrans/corruption.hpp"
#include "noisetrans/error.hpp"
#include "noisetrans/geometry.hpp"

using namespace noisetrans;

namespace {

struct OffsetStats {
  double std_dev = 0.0;
  double max_abs = 0.0;
};

OffsetStats offsets(const PointCloud& before, const PointCloud& after) {
  double sum = 0.0, sq = 0.0, worst = 0.0;
  const double n = 3.0 * static_cast<double>(before.size());
  for (std::size_t i = 0; i < before.size(); ++i) {
    for (int d = 0; d < 3; ++d) {
      const double o = after.coords[i][d] - before.coords[i][d];
      sum += o;
      sq += o * o;
      worst = std::max(worst, std::abs(o));
    }
  }
  const double mean = sum / n;
  return {std::sqrt(sq / n - mean * mean), worst};
}

}  // namespace

TEST_SUITE("corruption") {

TEST_CASE("reference lengths") {
  PointCloud cube;
  for (int x : {0, 1})
    for (int y : {0, 1})
      for (int z : {0, 1}) cube.coords.push_back({double(x), double(y), double(z)});
  CHECK(reference_length(cube.coords, ScaleReference::bounding_box_diagonal) ==
        doctest::Approx(std::sqrt(3.0)).epsilon(1e-15));
  // antipodal pairs put the centroid at the origin
  PointCloud sphere = sample_surface(Sphere{1.0}, 2000, 3);
  for (std::size_t i = 0; i < 2000; ++i) sphere.coords.push_back(sphere.coords[i] * -1.0);
  const double r = reference_length(sphere.coords, ScaleReference::bounding_sphere_radius);
  CHECK(r == doctest::Approx(1.0).epsilon(1e-12));
  const std::vector<Vec3> same(4, Vec3{2, 2, 2});
  CHECK(reference_length(same, ScaleReference::bounding_sphere_radius) == 0.0);
  CHECK(reference_length(same, ScaleReference::bounding_box_diagonal) == 0.0);
  PointCloud degenerate;
  degenerate.coords = same;
  CHECK_THROWS_AS((void)perturb(degenerate, NoiseSpec{}), DegenerateError);
}

TEST_CASE("calibrated standard deviation for every distribution") {
  // points on the unit sphere; the target uses the measured reference length
  PointCloud cloud = sample_surface(Sphere{1.0}, 100000, 5);
  const double ref = reference_length(cloud.coords, ScaleReference::bounding_sphere_radius);
  for (NoiseDistribution dist : {NoiseDistribution::gaussian, NoiseDistribution::laplace,
                                 NoiseDistribution::uniform}) {
    CAPTURE(to_string(dist));
    NoiseSpec spec;
    spec.distribution = dist;
    spec.level = 0.02;
    spec.seed = 41;
    const OffsetStats s = offsets(cloud, perturb(cloud, spec));
    const double target = 0.02 * ref;
    CHECK(s.std_dev >= 0.98 * target);
    CHECK(s.std_dev <= 1.02 * target);
    if (dist == NoiseDistribution::uniform) CHECK(s.max_abs <= target * std::sqrt(3.0));
  }
}

TEST_CASE("determinism and the zero-level limit") {
  const PointCloud cloud = sample_surface(Torus{1.0, 0.3}, 500, 2);
  NoiseSpec spec;
  spec.seed = 9;
  CHECK(perturb(cloud, spec).coords == perturb(cloud, spec).coords);
  NoiseSpec other = spec;
  other.seed = 10;
  CHECK(perturb(cloud, spec).coords != perturb(cloud, other).coords);
  NoiseSpec tiny = spec;
  tiny.level = 1e-15;
  const auto out = perturb(cloud, tiny).coords;
  for (std::size_t i = 0; i < out.size(); ++i) {
    for (int d = 0; d < 3; ++d) CHECK(std::abs(out[i][d] - cloud.coords[i][d]) <= 1e-13);
  }
  NoiseSpec bad = spec;
  bad.level = 0.0;
  CHECK_THROWS_AS((void)perturb(cloud, bad), ArgumentError);
}

TEST_CASE("name parsing") {
  CHECK(parse_noise_distribution("laplace") == NoiseDistribution::laplace);
  CHECK(parse_scale_reference("diagonal") == ScaleReference::bounding_box_diagonal);
  CHECK_THROWS_AS((void)parse_noise_distribution("cauchy"), ArgumentError);
}

}  // TEST_SUITE
