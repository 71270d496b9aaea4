#include <algorithm>
#include <cmath>

#include "noisetrans/error.hpp"
#include "noisetrans/geometry.hpp"

namespace noisetrans {

Vec3 multiply(const Mat3& m, const Vec3& v) { return {dot(m[0], v), dot(m[1], v), dot(m[2], v)}; }

Vec3 multiply_transposed(const Mat3& m, const Vec3& v) {
  return {m[0][0] * v[0] + m[1][0] * v[1] + m[2][0] * v[2],
          m[0][1] * v[0] + m[1][1] * v[1] + m[2][1] * v[2],
          m[0][2] * v[0] + m[1][2] * v[1] + m[2][2] * v[2]};
}

Mat3 identity_rotation() { return {Vec3{1, 0, 0}, Vec3{0, 1, 0}, Vec3{0, 0, 1}}; }

Vec3 centroid(std::span<const Vec3> points) {
  Vec3 c{0.0, 0.0, 0.0};
  for (const Vec3& p : points) c = c + p;
  if (!points.empty()) c = c * (1.0 / static_cast<double>(points.size()));
  return c;
}

PointCloud normalize_unit_sphere(const PointCloud& cloud) {
  if (cloud.coords.empty()) throw ArgumentError("normalize_unit_sphere: empty cloud");
  const Vec3 c = centroid(cloud.coords);
  double max_sq = 0.0;
  for (const Vec3& p : cloud.coords) max_sq = std::max(max_sq, squared_distance(p, c));
  const double s = std::sqrt(max_sq);
  if (!(s > 0.0)) {
    throw DegenerateError("normalize_unit_sphere: all points coincide (scale 0)");
  }
  PointCloud out;
  out.coords.reserve(cloud.size());
  for (const Vec3& p : cloud.coords) out.coords.push_back((p - c) * (1.0 / s));

  // Compose with an existing record so denormalize() returns to the original frame.
  NormRecord rec{c, s};
  if (cloud.norm_record) {
    const NormRecord& outer = *cloud.norm_record;
    rec = NormRecord{c * outer.scale + outer.center, s * outer.scale};
  }
  out.norm_record = rec;
  return out;
}

PointCloud denormalize(const PointCloud& cloud) {
  PointCloud out;
  if (!cloud.norm_record) {
    out.coords = cloud.coords;
    return out;
  }
  const NormRecord& rec = *cloud.norm_record;
  out.coords.reserve(cloud.size());
  for (const Vec3& p : cloud.coords) out.coords.push_back(p * rec.scale + rec.center);
  return out;
}

double triangle_area(const Vec3& a, const Vec3& b, const Vec3& c) {
  return 0.5 * norm(cross(b - a, c - a));
}

}  // namespace noisetrans
