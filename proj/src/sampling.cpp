#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "noisetrans/error.hpp"
#include "noisetrans/geometry.hpp"

namespace noisetrans {

namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

double uniform01(std::mt19937_64& rng) {
  return std::uniform_real_distribution<double>(0.0, 1.0)(rng);
}

Vec3 sample_sphere(const Sphere& s, std::mt19937_64& rng) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (;;) {
    const Vec3 v{gauss(rng), gauss(rng), gauss(rng)};
    const double n = norm(v);
    if (n > 1e-12) return v * (s.radius / n);
  }
}

Vec3 sample_torus(const Torus& t, std::mt19937_64& rng) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  const double theta = two_pi * uniform01(rng);
  // Area element is proportional to (major + minor * cos(phi)).
  double phi = 0.0;
  for (;;) {
    phi = two_pi * uniform01(rng);
    const double u = uniform01(rng) * (t.major + t.minor);
    if (u <= t.major + t.minor * std::cos(phi)) break;
  }
  const double ring = t.major + t.minor * std::cos(phi);
  return {ring * std::cos(theta), ring * std::sin(theta), t.minor * std::sin(phi)};
}

Vec3 sample_cube(const Cube& c, std::mt19937_64& rng) {
  const int face = std::uniform_int_distribution<int>(0, 5)(rng);
  const int axis = face / 2;
  const double sign = face % 2 == 0 ? 1.0 : -1.0;
  Vec3 p{};
  for (int i = 0; i < 3; ++i) {
    p[i] = i == axis ? sign * c.half_extent : c.half_extent * (2.0 * uniform01(rng) - 1.0);
  }
  return p;
}

}  // namespace

double surface_area(const AnalyticShape& shape) {
  return std::visit(
      overloaded{
          [](const Sphere& s) { return 4.0 * std::numbers::pi * s.radius * s.radius; },
          [](const Torus& t) { return 4.0 * std::numbers::pi * std::numbers::pi * t.major * t.minor; },
          [](const Cube& c) { return 24.0 * c.half_extent * c.half_extent; },
      },
      shape);
}

double AnalyticSurface::squared_distance(const Vec3& p) const {
  return std::visit(
      overloaded{
          [&](const Sphere& s) {
            const double d = norm(p) - s.radius;
            return d * d;
          },
          [&](const Torus& t) {
            const double q = std::hypot(p[0], p[1]) - t.major;
            const double d = std::hypot(q, p[2]) - t.minor;
            return d * d;
          },
          [&](const Cube& c) {
            double outside = 0.0;
            double max_abs = 0.0;
            for (int i = 0; i < 3; ++i) {
              const double a = std::abs(p[i]);
              max_abs = std::max(max_abs, a);
              const double e = a - c.half_extent;
              if (e > 0.0) outside += e * e;
            }
            if (outside > 0.0) return outside;
            const double d = c.half_extent - max_abs;
            return d * d;
          },
      },
      shape_);
}

FramedSurface::FramedSurface(std::shared_ptr<const Surface> base, Mat3 rotation, NormRecord frame)
    : base_(std::move(base)), rotation_(rotation), frame_(frame) {}

double FramedSurface::squared_distance(const Vec3& p) const {
  const Vec3 world = p * frame_.scale + frame_.center;
  const Vec3 local = multiply_transposed(rotation_, world);
  return base_->squared_distance(local) / (frame_.scale * frame_.scale);
}

PointCloud sample_surface(const AnalyticShape& shape, std::size_t n, std::uint64_t seed) {
  if (n == 0) throw ArgumentError("sample_surface: n must be >= 1");
  if (!(surface_area(shape) > 0.0)) throw DegenerateError("sample_surface: zero-area shape");
  std::mt19937_64 rng(seed);
  PointCloud cloud;
  cloud.coords.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    cloud.coords.push_back(std::visit(
        overloaded{
            [&](const Sphere& s) { return sample_sphere(s, rng); },
            [&](const Torus& t) { return sample_torus(t, rng); },
            [&](const Cube& c) { return sample_cube(c, rng); },
        },
        shape));
  }
  return cloud;
}

PointCloud sample_surface(const TriMesh& mesh, std::size_t n, std::uint64_t seed) {
  if (n == 0) throw ArgumentError("sample_surface: n must be >= 1");
  std::vector<double> cumulative;
  cumulative.reserve(mesh.triangles.size());
  double total = 0.0;
  for (std::size_t t = 0; t < mesh.triangles.size(); ++t) {
    const auto [a, b, c] = mesh.triangle(t);
    total += triangle_area(a, b, c);
    cumulative.push_back(total);
  }
  if (!(total > 0.0)) throw DegenerateError("sample_surface: mesh has zero area");

  std::mt19937_64 rng(seed);
  PointCloud cloud;
  cloud.coords.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double u = uniform01(rng) * total;
    auto it = std::upper_bound(cumulative.begin(), cumulative.end(), u);
    if (it == cumulative.end()) --it;
    const auto [a, b, c] = mesh.triangle(static_cast<std::size_t>(it - cumulative.begin()));
    const double s = std::sqrt(uniform01(rng));
    const double r = uniform01(rng);
    cloud.coords.push_back(a * (1.0 - s) + b * (s * (1.0 - r)) + c * (s * r));
  }
  return cloud;
}

Mat3 random_rotation(std::uint64_t seed) {
  // Uniform unit quaternion (Shoemake).
  std::mt19937_64 rng(seed);
  const double u1 = uniform01(rng), u2 = uniform01(rng), u3 = uniform01(rng);
  constexpr double two_pi = 2.0 * std::numbers::pi;
  const double a = std::sqrt(1.0 - u1), b = std::sqrt(u1);
  const double w = a * std::sin(two_pi * u2), x = a * std::cos(two_pi * u2);
  const double y = b * std::sin(two_pi * u3), z = b * std::cos(two_pi * u3);
  return {Vec3{1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)},
          Vec3{2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)},
          Vec3{2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)}};
}

}  // namespace noisetrans
