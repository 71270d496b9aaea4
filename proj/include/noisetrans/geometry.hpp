#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

namespace noisetrans {

using Vec3 = std::array<double, 3>;
using Mat3 = std::array<Vec3, 3>;  // row-major

inline Vec3 operator+(const Vec3& a, const Vec3& b) { return {a[0] + b[0], a[1] + b[1], a[2] + b[2]}; }
inline Vec3 operator-(const Vec3& a, const Vec3& b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }
inline Vec3 operator*(const Vec3& a, double s) { return {a[0] * s, a[1] * s, a[2] * s}; }
inline double dot(const Vec3& a, const Vec3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }
inline Vec3 cross(const Vec3& a, const Vec3& b) {
  return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}
inline double norm(const Vec3& a) { return std::sqrt(dot(a, a)); }
inline double squared_distance(const Vec3& a, const Vec3& b) {
  const double dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
  return dx * dx + dy * dy + dz * dz;
}

Vec3 multiply(const Mat3& m, const Vec3& v);
Vec3 multiply_transposed(const Mat3& m, const Vec3& v);
Mat3 identity_rotation();

// Maps normalized coordinates back via p * scale + center.
struct NormRecord {
  Vec3 center{0.0, 0.0, 0.0};
  double scale = 1.0;
};

struct PointCloud {
  std::vector<Vec3> coords;
  std::optional<NormRecord> norm_record;

  std::size_t size() const { return coords.size(); }
};

Vec3 centroid(std::span<const Vec3> points);

// Centers on the centroid and scales so the farthest point has norm 1.
PointCloud normalize_unit_sphere(const PointCloud& cloud);
PointCloud denormalize(const PointCloud& cloud);

// ---------------------------------------------------------------------------
// Point cloud I/O

enum class CloudFormat { xyz, ply };
enum class PlyEncoding { ascii, binary_little_endian };

CloudFormat cloud_format_from_path(const std::filesystem::path& path);

PointCloud read_pointcloud(const std::filesystem::path& path, CloudFormat format);
PointCloud read_pointcloud(const std::filesystem::path& path);
void write_pointcloud(const PointCloud& cloud, const std::filesystem::path& path, CloudFormat format,
                      PlyEncoding encoding = PlyEncoding::binary_little_endian);
void write_pointcloud(const PointCloud& cloud, const std::filesystem::path& path);

PointCloud parse_xyz(const std::string& text);
PointCloud parse_ply(const std::string& bytes);

// Binary little-endian ply with a per-vertex float "quality" scalar.
void write_quality_ply(std::span<const Vec3> points, std::span<const double> quality,
                       const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Meshes

struct TriMesh {
  std::vector<Vec3> vertices;
  std::vector<std::array<std::uint32_t, 3>> triangles;
  // Zero-area triangles removed while loading.
  std::size_t dropped_degenerate = 0;

  std::array<Vec3, 3> triangle(std::size_t t) const {
    const auto& tri = triangles[t];
    return {vertices[tri[0]], vertices[tri[1]], vertices[tri[2]]};
  }
};

enum class MeshFormat { off, obj };

double triangle_area(const Vec3& a, const Vec3& b, const Vec3& c);

TriMesh parse_off(const std::string& text);
TriMesh parse_obj(const std::string& text);
TriMesh load_mesh(const std::filesystem::path& path, MeshFormat format);
TriMesh load_mesh(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Surfaces and sampling

struct Sphere {
  double radius = 1.0;
};
struct Torus {
  double major = 1.0;  // distance from the center to the tube center
  double minor = 0.3;  // tube radius
};
struct Cube {
  double half_extent = 1.0;
};

using AnalyticShape = std::variant<Sphere, Torus, Cube>;

// Anything with a squared point-to-surface distance.
class Surface {
 public:
  virtual ~Surface() = default;
  virtual double squared_distance(const Vec3& p) const = 0;
};

class AnalyticSurface final : public Surface {
 public:
  explicit AnalyticSurface(AnalyticShape shape) : shape_(shape) {}
  double squared_distance(const Vec3& p) const override;
  const AnalyticShape& shape() const { return shape_; }

 private:
  AnalyticShape shape_;
};

// A surface placed as world = rotation * local, then expressed in the frame
// of a normalization record: frame = (world - center) / scale.
class FramedSurface final : public Surface {
 public:
  FramedSurface(std::shared_ptr<const Surface> base, Mat3 rotation, NormRecord frame);
  double squared_distance(const Vec3& p) const override;

 private:
  std::shared_ptr<const Surface> base_;
  Mat3 rotation_;
  NormRecord frame_;
};

double surface_area(const AnalyticShape& shape);

// Area-uniform i.i.d. samples, deterministic per seed.
PointCloud sample_surface(const AnalyticShape& shape, std::size_t n, std::uint64_t seed);
PointCloud sample_surface(const TriMesh& mesh, std::size_t n, std::uint64_t seed);

Mat3 random_rotation(std::uint64_t seed);

}  // namespace noisetrans
