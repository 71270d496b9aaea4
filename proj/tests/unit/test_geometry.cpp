#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <vector>

#include "doctest.h"

#include "noisetrans/error.hpp"
#include "noisetrans/geometry.hpp"
#include "noisetrans/objective.hpp"
#include "oracles.hpp"

using namespace noisetrans;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "noisetrans_unit";
  fs::create_directories(dir);
  return dir / name;
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  os << text;
}

const char* kIcosahedronOff = R"(OFF
12 20 0
0 1 1.618033988749895
0 -1 1.618033988749895
0 1 -1.618033988749895
0 -1 -1.618033988749895
1 1.618033988749895 0
-1 1.618033988749895 0
1 -1.618033988749895 0
-1 -1.618033988749895 0
1.618033988749895 0 1
-1.618033988749895 0 1
1.618033988749895 0 -1
-1.618033988749895 0 -1
3 0 1 8
3 0 9 1
3 0 8 4
3 0 4 5
3 0 5 9
3 1 6 8
3 1 9 7
3 1 7 6
3 2 3 11
3 2 10 3
3 2 4 10
3 2 5 4
3 2 11 5
3 3 6 7
3 3 10 6
3 3 7 11
3 4 8 10
3 5 11 9
3 6 10 8
3 7 9 11
)";

}  // namespace

TEST_SUITE("geometry") {

TEST_CASE("xyz parsing") {
  const PointCloud c = parse_xyz("0 0 0\n1 2 3\n");
  REQUIRE(c.size() == 2);
  CHECK(c.coords[1] == Vec3{1, 2, 3});
  try {
    (void)parse_xyz("0 0 0\n1 2\n");
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.line() == 2);
  }
  CHECK_THROWS_AS((void)parse_xyz("\n\n"), FormatError);
}

TEST_CASE("point cloud round trips within f32 precision") {
  std::mt19937_64 rng(201);
  PointCloud cloud;
  cloud.coords = testing::random_points(1000, rng, -1.0, 1.0);
  const fs::path xyz = scratch("rt.xyz");
  const fs::path ply_bin = scratch("rt_bin.ply");
  const fs::path ply_ascii = scratch("rt_ascii.ply");
  write_pointcloud(cloud, xyz);
  write_pointcloud(cloud, ply_bin, CloudFormat::ply, PlyEncoding::binary_little_endian);
  write_pointcloud(cloud, ply_ascii, CloudFormat::ply, PlyEncoding::ascii);
  for (const fs::path& p : {xyz, ply_bin, ply_ascii}) {
    const PointCloud back = read_pointcloud(p);
    REQUIRE(back.size() == cloud.size());
    CHECK(testing::max_abs_diff(back.coords, cloud.coords) <= 1e-6);
  }
}

TEST_CASE("ply header handling") {
  const std::string extra =
      "ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\nproperty float y\n"
      "property float z\nproperty float intensity\nend_header\n0 1 2 9\n3 4 5 9\n";
  const PointCloud c = parse_ply(extra);
  REQUIRE(c.size() == 2);
  CHECK(c.coords[1] == Vec3{3, 4, 5});
  const std::string big =
      "ply\nformat binary_big_endian 1.0\nelement vertex 1\nproperty float x\n"
      "property float y\nproperty float z\nend_header\n";
  try {
    (void)parse_ply(big + std::string(12, '\0'));
    FAIL("expected rejection");
  } catch (const FormatError& e) {
    CHECK(std::string(e.what()).find("unsupported") != std::string::npos);
  }
}

TEST_CASE("unit-sphere normalization") {
  PointCloud cube;
  for (int x : {-1, 1})
    for (int y : {-1, 1})
      for (int z : {-1, 1}) cube.coords.push_back({double(x), double(y), double(z)});
  const PointCloud n = normalize_unit_sphere(cube);
  REQUIRE(n.norm_record);
  CHECK(n.norm_record->scale == doctest::Approx(std::sqrt(3.0)).epsilon(1e-15));
  double max_norm = 0.0;
  for (const Vec3& p : n.coords) max_norm = std::max(max_norm, norm(p));
  CHECK(max_norm == doctest::Approx(1.0).epsilon(1e-15));

  std::mt19937_64 rng(203);
  PointCloud r;
  r.coords = testing::random_points(500, rng, 3.0, 9.0);
  const PointCloud back = denormalize(normalize_unit_sphere(r));
  CHECK(testing::max_abs_diff(back.coords, r.coords) <= 1e-9 * 9.0);

  PointCloud same;
  same.coords.assign(5, Vec3{1, 2, 3});
  CHECK_THROWS_AS((void)normalize_unit_sphere(same), DegenerateError);
}

TEST_CASE("mesh loading") {
  CHECK(parse_off("OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n").triangles.size() == 1);
  const TriMesh quad = parse_off("OFF\n4 1 0\n0 0 0\n1 0 0\n1 1 0\n0 1 0\n4 0 1 2 3\n");
  CHECK(quad.vertices.size() == 4);
  CHECK(quad.triangles.size() == 2);
  const TriMesh obj = parse_obj("v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1/1 2/2 3/3 4/4\n");
  CHECK(obj.triangles.size() == 2);

  const TriMesh ico = parse_off(kIcosahedronOff);
  CHECK(ico.vertices.size() == 12);
  CHECK(ico.triangles.size() == 20);
  // every edge of a closed icosahedron has length 2
  for (std::size_t t = 0; t < ico.triangles.size(); ++t) {
    const auto [a, b, c] = ico.triangle(t);
    CHECK(norm(b - a) == doctest::Approx(2.0));
    CHECK(norm(c - b) == doctest::Approx(2.0));
  }

  const TriMesh degenerate = parse_off("OFF\n4 2 0\n0 0 0\n1 0 0\n2 0 0\n0 1 0\n3 0 1 2\n3 0 1 3\n");
  CHECK(degenerate.triangles.size() == 1);
  CHECK(degenerate.dropped_degenerate == 1);
  CHECK_THROWS_AS((void)parse_off("OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 7\n"), ParseError);
  CHECK_THROWS_AS((void)parse_off("OFF\n3 1 0\n0 0 x\n"), ParseError);

  const fs::path path = scratch("ico.off");
  write_file(path, kIcosahedronOff);
  CHECK(load_mesh(path).triangles.size() == 20);
}

TEST_CASE("analytic surface samples lie on the surface") {
  const PointCloud s = sample_surface(Sphere{1.0}, 2000, 7);
  for (const Vec3& p : s.coords) CHECK(std::abs(norm(p) - 1.0) <= 1e-12);
  const AnalyticSurface torus(Torus{1.0, 0.3});
  for (const Vec3& p : sample_surface(Torus{1.0, 0.3}, 2000, 8).coords) {
    CHECK(torus.squared_distance(p) <= 1e-20);
  }
  const AnalyticSurface cube(Cube{0.5});
  for (const Vec3& p : sample_surface(Cube{0.5}, 2000, 9).coords) CHECK(cube.squared_distance(p) <= 1e-24);
  CHECK(sample_surface(Sphere{1.0}, 50, 3).coords == sample_surface(Sphere{1.0}, 50, 3).coords);
  CHECK(sample_surface(Sphere{1.0}, 50, 3).coords != sample_surface(Sphere{1.0}, 50, 4).coords);
}

TEST_CASE("analytic distances") {
  const AnalyticSurface sphere(Sphere{1.0});
  CHECK(sphere.squared_distance({1.1, 0, 0}) == doctest::Approx(0.01).epsilon(1e-12));
  const AnalyticSurface torus(Torus{2.0, 0.5});
  CHECK(torus.squared_distance({0, 0, 0}) == doctest::Approx(1.5 * 1.5));
  CHECK(torus.squared_distance({2.0, 0, 1.0}) == doctest::Approx(0.25));
  const AnalyticSurface cube(Cube{1.0});
  CHECK(cube.squared_distance({0, 0, 0}) == doctest::Approx(1.0));
  CHECK(cube.squared_distance({2, 2, 0.5}) == doctest::Approx(2.0));
}

TEST_CASE("mesh sampling is area weighted") {
  TriMesh one;
  one.vertices = {{0, 0, 0}, {1, 0, 0}, {0, 1, 0}};
  one.triangles = {{0, 1, 2}};
  for (const Vec3& p : sample_surface(one, 1000, 5).coords) {
    CHECK(p[0] >= 0.0);
    CHECK(p[1] >= 0.0);
    CHECK(p[0] + p[1] <= 1.0 + 1e-15);
    CHECK(p[2] == 0.0);
  }

  // triangles with area ratio 3:1, separated along z
  TriMesh two;
  const double s = std::sqrt(3.0);
  two.vertices = {{0, 0, 0}, {s, 0, 0}, {0, s, 0}, {0, 0, 5}, {1, 0, 5}, {0, 1, 5}};
  two.triangles = {{0, 1, 2}, {3, 4, 5}};
  const std::size_t n = 40000;
  const auto pts = sample_surface(two, n, 11).coords;
  const double big = static_cast<double>(std::count_if(pts.begin(), pts.end(), [](const Vec3& p) { return p[2] < 1.0; }));
  const double expected = 0.75 * n;
  const double sigma = std::sqrt(n * 0.75 * 0.25);
  CHECK(std::abs(big - expected) <= 3.0 * sigma);

  TriMesh flat;
  flat.vertices = {{0, 0, 0}, {1, 0, 0}, {2, 0, 0}};
  flat.triangles = {{0, 1, 2}};
  CHECK_THROWS_AS((void)sample_surface(flat, 10, 1), DegenerateError);
}

TEST_CASE("framed surface follows rotation and normalization") {
  const Mat3 rot = random_rotation(77);
  const NormRecord frame{{0.5, -1.0, 2.0}, 3.0};
  const FramedSurface framed(std::make_shared<AnalyticSurface>(Sphere{2.0}), rot, frame);
  // a world point at radius 2.2 maps into the frame with distances scaled by 1 / 3
  const Vec3 world = multiply(rot, Vec3{0, 2.2, 0});
  const Vec3 local = (world - frame.center) * (1.0 / frame.scale);
  CHECK(framed.squared_distance(local) == doctest::Approx(0.04 / 9.0).epsilon(1e-12));
}

TEST_CASE("quality export is a readable ply") {
  const std::vector<Vec3> pts{{0, 0, 0}, {1, 2, 3}};
  const std::vector<double> q{0.0, 0.5};
  const fs::path path = scratch("quality.ply");
  write_quality_ply(pts, q, path);
  const PointCloud back = read_pointcloud(path);
  CHECK(back.coords == pts);
}

}  // TEST_SUITE
