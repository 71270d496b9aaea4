#include <sstream>
#include <string>
#include <vector>

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "cli.hpp"
#include "noisetrans/corruption.hpp"
#include "noisetrans/error.hpp"
#include "noisetrans/geometry.hpp"
#include "noisetrans/model.hpp"
#include "noisetrans/objective.hpp"
#include "noisetrans/pipeline.hpp"
#include "noisetrans/spatial.hpp"

namespace py = pybind11;
using namespace noisetrans;

namespace {

using Points = py::array_t<double, py::array::c_style | py::array::forcecast>;

std::vector<Vec3> to_points(const Points& a) {
  if (a.ndim() != 2 || a.shape(1) != 3) throw DimensionError("expected an (N, 3) array");
  std::vector<Vec3> out(static_cast<std::size_t>(a.shape(0)));
  const double* p = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = {p[3 * i], p[3 * i + 1], p[3 * i + 2]};
  return out;
}

py::array_t<double> from_points(const std::vector<Vec3>& pts) {
  py::array_t<double> out({static_cast<py::ssize_t>(pts.size()), py::ssize_t{3}});
  double* p = out.mutable_data();
  for (std::size_t i = 0; i < pts.size(); ++i)
    for (int d = 0; d < 3; ++d) p[3 * i + d] = pts[i][d];
  return out;
}

TriMesh to_mesh(const Points& vertices, const py::array_t<std::int64_t, py::array::c_style | py::array::forcecast>& tris) {
  if (tris.ndim() != 2 || tris.shape(1) != 3) throw DimensionError("expected an (T, 3) index array");
  TriMesh mesh;
  mesh.vertices = to_points(vertices);
  const std::int64_t* t = tris.data();
  for (py::ssize_t i = 0; i < tris.shape(0); ++i) {
    std::array<std::uint32_t, 3> tri{};
    for (int k = 0; k < 3; ++k) {
      const std::int64_t v = t[3 * i + k];
      if (v < 0 || v >= static_cast<std::int64_t>(mesh.vertices.size())) throw IndexError("triangle index out of range");
      tri[k] = static_cast<std::uint32_t>(v);
    }
    mesh.triangles.push_back(tri);
  }
  return mesh;
}

AnalyticShape make_shape(const std::string& kind, const std::vector<double>& params) {
  auto param = [&](std::size_t i, double fallback) { return i < params.size() ? params[i] : fallback; };
  if (kind == "sphere") return Sphere{param(0, 1.0)};
  if (kind == "torus") return Torus{param(0, 1.0), param(1, 0.3)};
  if (kind == "cube") return Cube{param(0, 1.0)};
  throw ArgumentError("unknown shape '" + kind + "'");
}

py::dict config_dict(const ModelConfig& c) {
  py::dict d;
  d["k_scales"] = std::vector<int>(c.k_scales.begin(), c.k_scales.end());
  d["layers_per_unit"] = c.layers_per_unit;
  d["feat_width"] = c.feat_width;
  d["d_model"] = c.d_model;
  d["n_heads"] = c.n_heads;
  d["ffn_hidden"] = c.ffn_hidden;
  d["n_encoder_layers"] = c.n_encoder_layers;
  d["sparse_k"] = c.sparse_k;
  d["head_hidden"] = c.head_hidden;
  d["head_layers"] = c.head_layers;
  d["encoding"] = to_string(c.encoding_mode);
  d["lpa"] = c.lpa_enabled;
  d["attention"] = c.attention_enabled;
  d["edge_norm"] = c.edge_norm;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Point cloud denoising core";
  configure_allocator();

  // later registrations are tried first, so the base class goes first
  py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<ArgumentError>(m, "ArgumentError", PyExc_ValueError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);

  m.def("chamfer_distance", [](const Points& a, const Points& b) {
    return chamfer_distance(to_points(a), to_points(b));
  }, py::arg("a"), py::arg("b"));

  m.def("point_to_mesh", [](const Points& cloud, const Points& vertices,
                            const py::array_t<std::int64_t, py::array::c_style | py::array::forcecast>& triangles) {
    return point_to_mesh(to_points(cloud), to_mesh(vertices, triangles));
  }, py::arg("cloud"), py::arg("vertices"), py::arg("triangles"));

  m.def("point_to_shape", [](const Points& cloud, const std::string& kind, const std::vector<double>& params) {
    return point_to_mesh(to_points(cloud), AnalyticSurface(make_shape(kind, params)));
  }, py::arg("cloud"), py::arg("kind"), py::arg("params") = std::vector<double>{});

  m.def("knn", [](const Points& cloud, const Points& queries, std::size_t k) {
    const KnnResult r = knn_query(to_points(cloud), to_points(queries), k);
    py::array_t<std::int64_t> idx({static_cast<py::ssize_t>(r.indices.rows), static_cast<py::ssize_t>(k)});
    py::array_t<double> dist({static_cast<py::ssize_t>(r.indices.rows), static_cast<py::ssize_t>(k)});
    for (std::size_t i = 0; i < r.indices.data.size(); ++i) {
      idx.mutable_data()[i] = static_cast<std::int64_t>(r.indices.data[i]);
      dist.mutable_data()[i] = r.distances[i];
    }
    return py::make_tuple(idx, dist);
  }, py::arg("cloud"), py::arg("queries"), py::arg("k"));

  m.def("farthest_point_sample", [](const Points& cloud, std::size_t count) {
    const auto picks = farthest_point_sample(to_points(cloud), count);
    return std::vector<std::int64_t>(picks.begin(), picks.end());
  }, py::arg("cloud"), py::arg("count"));

  m.def("sample_shape", [](const std::string& kind, const std::vector<double>& params, std::size_t n, std::uint64_t seed) {
    return from_points(sample_surface(make_shape(kind, params), n, seed).coords);
  }, py::arg("kind"), py::arg("params") = std::vector<double>{}, py::arg("n") = 1024, py::arg("seed") = 0);

  m.def("perturb", [](const Points& cloud, const std::string& distribution, double level,
                      const std::string& reference, std::uint64_t seed) {
    NoiseSpec spec{parse_noise_distribution(distribution), level, parse_scale_reference(reference), seed};
    return from_points(perturb(PointCloud{to_points(cloud), std::nullopt}, spec).coords);
  }, py::arg("cloud"), py::arg("distribution") = "gaussian", py::arg("level") = 0.02,
     py::arg("reference") = "radius", py::arg("seed") = 0);

  m.def("read_pointcloud", [](const std::filesystem::path& p) { return from_points(read_pointcloud(p).coords); },
        py::arg("path"));
  m.def("write_pointcloud", [](const Points& cloud, const std::filesystem::path& p) {
    write_pointcloud(PointCloud{to_points(cloud), std::nullopt}, p);
  }, py::arg("cloud"), py::arg("path"));

  py::class_<ModelWeights>(m, "Model")
      .def_property_readonly("config", [](const ModelWeights& w) { return config_dict(w.config); })
      .def_property_readonly("parameter_count", &ModelWeights::parameter_count)
      .def("forward", [](const ModelWeights& w, const Points& patch) {
        const auto pts = to_points(patch);
        return from_points(forward(std::span<const Vec3>(pts), w));
      }, py::arg("patch"))
      .def("denoise", [](const ModelWeights& w, const Points& cloud, std::size_t patch_size, int iterations,
                         std::size_t workers) {
        const auto pts = to_points(cloud);
        std::vector<Vec3> out;
        {
          py::gil_scoped_release release;
          out = denoise(pts, w, DenoiseOptions{patch_size, iterations, workers});
        }
        return from_points(out);
      }, py::arg("cloud"), py::arg("patch_size") = 256, py::arg("iterations") = 1, py::arg("workers") = 1)
      .def("save", [](const ModelWeights& w, const std::filesystem::path& p) { save_weights(w, p); }, py::arg("path"));

  m.def("load_model", [](const std::filesystem::path& p) { return load_weights(p); }, py::arg("path"));
  m.def("init_model", [](const std::string& profile, std::uint64_t seed) {
    if (profile != "desk" && profile != "full") throw ArgumentError("profile must be desk or full");
    return init_weights(profile == "desk" ? ModelConfig::desk() : ModelConfig::full(), seed);
  }, py::arg("profile") = "desk", py::arg("seed") = 0);

  m.def("run_cli", [](const std::vector<std::string>& args) {
    std::vector<std::string> argv{"noisetrans"};
    argv.insert(argv.end(), args.begin(), args.end());
    std::ostringstream out, err;
    int code;
    {
      py::gil_scoped_release release;
      code = cli::run(argv, out, err);
    }
    return py::make_tuple(code, out.str(), err.str());
  }, py::arg("args"));
}
