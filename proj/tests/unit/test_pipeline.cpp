#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <vector>

#include "doctest.h"

#include "noisetrans/error.hpp"
#include "noisetrans/pipeline.hpp"
#include "noisetrans/spatial.hpp"
#include "oracles.hpp"

using namespace noisetrans;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "noisetrans_unit" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

ModelConfig tiny_config() {
  ModelConfig c = ModelConfig::desk();
  c.k_scales = {4, 6, 8};
  c.layers_per_unit = 2;
  c.feat_width = 4;
  c.d_model = 8;
  c.ffn_hidden = 16;
  c.n_encoder_layers = 1;
  c.head_hidden = 8;
  c.head_layers = 2;
  return c;
}

std::vector<ManifestEntry> tiny_dataset(const fs::path& dir, std::size_t count, std::uint64_t seed) {
  DatasetOptions o;
  o.shapes = parse_shape_list("sphere,torus");
  o.count = count;
  o.points = 160;
  o.seed = seed;
  o.prefix = "t";
  return make_dataset(o, dir);
}

std::vector<double> flat(const ModelWeights& w) {
  std::vector<double> out;
  for (const auto& p : w.parameters()) out.insert(out.end(), p.tensor.data().begin(), p.tensor.data().end());
  return out;
}

}  // namespace

TEST_SUITE("pipeline") {

TEST_CASE("seed derivation separates streams") {
  std::set<std::uint64_t> seen;
  for (std::uint64_t s = 0; s < 4; ++s)
    for (std::uint64_t i = 0; i < 50; ++i) seen.insert(derive_seed(7, s, i));
  CHECK(seen.size() == 200);
  CHECK(derive_seed(7, 1, 2) == derive_seed(7, 1, 2));
}

TEST_CASE("argument parsing") {
  CHECK(parse_shape_source("torus").kind == ShapeKind::torus);
  CHECK(parse_shape_source("meshes/bunny.off").kind == ShapeKind::mesh);
  CHECK_THROWS_AS((void)parse_shape_source("pyramid"), ArgumentError);
  CHECK(parse_shape_list("sphere, cube").size() == 2);
  const NoiseLevelRange fixed = parse_noise_level("0.03");
  CHECK(fixed.lo == fixed.hi);
  const NoiseLevelRange range = parse_noise_level("0.01:0.04");
  CHECK(range.lo == 0.01);
  CHECK(range.hi == 0.04);
  CHECK_THROWS_AS((void)parse_noise_level("0.04:0.01"), ArgumentError);
  CHECK_THROWS_AS((void)parse_noise_level("-1"), ArgumentError);
  CHECK_THROWS_AS((void)parse_noise_level("abc"), ArgumentError);
}

TEST_CASE("datasets are reproducible and follow the level range") {
  const fs::path a = fresh_dir("ds_a"), b = fresh_dir("ds_b");
  DatasetOptions o;
  o.shapes = parse_shape_list("sphere,torus,cube");
  o.count = 9;
  o.points = 300;
  o.level = parse_noise_level("0.01:0.04");
  o.seed = 5;
  const auto ea = make_dataset(o, a);
  make_dataset(o, b);
  CHECK(slurp(a / "manifest.jsonl") == slurp(b / "manifest.jsonl"));
  std::set<double> levels;
  for (const auto& e : ea) {
    CHECK(slurp(e.noisy) == slurp(b / e.noisy.filename()));
    CHECK(e.noise.level >= 0.01);
    CHECK(e.noise.level <= 0.04);
    levels.insert(e.noise.level);
    CHECK(read_pointcloud(e.clean).size() == 300);
  }
  CHECK(levels.size() == 9);

  const auto back = read_manifest(a / "manifest.jsonl");
  REQUIRE(back.size() == ea.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    CHECK(back[i].name == ea[i].name);
    CHECK(back[i].noise.seed == ea[i].noise.seed);
    CHECK(back[i].rotation == ea[i].rotation);
    CHECK(fs::equivalent(back[i].clean, ea[i].clean));
  }

  // the clean cloud lies on the recorded ground-truth surface
  for (const auto& e : back) {
    const auto surface = entry_surface(e);
    CHECK(point_to_mesh(read_pointcloud(e.clean).coords, *surface) <= 1e-10);
  }
}

TEST_CASE("manifest entries with meshes") {
  const fs::path dir = fresh_dir("ds_mesh");
  {
    std::ofstream os(dir / "tet.off");
    os << "OFF\n4 4 0\n0 0 0\n1 0 0\n0 1 0\n0 0 1\n3 0 1 2\n3 0 1 3\n3 0 2 3\n3 1 2 3\n";
  }
  DatasetOptions o;
  o.shapes = {parse_shape_source((dir / "tet.off").string())};
  o.points = 200;
  o.seed = 2;
  const auto entries = make_dataset(o, dir / "out");
  REQUIRE(entries.size() == 1);
  const auto back = read_manifest(dir / "out" / "manifest.jsonl");
  CHECK(back[0].kind == ShapeKind::mesh);
  CHECK(point_to_mesh(read_pointcloud(back[0].clean).coords, *entry_surface(back[0])) <= 1e-10);
}

TEST_CASE("training patches keep index correspondence") {
  const fs::path dir = fresh_dir("ds_patches");
  const auto entries = tiny_dataset(dir, 2, 3);
  std::vector<std::vector<Vec3>> noisy, clean;
  for (const auto& e : entries) {
    noisy.push_back(read_pointcloud(e.noisy).coords);
    clean.push_back(read_pointcloud(e.clean).coords);
  }
  const auto patches = make_training_patches(noisy, clean, 64);
  CHECK(!patches.empty());
  const PointCloud frame = normalize_unit_sphere(PointCloud{noisy[0], std::nullopt});
  const auto cut = extract_patches(frame.coords, 64);
  for (std::size_t j = 0; j < 64; ++j) {
    const std::size_t i = cut[0].member_indices[j];
    const Vec3 c = (clean[0][i] - frame.norm_record->center) * (1.0 / frame.norm_record->scale);
    const Vec3 expected = cut[0].to_local(c);
    CHECK(testing::max_abs_diff(std::vector<Vec3>{patches[0].target[j]}, std::vector<Vec3>{expected}) <= 1e-12);
    CHECK(patches[0].input[j] == cut[0].local_coords[j]);
  }
}

TEST_CASE("training is deterministic and resumable") {
  const fs::path dir = fresh_dir("train");
  const auto entries = tiny_dataset(dir, 2, 4);
  TrainOptions o;
  o.config = tiny_config();
  o.epochs = 2;
  o.patch_size = 64;
  o.lr = 1e-3;
  o.seed = 9;
  o.renoise = true;
  const TrainResult full = train(entries, o);
  REQUIRE(full.log.size() == 2);
  CHECK(flat(train(entries, o).weights) == flat(full.weights));

  TrainOptions first = o;
  first.epochs = 1;
  first.checkpoint = dir / "ckpt.ntrc";
  train(entries, first);
  const Checkpoint saved = load_checkpoint(dir / "ckpt.ntrc");
  CHECK(saved.epochs_done == 1);
  TrainOptions resumed = o;
  resumed.checkpoint = dir / "ckpt.ntrc";
  resumed.resume = true;
  const TrainResult rest = train(entries, resumed);
  CHECK(flat(rest.weights) == flat(full.weights));

  TrainOptions zero = o;
  zero.epochs = 0;
  const TrainResult init = train(entries, zero);
  const auto pts = read_pointcloud(entries[0].noisy).coords;
  CHECK(testing::max_abs_diff(denoise(pts, init.weights, DenoiseOptions{64, 1, 1}), pts) <= 1e-9);

  TrainOptions wrong = resumed;
  wrong.config.d_model = 16;
  wrong.config.ffn_hidden = 32;
  CHECK_THROWS_AS((void)train(entries, wrong), ContractError);
}

TEST_CASE("denoising protocol") {
  CHECK(auto_iterations(0.01) == 1);
  CHECK(auto_iterations(0.02) == 1);
  CHECK(auto_iterations(0.03) == 2);
  CHECK(auto_iterations(std::nullopt) == 1);

  const ModelWeights w = init_weights(tiny_config(), 3);
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-0.1, 0.1);
  for (double& v : Tensor(w.head_out.weight).mutable_data()) v = u(rng);
  const auto cloud = sample_surface(Torus{2.0, 0.6}, 500, 6).coords;
  const auto once = denoise(cloud, w, DenoiseOptions{128, 1, 1});
  const auto twice = denoise(cloud, w, DenoiseOptions{128, 2, 1});
  CHECK(denoise(once, w, DenoiseOptions{128, 1, 1}) == twice);
  CHECK(once.size() == cloud.size());
  // worker count does not change the result
  CHECK(denoise(cloud, w, DenoiseOptions{128, 1, 3}) == once);
  CHECK_THROWS_AS((void)denoise(std::span(cloud).first(5), w, DenoiseOptions{128, 1, 1}), ArgumentError);

  // identity weights: the normalize/patch/stitch/denormalize loop is lossless
  const ModelWeights id = init_weights(tiny_config(), 4);
  CHECK(testing::max_abs_diff(denoise(cloud, id, DenoiseOptions{128, 3, 2}), cloud) <= 1e-9);

  // output row i stays tied to input row i under a permutation
  std::vector<std::size_t> perm(cloud.size());
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<Vec3> shuffled(cloud.size());
  for (std::size_t i = 0; i < cloud.size(); ++i) shuffled[i] = cloud[perm[i]];
  const auto out = denoise(shuffled, w, DenoiseOptions{600, 1, 1});
  const auto ref = denoise(cloud, w, DenoiseOptions{600, 1, 1});
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    CHECK(testing::max_abs_diff(std::vector<Vec3>{out[i]}, std::vector<Vec3>{ref[perm[i]]}) <= 1e-9);
  }
}

TEST_CASE("evaluation") {
  const fs::path dir = fresh_dir("eval");
  const auto entries = tiny_dataset(dir, 2, 6);
  const EvalReport noisy = evaluate_manifest(entries, std::nullopt, dir / "colors");
  REQUIRE(noisy.records.size() == 2);
  for (std::size_t i = 0; i < 2; ++i) {
    const auto a = read_pointcloud(entries[i].noisy).coords;
    const auto b = read_pointcloud(entries[i].clean).coords;
    CHECK(noisy.records[i].cd == chamfer_distance(a, b));
    CHECK(fs::exists(dir / "colors" / (entries[i].name + "_distance.ply")));
  }
  fs::create_directories(dir / "clean_as_result");
  for (const auto& e : entries) fs::copy_file(e.clean, denoised_path(dir / "clean_as_result", e.name));
  const EvalReport clean = evaluate_manifest(entries, dir / "clean_as_result");
  for (const auto& r : clean.records) {
    CHECK(r.cd == 0.0);
    CHECK(r.p2m <= 1e-10);
  }
  // result with the wrong point count
  const auto pts = read_pointcloud(entries[0].clean).coords;
  write_pointcloud(PointCloud{std::vector<Vec3>(pts.begin(), pts.begin() + 10), std::nullopt},
                   denoised_path(dir / "clean_as_result", entries[0].name));
  CHECK_THROWS_AS((void)evaluate_manifest(entries, dir / "clean_as_result"), ContractError);
}

TEST_CASE("sweep grid") {
  const SweepAxes axes = parse_sweep({"encoding=sparse,none"});
  CHECK(axes.encodings.size() == 2);
  CHECK(axes.lpa == std::vector<bool>{true});
  const SweepAxes all = parse_sweep({});
  CHECK(all.encodings.size() * all.lpa.size() * all.attention.size() == 12);
  CHECK_THROWS_AS((void)parse_sweep({"depth=1,2"}), ArgumentError);
  CHECK_THROWS_AS((void)parse_sweep({"lpa=maybe"}), ArgumentError);

  const fs::path dir = fresh_dir("sweep");
  const auto train_set = tiny_dataset(dir / "train", 2, 7);
  const auto test_set = tiny_dataset(dir / "test", 1, 8);
  SweepOptions so;
  so.train.config = tiny_config();
  so.train.epochs = 1;
  so.train.patch_size = 64;
  so.train.patches_per_epoch = 2;
  so.denoise.patch_size = 64;
  const auto rows = run_sweep(train_set, test_set, axes, so);
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].encoding == EncodingMode::sparse);
  CHECK(rows[1].encoding == EncodingMode::none);
  CHECK(rows[0].report.config_hash != rows[1].report.config_hash);
  const std::string table = sweep_table(rows);
  CHECK(std::count(table.begin(), table.end(), '\n') == 3);
}

}  // TEST_SUITE
