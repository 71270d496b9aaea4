#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "noisetrans/corruption.hpp"
#include "noisetrans/geometry.hpp"
#include "noisetrans/model.hpp"
#include "noisetrans/objective.hpp"

namespace noisetrans {

// Independent stream seed for (base, stream, index).
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream, std::uint64_t index);

// ---------------------------------------------------------------------------
// Datasets

enum class ShapeKind { sphere, torus, cube, mesh };

// "sphere", "torus", "cube", or a path to an .off/.obj mesh.
struct ShapeSource {
  ShapeKind kind = ShapeKind::sphere;
  std::filesystem::path mesh_path;
};

ShapeSource parse_shape_source(const std::string& s);
std::vector<ShapeSource> parse_shape_list(const std::string& csv);

// A fixed level or an inclusive "lo:hi" range drawn uniformly per shape.
struct NoiseLevelRange {
  double lo = 0.02;
  double hi = 0.02;
};
NoiseLevelRange parse_noise_level(const std::string& s);

struct DatasetOptions {
  std::vector<ShapeSource> shapes{{ShapeKind::sphere, {}}};
  std::size_t count = 0;  // 0 means one cloud per listed shape; otherwise cycle
  std::size_t points = 1024;
  NoiseDistribution distribution = NoiseDistribution::gaussian;
  NoiseLevelRange level;
  ScaleReference scale_reference = ScaleReference::bounding_sphere_radius;
  std::uint64_t seed = 0;
  std::string prefix = "shape";
};

struct ManifestEntry {
  std::string name;
  ShapeKind kind = ShapeKind::sphere;
  AnalyticShape shape = Sphere{};  // world-size parameters; unused for meshes
  std::filesystem::path mesh;      // absolute when read back
  Mat3 rotation = identity_rotation();  // world = rotation * local
  std::size_t points = 0;
  NoiseSpec noise;
  std::filesystem::path clean;  // absolute when read back
  std::filesystem::path noisy;
};

// Writes <prefix>NNN_clean.xyz / _noisy.xyz pairs and manifest.jsonl into
// out_dir; returns the entries written.
std::vector<ManifestEntry> make_dataset(const DatasetOptions& options,
                                        const std::filesystem::path& out_dir);

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path);
void write_manifest(std::span<const ManifestEntry> entries, const std::filesystem::path& path);

// Ground-truth surface of an entry in world coordinates.
std::shared_ptr<const Surface> entry_surface(const ManifestEntry& entry);
std::string describe_noise(const NoiseSpec& spec);

// ---------------------------------------------------------------------------
// Training

struct EpochLog {
  int epoch = 0;
  double lr = 0.0;
  double mean_loss = 0.0;
  std::size_t patches = 0;
  double seconds = 0.0;
};

struct TrainOptions {
  ModelConfig config = ModelConfig::desk();
  int epochs = 30;
  double lr = 5e-4;
  int halve_every = 50;
  std::size_t patch_size = 256;
  std::size_t batch_size = 1;
  // At most this many patches per epoch, a seeded random subset (0 keeps all).
  std::size_t patches_per_epoch = 0;
  LossWeights weights;
  // Anchor the absolute loss to index-matched clean points instead of the input.
  bool anchor_ground_truth = false;
  // Redraw the training noise every epoch (same distribution and level).
  bool renoise = false;
  bool f32_weights = false;
  std::uint64_t seed = 0;
  std::optional<std::filesystem::path> checkpoint;
  bool resume = false;
  std::function<void(const EpochLog&)> on_epoch;
};

struct TrainResult {
  ModelWeights weights;
  std::vector<EpochLog> log;
};

// One (input, target) pair in patch-local coordinates.
struct TrainingPatch {
  std::vector<Vec3> input;
  std::vector<Vec3> target;
};

// Normalizes each noisy cloud, applies the same transform to its clean
// partner and cuts both along the noisy cloud's patches.
std::vector<TrainingPatch> make_training_patches(std::span<const std::vector<Vec3>> noisy,
                                                 std::span<const std::vector<Vec3>> clean,
                                                 std::size_t patch_size);

TrainResult train(std::span<const ManifestEntry> dataset, const TrainOptions& options);

struct Checkpoint {
  ModelWeights weights;  // f64 values
  int epochs_done = 0;
  std::uint64_t adam_step = 0;
  std::vector<std::vector<double>> adam_m, adam_v;
};

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Denoising

struct DenoiseOptions {
  std::size_t patch_size = 256;
  int iterations = 1;
  std::size_t workers = 1;
};

// 1 for levels <= 2 %, 2 above; 1 when the level is unknown.
int auto_iterations(std::optional<double> noise_level);

// One pass: normalize, cut patches, run the network per patch, stitch, denormalize.
std::vector<Vec3> denoise_once(std::span<const Vec3> cloud, const ModelWeights& weights,
                               std::size_t patch_size, std::size_t workers);
std::vector<Vec3> denoise(std::span<const Vec3> cloud, const ModelWeights& weights,
                          const DenoiseOptions& options);

// ---------------------------------------------------------------------------
// Evaluation

EvalRecord evaluate_cloud(const std::string& name, std::span<const Vec3> result,
                          std::span<const Vec3> clean, const Surface& surface,
                          const std::string& noise, int iterations);

// Scores each entry's file in `results_dir` named <name>_denoised.xyz, or the
// noisy input itself when no directory is given. Optionally writes
// distance-colored ply files next to the results.
EvalReport evaluate_manifest(std::span<const ManifestEntry> entries,
                             const std::optional<std::filesystem::path>& results_dir,
                             const std::optional<std::filesystem::path>& color_dir = std::nullopt,
                             int iterations = 0);

std::filesystem::path denoised_path(const std::filesystem::path& dir, const std::string& name);

// ---------------------------------------------------------------------------
// Ablation sweep

struct SweepAxes {
  std::vector<EncodingMode> encodings{EncodingMode::sparse, EncodingMode::coordinate,
                                      EncodingMode::none};
  std::vector<bool> lpa{true, false};
  std::vector<bool> attention{true, false};
};

// No terms selects the full grid; axes not named in a term stay at their default value.
SweepAxes parse_sweep(const std::vector<std::string>& terms);

struct SweepRow {
  EncodingMode encoding = EncodingMode::sparse;
  bool lpa = true;
  bool attention = true;
  EvalReport report;
};

struct SweepOptions {
  TrainOptions train;
  DenoiseOptions denoise;
  std::vector<int> test_iterations;  // per test entry; empty means auto
};

std::vector<SweepRow> run_sweep(std::span<const ManifestEntry> train_set,
                                std::span<const ManifestEntry> test_set, const SweepAxes& axes,
                                const SweepOptions& options);

// One row per variant with mean CD and P2M, raw and x1e4.
std::string sweep_table(std::span<const SweepRow> rows);

}  // namespace noisetrans
