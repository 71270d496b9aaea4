#include "noisetrans/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <exception>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <mutex>
#include <thread>

#include "json.hpp"
#include "noisetrans/error.hpp"
#include "noisetrans/spatial.hpp"
#include "text_util.hpp"

namespace noisetrans {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream, std::uint64_t index) {
  auto mix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  return mix(mix(mix(base) ^ stream) ^ index);
}

// ---------------------------------------------------------------------------
// Datasets

namespace {

const char* kind_name(ShapeKind k) {
  switch (k) {
    case ShapeKind::sphere: return "sphere";
    case ShapeKind::torus: return "torus";
    case ShapeKind::cube: return "cube";
    case ShapeKind::mesh: return "mesh";
  }
  return "?";
}

ShapeKind parse_kind(const std::string& s) {
  if (s == "sphere") return ShapeKind::sphere;
  if (s == "torus") return ShapeKind::torus;
  if (s == "cube") return ShapeKind::cube;
  if (s == "mesh") return ShapeKind::mesh;
  throw FormatError("manifest: unknown shape kind '" + s + "'");
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot open '" + path.string() + "' for writing");
  os << text;
  if (!os) throw FormatError("failed writing '" + path.string() + "'");
}

ordered_json entry_to_json(const ManifestEntry& e, const fs::path& base) {
  ordered_json j;
  j["name"] = e.name;
  j["shape"] = kind_name(e.kind);
  ordered_json params = ordered_json::object();
  if (const auto* s = std::get_if<Sphere>(&e.shape); s && e.kind == ShapeKind::sphere) {
    params["radius"] = s->radius;
  } else if (const auto* t = std::get_if<Torus>(&e.shape); t && e.kind == ShapeKind::torus) {
    params["major"] = t->major;
    params["minor"] = t->minor;
  } else if (const auto* c = std::get_if<Cube>(&e.shape); c && e.kind == ShapeKind::cube) {
    params["half_extent"] = c->half_extent;
  }
  j["params"] = params;
  if (e.kind == ShapeKind::mesh) j["mesh"] = fs::absolute(e.mesh).lexically_proximate(base).generic_string();
  j["rotation"] = std::vector<double>(&e.rotation[0][0], &e.rotation[0][0] + 9);
  j["points"] = e.points;
  j["noise"] = {{"distribution", to_string(e.noise.distribution)},
                {"level", e.noise.level},
                {"scale_reference", to_string(e.noise.scale_reference)},
                {"seed", e.noise.seed}};
  j["clean"] = fs::absolute(e.clean).lexically_proximate(base).generic_string();
  j["noisy"] = fs::absolute(e.noisy).lexically_proximate(base).generic_string();
  return j;
}

ManifestEntry entry_from_json(const ordered_json& j, const fs::path& base) {
  ManifestEntry e;
  e.name = j.at("name").get<std::string>();
  e.kind = parse_kind(j.at("shape").get<std::string>());
  const auto& p = j.at("params");
  switch (e.kind) {
    case ShapeKind::sphere: e.shape = Sphere{p.at("radius").get<double>()}; break;
    case ShapeKind::torus:
      e.shape = Torus{p.at("major").get<double>(), p.at("minor").get<double>()};
      break;
    case ShapeKind::cube: e.shape = Cube{p.at("half_extent").get<double>()}; break;
    case ShapeKind::mesh: e.mesh = base / j.at("mesh").get<std::string>(); break;
  }
  const auto rot = j.at("rotation").get<std::vector<double>>();
  if (rot.size() != 9) throw FormatError("manifest: rotation needs 9 values");
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) e.rotation[r][c] = rot[r * 3 + c];
  e.points = j.at("points").get<std::size_t>();
  const auto& n = j.at("noise");
  e.noise.distribution = parse_noise_distribution(n.at("distribution").get<std::string>());
  e.noise.level = n.at("level").get<double>();
  e.noise.scale_reference = parse_scale_reference(n.at("scale_reference").get<std::string>());
  e.noise.seed = n.at("seed").get<std::uint64_t>();
  e.clean = base / j.at("clean").get<std::string>();
  e.noisy = base / j.at("noisy").get<std::string>();
  return e;
}

}  // namespace

ShapeSource parse_shape_source(const std::string& raw) {
  const std::string s(detail::trim(raw));
  if (s == "sphere") return {ShapeKind::sphere, {}};
  if (s == "torus") return {ShapeKind::torus, {}};
  if (s == "cube") return {ShapeKind::cube, {}};
  const fs::path p(s);
  const std::string ext = p.extension().string();
  if (ext == ".off" || ext == ".obj") return {ShapeKind::mesh, p};
  throw ArgumentError("unknown shape '" + s + "' (expected sphere, torus, cube or an .off/.obj path)");
}

std::vector<ShapeSource> parse_shape_list(const std::string& csv) {
  std::vector<ShapeSource> out;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!detail::trim(item).empty()) out.push_back(parse_shape_source(item));
  }
  if (out.empty()) throw ArgumentError("empty shape list");
  return out;
}

NoiseLevelRange parse_noise_level(const std::string& raw) {
  const std::string s(detail::trim(raw));
  const auto colon = s.find(':');
  auto number = [](const std::string& t) {
    double v = 0.0;
    if (!detail::parse_double(detail::trim(t), v)) {
      throw ArgumentError("invalid noise level '" + t + "'");
    }
    return v;
  };
  NoiseLevelRange r;
  if (colon == std::string::npos) {
    r.lo = r.hi = number(s);
  } else {
    r.lo = number(s.substr(0, colon));
    r.hi = number(s.substr(colon + 1));
  }
  if (!(r.lo > 0.0) || !(r.hi >= r.lo)) {
    throw ArgumentError("noise level must be positive with lo <= hi, got '" + s + "'");
  }
  return r;
}

std::vector<ManifestEntry> make_dataset(const DatasetOptions& o, const fs::path& out_dir) {
  if (o.shapes.empty()) throw ArgumentError("make-dataset: no shapes given");
  if (o.points == 0) throw ArgumentError("make-dataset: point count must be positive");
  const std::size_t count = o.count == 0 ? o.shapes.size() : o.count;
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw FormatError("cannot create '" + out_dir.string() + "': " + ec.message());

  std::vector<ManifestEntry> entries;
  for (std::size_t i = 0; i < count; ++i) {
    const ShapeSource& src = o.shapes[i % o.shapes.size()];
    std::mt19937_64 shape_rng(derive_seed(o.seed, 1, i));
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    ManifestEntry e;
    e.kind = src.kind;
    char name[64];
    std::snprintf(name, sizeof name, "%s%03zu_%s", o.prefix.c_str(), i, kind_name(src.kind));
    e.name = name;
    e.rotation = random_rotation(derive_seed(o.seed, 2, i));
    e.points = o.points;

    const double size = 0.5 + 1.5 * unit(shape_rng);
    PointCloud local;
    const std::uint64_t sample_seed = derive_seed(o.seed, 3, i);
    switch (src.kind) {
      case ShapeKind::sphere: e.shape = Sphere{size}; break;
      case ShapeKind::torus: e.shape = Torus{size, size * (0.25 + 0.2 * unit(shape_rng))}; break;
      case ShapeKind::cube: e.shape = Cube{size}; break;
      case ShapeKind::mesh: e.mesh = fs::absolute(src.mesh_path); break;
    }
    if (src.kind == ShapeKind::mesh) {
      local = sample_surface(load_mesh(e.mesh), o.points, sample_seed);
    } else {
      local = sample_surface(e.shape, o.points, sample_seed);
    }
    PointCloud clean;
    clean.coords.reserve(local.size());
    for (const Vec3& p : local.coords) clean.coords.push_back(multiply(e.rotation, p));

    std::uniform_real_distribution<double> level(o.level.lo, o.level.hi);
    e.noise.distribution = o.distribution;
    e.noise.level = o.level.lo == o.level.hi ? o.level.lo : level(shape_rng);
    e.noise.scale_reference = o.scale_reference;
    e.noise.seed = derive_seed(o.seed, 4, i);
    const PointCloud noisy = perturb(clean, e.noise);

    e.clean = fs::absolute(out_dir) / (e.name + "_clean.xyz");
    e.noisy = fs::absolute(out_dir) / (e.name + "_noisy.xyz");
    write_pointcloud(clean, e.clean);
    write_pointcloud(noisy, e.noisy);
    entries.push_back(std::move(e));
  }
  write_manifest(entries, out_dir / "manifest.jsonl");
  return entries;
}

void write_manifest(std::span<const ManifestEntry> entries, const fs::path& path) {
  const fs::path base = path.parent_path().empty() ? fs::path(".") : path.parent_path();
  std::string text;
  for (const auto& e : entries) {
    text += entry_to_json(e, fs::absolute(base)).dump();
    text += '\n';
  }
  write_text(path, text);
}

std::vector<ManifestEntry> read_manifest(const fs::path& path) {
  const std::string text = detail::read_file(path);
  const fs::path base = fs::absolute(path).parent_path();
  std::vector<ManifestEntry> entries;
  std::stringstream ss(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(ss, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    try {
      entries.push_back(entry_from_json(ordered_json::parse(line), base));
    } catch (const nlohmann::json::exception& ex) {
      throw ParseError("manifest '" + path.string() + "': " + ex.what(), line_no);
    }
  }
  if (entries.empty()) throw FormatError("manifest '" + path.string() + "' has no entries");
  return entries;
}

std::shared_ptr<const Surface> entry_surface(const ManifestEntry& e) {
  std::shared_ptr<const Surface> base;
  if (e.kind == ShapeKind::mesh) {
    base = std::make_shared<MeshSurface>(load_mesh(e.mesh));
  } else {
    base = std::make_shared<AnalyticSurface>(e.shape);
  }
  return std::make_shared<FramedSurface>(base, e.rotation, NormRecord{});
}

std::string describe_noise(const NoiseSpec& spec) {
  char buf[96];
  std::snprintf(buf, sizeof buf, "%s %.2f%% %s", to_string(spec.distribution).c_str(),
                spec.level * 100.0,
                spec.scale_reference == ScaleReference::bounding_sphere_radius ? "radius"
                                                                               : "diagonal");
  return buf;
}

// ---------------------------------------------------------------------------
// Training

std::vector<TrainingPatch> make_training_patches(std::span<const std::vector<Vec3>> noisy,
                                                 std::span<const std::vector<Vec3>> clean,
                                                 std::size_t patch_size) {
  if (noisy.size() != clean.size()) throw ContractError("training: noisy/clean count mismatch");
  std::vector<TrainingPatch> out;
  for (std::size_t c = 0; c < noisy.size(); ++c) {
    if (noisy[c].size() != clean[c].size()) {
      throw ContractError("training: cloud " + std::to_string(c) +
                          " has different noisy and clean point counts");
    }
    const PointCloud normalized = normalize_unit_sphere(PointCloud{noisy[c], std::nullopt});
    const NormRecord rec = *normalized.norm_record;
    std::vector<Vec3> clean_n(clean[c].size());
    for (std::size_t i = 0; i < clean_n.size(); ++i) {
      clean_n[i] = (clean[c][i] - rec.center) * (1.0 / rec.scale);
    }
    for (const Patch& patch : extract_patches(normalized.coords, patch_size)) {
      TrainingPatch tp;
      tp.input = patch.local_coords;
      tp.target.reserve(patch.member_indices.size());
      for (std::size_t m : patch.member_indices) tp.target.push_back(patch.to_local(clean_n[m]));
      out.push_back(std::move(tp));
    }
  }
  return out;
}

namespace {

constexpr char kCheckpointMagic[4] = {'N', 'T', 'R', 'C'};
constexpr std::uint32_t kCheckpointVersion = 1;

template <typename T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

struct Reader {
  const std::string& bytes;
  std::size_t pos = 0;
  std::size_t limit = 0;

  template <typename T>
  T get() {
    if (pos + sizeof(T) > limit) throw FormatError("checkpoint: unexpected end of data");
    T v;
    std::memcpy(&v, bytes.data() + pos, sizeof(T));
    pos += sizeof(T);
    return v;
  }
};

std::uint64_t checksum(const std::string& s, std::size_t n) {
  return fnv1a64({reinterpret_cast<const unsigned char*>(s.data()), n});
}

void copy_values(const ModelWeights& from, const ModelWeights& to) {
  const auto src = from.parameters();
  const auto dst = to.parameters();
  for (std::size_t i = 0; i < src.size(); ++i) {
    Tensor t = dst[i].tensor;
    const auto v = src[i].tensor.data();
    std::copy(v.begin(), v.end(), t.mutable_data().begin());
  }
}

}  // namespace

void save_checkpoint(const Checkpoint& ck, const fs::path& path) {
  std::string out(kCheckpointMagic, 4);
  put<std::uint32_t>(out, kCheckpointVersion);
  const std::string config = encode_config(ck.weights.config);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(config.size()));
  out += config;
  put<std::int32_t>(out, ck.epochs_done);
  put<std::uint64_t>(out, ck.adam_step);
  const auto params = ck.weights.parameters();
  if (ck.adam_m.size() != params.size() || ck.adam_v.size() != params.size()) {
    throw ContractError("checkpoint: moment count does not match parameters");
  }
  put<std::uint32_t>(out, static_cast<std::uint32_t>(params.size()));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto v = params[i].tensor.data();
    put<std::uint64_t>(out, v.size());
    for (double x : v) put<double>(out, x);
    for (double x : ck.adam_m[i]) put<double>(out, x);
    for (double x : ck.adam_v[i]) put<double>(out, x);
  }
  put<std::uint64_t>(out, checksum(out, out.size()));

  // Write-then-rename keeps the previous checkpoint intact if anything fails.
  const fs::path tmp = path.string() + ".tmp";
  write_text(tmp, out);
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw FormatError("cannot move checkpoint into '" + path.string() + "': " + ec.message());
}

Checkpoint load_checkpoint(const fs::path& path) {
  const std::string bytes = detail::read_file(path);
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0) {
    throw FormatError("checkpoint: bad magic (not an NTRC file)");
  }
  const std::size_t body = bytes.size() - 8;
  std::uint64_t stored = 0;
  std::memcpy(&stored, bytes.data() + body, 8);
  if (checksum(bytes, body) != stored) throw FormatError("checkpoint: checksum mismatch");
  Reader r{bytes, 4, body};
  if (r.get<std::uint32_t>() != kCheckpointVersion) throw FormatError("checkpoint: bad version");
  const auto clen = r.get<std::uint32_t>();
  if (r.pos + clen > body) throw FormatError("checkpoint: truncated config");
  const ModelConfig config = decode_config(bytes.substr(r.pos, clen));
  r.pos += clen;
  Checkpoint ck{init_weights(config, 0), 0, 0, {}, {}};
  ck.epochs_done = r.get<std::int32_t>();
  ck.adam_step = r.get<std::uint64_t>();
  const auto params = ck.weights.parameters();
  if (r.get<std::uint32_t>() != params.size()) throw FormatError("checkpoint: parameter count");
  for (const auto& p : params) {
    const auto n = r.get<std::uint64_t>();
    if (n != p.tensor.numel()) throw FormatError("checkpoint: size mismatch for " + p.name);
    Tensor t = p.tensor;
    for (double& x : t.mutable_data()) x = r.get<double>();
    std::vector<double> m(n), v(n);
    for (double& x : m) x = r.get<double>();
    for (double& x : v) x = r.get<double>();
    ck.adam_m.push_back(std::move(m));
    ck.adam_v.push_back(std::move(v));
  }
  if (r.pos != body) throw FormatError("checkpoint: trailing bytes");
  return ck;
}

TrainResult train(std::span<const ManifestEntry> dataset, const TrainOptions& o) {
  o.config.validate();
  if (o.epochs < 0) throw ArgumentError("train: epochs must be >= 0");
  if (o.batch_size == 0) throw ArgumentError("train: batch size must be positive");
  if (!(o.lr > 0.0)) throw ArgumentError("train: learning rate must be positive");
  if (o.patch_size < o.config.min_points()) {
    throw ArgumentError("train: patch size " + std::to_string(o.patch_size) +
                        " is below the model minimum of " + std::to_string(o.config.min_points()));
  }

  std::vector<std::vector<Vec3>> clean, noisy;
  for (const auto& e : dataset) {
    clean.push_back(read_pointcloud(e.clean).coords);
    noisy.push_back(read_pointcloud(e.noisy).coords);
    if (clean.back().size() != noisy.back().size()) {
      throw ContractError("train: '" + e.name + "' noisy and clean point counts differ");
    }
  }

  TrainResult result{init_weights(o.config, derive_seed(o.seed, 10, 0)), {}};
  ModelWeights& w = result.weights;
  if (o.f32_weights) round_to_f32(w);
  std::vector<Tensor> tensors;
  for (const auto& p : w.parameters()) tensors.push_back(p.tensor);
  AdamOptimizer adam(tensors);

  int start_epoch = 0;
  if (o.resume && o.checkpoint && fs::exists(*o.checkpoint)) {
    Checkpoint ck = load_checkpoint(*o.checkpoint);
    check_config_matches(ck.weights.config, o.config);
    copy_values(ck.weights, w);
    adam.restore(ck.adam_step, std::move(ck.adam_m), std::move(ck.adam_v));
    start_epoch = ck.epochs_done;
  }
  if (dataset.empty() && o.epochs > start_epoch) throw ArgumentError("train: empty dataset");

  w.set_requires_grad(true);
  std::vector<TrainingPatch> patches;
  if (!o.renoise && o.epochs > start_epoch) {
    patches = make_training_patches(noisy, clean, o.patch_size);
  }

  for (int epoch = start_epoch; epoch < o.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    if (o.renoise) {
      std::vector<std::vector<Vec3>> fresh(clean.size());
      for (std::size_t c = 0; c < clean.size(); ++c) {
        if (epoch == 0) {
          fresh[c] = noisy[c];
          continue;
        }
        NoiseSpec spec = dataset[c].noise;
        spec.seed = derive_seed(spec.seed, 12, static_cast<std::uint64_t>(epoch));
        fresh[c] = perturb(PointCloud{clean[c], std::nullopt}, spec).coords;
      }
      patches = make_training_patches(fresh, clean, o.patch_size);
    }

    std::vector<std::size_t> order(patches.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 rng(derive_seed(o.seed, 11, static_cast<std::uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), rng);
    if (o.patches_per_epoch > 0 && order.size() > o.patches_per_epoch) {
      order.resize(o.patches_per_epoch);
    }

    const double lr = scheduled_lr(o.lr, epoch, o.halve_every);
    double loss_sum = 0.0;
    for (std::size_t b = 0; b < order.size(); b += o.batch_size) {
      const std::size_t end = std::min(order.size(), b + o.batch_size);
      w.zero_grad();
      for (std::size_t q = b; q < end; ++q) {
        const TrainingPatch& tp = patches[order[q]];
        Tape tape;
        TapeScope scope(tape);
        const Tensor x = coords_to_tensor(tp.input);
        const Tensor y = forward(x, w);
        const Tensor anchor = o.anchor_ground_truth ? coords_to_tensor(tp.target) : x;
        const Tensor loss = loss_total(y, tp.target, anchor, o.weights);
        const double value = loss.item();
        if (!std::isfinite(value)) {
          throw NumericError("train: non-finite loss at epoch " + std::to_string(epoch) +
                             "; last good checkpoint kept");
        }
        loss_sum += value;
        tape.backward(scale(loss, 1.0 / static_cast<double>(end - b)));
      }
      adam.step(lr);
      if (o.f32_weights) round_to_f32(w);
    }

    EpochLog log;
    log.epoch = epoch;
    log.lr = lr;
    log.patches = order.size();
    log.mean_loss = order.empty() ? 0.0 : loss_sum / static_cast<double>(order.size());
    log.seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.log.push_back(log);
    if (o.checkpoint) {
      save_checkpoint({w, epoch + 1, adam.step_count(), adam.first_moments(),
                       adam.second_moments()},
                      *o.checkpoint);
    }
    if (o.on_epoch) o.on_epoch(log);
  }
  w.set_requires_grad(false);
  w.zero_grad();
  return result;
}

// ---------------------------------------------------------------------------
// Denoising

int auto_iterations(std::optional<double> noise_level) {
  if (!noise_level) return 1;
  return *noise_level > 0.02 + 1e-12 ? 2 : 1;
}

std::vector<Vec3> denoise_once(std::span<const Vec3> cloud, const ModelWeights& weights,
                               std::size_t patch_size, std::size_t workers) {
  const std::size_t need = weights.config.min_points();
  if (cloud.size() < need) {
    throw ArgumentError("denoise: cloud has " + std::to_string(cloud.size()) +
                        " points but the model needs at least " + std::to_string(need) +
                        " per patch; use a denser cloud or a smaller k_scales profile");
  }
  if (patch_size < need) {
    throw ArgumentError("denoise: patch size " + std::to_string(patch_size) +
                        " is below the model minimum of " + std::to_string(need));
  }
  const PointCloud normalized = normalize_unit_sphere(PointCloud{{cloud.begin(), cloud.end()}, {}});
  const std::vector<Patch> patches = extract_patches(normalized.coords, patch_size);
  std::vector<std::vector<Vec3>> outputs(patches.size());

  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto work = [&]() {
    for (std::size_t i = next++; i < patches.size(); i = next++) {
      try {
        outputs[i] = forward(patches[i].local_coords, weights);
      } catch (...) {
        std::lock_guard<std::mutex> lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  const std::size_t threads = std::max<std::size_t>(1, std::min(workers, patches.size()));
  if (threads == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);

  PointCloud stitched{stitch_patches(patches, outputs, cloud.size()), normalized.norm_record};
  return denormalize(stitched).coords;
}

std::vector<Vec3> denoise(std::span<const Vec3> cloud, const ModelWeights& weights,
                          const DenoiseOptions& options) {
  if (options.iterations < 1) throw ArgumentError("denoise: iterations must be >= 1");
  std::vector<Vec3> current(cloud.begin(), cloud.end());
  for (int it = 0; it < options.iterations; ++it) {
    current = denoise_once(current, weights, options.patch_size, options.workers);
  }
  return current;
}

// ---------------------------------------------------------------------------
// Evaluation

EvalRecord evaluate_cloud(const std::string& name, std::span<const Vec3> result,
                          std::span<const Vec3> clean, const Surface& surface,
                          const std::string& noise, int iterations) {
  EvalRecord r;
  r.name = name;
  r.noise = noise;
  r.cd = chamfer_distance(result, clean);
  r.p2m = point_to_mesh(result, surface);
  r.iterations = iterations;
  return r;
}

fs::path denoised_path(const fs::path& dir, const std::string& name) {
  return dir / (name + "_denoised.xyz");
}

EvalReport evaluate_manifest(std::span<const ManifestEntry> entries,
                             const std::optional<fs::path>& results_dir,
                             const std::optional<fs::path>& color_dir, int iterations) {
  EvalReport report;
  for (const auto& e : entries) {
    const fs::path file = results_dir ? denoised_path(*results_dir, e.name) : e.noisy;
    const std::vector<Vec3> result = read_pointcloud(file).coords;
    const std::vector<Vec3> clean = read_pointcloud(e.clean).coords;
    if (result.size() != e.points || clean.size() != e.points) {
      throw ContractError("eval: '" + e.name + "' has " + std::to_string(result.size()) +
                          " result and " + std::to_string(clean.size()) +
                          " clean points, manifest says " + std::to_string(e.points));
    }
    const auto surface = entry_surface(e);
    report.records.push_back(
        evaluate_cloud(e.name, result, clean, *surface, describe_noise(e.noise), iterations));
    if (color_dir) {
      std::error_code ec;
      fs::create_directories(*color_dir, ec);
      std::vector<double> dist(result.size());
      for (std::size_t i = 0; i < result.size(); ++i) {
        dist[i] = std::sqrt(surface->squared_distance(result[i]));
      }
      write_quality_ply(result, dist, *color_dir / (e.name + "_distance.ply"));
    }
  }
  return report;
}

// ---------------------------------------------------------------------------
// Ablation sweep

SweepAxes parse_sweep(const std::vector<std::string>& terms) {
  if (terms.empty()) return SweepAxes{};
  SweepAxes axes{{EncodingMode::sparse}, {true}, {true}};
  auto values = [](const std::string& list) {
    std::vector<std::string> out;
    std::stringstream ss(list);
    std::string item;
    while (std::getline(ss, item, ',')) {
      item = std::string(detail::trim(item));
      if (!item.empty()) out.push_back(item);
    }
    if (out.empty()) throw ArgumentError("sweep: empty value list");
    return out;
  };
  auto on_off = [](const std::string& v) {
    if (v == "on" || v == "true" || v == "1") return true;
    if (v == "off" || v == "false" || v == "0") return false;
    throw ArgumentError("sweep: expected on/off, got '" + v + "'");
  };
  for (const std::string& term : terms) {
    const auto eq = term.find('=');
    if (eq == std::string::npos) throw ArgumentError("sweep: expected key=values, got '" + term + "'");
    const std::string key(detail::trim(term.substr(0, eq)));
    const auto vals = values(term.substr(eq + 1));
    if (key == "encoding") {
      axes.encodings.clear();
      for (const auto& v : vals) axes.encodings.push_back(parse_encoding_mode(v));
    } else if (key == "lpa") {
      axes.lpa.clear();
      for (const auto& v : vals) axes.lpa.push_back(on_off(v));
    } else if (key == "attention") {
      axes.attention.clear();
      for (const auto& v : vals) axes.attention.push_back(on_off(v));
    } else {
      throw ArgumentError("sweep: unknown axis '" + key + "' (encoding, lpa, attention)");
    }
  }
  return axes;
}

std::vector<SweepRow> run_sweep(std::span<const ManifestEntry> train_set,
                                std::span<const ManifestEntry> test_set, const SweepAxes& axes,
                                const SweepOptions& options) {
  if (!options.test_iterations.empty() && options.test_iterations.size() != test_set.size()) {
    throw ContractError("sweep: test_iterations must match the test set size");
  }
  std::vector<std::vector<Vec3>> noisy, clean;
  std::vector<std::shared_ptr<const Surface>> surfaces;
  for (const auto& e : test_set) {
    noisy.push_back(read_pointcloud(e.noisy).coords);
    clean.push_back(read_pointcloud(e.clean).coords);
    surfaces.push_back(entry_surface(e));
  }

  std::vector<SweepRow> rows;
  for (EncodingMode enc : axes.encodings) {
    for (bool lpa : axes.lpa) {
      for (bool att : axes.attention) {
        TrainOptions to = options.train;
        to.config.encoding_mode = enc;
        to.config.lpa_enabled = lpa;
        to.config.attention_enabled = att;
        to.checkpoint.reset();
        to.resume = false;
        const ModelWeights weights = train(train_set, to).weights;

        SweepRow row{enc, lpa, att, {}};
        char hash[24];
        std::snprintf(hash, sizeof hash, "%016llx",
                      static_cast<unsigned long long>(config_hash(to.config)));
        row.report.config_hash = hash;
        for (std::size_t i = 0; i < test_set.size(); ++i) {
          DenoiseOptions d = options.denoise;
          d.iterations = options.test_iterations.empty() ? auto_iterations(test_set[i].noise.level)
                                                         : options.test_iterations[i];
          const auto out = denoise(noisy[i], weights, d);
          row.report.records.push_back(evaluate_cloud(test_set[i].name, out, clean[i],
                                                      *surfaces[i],
                                                      describe_noise(test_set[i].noise),
                                                      d.iterations));
        }
        rows.push_back(std::move(row));
      }
    }
  }
  return rows;
}

std::string sweep_table(std::span<const SweepRow> rows) {
  std::ostringstream os;
  char line[256];
  std::snprintf(line, sizeof line, "%-10s %-4s %-9s %14s %10s %14s %10s\n", "encoding", "lpa",
                "attention", "CD", "CDx1e4", "P2M", "P2Mx1e4");
  os << line;
  for (const auto& r : rows) {
    const double cd = r.report.mean_cd();
    const double p2m = r.report.mean_p2m();
    std::snprintf(line, sizeof line, "%-10s %-4s %-9s %14.8e %10.4f %14.8e %10.4f\n",
                  to_string(r.encoding).c_str(), r.lpa ? "on" : "off", r.attention ? "on" : "off",
                  cd, cd * kReportScale, p2m, p2m * kReportScale);
    os << line;
  }
  return os.str();
}

}  // namespace noisetrans
