#include "cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "noisetrans/corruption.hpp"
#include "noisetrans/error.hpp"
#include "noisetrans/geometry.hpp"
#include "noisetrans/model.hpp"
#include "noisetrans/objective.hpp"
#include "noisetrans/pipeline.hpp"

namespace noisetrans::cli {
namespace {

namespace fs = std::filesystem;

struct Profile {
  ModelConfig model;
  int epochs;
  std::size_t patch_size;
  std::size_t points;
};

Profile profile_defaults(const std::string& name) {
  if (name == "full") return {ModelConfig::full(), 200, 1024, 10000};
  return {ModelConfig::desk(), 30, 256, 1024};
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

// Appends "--key=value" for every config-file entry whose flag is not already
// on the command line.
std::vector<std::string> expand_config_file(const std::vector<std::string>& args) {
  std::optional<std::string> path;
  for (std::size_t i = 1; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) path = args[i + 1];
    if (args[i].rfind("--config=", 0) == 0) path = args[i].substr(9);
  }
  if (!path) return args;

  std::ifstream is(*path);
  if (!is) throw ArgumentError("cannot read config file '" + *path + "'");
  std::vector<std::string> out = args;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ArgumentError("config file line " + std::to_string(lineno) + ": expected key = value");
    }
    std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    std::replace(key.begin(), key.end(), '_', '-');
    if (key == "command" || key == "config") continue;
    const std::string flag = "--" + key;
    const bool given = std::any_of(args.begin() + 1, args.end(), [&](const std::string& a) {
      return a == flag || a.rfind(flag + "=", 0) == 0;
    });
    if (!given) out.push_back(flag + "=" + value);
  }
  return out;
}

class Dump {
 public:
  explicit Dump(std::string command) : command_(std::move(command)) {}

  template <class T>
  void add(const std::string& key, const T& value) {
    std::ostringstream os;
    os.precision(17);
    os << value;
    entries_.emplace_back(key, os.str());
  }
  void add(const std::string& key, bool value) { entries_.emplace_back(key, value ? "on" : "off"); }
  void add(const std::string& key, const fs::path& value) { entries_.emplace_back(key, value.string()); }

  // Informational line, written as a comment so the dump stays loadable.
  template <class T>
  void note(const std::string& key, const T& value) {
    std::ostringstream os;
    os.precision(17);
    os << value;
    notes_.emplace_back(key, os.str());
  }

  void add_model(const ModelConfig& c) {
    add("k-scales", std::to_string(c.k_scales[0]) + "," + std::to_string(c.k_scales[1]) + "," +
                        std::to_string(c.k_scales[2]));
    add("layers-per-unit", c.layers_per_unit);
    add("feat-width", c.feat_width);
    add("d-model", c.d_model);
    add("n-heads", c.n_heads);
    add("ffn-hidden", c.ffn_hidden);
    add("encoder-layers", c.n_encoder_layers);
    add("sparse-k", c.sparse_k);
    add("head-hidden", c.head_hidden);
    add("head-layers", c.head_layers);
    add("encoding", to_string(c.encoding_mode));
    add("lpa", c.lpa_enabled);
    add("attention", c.attention_enabled);
    add("edge-norm", c.edge_norm);
  }

  // "key = value" lines that can be fed back through --config.
  void write(const fs::path& path) const {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream os(path);
    if (!os) throw FormatError("cannot write resolved config '" + path.string() + "'");
    os << "command = " << command_ << '\n';
    for (const auto& [k, v] : entries_) os << k << " = " << v << '\n';
    for (const auto& [k, v] : notes_) os << "# " << k << " = " << v << '\n';
    if (!os) throw FormatError("cannot write resolved config '" + path.string() + "'");
  }

 private:
  std::string command_;
  std::vector<std::pair<std::string, std::string>> entries_;
  std::vector<std::pair<std::string, std::string>> notes_;
};

struct Globals {
  std::uint64_t seed = 0;
  std::string config_file;
  std::string profile = "desk";
  std::string precision = "f64";
};

void add_globals(CLI::App& app, Globals& g) {
  app.add_option("--seed", g.seed, "Base seed for every random stream")->capture_default_str();
  app.add_option("--config", g.config_file, "File of key = value lines; flags override it");
  app.add_option("--profile", g.profile, "Default sizes: desk or full")
      ->check(CLI::IsMember({"desk", "full"}))
      ->capture_default_str();
  app.add_option("--precision", g.precision, "Weight precision during training: f32 or f64")
      ->check(CLI::IsMember({"f32", "f64"}))
      ->capture_default_str();
}

void dump_globals(Dump& d, const Globals& g) {
  d.add("seed", g.seed);
  d.add("profile", g.profile);
  d.add("precision", g.precision);
}

bool on_off(const std::string& s) { return s == "on"; }

std::array<int, 3> parse_k_scales(const std::string& s) {
  std::array<int, 3> k{};
  char c1 = 0, c2 = 0;
  std::istringstream is(s);
  if (!(is >> k[0] >> c1 >> k[1] >> c2 >> k[2]) || c1 != ',' || c2 != ',' || !(is >> std::ws).eof()) {
    throw ArgumentError("--k-scales expects three comma-separated integers, got '" + s + "'");
  }
  return k;
}

// Model and training flags shared by train and the evaluation sweep.
struct ModelFlags {
  std::optional<std::string> k_scales;
  std::optional<int> layers_per_unit, feat_width, d_model, n_heads, ffn_hidden, encoder_layers,
      sparse_k, head_hidden, head_layers;
  std::string encoding = "sparse";
  std::string lpa = "on", attention = "on", edge_norm = "on";

  void add(CLI::App& app) {
    app.add_option("--k-scales", k_scales, "Neighborhood sizes of the three units, e.g. 8,16,24");
    app.add_option("--layers-per-unit", layers_per_unit);
    app.add_option("--feat-width", feat_width);
    app.add_option("--d-model", d_model);
    app.add_option("--n-heads", n_heads);
    app.add_option("--ffn-hidden", ffn_hidden);
    app.add_option("--encoder-layers", encoder_layers);
    app.add_option("--sparse-k", sparse_k);
    app.add_option("--head-hidden", head_hidden);
    app.add_option("--head-layers", head_layers);
    app.add_option("--encoding", encoding)
        ->check(CLI::IsMember({"sparse", "coordinate", "none"}))
        ->capture_default_str();
    const auto onoff = CLI::IsMember({"on", "off"});
    app.add_option("--lpa", lpa)->check(onoff)->capture_default_str();
    app.add_option("--attention", attention)->check(onoff)->capture_default_str();
    app.add_option("--edge-norm", edge_norm)->check(onoff)->capture_default_str();
  }

  ModelConfig resolve(ModelConfig c) const {
    if (k_scales) c.k_scales = parse_k_scales(*k_scales);
    if (layers_per_unit) c.layers_per_unit = *layers_per_unit;
    if (feat_width) c.feat_width = *feat_width;
    if (d_model) {
      c.d_model = *d_model;
      if (!ffn_hidden) c.ffn_hidden = 2 * *d_model;
    }
    if (n_heads) c.n_heads = *n_heads;
    if (ffn_hidden) c.ffn_hidden = *ffn_hidden;
    if (encoder_layers) c.n_encoder_layers = *encoder_layers;
    if (sparse_k) c.sparse_k = *sparse_k;
    if (head_hidden) c.head_hidden = *head_hidden;
    if (head_layers) c.head_layers = *head_layers;
    c.encoding_mode = parse_encoding_mode(encoding);
    c.lpa_enabled = on_off(lpa);
    c.attention_enabled = on_off(attention);
    c.edge_norm = on_off(edge_norm);
    c.validate();
    return c;
  }
};

struct TrainFlags {
  std::optional<int> epochs;
  double lr = 5e-4;
  int halve_every = 50;
  std::optional<std::size_t> patch_size;
  std::size_t batch_size = 1;
  std::size_t patches_per_epoch = 0;
  double alpha = 0.9, beta = 0.1;
  std::string anchor = "input";
  bool renoise = false;

  void add(CLI::App& app) {
    app.add_option("--epochs", epochs, "Training epochs (desk 30, full 200)");
    app.add_option("--lr", lr, "Initial Adam learning rate")->capture_default_str();
    app.add_option("--halve-every", halve_every, "Halve the learning rate every N epochs (0 never)")
        ->capture_default_str();
    app.add_option("--patch-size", patch_size, "Points per patch (desk 256, full 1024)");
    app.add_option("--batch-size", batch_size, "Patches per optimizer step")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    app.add_option("--patches-per-epoch", patches_per_epoch, "Random subset per epoch (0 uses all)")
        ->capture_default_str();
    app.add_option("--alpha", alpha, "Weight of the chamfer loss")->capture_default_str();
    app.add_option("--beta", beta, "Weight of the absolute distance loss")->capture_default_str();
    app.add_option("--anchor", anchor, "Reference of the absolute distance loss: input or clean")
        ->check(CLI::IsMember({"input", "clean"}))
        ->capture_default_str();
    app.add_flag("--renoise", renoise, "Redraw the training noise every epoch");
  }

  TrainOptions resolve(const Profile& p, const ModelConfig& model, const Globals& g) const {
    TrainOptions t;
    t.config = model;
    t.epochs = epochs.value_or(p.epochs);
    if (t.epochs < 0) throw ArgumentError("--epochs must be >= 0");
    t.lr = lr;
    t.halve_every = halve_every;
    t.patch_size = patch_size.value_or(p.patch_size);
    t.batch_size = batch_size;
    t.patches_per_epoch = patches_per_epoch;
    t.weights = {alpha, beta};
    t.anchor_ground_truth = anchor == "clean";
    t.renoise = renoise;
    t.f32_weights = g.precision == "f32";
    t.seed = g.seed;
    return t;
  }
};

void dump_train(Dump& d, const TrainOptions& t) {
  d.add("epochs", t.epochs);
  d.add("lr", t.lr);
  d.add("halve-every", t.halve_every);
  d.add("patch-size", t.patch_size);
  d.add("batch-size", t.batch_size);
  d.add("patches-per-epoch", t.patches_per_epoch);
  d.add("alpha", t.weights.alpha);
  d.add("beta", t.weights.beta);
  d.add("anchor", std::string(t.anchor_ground_truth ? "clean" : "input"));
  d.add("renoise", std::string(t.renoise ? "true" : "false"));
  d.add_model(t.config);
}

std::string format_epoch(const EpochLog& e) {
  char line[160];
  std::snprintf(line, sizeof(line), "epoch %d lr %.6e loss %.9e patches %zu time %.2fs", e.epoch,
                e.lr, e.mean_loss, e.patches, e.seconds);
  return line;
}

// "sphere:R", "torus:R,r" or "cube:H" for analytic ground truth in eval.
AnalyticShape parse_analytic(const std::string& s) {
  const auto colon = s.find(':');
  const std::string kind = s.substr(0, colon);
  std::vector<double> v;
  if (colon != std::string::npos) {
    std::istringstream is(s.substr(colon + 1));
    std::string part;
    while (std::getline(is, part, ',')) {
      try {
        v.push_back(std::stod(part));
      } catch (const std::exception&) {
        throw ArgumentError("--shape: bad number '" + part + "'");
      }
    }
  }
  if (kind == "sphere" && v.size() <= 1) return Sphere{v.empty() ? 1.0 : v[0]};
  if (kind == "torus" && (v.empty() || v.size() == 2)) {
    return v.empty() ? Torus{} : Torus{v[0], v[1]};
  }
  if (kind == "cube" && v.size() <= 1) return Cube{v.empty() ? 1.0 : v[0]};
  throw ArgumentError("--shape expects sphere:R, torus:R,r or cube:H, got '" + s + "'");
}

// A report path "x/report.txt" yields x/report.txt (table) and x/report.jsonl.
void write_report(const std::string& table, const std::string& jsonl, const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path table_path = path, jsonl_path = path;
  jsonl_path.replace_extension(".jsonl");
  if (path.extension() == ".jsonl") table_path.replace_extension(".txt");
  std::ofstream t(table_path), j(jsonl_path);
  if (!t || !j) throw FormatError("cannot write report '" + path.string() + "'");
  t << table;
  j << jsonl;
  if (!t || !j) throw FormatError("cannot write report '" + path.string() + "'");
}

fs::path sidecar(const fs::path& output) { return fs::path(output.string() + ".config"); }

int parse_iterations(const std::string& s) {
  if (s == "auto") return 0;
  try {
    std::size_t used = 0;
    const int n = std::stoi(s, &used);
    if (used == s.size() && n >= 1) return n;
  } catch (const std::exception&) {
  }
  throw ArgumentError("--iterations expects auto or a positive integer, got '" + s + "'");
}

// ---------------------------------------------------------------------------

struct MakeDatasetCmd {
  std::string shapes;
  std::optional<std::size_t> points;
  std::size_t count = 0;
  std::string noise = "gaussian";
  std::string level = "0.02";
  std::string reference = "radius";
  std::string prefix = "shape";
  std::string out;

  void add(CLI::App& app) {
    app.add_option("--shapes", shapes, "Comma list of sphere, torus, cube or .off/.obj paths")
        ->required();
    app.add_option("--points", points, "Points per cloud (desk 1024, full 10000)");
    app.add_option("--count", count, "Number of clouds, cycling the shape list (0: one per shape)")
        ->capture_default_str();
    app.add_option("--noise", noise, "gaussian, laplace or uniform")
        ->check(CLI::IsMember({"gaussian", "laplace", "uniform"}))
        ->capture_default_str();
    app.add_option("--noise-level", level, "Fraction of the reference length, or lo:hi")
        ->capture_default_str();
    app.add_option("--noise-ref", reference, "radius or diagonal")
        ->check(CLI::IsMember({"radius", "diagonal", "bounding_sphere_radius",
                               "bounding_box_diagonal"}))
        ->capture_default_str();
    app.add_option("--prefix", prefix, "Name prefix of the generated clouds")->capture_default_str();
    app.add_option("--out", out, "Output directory")->required();
  }

  int run(const Globals& g, std::ostream& os) const {
    const Profile p = profile_defaults(g.profile);
    DatasetOptions o;
    o.shapes = parse_shape_list(shapes);
    o.count = count;
    o.points = points.value_or(p.points);
    o.distribution = parse_noise_distribution(noise);
    o.level = parse_noise_level(level);
    o.scale_reference = parse_scale_reference(reference);
    o.seed = g.seed;
    o.prefix = prefix;
    const auto entries = make_dataset(o, out);

    Dump d("make-dataset");
    dump_globals(d, g);
    d.add("shapes", shapes);
    d.add("points", o.points);
    d.add("count", count);
    d.add("noise", noise);
    d.add("noise-level", level);
    d.add("noise-ref", to_string(o.scale_reference));
    d.add("prefix", prefix);
    d.add("out", out);
    d.write(fs::path(out) / "run.config");
    os << "wrote " << entries.size() << " clouds and " << (fs::path(out) / "manifest.jsonl").string()
       << '\n';
    return kExitSuccess;
  }
};

struct TrainCmd {
  std::string data;
  std::string out_weights;
  std::string checkpoint;
  bool resume = false;
  ModelFlags model;
  TrainFlags train;

  void add(CLI::App& app) {
    app.add_option("--data", data, "Training manifest.jsonl")->required();
    app.add_option("--out-weights", out_weights, "Output weights file")->required();
    app.add_option("--checkpoint", checkpoint, "Checkpoint file (default <out-weights>.ckpt)");
    app.add_flag("--resume", resume, "Continue from the checkpoint");
    model.add(app);
    train.add(app);
  }

  int run(const Globals& g, std::ostream& os) const {
    const Profile p = profile_defaults(g.profile);
    const auto entries = read_manifest(data);
    TrainOptions t = train.resolve(p, model.resolve(p.model), g);
    t.checkpoint = checkpoint.empty() ? fs::path(out_weights + ".ckpt") : fs::path(checkpoint);
    t.resume = resume;
    t.on_epoch = [&os](const EpochLog& e) { os << format_epoch(e) << std::endl; };

    Dump d("train");
    dump_globals(d, g);
    d.add("data", data);
    d.add("out-weights", out_weights);
    d.add("checkpoint", *t.checkpoint);
    dump_train(d, t);
    d.write(sidecar(out_weights));

    const TrainResult result = train_model(entries, t);
    save_weights(result.weights, out_weights);
    os << "wrote " << out_weights << " (" << describe(result.weights.config) << ")\n";
    return kExitSuccess;
  }

  static TrainResult train_model(const std::vector<ManifestEntry>& entries, const TrainOptions& t) {
    return noisetrans::train(entries, t);
  }
};

struct DenoiseCmd {
  std::string in, out, manifest, out_dir, weights;
  std::string iterations = "auto";
  std::optional<double> noise_level;
  std::optional<std::size_t> patch_size;
  std::size_t workers = 1;

  void add(CLI::App& app) {
    app.add_option("--in", in, "Input cloud (.xyz or .ply)");
    app.add_option("--out", out, "Output cloud (.xyz or .ply)");
    app.add_option("--manifest", manifest, "Denoise every noisy cloud of a manifest");
    app.add_option("--out-dir", out_dir, "Directory for <name>_denoised.xyz in manifest mode");
    app.add_option("--weights", weights, "Trained weights file")->required();
    app.add_option("--iterations", iterations, "auto or a positive count")->capture_default_str();
    app.add_option("--noise-level", noise_level, "Known noise level for --iterations auto");
    app.add_option("--patch-size", patch_size, "Points per patch (desk 256, full 1024)");
    app.add_option("--workers", workers, "Parallel patch inference threads")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
  }

  int run(const Globals& g, std::ostream& os) const {
    const bool batch = !manifest.empty();
    if (batch == !in.empty()) throw ArgumentError("denoise needs exactly one of --in or --manifest");
    if (!batch && out.empty()) throw ArgumentError("denoise --in needs --out");
    if (batch && out_dir.empty()) throw ArgumentError("denoise --manifest needs --out-dir");
    const int fixed = parse_iterations(iterations);
    const Profile p = profile_defaults(g.profile);
    ModelWeights w = load_weights(weights);
    if (g.precision == "f32") round_to_f32(w);
    DenoiseOptions o;
    o.patch_size = patch_size.value_or(p.patch_size);
    o.workers = workers;

    Dump d("denoise");
    dump_globals(d, g);
    d.add("weights", weights);
    d.add("iterations", iterations);
    d.add("patch-size", o.patch_size);
    d.add("workers", workers);
    d.note("model", describe(w.config));
    d.note("model-hash", config_hash(w.config));

    if (!batch) {
      o.iterations = fixed ? fixed : auto_iterations(noise_level);
      PointCloud cloud = read_pointcloud(in);
      if (cloud.coords.size() < o.patch_size) o.patch_size = cloud.coords.size();
      PointCloud result;
      result.coords = denoise(cloud.coords, w, o);
      write_pointcloud(result, out);
      d.add("in", in);
      d.add("out", out);
      if (noise_level) d.add("noise-level", *noise_level);
      d.note("iterations-used", o.iterations);
      d.write(sidecar(out));
      os << "wrote " << out << " (" << result.coords.size() << " points, " << o.iterations
         << " iteration" << (o.iterations == 1 ? "" : "s") << ")\n";
      return kExitSuccess;
    }

    const auto entries = read_manifest(manifest);
    fs::create_directories(out_dir);
    nlohmann::ordered_json used = nlohmann::ordered_json::object();
    for (const ManifestEntry& e : entries) {
      DenoiseOptions eo = o;
      eo.iterations = fixed ? fixed : auto_iterations(e.noise.level);
      PointCloud cloud = read_pointcloud(e.noisy);
      PointCloud result;
      result.coords = denoise(cloud.coords, w, eo);
      write_pointcloud(result, denoised_path(out_dir, e.name));
      used[e.name] = eo.iterations;
      os << e.name << ": " << eo.iterations << " iteration" << (eo.iterations == 1 ? "" : "s")
         << '\n';
    }
    d.add("manifest", manifest);
    d.add("out-dir", out_dir);
    d.write(fs::path(out_dir) / "run.config");
    std::ofstream it(fs::path(out_dir) / "iterations.json");
    it << used.dump(2) << '\n';
    return kExitSuccess;
  }
};

struct EvalCmd {
  std::string denoised, clean, mesh, shape, noise_label;
  std::string manifest, denoised_dir, color_dir, out_report;
  std::vector<std::string> sweep;
  std::string train_data;
  std::size_t workers = 1;
  std::string iterations = "auto";
  ModelFlags model;
  TrainFlags train;

  void add(CLI::App& app) {
    app.add_option("--denoised", denoised, "Result cloud to score");
    app.add_option("--clean", clean, "Clean reference cloud");
    app.add_option("--mesh", mesh, "Ground-truth mesh (.off/.obj) for point-to-mesh");
    app.add_option("--shape", shape, "Analytic ground truth: sphere:R, torus:R,r or cube:H");
    app.add_option("--noise-label", noise_label, "Noise description for the report row");
    app.add_option("--manifest", manifest, "Score every entry of a manifest");
    app.add_option("--denoised-dir", denoised_dir,
                   "Directory of <name>_denoised.xyz (default: score the noisy inputs)");
    app.add_option("--color-dir", color_dir, "Write distance-colored ply files here");
    app.add_option("--out-report", out_report, "Report path; writes .txt table and .jsonl rows");
    app.add_option("--sweep", sweep,
                   "Ablation grid, e.g. encoding=sparse,none lpa=on,off (bare: all 12 variants)")
        ->expected(0, 3);
    app.add_option("--train-data", train_data, "Training manifest for --sweep");
    app.add_option("--workers", workers, "Parallel patch inference threads for --sweep")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    app.add_option("--iterations", iterations, "Denoising iterations for --sweep")
        ->capture_default_str();
    model.add(app);
    train.add(app);
  }

  int run(const Globals& g, std::ostream& os, bool sweep_given) const {
    Dump d("eval");
    dump_globals(d, g);
    std::string table, jsonl;

    if (sweep_given) {
      if (train_data.empty() || manifest.empty()) {
        throw ArgumentError("eval --sweep needs --train-data and --manifest (test set)");
      }
      const Profile p = profile_defaults(g.profile);
      std::vector<std::string> terms;
      for (const auto& s : sweep) {
        std::istringstream is(s);
        for (std::string t; is >> t;) terms.push_back(t);
      }
      const SweepAxes axes = parse_sweep(terms);
      SweepOptions so;
      so.train = train.resolve(p, model.resolve(p.model), g);
      so.train.on_epoch = [&os](const EpochLog& e) { os << "  " << format_epoch(e) << std::endl; };
      so.denoise.patch_size = so.train.patch_size;
      so.denoise.workers = workers;
      const auto train_set = read_manifest(train_data);
      const auto test_set = read_manifest(manifest);
      const int fixed = parse_iterations(iterations);
      for (const auto& e : test_set) {
        so.test_iterations.push_back(fixed ? fixed : auto_iterations(e.noise.level));
      }
      const auto rows = run_sweep(train_set, test_set, axes, so);
      table = sweep_table(rows);
      for (const SweepRow& r : rows) {
        nlohmann::ordered_json j;
        j["encoding"] = to_string(r.encoding);
        j["lpa"] = r.lpa ? "on" : "off";
        j["attention"] = r.attention ? "on" : "off";
        j["cd"] = r.report.mean_cd();
        j["p2m"] = r.report.mean_p2m();
        j["cd_x1e4"] = r.report.mean_cd() * kReportScale;
        j["p2m_x1e4"] = r.report.mean_p2m() * kReportScale;
        j["config_hash"] = r.report.config_hash;
        jsonl += j.dump() + "\n";
      }
      std::string joined;
      for (const auto& t : terms) joined += (joined.empty() ? "" : " ") + t;
      d.add("sweep", joined);
      d.add("train-data", train_data);
      d.add("manifest", manifest);
      d.add("workers", workers);
      d.add("iterations", iterations);
      dump_train(d, so.train);
    } else if (!manifest.empty()) {
      const auto entries = read_manifest(manifest);
      std::optional<fs::path> results;
      if (!denoised_dir.empty()) results = fs::path(denoised_dir);
      std::optional<fs::path> colors;
      if (!color_dir.empty()) colors = fs::path(color_dir);
      EvalReport report = evaluate_manifest(entries, results, colors);
      // Iteration counts recorded by a batch denoise run, when present.
      if (results && fs::exists(*results / "iterations.json")) {
        std::ifstream is(*results / "iterations.json");
        const auto used = nlohmann::json::parse(is, nullptr, false);
        if (!used.is_discarded()) {
          for (EvalRecord& r : report.records) {
            if (used.contains(r.name)) r.iterations = used[r.name].get<int>();
          }
        }
      }
      table = report.to_table();
      jsonl = report.to_jsonl();
      d.add("manifest", manifest);
      d.add("denoised-dir", denoised_dir);
      d.add("color-dir", color_dir);
    } else {
      if (denoised.empty() || clean.empty()) {
        throw ArgumentError("eval needs --manifest, --sweep, or --denoised with --clean");
      }
      if (mesh.empty() == shape.empty()) {
        throw ArgumentError("eval --denoised needs exactly one of --mesh or --shape");
      }
      std::shared_ptr<const Surface> surface;
      if (!mesh.empty()) {
        surface = std::make_shared<MeshSurface>(load_mesh(mesh));
      } else {
        surface = std::make_shared<AnalyticSurface>(parse_analytic(shape));
      }
      const PointCloud result = read_pointcloud(denoised);
      const PointCloud reference = read_pointcloud(clean);
      EvalReport report;
      report.records.push_back(evaluate_cloud(fs::path(denoised).stem().string(), result.coords,
                                              reference.coords, *surface, noise_label, 0));
      if (!color_dir.empty()) {
        fs::create_directories(color_dir);
        std::vector<double> dist(result.coords.size());
        for (std::size_t i = 0; i < dist.size(); ++i) {
          dist[i] = std::sqrt(surface->squared_distance(result.coords[i]));
        }
        write_quality_ply(result.coords, dist,
                          fs::path(color_dir) / (report.records[0].name + "_distance.ply"));
      }
      table = report.to_table();
      jsonl = report.to_jsonl();
      d.add("denoised", denoised);
      d.add("clean", clean);
      d.add("mesh", mesh);
      d.add("shape", shape);
      d.add("noise-label", noise_label);
    }

    os << table;
    if (!out_report.empty()) {
      write_report(table, jsonl, out_report);
      d.add("out-report", out_report);
      d.write(sidecar(out_report));
    }
    return kExitSuccess;
  }
};

int run_impl(const std::vector<std::string>& raw, std::ostream& out, std::ostream& err) {
  CLI::App app{"Point cloud denoising with a transformer network", "noisetrans"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  add_globals(app, g);

  MakeDatasetCmd make_dataset_cmd;
  TrainCmd train_cmd;
  DenoiseCmd denoise_cmd;
  EvalCmd eval_cmd;
  auto* c_make = app.add_subcommand("make-dataset", "Synthesize paired clean/noisy clouds");
  make_dataset_cmd.add(*c_make);
  auto* c_train = app.add_subcommand("train", "Train a model on a dataset manifest");
  train_cmd.add(*c_train);
  auto* c_denoise = app.add_subcommand("denoise", "Denoise a cloud or a whole manifest");
  denoise_cmd.add(*c_denoise);
  auto* c_eval = app.add_subcommand("eval", "Score results, or run the ablation sweep");
  eval_cmd.add(*c_eval);

  try {
    const std::vector<std::string> args = expand_config_file(raw);
    std::vector<std::string> reversed(args.rbegin(), args.rend() - (args.empty() ? 0 : 1));
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitSuccess : kExitArgument;
  }

  if (c_make->parsed()) return make_dataset_cmd.run(g, out);
  if (c_train->parsed()) return train_cmd.run(g, out);
  if (c_denoise->parsed()) return denoise_cmd.run(g, out);
  return eval_cmd.run(g, out, c_eval->count("--sweep") > 0);
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  try {
    return run_impl(args, out, err);
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const ArgumentError& e) {
    err << "argument error: " << e.what() << '\n';
    return kExitArgument;
  } catch (const Error& e) {
    err << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const fs::filesystem_error& e) {
    err << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
}

}  // namespace noisetrans::cli
