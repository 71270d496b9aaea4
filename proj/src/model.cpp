#include "noisetrans/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>
#include <sstream>

#include "noisetrans/error.hpp"
#include "noisetrans/spatial.hpp"

namespace noisetrans {

std::string to_string(EncodingMode mode) {
  switch (mode) {
    case EncodingMode::sparse: return "sparse";
    case EncodingMode::coordinate: return "coordinate";
    case EncodingMode::none: return "none";
  }
  return "?";
}

EncodingMode parse_encoding_mode(const std::string& s) {
  if (s == "sparse") return EncodingMode::sparse;
  if (s == "coordinate") return EncodingMode::coordinate;
  if (s == "none") return EncodingMode::none;
  throw ArgumentError("unknown encoding mode '" + s + "'");
}

// ---------------------------------------------------------------------------
// Config

ModelConfig ModelConfig::desk() { return ModelConfig{}; }

ModelConfig ModelConfig::full() {
  ModelConfig c;
  c.feat_width = 32;
  c.d_model = 128;
  c.n_heads = 4;
  c.ffn_hidden = 256;
  c.n_encoder_layers = 6;
  c.head_hidden = 128;
  return c;
}

void ModelConfig::validate() const {
  auto require = [](bool ok, const char* field, const std::string& why) {
    if (!ok) throw ArgumentError(std::string("model config: ") + field + " " + why);
  };
  require(k_scales[0] >= 1, "k_scales", "must be >= 1");
  require(k_scales[0] < k_scales[1] && k_scales[1] < k_scales[2], "k_scales",
          "must be strictly increasing");
  require(layers_per_unit >= 1, "layers_per_unit", "must be >= 1");
  require(feat_width >= 1, "feat_width", "must be >= 1");
  require(d_model >= 1, "d_model", "must be >= 1");
  require(n_heads >= 1, "n_heads", "must be >= 1");
  require(d_model % n_heads == 0, "d_model", "must be divisible by n_heads");
  require(ffn_hidden >= 1, "ffn_hidden", "must be >= 1");
  require(n_encoder_layers >= 0, "n_encoder_layers", "must be >= 0");
  require(sparse_k >= 1, "sparse_k", "must be >= 1");
  require(head_hidden >= 1, "head_hidden", "must be >= 1");
  require(head_layers >= 0, "head_layers", "must be >= 0");
}

std::size_t ModelConfig::min_points() const {
  const int k = std::max(k_scales[2], encoding_mode == EncodingMode::sparse ? sparse_k : 0);
  return static_cast<std::size_t>(k) + 1;
}

std::string describe(const ModelConfig& c) {
  std::ostringstream os;
  os << "k_scales=" << c.k_scales[0] << ',' << c.k_scales[1] << ',' << c.k_scales[2]
     << " layers_per_unit=" << c.layers_per_unit << " feat_width=" << c.feat_width
     << " d_model=" << c.d_model << " n_heads=" << c.n_heads << " ffn_hidden=" << c.ffn_hidden
     << " n_encoder_layers=" << c.n_encoder_layers << " sparse_k=" << c.sparse_k
     << " head_hidden=" << c.head_hidden << " head_layers=" << c.head_layers
     << " encoding=" << to_string(c.encoding_mode) << " lpa=" << (c.lpa_enabled ? "on" : "off")
     << " attention=" << (c.attention_enabled ? "on" : "off")
     << " edge_norm=" << (c.edge_norm ? "on" : "off");
  return os.str();
}

// ---------------------------------------------------------------------------
// Weights

namespace {

Tensor param(Shape shape) { return Tensor::zeros(std::move(shape), true); }

Linear make_linear(int in, int out) {
  return {param({static_cast<std::size_t>(in), static_cast<std::size_t>(out)}),
          param({static_cast<std::size_t>(out)})};
}

Norm make_norm(int width) {
  return {param({static_cast<std::size_t>(width)}), param({static_cast<std::size_t>(width)})};
}

void push_linear(std::vector<NamedParameter>& out, const std::string& name, const Linear& l) {
  out.push_back({name + ".weight", l.weight});
  out.push_back({name + ".bias", l.bias});
}

void push_norm(std::vector<NamedParameter>& out, const std::string& name, const Norm& n) {
  out.push_back({name + ".gain", n.gain});
  out.push_back({name + ".bias", n.bias});
}

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

// Allocates zero parameters with the shapes implied by the config.
ModelWeights allocate(const ModelConfig& c) {
  c.validate();
  ModelWeights w;
  w.config = c;
  w.units.resize(3);
  for (auto& unit : w.units) {
    for (int l = 0; l < c.layers_per_unit; ++l) {
      const int in = l == 0 ? 3 : c.feat_width;
      EdgeLayerWeights layer;
      if (c.lpa_enabled) {
        layer.gate = param({static_cast<std::size_t>(2 * in), static_cast<std::size_t>(2 * in)});
      }
      layer.transform = make_linear(2 * in, c.feat_width);
      if (c.edge_norm) layer.norm = make_norm(c.feat_width);
      unit.push_back(layer);
    }
  }
  w.fuse_in = make_linear(3 * c.layers_per_unit * c.feat_width, c.d_model);
  w.fuse_out = make_linear(c.d_model, c.d_model);
  if (c.encoding_mode == EncodingMode::sparse) {
    w.encode_in = make_linear(4, c.d_model);
    w.encode_out = make_linear(c.d_model, c.d_model);
  } else if (c.encoding_mode == EncodingMode::coordinate) {
    w.coordinate_encode = make_linear(3, c.d_model);
  }
  for (int l = 0; l < c.n_encoder_layers; ++l) {
    EncoderLayerWeights e;
    e.attn_norm = make_norm(c.d_model);
    if (c.attention_enabled) {
      e.query = make_linear(c.d_model, c.d_model);
      e.key = make_linear(c.d_model, c.d_model);
      e.value = make_linear(c.d_model, c.d_model);
      e.output = make_linear(c.d_model, c.d_model);
    } else {
      e.pointwise = make_linear(c.d_model, c.d_model);
    }
    e.ffn_norm = make_norm(c.d_model);
    e.ffn_in = make_linear(c.d_model, c.ffn_hidden);
    e.ffn_out = make_linear(c.ffn_hidden, c.d_model);
    w.encoder.push_back(e);
  }
  w.final_norm = make_norm(c.d_model);
  for (int m = 0; m < c.head_layers; ++m) {
    w.head.push_back(make_linear(c.d_model + m * c.head_hidden, c.head_hidden));
  }
  w.head_out = make_linear(c.d_model + c.head_layers * c.head_hidden, 3);
  return w;
}

}  // namespace

std::vector<NamedParameter> ModelWeights::parameters() const {
  std::vector<NamedParameter> out;
  const ModelConfig& c = config;
  for (std::size_t u = 0; u < units.size(); ++u) {
    for (std::size_t l = 0; l < units[u].size(); ++l) {
      const std::string prefix = "unit" + std::to_string(u) + ".layer" + std::to_string(l);
      const EdgeLayerWeights& layer = units[u][l];
      if (c.lpa_enabled) out.push_back({prefix + ".gate", layer.gate});
      push_linear(out, prefix + ".transform", layer.transform);
      if (c.edge_norm) push_norm(out, prefix + ".norm", layer.norm);
    }
  }
  push_linear(out, "fuse.in", fuse_in);
  push_linear(out, "fuse.out", fuse_out);
  if (c.encoding_mode == EncodingMode::sparse) {
    push_linear(out, "encoding.in", encode_in);
    push_linear(out, "encoding.out", encode_out);
  } else if (c.encoding_mode == EncodingMode::coordinate) {
    push_linear(out, "encoding.coordinate", coordinate_encode);
  }
  for (std::size_t l = 0; l < encoder.size(); ++l) {
    const std::string prefix = "encoder" + std::to_string(l);
    const EncoderLayerWeights& e = encoder[l];
    push_norm(out, prefix + ".attn_norm", e.attn_norm);
    if (c.attention_enabled) {
      push_linear(out, prefix + ".query", e.query);
      push_linear(out, prefix + ".key", e.key);
      push_linear(out, prefix + ".value", e.value);
      push_linear(out, prefix + ".output", e.output);
    } else {
      push_linear(out, prefix + ".pointwise", e.pointwise);
    }
    push_norm(out, prefix + ".ffn_norm", e.ffn_norm);
    push_linear(out, prefix + ".ffn_in", e.ffn_in);
    push_linear(out, prefix + ".ffn_out", e.ffn_out);
  }
  push_norm(out, "final_norm", final_norm);
  for (std::size_t m = 0; m < head.size(); ++m) push_linear(out, "head" + std::to_string(m), head[m]);
  push_linear(out, "head_out", head_out);
  return out;
}

std::size_t ModelWeights::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : parameters()) n += p.tensor.numel();
  return n;
}

void ModelWeights::zero_grad() const {
  for (auto& p : parameters()) {
    Tensor t = p.tensor;
    t.zero_grad();
  }
}

void ModelWeights::set_requires_grad(bool flag) const {
  for (auto& p : parameters()) {
    Tensor t = p.tensor;
    t.set_requires_grad(flag);
  }
}

ModelWeights init_weights(const ModelConfig& config, std::uint64_t seed) {
  ModelWeights w = allocate(config);
  std::mt19937_64 rng(seed);
  for (auto& p : w.parameters()) {
    auto values = p.tensor.mutable_data();
    if (p.name.rfind("head_out.", 0) == 0 || ends_with(p.name, ".bias")) {
      std::fill(values.begin(), values.end(), 0.0);
    } else if (ends_with(p.name, ".gain")) {
      std::fill(values.begin(), values.end(), 1.0);
    } else {
      const double bound = 1.0 / std::sqrt(static_cast<double>(p.tensor.shape()[0]));
      std::uniform_real_distribution<double> dist(-bound, bound);
      for (double& v : values) v = dist(rng);
    }
  }
  return w;
}

void round_to_f32(const ModelWeights& weights) {
  for (auto& p : weights.parameters()) {
    Tensor t = p.tensor;
    for (double& v : t.mutable_data()) v = static_cast<double>(static_cast<float>(v));
  }
}

// ---------------------------------------------------------------------------
// Forward pass

NeighborGraph build_neighbor_graph(std::span<const Vec3> coords, const ModelConfig& config) {
  if (coords.size() < config.min_points()) {
    throw ArgumentError("forward: " + std::to_string(coords.size()) +
                        " points is below the minimum of " + std::to_string(config.min_points()) +
                        " (largest neighborhood + 1); use a larger patch size");
  }
  const KdTree tree(coords);
  const std::size_t n = coords.size();
  auto neighbors = [&](std::size_t k) {
    IndexMatrix m(n, k);
    for (std::size_t i = 0; i < n; ++i) {
      const auto row = tree.query(coords[i], k, i);
      for (std::size_t j = 0; j < k; ++j) m(i, j) = row[j].index;
    }
    return m;
  };
  NeighborGraph g;
  // One query at the largest k serves every unit: a k-prefix of the sorted list
  // is exactly the k-nearest list.
  const std::size_t kmax = static_cast<std::size_t>(
      std::max(config.k_scales[2], config.sparse_k));
  const IndexMatrix all = neighbors(std::min(kmax, n - 1));
  auto prefix = [&](std::size_t k) {
    IndexMatrix m(n, k);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < k; ++j) m(i, j) = all(i, j);
    return m;
  };
  for (int k : config.k_scales) g.units.push_back(prefix(static_cast<std::size_t>(k)));
  if (config.encoding_mode == EncodingMode::sparse) {
    g.sparse = prefix(static_cast<std::size_t>(config.sparse_k));
  }
  return g;
}

Tensor apply_linear(const Tensor& x, const Linear& lin) {
  return add(matmul(x, lin.weight), lin.bias);
}

Tensor feature_layer(const Tensor& features, const IndexMatrix& neighbors,
                     const EdgeLayerWeights& weights, bool lpa, bool edge_norm) {
  if (neighbors.cols == 0) throw ArgumentError("feature_layer: k must be >= 1");
  if (features.rank() != 2 || neighbors.rows != features.shape()[0]) {
    throw DimensionError("feature_layer: features " + shape_to_string(features.shape()) +
                         " vs neighbor rows " + std::to_string(neighbors.rows));
  }
  IndexMatrix self(neighbors.rows, neighbors.cols);
  for (std::size_t i = 0; i < self.rows; ++i)
    for (std::size_t j = 0; j < self.cols; ++j) self(i, j) = i;

  const Tensor center = gather_rows(features, self);
  const Tensor others = gather_rows(features, neighbors);
  Tensor edge = concat({center, sub(others, center)}, -1);  // [N, k, 2d]
  if (lpa) edge = mul(edge, sigmoid(matmul(edge, weights.gate)));
  Tensor h = apply_linear(edge, weights.transform);
  if (edge_norm) h = layer_norm(h, weights.norm.gain, weights.norm.bias, kLayerNormEps);
  h = relu(h);
  const Tensor out = reduce_max_axis(h, 1);
  for (double v : out.data()) {
    if (!std::isfinite(v)) throw NumericError("feature_layer: non-finite output");
  }
  return out;
}

Tensor feature_extraction_unit(const Tensor& coords, const IndexMatrix& neighbors,
                               std::span<const EdgeLayerWeights> layers,
                               const ModelConfig& config) {
  std::vector<Tensor> outputs;
  Tensor f = coords;
  for (const EdgeLayerWeights& layer : layers) {
    f = feature_layer(f, neighbors, layer, config.lpa_enabled, config.edge_norm);
    outputs.push_back(f);
  }
  return outputs.size() == 1 ? outputs.front() : concat(outputs, -1);
}

Tensor point_embedding(const Tensor& coords, const NeighborGraph& graph,
                       const ModelWeights& weights) {
  std::vector<Tensor> units;
  for (std::size_t u = 0; u < weights.units.size(); ++u) {
    units.push_back(
        feature_extraction_unit(coords, graph.units[u], weights.units[u], weights.config));
  }
  const Tensor stacked = concat(units, -1);
  return apply_linear(relu(apply_linear(stacked, weights.fuse_in)), weights.fuse_out);
}

Tensor sparse_encoding_inputs(std::span<const Vec3> coords, const IndexMatrix& neighbors) {
  const std::size_t n = neighbors.rows, k = neighbors.cols;
  std::vector<double> values(n * k * 4);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < k; ++j) {
      const Vec3 d = coords[i] - coords[neighbors(i, j)];
      double* row = values.data() + (i * k + j) * 4;
      row[0] = d[0];
      row[1] = d[1];
      row[2] = d[2];
      row[3] = 1.0 / std::max(dot(d, d), kInverseDistanceFloor);
    }
  }
  return Tensor::from({n, k, 4}, std::move(values));
}

Tensor sparse_encoding(std::span<const Vec3> coords, const NeighborGraph& graph,
                       const ModelWeights& weights) {
  const Tensor inputs = sparse_encoding_inputs(coords, graph.sparse);
  const Tensor per_neighbor =
      apply_linear(relu(apply_linear(inputs, weights.encode_in)), weights.encode_out);
  return sum_axis(per_neighbor, 1);
}

Tensor positional_encoding(std::span<const Vec3> coords, const Tensor& coord_tensor,
                           const NeighborGraph& graph, const ModelWeights& weights) {
  switch (weights.config.encoding_mode) {
    case EncodingMode::sparse: return sparse_encoding(coords, graph, weights);
    case EncodingMode::coordinate: return apply_linear(coord_tensor, weights.coordinate_encode);
    case EncodingMode::none: break;
  }
  return Tensor::zeros({coords.size(), static_cast<std::size_t>(weights.config.d_model)});
}

Tensor encoder_layer(const Tensor& features, const EncoderLayerWeights& w,
                     const ModelConfig& config) {
  const std::size_t n = features.shape()[0];
  const std::size_t d = static_cast<std::size_t>(config.d_model);
  const std::size_t heads = static_cast<std::size_t>(config.n_heads);
  const std::size_t dh = d / heads;

  const Tensor h = layer_norm(features, w.attn_norm.gain, w.attn_norm.bias, kLayerNormEps);
  Tensor mixed;
  if (config.attention_enabled) {
    const Tensor q = permute(reshape(apply_linear(h, w.query), {n, heads, dh}), {1, 0, 2});
    const Tensor k = permute(reshape(apply_linear(h, w.key), {n, heads, dh}), {1, 2, 0});
    const Tensor v = permute(reshape(apply_linear(h, w.value), {n, heads, dh}), {1, 0, 2});
    const Tensor scores = scale(matmul(q, k), 1.0 / std::sqrt(static_cast<double>(dh)));
    const Tensor attended = matmul(softmax(scores, -1), v);  // [H, N, dh]
    mixed = apply_linear(reshape(permute(attended, {1, 0, 2}), {n, d}), w.output);
  } else {
    mixed = apply_linear(h, w.pointwise);
  }
  const Tensor f = add(features, mixed);
  const Tensor h2 = layer_norm(f, w.ffn_norm.gain, w.ffn_norm.bias, kLayerNormEps);
  const Tensor out = add(f, apply_linear(gelu(apply_linear(h2, w.ffn_in)), w.ffn_out));
  for (double v : out.data()) {
    if (!std::isfinite(v)) throw NumericError("encoder_layer: non-finite output");
  }
  return out;
}

Tensor output_header(const Tensor& encoded, const Tensor& coords, const ModelWeights& weights) {
  std::vector<Tensor> inputs{encoded};
  for (const Linear& layer : weights.head) {
    const Tensor x = inputs.size() == 1 ? inputs.front() : concat(inputs, -1);
    inputs.push_back(gelu(apply_linear(x, layer)));
  }
  const Tensor x = inputs.size() == 1 ? inputs.front() : concat(inputs, -1);
  return add(apply_linear(x, weights.head_out), coords);
}

Tensor coords_to_tensor(std::span<const Vec3> coords) {
  std::vector<double> v;
  v.reserve(coords.size() * 3);
  for (const Vec3& p : coords) v.insert(v.end(), p.begin(), p.end());
  return Tensor::from({coords.size(), 3}, std::move(v));
}

std::vector<Vec3> tensor_to_coords(const Tensor& t) {
  if (t.rank() != 2 || t.shape()[1] != 3) {
    throw DimensionError("expected an [N, 3] tensor, got " + shape_to_string(t.shape()));
  }
  std::vector<Vec3> out(t.shape()[0]);
  const auto v = t.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = {v[3 * i], v[3 * i + 1], v[3 * i + 2]};
  return out;
}

Tensor forward(const Tensor& coords, const ModelWeights& weights) {
  const std::vector<Vec3> points = tensor_to_coords(coords);
  const NeighborGraph graph = build_neighbor_graph(points, weights.config);
  Tensor f = point_embedding(coords, graph, weights);
  if (weights.config.encoding_mode != EncodingMode::none) {
    f = add(f, positional_encoding(points, coords, graph, weights));
  }
  for (const EncoderLayerWeights& layer : weights.encoder) {
    f = encoder_layer(f, layer, weights.config);
  }
  f = layer_norm(f, weights.final_norm.gain, weights.final_norm.bias, kLayerNormEps);
  return output_header(f, coords, weights);
}

std::vector<Vec3> forward(std::span<const Vec3> coords, const ModelWeights& weights) {
  return tensor_to_coords(forward(coords_to_tensor(coords), weights));
}

// ---------------------------------------------------------------------------
// Serialization

namespace {

constexpr char kWeightsMagic[4] = {'N', 'T', 'R', 'W'};
constexpr std::uint32_t kWeightsVersion = 1;

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
    if (pos + sizeof(T) > limit) throw FormatError("weights: unexpected end of data");
    T v;
    std::memcpy(&v, bytes.data() + pos, sizeof(T));
    pos += sizeof(T);
    return v;
  }
};

ModelConfig decode_config(Reader& r) {
  ModelConfig c;
  for (int& k : c.k_scales) k = r.get<std::int32_t>();
  c.layers_per_unit = r.get<std::int32_t>();
  c.feat_width = r.get<std::int32_t>();
  c.d_model = r.get<std::int32_t>();
  c.n_heads = r.get<std::int32_t>();
  c.ffn_hidden = r.get<std::int32_t>();
  c.n_encoder_layers = r.get<std::int32_t>();
  c.sparse_k = r.get<std::int32_t>();
  c.head_hidden = r.get<std::int32_t>();
  c.head_layers = r.get<std::int32_t>();
  const auto mode = r.get<std::uint8_t>();
  if (mode > 2) throw FormatError("weights: invalid encoding mode");
  c.encoding_mode = static_cast<EncodingMode>(mode);
  c.lpa_enabled = r.get<std::uint8_t>() != 0;
  c.attention_enabled = r.get<std::uint8_t>() != 0;
  c.edge_norm = r.get<std::uint8_t>() != 0;
  return c;
}

}  // namespace

std::uint64_t fnv1a64(std::span<const unsigned char> bytes, std::uint64_t seed) {
  std::uint64_t h = seed;
  for (unsigned char b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string encode_config(const ModelConfig& c) {
  std::string out;
  for (int k : c.k_scales) put<std::int32_t>(out, k);
  put<std::int32_t>(out, c.layers_per_unit);
  put<std::int32_t>(out, c.feat_width);
  put<std::int32_t>(out, c.d_model);
  put<std::int32_t>(out, c.n_heads);
  put<std::int32_t>(out, c.ffn_hidden);
  put<std::int32_t>(out, c.n_encoder_layers);
  put<std::int32_t>(out, c.sparse_k);
  put<std::int32_t>(out, c.head_hidden);
  put<std::int32_t>(out, c.head_layers);
  put<std::uint8_t>(out, static_cast<std::uint8_t>(c.encoding_mode));
  put<std::uint8_t>(out, c.lpa_enabled ? 1 : 0);
  put<std::uint8_t>(out, c.attention_enabled ? 1 : 0);
  put<std::uint8_t>(out, c.edge_norm ? 1 : 0);
  return out;
}

ModelConfig decode_config(const std::string& bytes) {
  Reader r{bytes, 0, bytes.size()};
  ModelConfig c = decode_config(r);
  if (r.pos != bytes.size()) throw FormatError("config: trailing bytes");
  return c;
}

std::uint64_t config_hash(const ModelConfig& config) {
  const std::string bytes = encode_config(config);
  return fnv1a64({reinterpret_cast<const unsigned char*>(bytes.data()), bytes.size()});
}

void check_config_matches(const ModelConfig& actual, const ModelConfig& expected) {
  auto field = [](const char* name, auto a, auto e) {
    if (a != e) {
      std::ostringstream os;
      os << "weights config mismatch: " << name << " is " << a << " in file, expected " << e;
      throw ContractError(os.str());
    }
  };
  for (int i = 0; i < 3; ++i) field("k_scales", actual.k_scales[i], expected.k_scales[i]);
  field("layers_per_unit", actual.layers_per_unit, expected.layers_per_unit);
  field("feat_width", actual.feat_width, expected.feat_width);
  field("d_model", actual.d_model, expected.d_model);
  field("n_heads", actual.n_heads, expected.n_heads);
  field("ffn_hidden", actual.ffn_hidden, expected.ffn_hidden);
  field("n_encoder_layers", actual.n_encoder_layers, expected.n_encoder_layers);
  field("sparse_k", actual.sparse_k, expected.sparse_k);
  field("head_hidden", actual.head_hidden, expected.head_hidden);
  field("head_layers", actual.head_layers, expected.head_layers);
  field("encoding_mode", to_string(actual.encoding_mode), to_string(expected.encoding_mode));
  field("lpa_enabled", actual.lpa_enabled, expected.lpa_enabled);
  field("attention_enabled", actual.attention_enabled, expected.attention_enabled);
  field("edge_norm", actual.edge_norm, expected.edge_norm);
}

std::string serialize_weights(const ModelWeights& weights) {
  std::string out(kWeightsMagic, 4);
  put<std::uint32_t>(out, kWeightsVersion);
  out += encode_config(weights.config);
  const auto params = weights.parameters();
  put<std::uint32_t>(out, static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(p.tensor.rank()));
    for (std::size_t d : p.tensor.shape()) put<std::uint32_t>(out, static_cast<std::uint32_t>(d));
    for (double v : p.tensor.data()) put<float>(out, static_cast<float>(v));
  }
  put<std::uint64_t>(out, fnv1a64({reinterpret_cast<const unsigned char*>(out.data()), out.size()}));
  return out;
}

ModelWeights deserialize_weights(const std::string& bytes) {
  if (bytes.size() < 4 + 4 + 8 || std::memcmp(bytes.data(), kWeightsMagic, 4) != 0) {
    throw FormatError("weights: bad magic (not an NTRW file)");
  }
  const std::size_t body = bytes.size() - 8;
  std::uint64_t stored = 0;
  std::memcpy(&stored, bytes.data() + body, 8);
  if (fnv1a64({reinterpret_cast<const unsigned char*>(bytes.data()), body}) != stored) {
    throw FormatError("weights: checksum mismatch (truncated or corrupted file)");
  }
  Reader r{bytes, 4, body};
  const auto version = r.get<std::uint32_t>();
  if (version != kWeightsVersion) {
    throw FormatError("weights: unsupported format version " + std::to_string(version));
  }
  const ModelConfig config = decode_config(r);
  ModelWeights w = allocate(config);
  const auto params = w.parameters();
  const auto count = r.get<std::uint32_t>();
  if (count != params.size()) {
    throw ContractError("weights: file has " + std::to_string(count) + " arrays, config implies " +
                        std::to_string(params.size()));
  }
  for (const auto& p : params) {
    const auto rank = r.get<std::uint32_t>();
    Shape shape(rank);
    for (auto& d : shape) d = r.get<std::uint32_t>();
    if (shape != p.tensor.shape()) {
      throw ContractError("weights: " + p.name + " has shape " + shape_to_string(shape) +
                          ", expected " + shape_to_string(p.tensor.shape()));
    }
    Tensor t = p.tensor;
    for (double& v : t.mutable_data()) v = static_cast<double>(r.get<float>());
  }
  if (r.pos != body) throw FormatError("weights: trailing bytes before checksum");
  return w;
}

void save_weights(const ModelWeights& weights, const std::filesystem::path& path) {
  const std::string bytes = serialize_weights(weights);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot open '" + path.string() + "' for writing");
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw FormatError("failed writing '" + path.string() + "'");
}

ModelWeights load_weights(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open weights '" + path.string() + "'");
  std::ostringstream ss;
  ss << is.rdbuf();
  return deserialize_weights(ss.str());
}

ModelWeights load_weights(const std::filesystem::path& path, const ModelConfig& expected) {
  ModelWeights w = load_weights(path);
  check_config_matches(w.config, expected);
  return w;
}

}  // namespace noisetrans
