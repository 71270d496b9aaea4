#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "noisetrans/geometry.hpp"
#include "noisetrans/tensor.hpp"

namespace noisetrans {

enum class EncodingMode { sparse, coordinate, none };

std::string to_string(EncodingMode mode);
EncodingMode parse_encoding_mode(const std::string& s);

struct ModelConfig {
  std::array<int, 3> k_scales{8, 16, 24};
  int layers_per_unit = 4;
  int feat_width = 8;
  int d_model = 32;
  int n_heads = 2;
  int ffn_hidden = 64;
  int n_encoder_layers = 2;
  int sparse_k = 3;
  int head_hidden = 32;
  int head_layers = 4;
  EncodingMode encoding_mode = EncodingMode::sparse;
  bool lpa_enabled = true;
  bool attention_enabled = true;
  // Layer normalization inside each edge MLP, before the ReLU.
  bool edge_norm = true;

  static ModelConfig desk();
  static ModelConfig full();

  // Throws ArgumentError naming the first offending field.
  void validate() const;
  // Smallest patch the network accepts: every unit needs k neighbors besides the point.
  std::size_t min_points() const;

  bool operator==(const ModelConfig&) const = default;
};

std::string describe(const ModelConfig& config);

struct Linear {
  Tensor weight;  // [in, out]
  Tensor bias;    // [out]
};

struct Norm {
  Tensor gain;
  Tensor bias;
};

struct EdgeLayerWeights {
  Tensor gate;  // Local Point Attention matrix [2d, 2d]; empty when LPA is off
  Linear transform;
  Norm norm;
};

struct EncoderLayerWeights {
  Norm attn_norm;
  Linear query, key, value, output;  // self-attention
  Linear pointwise;                  // stands in for attention when it is ablated
  Norm ffn_norm;
  Linear ffn_in, ffn_out;
};

struct NamedParameter {
  std::string name;
  Tensor tensor;
};

struct ModelWeights {
  ModelConfig config;
  std::vector<std::vector<EdgeLayerWeights>> units;  // [3][layers_per_unit]
  Linear fuse_in, fuse_out;                          // h_phi
  Linear encode_in, encode_out;                      // sparse-encoding MLP
  Linear coordinate_encode;                          // coordinate-encoding ablation
  std::vector<EncoderLayerWeights> encoder;
  Norm final_norm;           // closes the Pre-LN stack
  std::vector<Linear> head;  // densely connected GELU layers
  Linear head_out;           // zero-initialized projection to coordinates

  // Live parameters in canonical declaration order (storage is shared).
  std::vector<NamedParameter> parameters() const;
  std::size_t parameter_count() const;
  void zero_grad() const;
  void set_requires_grad(bool flag) const;
};

// Fan-in scaled uniform init; LN gains 1; biases and the final head projection 0.
ModelWeights init_weights(const ModelConfig& config, std::uint64_t seed);

// Rounds every parameter to the nearest f32 value.
void round_to_f32(const ModelWeights& weights);

// Per-forward neighbor lists, computed from coordinates only.
struct NeighborGraph {
  std::vector<IndexMatrix> units;  // one [N, k_scales[u]] list per unit, self excluded
  IndexMatrix sparse;              // [N, sparse_k], self excluded
};

NeighborGraph build_neighbor_graph(std::span<const Vec3> coords, const ModelConfig& config);

Tensor apply_linear(const Tensor& x, const Linear& lin);

// One EdgeConv-style layer: max_j g([f_i, f_j - f_i] (* sigmoid(W_a [f_i, f_j - f_i]))).
Tensor feature_layer(const Tensor& features, const IndexMatrix& neighbors,
                     const EdgeLayerWeights& weights, bool lpa, bool edge_norm);

// Stacked feature layers on raw coordinates; returns all layer outputs concatenated.
Tensor feature_extraction_unit(const Tensor& coords, const IndexMatrix& neighbors,
                               std::span<const EdgeLayerWeights> layers, const ModelConfig& config);

Tensor point_embedding(const Tensor& coords, const NeighborGraph& graph, const ModelWeights& weights);

// Per-neighbor inputs [x_i - x_j, 1 / max(|x_i - x_j|^2, eps)] as an [N, k, 4] constant.
Tensor sparse_encoding_inputs(std::span<const Vec3> coords, const IndexMatrix& neighbors);
inline constexpr double kInverseDistanceFloor = 1e-8;

Tensor sparse_encoding(std::span<const Vec3> coords, const NeighborGraph& graph,
                       const ModelWeights& weights);

// Positional term added to the embedding, per encoding_mode (zeros for none).
Tensor positional_encoding(std::span<const Vec3> coords, const Tensor& coord_tensor,
                           const NeighborGraph& graph, const ModelWeights& weights);

// Pre-LN block: F += MSA(LN(F)); F += MLP(LN(F)).
Tensor encoder_layer(const Tensor& features, const EncoderLayerWeights& weights,
                     const ModelConfig& config);

inline constexpr double kLayerNormEps = 1e-5;

// Y = P(F_o) + X with P a densely connected GELU MLP.
Tensor output_header(const Tensor& encoded, const Tensor& coords, const ModelWeights& weights);

// Full network on one locally normalized patch; row i of the output is the
// denoised position of input row i.
Tensor forward(const Tensor& coords, const ModelWeights& weights);
std::vector<Vec3> forward(std::span<const Vec3> coords, const ModelWeights& weights);

Tensor coords_to_tensor(std::span<const Vec3> coords);
std::vector<Vec3> tensor_to_coords(const Tensor& t);

// Versioned binary weights file ("NTRW"), f32 parameters, FNV-1a checksum.
void save_weights(const ModelWeights& weights, const std::filesystem::path& path);
std::string serialize_weights(const ModelWeights& weights);
ModelWeights load_weights(const std::filesystem::path& path);
// Also checks the stored configuration against `expected`.
ModelWeights load_weights(const std::filesystem::path& path, const ModelConfig& expected);
ModelWeights deserialize_weights(const std::string& bytes);

std::uint64_t fnv1a64(std::span<const unsigned char> bytes, std::uint64_t seed = 0xcbf29ce484222325ULL);
std::uint64_t config_hash(const ModelConfig& config);
std::string encode_config(const ModelConfig& config);
ModelConfig decode_config(const std::string& bytes);

// Throws ContractError naming the first field that differs.
void check_config_matches(const ModelConfig& actual, const ModelConfig& expected);

}  // namespace noisetrans
