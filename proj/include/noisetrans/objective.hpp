#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "noisetrans/geometry.hpp"
#include "noisetrans/tensor.hpp"

namespace noisetrans {

// ---------------------------------------------------------------------------
// Metrics

// Symmetric mean nearest-neighbor squared distance:
// (1/|A|) sum_a min_b |a-b|^2 + (1/|B|) sum_b min_a |b-a|^2.
double chamfer_distance(std::span<const Vec3> a, std::span<const Vec3> b);

// Exact squared distance from p to the closed triangle (a, b, c).
double point_triangle_sqdist(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c);

// Exact brute force over all triangles.
class MeshSurface final : public Surface {
 public:
  explicit MeshSurface(TriMesh mesh);
  double squared_distance(const Vec3& p) const override;
  const TriMesh& mesh() const { return mesh_; }

 private:
  TriMesh mesh_;
};

// One-sided mean squared distance from the points to the surface. The caller
// guarantees both live in the same frame.
double point_to_mesh(std::span<const Vec3> cloud, const Surface& surface);
double point_to_mesh(std::span<const Vec3> cloud, const TriMesh& mesh);

// ---------------------------------------------------------------------------
// Training losses (all return scalar tensors differentiable in `output`)

// Chamfer distance with the same normalization as chamfer_distance().
Tensor loss_cd(const Tensor& output, std::span<const Vec3> target);
// (1/N) sum_i |anchor_i - output_i|^2 with row correspondence.
Tensor loss_ad(const Tensor& output, const Tensor& anchor);

struct LossWeights {
  double alpha = 0.9;
  double beta = 0.1;
};

Tensor loss_total(const Tensor& output, std::span<const Vec3> target, const Tensor& anchor,
                  LossWeights weights = {});

// ---------------------------------------------------------------------------
// Optimizer

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// base_lr * 0.5^floor(epoch / halve_every).
double scheduled_lr(double base_lr, int epoch, int halve_every);

class AdamOptimizer {
 public:
  explicit AdamOptimizer(std::vector<Tensor> params, AdamOptions options = {});

  // Bias-corrected update from the parameters' accumulated gradients (missing
  // gradients count as zero). Refuses the whole step when any gradient is
  // non-finite.
  void step(double lr);

  std::uint64_t step_count() const { return step_; }
  const std::vector<std::vector<double>>& first_moments() const { return m_; }
  const std::vector<std::vector<double>>& second_moments() const { return v_; }
  void restore(std::uint64_t step, std::vector<std::vector<double>> m,
               std::vector<std::vector<double>> v);

 private:
  std::vector<Tensor> params_;
  AdamOptions options_;
  std::uint64_t step_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

// ---------------------------------------------------------------------------
// Reports

inline constexpr double kReportScale = 1e4;

struct EvalRecord {
  std::string name;
  std::string noise;
  double cd = 0.0;
  double p2m = 0.0;
  int iterations = 0;
};

struct EvalReport {
  std::vector<EvalRecord> records;
  std::string config_hash;

  double mean_cd() const;
  double mean_p2m() const;
  // Fixed-width UTF-8 table with raw and x1e4 columns plus the mean row.
  std::string to_table() const;
  // One JSON object per shape.
  std::string to_jsonl() const;
};

}  // namespace noisetrans
