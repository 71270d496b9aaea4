#include "noisetrans/objective.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

#include "json.hpp"

#include "noisetrans/error.hpp"
#include "noisetrans/model.hpp"
#include "noisetrans/spatial.hpp"

namespace noisetrans {

double chamfer_distance(std::span<const Vec3> a, std::span<const Vec3> b) {
  if (a.empty() || b.empty()) throw ArgumentError("chamfer_distance: empty point set");
  auto one_way = [](std::span<const Vec3> from, std::span<const Vec3> to) {
    const KdTree tree(to);
    double total = 0.0;
    for (const Vec3& p : from) total += tree.nearest(p).sqdist;
    return total / static_cast<double>(from.size());
  };
  return one_way(a, b) + one_way(b, a);
}

double point_triangle_sqdist(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c) {
  const Vec3 ab = b - a;
  const Vec3 ac = c - a;
  if (!(dot(cross(ab, ac), cross(ab, ac)) > 0.0)) {
    throw ArgumentError("point_triangle_sqdist: degenerate triangle");
  }
  // Voronoi-region walk (Ericson, Real-Time Collision Detection, 5.1.5).
  const Vec3 ap = p - a;
  const double d1 = dot(ab, ap);
  const double d2 = dot(ac, ap);
  if (d1 <= 0.0 && d2 <= 0.0) return dot(ap, ap);

  const Vec3 bp = p - b;
  const double d3 = dot(ab, bp);
  const double d4 = dot(ac, bp);
  if (d3 >= 0.0 && d4 <= d3) return dot(bp, bp);

  const double vc = d1 * d4 - d3 * d2;
  if (vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0) {
    const double v = d1 / (d1 - d3);
    return squared_distance(p, a + ab * v);
  }

  const Vec3 cp = p - c;
  const double d5 = dot(ab, cp);
  const double d6 = dot(ac, cp);
  if (d6 >= 0.0 && d5 <= d6) return dot(cp, cp);

  const double vb = d5 * d2 - d1 * d6;
  if (vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0) {
    const double w = d2 / (d2 - d6);
    return squared_distance(p, a + ac * w);
  }

  const double va = d3 * d6 - d5 * d4;
  if (va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0) {
    const double w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
    return squared_distance(p, b + (c - b) * w);
  }

  const double denom = 1.0 / (va + vb + vc);
  const double v = vb * denom;
  const double w = vc * denom;
  return squared_distance(p, a + ab * v + ac * w);
}

MeshSurface::MeshSurface(TriMesh mesh) : mesh_(std::move(mesh)) {
  if (mesh_.triangles.empty()) throw ArgumentError("MeshSurface: mesh has no triangles");
}

double MeshSurface::squared_distance(const Vec3& p) const {
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t t = 0; t < mesh_.triangles.size(); ++t) {
    const auto [a, b, c] = mesh_.triangle(t);
    best = std::min(best, point_triangle_sqdist(p, a, b, c));
  }
  return best;
}

double point_to_mesh(std::span<const Vec3> cloud, const Surface& surface) {
  if (cloud.empty()) throw ArgumentError("point_to_mesh: empty cloud");
  double total = 0.0;
  for (const Vec3& p : cloud) total += surface.squared_distance(p);
  return total / static_cast<double>(cloud.size());
}

double point_to_mesh(std::span<const Vec3> cloud, const TriMesh& mesh) {
  return point_to_mesh(cloud, MeshSurface(mesh));
}

// ---------------------------------------------------------------------------
// Losses

Tensor loss_cd(const Tensor& output, std::span<const Vec3> target) {
  const std::vector<Vec3> y = tensor_to_coords(output);
  if (y.empty() || target.empty()) throw ArgumentError("loss_cd: empty point set");
  const std::size_t n = y.size(), m = target.size();

  // output -> target: nearest targets are constants.
  const KdTree target_tree(target);
  std::vector<Vec3> matched(n);
  BranchTrace* trace = active_branch_trace();
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t t = target_tree.nearest(y[i]).index;
    matched[i] = target[t];
    if (trace) trace->choices.push_back(t);
  }
  const Tensor forward_term = sum(square(sub(output, coords_to_tensor(matched))));

  // target -> output: gather the nearest output rows so gradients reach them.
  const KdTree output_tree(y);
  IndexMatrix nearest(m, 1);
  for (std::size_t j = 0; j < m; ++j) {
    nearest(j, 0) = output_tree.nearest(target[j]).index;
    if (trace) trace->choices.push_back(nearest(j, 0));
  }
  const Tensor gathered = reshape(gather_rows(output, nearest), {m, 3});
  const Tensor backward_term = sum(square(sub(gathered, coords_to_tensor(target))));

  return add(scale(forward_term, 1.0 / static_cast<double>(n)),
             scale(backward_term, 1.0 / static_cast<double>(m)));
}

Tensor loss_ad(const Tensor& output, const Tensor& anchor) {
  if (output.shape() != anchor.shape() || output.rank() != 2) {
    throw ContractError("loss_ad: output " + shape_to_string(output.shape()) + " and anchor " +
                        shape_to_string(anchor.shape()) + " must be matching [N, 3]");
  }
  if (output.shape()[0] == 0) throw ArgumentError("loss_ad: empty point set");
  return scale(sum(square(sub(output, anchor))), 1.0 / static_cast<double>(output.shape()[0]));
}

Tensor loss_total(const Tensor& output, std::span<const Vec3> target, const Tensor& anchor,
                  LossWeights weights) {
  return add(scale(loss_cd(output, target), weights.alpha),
             scale(loss_ad(output, anchor), weights.beta));
}

// ---------------------------------------------------------------------------
// Adam

double scheduled_lr(double base_lr, int epoch, int halve_every) {
  if (halve_every <= 0) return base_lr;
  return base_lr * std::pow(0.5, std::floor(static_cast<double>(epoch) / halve_every));
}

AdamOptimizer::AdamOptimizer(std::vector<Tensor> params, AdamOptions options)
    : params_(std::move(params)), options_(options) {
  for (const Tensor& p : params_) {
    m_.emplace_back(p.numel(), 0.0);
    v_.emplace_back(p.numel(), 0.0);
  }
}

void AdamOptimizer::step(double lr) {
  for (const Tensor& p : params_) {
    for (double g : p.grad()) {
      if (!std::isfinite(g)) throw NumericError("adam_step: non-finite gradient, step refused");
    }
  }
  ++step_;
  const double b1 = options_.beta1, b2 = options_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(step_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(step_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor p = params_[i];
    const auto grad = p.grad();
    auto w = p.mutable_data();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double g = grad.empty() ? 0.0 : grad[j];
      m[j] = b1 * m[j] + (1.0 - b1) * g;
      v[j] = b2 * v[j] + (1.0 - b2) * g * g;
      const double mhat = m[j] / c1;
      const double vhat = v[j] / c2;
      w[j] -= lr * mhat / (std::sqrt(vhat) + options_.eps);
    }
  }
}

void AdamOptimizer::restore(std::uint64_t step, std::vector<std::vector<double>> m,
                            std::vector<std::vector<double>> v) {
  if (m.size() != params_.size() || v.size() != params_.size()) {
    throw ContractError("adam restore: moment count does not match parameters");
  }
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (m[i].size() != params_[i].numel() || v[i].size() != params_[i].numel()) {
      throw ContractError("adam restore: moment shape mismatch for parameter " +
                          std::to_string(i));
    }
  }
  step_ = step;
  m_ = std::move(m);
  v_ = std::move(v);
}

// ---------------------------------------------------------------------------
// Reports

double EvalReport::mean_cd() const {
  if (records.empty()) return 0.0;
  double total = 0.0;
  for (const auto& r : records) total += r.cd;
  return total / static_cast<double>(records.size());
}

double EvalReport::mean_p2m() const {
  if (records.empty()) return 0.0;
  double total = 0.0;
  for (const auto& r : records) total += r.p2m;
  return total / static_cast<double>(records.size());
}

std::string EvalReport::to_table() const {
  std::ostringstream os;
  char line[256];
  std::snprintf(line, sizeof(line), "%-24s %-28s %5s %14s %10s %14s %10s\n", "shape", "noise",
                "iters", "CD", "CDx1e4", "P2M", "P2Mx1e4");
  os << line;
  for (const auto& r : records) {
    std::snprintf(line, sizeof(line), "%-24s %-28s %5d %14.8e %10.4f %14.8e %10.4f\n",
                  r.name.c_str(), r.noise.c_str(), r.iterations, r.cd, r.cd * kReportScale, r.p2m,
                  r.p2m * kReportScale);
    os << line;
  }
  std::snprintf(line, sizeof(line), "%-24s %-28s %5s %14.8e %10.4f %14.8e %10.4f\n", "mean", "",
                "", mean_cd(), mean_cd() * kReportScale, mean_p2m(), mean_p2m() * kReportScale);
  os << line;
  if (!config_hash.empty()) os << "config " << config_hash << '\n';
  return os.str();
}

std::string EvalReport::to_jsonl() const {
  std::string out;
  for (const auto& r : records) {
    nlohmann::ordered_json j;
    j["name"] = r.name;
    j["noise"] = r.noise;
    j["cd"] = r.cd;
    j["p2m"] = r.p2m;
    j["cd_x1e4"] = r.cd * kReportScale;
    j["p2m_x1e4"] = r.p2m * kReportScale;
    j["iterations"] = r.iterations;
    if (!config_hash.empty()) j["config_hash"] = config_hash;
    out += j.dump();
    out += '\n';
  }
  return out;
}

}  // namespace noisetrans
