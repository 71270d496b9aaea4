#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "noisetrans/geometry.hpp"
#include "noisetrans/tensor.hpp"

namespace noisetrans {

struct Neighbor {
  std::size_t index = 0;
  double sqdist = 0.0;
};

// Strict ordering used for every neighbor ranking: squared distance, then the
// candidate's (x, y, z) lexicographically, then storage index (only reached by
// exact duplicates, whose coordinates are interchangeable anyway).
bool neighbor_less(const Neighbor& a, const Neighbor& b, std::span<const Vec3> points);

bool lexicographic_less(const Vec3& a, const Vec3& b);

// Static kd-tree over a copy of the points. Immutable after construction, so
// concurrent queries are safe.
class KdTree {
 public:
  explicit KdTree(std::span<const Vec3> points, std::size_t leaf_size = 8);

  std::size_t size() const { return points_.size(); }
  std::span<const Vec3> points() const { return points_; }

  // k nearest stored points to q in ascending neighbor_less order, skipping
  // the stored index `exclude` when given. Requires k <= available points.
  std::vector<Neighbor> query(const Vec3& q, std::size_t k,
                              std::optional<std::size_t> exclude = std::nullopt) const;
  Neighbor nearest(const Vec3& q) const;

 private:
  struct Node {
    Vec3 lo{}, hi{};
    std::size_t begin = 0, end = 0;
    int left = -1, right = -1;
  };

  int build(std::size_t begin, std::size_t end);
  void search(int node, const Vec3& q, std::size_t k, std::optional<std::size_t> exclude,
              std::vector<Neighbor>& heap) const;

  std::vector<Vec3> points_;
  std::vector<std::size_t> order_;
  std::vector<Node> nodes_;
  std::size_t leaf_size_;
};

enum class SelfMode { include_self, exclude_self };

struct KnnResult {
  IndexMatrix indices;            // [M, k]
  std::vector<double> distances;  // [M, k] Euclidean, ascending per row
};

KnnResult knn_query(std::span<const Vec3> cloud, std::span<const Vec3> queries, std::size_t k);
// Queries are the cloud's own points; in exclude_self mode query i never returns i.
KnnResult knn_self(std::span<const Vec3> cloud, std::size_t k, SelfMode mode);

// Exhaustive scans with the same ordering contract; used as test oracles.
KnnResult knn_brute_force(std::span<const Vec3> cloud, std::span<const Vec3> queries,
                          std::size_t k);
KnnResult knn_brute_force_self(std::span<const Vec3> cloud, std::size_t k, SelfMode mode);

// Greedy max-min selection. The first pick is the point farthest from the
// centroid; ties at every step go to the lexicographically smallest point.
std::vector<std::size_t> farthest_point_sample(std::span<const Vec3> cloud, std::size_t count);

struct Patch {
  std::size_t seed_index = 0;
  std::vector<std::size_t> member_indices;  // nearest-first from the seed
  std::vector<Vec3> local_coords;           // (parent - center) / scale
  Vec3 center{};
  double scale = 1.0;

  Vec3 to_parent(const Vec3& local) const { return local * scale + center; }
  Vec3 to_local(const Vec3& parent) const { return (parent - center) * (1.0 / scale); }
};

// Seeds patches in farthest-point order among still-uncovered points until
// every point is in some patch. Each patch holds min(patch_size, N) nearest
// neighbors of its seed (seed included), centered on their centroid and
// scaled to unit max norm.
std::vector<Patch> extract_patches(std::span<const Vec3> cloud, std::size_t patch_size);

// Per point, the unweighted mean of its denormalized positions over all
// patches that contain it.
std::vector<Vec3> stitch_patches(std::span<const Patch> patches,
                                 std::span<const std::vector<Vec3>> denoised_locals,
                                 std::size_t n);

}  // namespace noisetrans
