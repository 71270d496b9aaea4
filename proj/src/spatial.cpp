#include "noisetrans/spatial.hpp"

#include <algorithm>
#include <cstdint>
#include <cmath>
#include <limits>
#include <numeric>

#include "noisetrans/error.hpp"

namespace noisetrans {

bool lexicographic_less(const Vec3& a, const Vec3& b) {
  if (a[0] != b[0]) return a[0] < b[0];
  if (a[1] != b[1]) return a[1] < b[1];
  return a[2] < b[2];
}

bool neighbor_less(const Neighbor& a, const Neighbor& b, std::span<const Vec3> points) {
  if (a.sqdist != b.sqdist) return a.sqdist < b.sqdist;
  const Vec3& pa = points[a.index];
  const Vec3& pb = points[b.index];
  if (pa != pb) return lexicographic_less(pa, pb);
  return a.index < b.index;
}

namespace {

double box_sqdist(const Vec3& q, const Vec3& lo, const Vec3& hi) {
  double d = 0.0;
  for (int i = 0; i < 3; ++i) {
    const double e = q[i] < lo[i] ? lo[i] - q[i] : q[i] > hi[i] ? q[i] - hi[i] : 0.0;
    d += e * e;
  }
  return d;
}

void check_k(std::size_t k, std::size_t n, SelfMode mode) {
  const std::size_t available = mode == SelfMode::exclude_self && n > 0 ? n - 1 : n;
  if (k > available) {
    throw ArgumentError("knn: k = " + std::to_string(k) + " exceeds the " +
                        std::to_string(available) + " available neighbors");
  }
}

KnnResult pack(std::vector<std::vector<Neighbor>> rows, std::size_t k) {
  KnnResult out;
  out.indices = IndexMatrix(rows.size(), k);
  out.distances.resize(rows.size() * k);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t j = 0; j < k; ++j) {
      out.indices(r, j) = rows[r][j].index;
      out.distances[r * k + j] = std::sqrt(rows[r][j].sqdist);
    }
  }
  return out;
}

std::vector<Neighbor> brute_force_row(std::span<const Vec3> cloud, const Vec3& q, std::size_t k,
                                      std::optional<std::size_t> exclude) {
  std::vector<Neighbor> all;
  all.reserve(cloud.size());
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    if (exclude && *exclude == i) continue;
    all.push_back({i, squared_distance(q, cloud[i])});
  }
  auto less = [&](const Neighbor& a, const Neighbor& b) { return neighbor_less(a, b, cloud); };
  std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(k), all.end(), less);
  all.resize(k);
  return all;
}

}  // namespace

// ---------------------------------------------------------------------------
// KdTree

KdTree::KdTree(std::span<const Vec3> points, std::size_t leaf_size)
    : points_(points.begin(), points.end()), leaf_size_(std::max<std::size_t>(leaf_size, 1)) {
  order_.resize(points_.size());
  std::iota(order_.begin(), order_.end(), std::size_t{0});
  // Canonical starting order, so the tree depends on coordinates, not storage order.
  std::sort(order_.begin(), order_.end(), [&](std::size_t a, std::size_t b) {
    if (points_[a] != points_[b]) return lexicographic_less(points_[a], points_[b]);
    return a < b;
  });
  if (!points_.empty()) {
    nodes_.reserve(2 * points_.size() / leaf_size_ + 1);
    build(0, points_.size());
  }
}

int KdTree::build(std::size_t begin, std::size_t end) {
  Node node;
  node.begin = begin;
  node.end = end;
  node.lo = node.hi = points_[order_[begin]];
  for (std::size_t i = begin; i < end; ++i) {
    const Vec3& p = points_[order_[i]];
    for (int a = 0; a < 3; ++a) {
      node.lo[a] = std::min(node.lo[a], p[a]);
      node.hi[a] = std::max(node.hi[a], p[a]);
    }
  }
  const int id = static_cast<int>(nodes_.size());
  nodes_.push_back(node);
  if (end - begin <= leaf_size_) return id;

  int axis = 0;
  for (int a = 1; a < 3; ++a)
    if (node.hi[a] - node.lo[a] > node.hi[axis] - node.lo[axis]) axis = a;
  const std::size_t mid = begin + (end - begin) / 2;
  std::nth_element(order_.begin() + static_cast<std::ptrdiff_t>(begin),
                   order_.begin() + static_cast<std::ptrdiff_t>(mid),
                   order_.begin() + static_cast<std::ptrdiff_t>(end),
                   [&](std::size_t a, std::size_t b) {
                     const Vec3& pa = points_[a];
                     const Vec3& pb = points_[b];
                     if (pa[axis] != pb[axis]) return pa[axis] < pb[axis];
                     if (pa != pb) return lexicographic_less(pa, pb);
                     return a < b;
                   });
  const int left = build(begin, mid);
  const int right = build(mid, end);
  nodes_[static_cast<std::size_t>(id)].left = left;
  nodes_[static_cast<std::size_t>(id)].right = right;
  return id;
}

void KdTree::search(int node_id, const Vec3& q, std::size_t k, std::optional<std::size_t> exclude,
                    std::vector<Neighbor>& heap) const {
  const Node& node = nodes_[static_cast<std::size_t>(node_id)];
  auto less = [&](const Neighbor& a, const Neighbor& b) { return neighbor_less(a, b, points_); };
  if (heap.size() == k && box_sqdist(q, node.lo, node.hi) > heap.front().sqdist) return;

  if (node.left < 0) {
    for (std::size_t i = node.begin; i < node.end; ++i) {
      const std::size_t idx = order_[i];
      if (exclude && *exclude == idx) continue;
      const Neighbor cand{idx, squared_distance(q, points_[idx])};
      if (heap.size() < k) {
        heap.push_back(cand);
        std::push_heap(heap.begin(), heap.end(), less);
      } else if (less(cand, heap.front())) {
        std::pop_heap(heap.begin(), heap.end(), less);
        heap.back() = cand;
        std::push_heap(heap.begin(), heap.end(), less);
      }
    }
    return;
  }
  const Node& l = nodes_[static_cast<std::size_t>(node.left)];
  const Node& r = nodes_[static_cast<std::size_t>(node.right)];
  const bool left_first = box_sqdist(q, l.lo, l.hi) <= box_sqdist(q, r.lo, r.hi);
  search(left_first ? node.left : node.right, q, k, exclude, heap);
  search(left_first ? node.right : node.left, q, k, exclude, heap);
}

std::vector<Neighbor> KdTree::query(const Vec3& q, std::size_t k,
                                    std::optional<std::size_t> exclude) const {
  const std::size_t available =
      points_.size() - (exclude && *exclude < points_.size() ? 1 : 0);
  if (k > available) {
    throw ArgumentError("knn: k = " + std::to_string(k) + " exceeds the " +
                        std::to_string(available) + " available neighbors");
  }
  std::vector<Neighbor> heap;
  if (k == 0) return heap;
  heap.reserve(k);
  search(0, q, k, exclude, heap);
  std::sort_heap(heap.begin(), heap.end(),
                 [&](const Neighbor& a, const Neighbor& b) { return neighbor_less(a, b, points_); });
  return heap;
}

Neighbor KdTree::nearest(const Vec3& q) const { return query(q, 1).front(); }

// ---------------------------------------------------------------------------
// KNN entry points

KnnResult knn_query(std::span<const Vec3> cloud, std::span<const Vec3> queries, std::size_t k) {
  check_k(k, cloud.size(), SelfMode::include_self);
  std::vector<std::vector<Neighbor>> rows(queries.size());
  if (!queries.empty()) {
    const KdTree tree(cloud);
    for (std::size_t i = 0; i < queries.size(); ++i) rows[i] = tree.query(queries[i], k);
  }
  return pack(std::move(rows), k);
}

KnnResult knn_self(std::span<const Vec3> cloud, std::size_t k, SelfMode mode) {
  check_k(k, cloud.size(), mode);
  std::vector<std::vector<Neighbor>> rows(cloud.size());
  if (!cloud.empty()) {
    const KdTree tree(cloud);
    for (std::size_t i = 0; i < cloud.size(); ++i) {
      rows[i] = tree.query(cloud[i], k,
                           mode == SelfMode::exclude_self ? std::optional<std::size_t>(i)
                                                          : std::nullopt);
    }
  }
  return pack(std::move(rows), k);
}

KnnResult knn_brute_force(std::span<const Vec3> cloud, std::span<const Vec3> queries,
                          std::size_t k) {
  check_k(k, cloud.size(), SelfMode::include_self);
  std::vector<std::vector<Neighbor>> rows(queries.size());
  for (std::size_t i = 0; i < queries.size(); ++i)
    rows[i] = brute_force_row(cloud, queries[i], k, std::nullopt);
  return pack(std::move(rows), k);
}

KnnResult knn_brute_force_self(std::span<const Vec3> cloud, std::size_t k, SelfMode mode) {
  check_k(k, cloud.size(), mode);
  std::vector<std::vector<Neighbor>> rows(cloud.size());
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    rows[i] = brute_force_row(cloud, cloud[i], k,
                              mode == SelfMode::exclude_self ? std::optional<std::size_t>(i)
                                                             : std::nullopt);
  }
  return pack(std::move(rows), k);
}

// ---------------------------------------------------------------------------
// Sampling and patches

namespace {

// argmax of score over candidates; ties to the lexicographically smallest point.
std::size_t argmax_lexicographic(std::span<const Vec3> cloud, std::span<const double> score,
                                 std::span<const std::uint8_t> eligible) {
  std::size_t best = cloud.size();
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    if (!eligible.empty() && !eligible[i]) continue;
    if (best == cloud.size() || score[i] > score[best] ||
        (score[i] == score[best] && lexicographic_less(cloud[i], cloud[best]))) {
      best = i;
    }
  }
  return best;
}

}  // namespace

std::vector<std::size_t> farthest_point_sample(std::span<const Vec3> cloud, std::size_t count) {
  if (count > cloud.size()) {
    throw ArgumentError("farthest_point_sample: count " + std::to_string(count) + " > N = " +
                        std::to_string(cloud.size()));
  }
  std::vector<std::size_t> picks;
  if (count == 0) return picks;
  picks.reserve(count);
  const Vec3 c = centroid(cloud);
  std::vector<double> score(cloud.size());
  for (std::size_t i = 0; i < cloud.size(); ++i) score[i] = squared_distance(cloud[i], c);
  std::size_t pick = argmax_lexicographic(cloud, score, {});
  std::vector<double> min_d(cloud.size(), std::numeric_limits<double>::infinity());
  std::vector<std::uint8_t> avail(cloud.size(), 1);
  for (;;) {
    picks.push_back(pick);
    avail[pick] = false;
    if (picks.size() == count) break;
    for (std::size_t i = 0; i < cloud.size(); ++i)
      min_d[i] = std::min(min_d[i], squared_distance(cloud[i], cloud[pick]));
    pick = argmax_lexicographic(cloud, min_d, avail);
  }
  return picks;
}

std::vector<Patch> extract_patches(std::span<const Vec3> cloud, std::size_t patch_size) {
  if (cloud.empty()) throw ArgumentError("extract_patches: empty cloud");
  if (patch_size == 0) throw ArgumentError("extract_patches: patch_size must be >= 1");
  const std::size_t n = cloud.size();
  const std::size_t k = std::min(patch_size, n);
  const KdTree tree(cloud);

  std::vector<double> score(n);
  const Vec3 c = centroid(cloud);
  for (std::size_t i = 0; i < n; ++i) score[i] = squared_distance(cloud[i], c);
  std::vector<std::uint8_t> uncovered(n, 1);
  std::size_t remaining = n;
  std::vector<double> min_d(n, std::numeric_limits<double>::infinity());

  std::vector<Patch> patches;
  std::size_t seed = argmax_lexicographic(cloud, score, {});
  while (remaining > 0) {
    Patch patch;
    patch.seed_index = seed;
    const auto nbrs = tree.query(cloud[seed], k);
    patch.member_indices.reserve(k);
    std::vector<Vec3> members;
    members.reserve(k);
    for (const Neighbor& nb : nbrs) {
      patch.member_indices.push_back(nb.index);
      members.push_back(cloud[nb.index]);
      if (uncovered[nb.index]) {
        uncovered[nb.index] = false;
        --remaining;
      }
    }
    patch.center = centroid(members);
    double max_sq = 0.0;
    for (const Vec3& p : members) max_sq = std::max(max_sq, squared_distance(p, patch.center));
    patch.scale = max_sq > 0.0 ? std::sqrt(max_sq) : 1.0;
    patch.local_coords.reserve(k);
    for (const Vec3& p : members) patch.local_coords.push_back(patch.to_local(p));
    patches.push_back(std::move(patch));
    if (remaining == 0) break;

    for (std::size_t i = 0; i < n; ++i)
      min_d[i] = std::min(min_d[i], squared_distance(cloud[i], cloud[seed]));
    seed = argmax_lexicographic(cloud, min_d, uncovered);
  }
  return patches;
}

std::vector<Vec3> stitch_patches(std::span<const Patch> patches,
                                 std::span<const std::vector<Vec3>> denoised_locals,
                                 std::size_t n) {
  if (patches.size() != denoised_locals.size()) {
    throw ContractError("stitch_patches: " + std::to_string(patches.size()) + " patches but " +
                        std::to_string(denoised_locals.size()) + " outputs");
  }
  std::vector<Vec3> acc(n, Vec3{0.0, 0.0, 0.0});
  std::vector<std::size_t> hits(n, 0);
  for (std::size_t p = 0; p < patches.size(); ++p) {
    const Patch& patch = patches[p];
    if (denoised_locals[p].size() != patch.member_indices.size()) {
      throw ContractError("stitch_patches: output " + std::to_string(p) + " has wrong length");
    }
    for (std::size_t j = 0; j < patch.member_indices.size(); ++j) {
      const std::size_t idx = patch.member_indices[j];
      if (idx >= n) throw ContractError("stitch_patches: member index out of range");
      acc[idx] = acc[idx] + patch.to_parent(denoised_locals[p][j]);
      ++hits[idx];
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (hits[i] == 0) {
      throw ContractError("stitch_patches: point " + std::to_string(i) + " is in no patch");
    }
    acc[i] = acc[i] * (1.0 / static_cast<double>(hits[i]));
  }
  return acc;
}

}  // namespace noisetrans
