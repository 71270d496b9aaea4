#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace noisetrans {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_to_string(const Shape& shape);

// Row-major integer matrix used for neighbor lists and gather indices.
struct IndexMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::size_t> data;

  IndexMatrix() = default;
  IndexMatrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0) {}

  std::size_t& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  std::size_t operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
};

namespace detail {
struct TensorNode;
}

// Dense row-major f64 array. Copies share storage; a tensor produced while a
// Tape is active (and depending on a requires_grad tensor) is recorded on it.
class Tensor {
 public:
  Tensor();

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value);

  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t numel() const;
  // Negative axes count from the back.
  std::size_t dim(int axis) const;

  std::span<const double> data() const;
  // Direct write access; only meant for leaves (parameter updates, init).
  std::span<double> mutable_data();
  double item() const;

  bool requires_grad() const;
  void set_requires_grad(bool flag);
  bool has_grad() const;
  // Empty span when no gradient has been accumulated yet.
  std::span<const double> grad() const;
  void zero_grad();

  // Fresh leaf with a copy of the values.
  Tensor detach() const;

  bool same_node(const Tensor& other) const { return node_ == other.node_; }

  explicit Tensor(std::shared_ptr<detail::TensorNode> node);
  const std::shared_ptr<detail::TensorNode>& node() const { return node_; }

 private:
  std::shared_ptr<detail::TensorNode> node_;
};

// Ordered log of differentiable ops executed while active on this thread.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Accumulates d(loss)/d(leaf) into every requires_grad leaf. Intermediate
  // gradients are reset first, so repeated calls add up only on leaves.
  void backward(const Tensor& loss);

  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  void clear();

  std::vector<std::string> op_names() const;
  // Op names in the order the last backward() visited them.
  const std::vector<std::string>& last_backward_order() const { return visited_; }

  struct Entry {
    const char* op;
    std::vector<std::shared_ptr<detail::TensorNode>> inputs;
    std::shared_ptr<detail::TensorNode> output;
    std::function<void()> backward;
  };
  void record(Entry entry);

 private:
  std::vector<Entry> entries_;
  std::vector<std::string> visited_;
};

// Activates a tape for the current thread for the scope's lifetime.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

Tape* active_tape();

// Branches taken by piecewise ops (relu sign, max position, nearest-neighbor
// match). Two evaluations with equal traces lie on the same smooth piece.
struct BranchTrace {
  std::vector<std::size_t> choices;
};

// Records branches into `trace` on the current thread for the scope's lifetime.
class BranchTraceScope {
 public:
  explicit BranchTraceScope(BranchTrace& trace);
  ~BranchTraceScope();
  BranchTraceScope(const BranchTraceScope&) = delete;
  BranchTraceScope& operator=(const BranchTraceScope&) = delete;

 private:
  BranchTrace* previous_;
};

BranchTrace* active_branch_trace();

// Keeps freed buffers inside the process heap. Without this, glibc hands large
// tensor buffers back to the kernel and every op pays fresh page faults.
// Call once at program start; a no-op on other C libraries.
void configure_allocator();

enum class UnaryFn { gelu, sigmoid, relu };

// b may equal a's shape or a suffix of it (bias-style broadcast).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);
Tensor square(const Tensor& x);

Tensor elementwise_unary(const Tensor& x, UnaryFn fn);
inline Tensor gelu(const Tensor& x) { return elementwise_unary(x, UnaryFn::gelu); }
inline Tensor sigmoid(const Tensor& x) { return elementwise_unary(x, UnaryFn::sigmoid); }
inline Tensor relu(const Tensor& x) { return elementwise_unary(x, UnaryFn::relu); }

// [..., m, k] x [..., k, n]; batch dimensions broadcast numpy-style.
Tensor matmul(const Tensor& a, const Tensor& b);

Tensor softmax(const Tensor& x, int axis);
// Normalizes over the last axis; gain and bias have the last axis' length.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps);

// x: [N, d], idx: [M, k] -> [M, k, d].
Tensor gather_rows(const Tensor& x, const IndexMatrix& idx);

// Gradient goes to the first (lowest-index) maximum.
Tensor reduce_max_axis(const Tensor& x, int axis);
Tensor sum_axis(const Tensor& x, int axis);
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

Tensor concat(const std::vector<Tensor>& xs, int axis);
Tensor slice(const Tensor& x, int axis, std::size_t begin, std::size_t end);
Tensor reshape(const Tensor& x, Shape shape);
Tensor permute(const Tensor& x, const std::vector<std::size_t>& axes);

}  // namespace noisetrans
