#include "noisetrans/tensor.hpp"

#include <algorithm>
#if defined(__GLIBC__)
#include <malloc.h>
#endif
#include <cmath>
#include <cstdint>
#include <cstring>
#include <numeric>
#include <sstream>

#include "noisetrans/error.hpp"

namespace noisetrans {

namespace detail {

struct TensorNode {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  bool is_leaf = true;
};

}  // namespace detail

using detail::TensorNode;

namespace {

thread_local Tape* g_active_tape = nullptr;

std::vector<double>& grad_of(TensorNode* node) {
  if (node->grad.empty()) node->grad.assign(node->value.size(), 0.0);
  return node->grad;
}

std::size_t normalize_axis(int axis, std::size_t rank) {
  const int r = static_cast<int>(rank);
  const int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for rank " +
                         std::to_string(rank));
  }
  return static_cast<std::size_t>(a);
}

Tensor make_tensor(Shape shape, std::vector<double> values) {
  auto node = std::make_shared<TensorNode>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  return Tensor(std::move(node));
}

bool any_requires_grad(std::initializer_list<const Tensor*> inputs) {
  return std::any_of(inputs.begin(), inputs.end(),
                     [](const Tensor* t) { return t->requires_grad(); });
}

// Records `out` on the active tape when some input participates in autodiff.
// Returns true if recorded; callers only build the backward closure then.
template <typename Backward>
void record(const char* op, std::initializer_list<const Tensor*> inputs, const Tensor& out,
            Backward&& backward) {
  Tape* tape = g_active_tape;
  if (tape == nullptr || !any_requires_grad(inputs)) return;
  out.node()->requires_grad = true;
  out.node()->is_leaf = false;
  Tape::Entry entry{op, {}, out.node(), std::forward<Backward>(backward)};
  for (const Tensor* t : inputs) entry.inputs.push_back(t->node());
  tape->record(std::move(entry));
}

void record_many(const char* op, const std::vector<Tensor>& inputs, const Tensor& out,
                 std::function<void()> backward) {
  Tape* tape = g_active_tape;
  if (tape == nullptr) return;
  if (std::none_of(inputs.begin(), inputs.end(),
                   [](const Tensor& t) { return t.requires_grad(); }))
    return;
  out.node()->requires_grad = true;
  out.node()->is_leaf = false;
  Tape::Entry entry{op, {}, out.node(), std::move(backward)};
  for (const Tensor& t : inputs) entry.inputs.push_back(t.node());
  tape->record(std::move(entry));
}

bool wants_grad(const TensorNode* n) { return n->requires_grad; }

// Branch-free exponent test so the scan vectorizes.
bool all_finite(const std::vector<double>& values) {
  constexpr std::uint64_t kExponent = 0x7ff0000000000000ULL;
  std::uint64_t bad = 0;
  for (double v : values) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof bits);
    bad |= static_cast<std::uint64_t>((bits & kExponent) == kExponent);
  }
  return bad == 0;
}

struct AxisSplit {
  std::size_t outer = 1;
  std::size_t len = 1;
  std::size_t inner = 1;
};

AxisSplit split_at(const Shape& shape, std::size_t axis) {
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.len = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

bool is_suffix(const Shape& full, const Shape& suffix) {
  if (suffix.size() > full.size()) return false;
  return std::equal(suffix.rbegin(), suffix.rend(), full.rbegin());
}

enum class BinaryKind { add, sub, mul };

Tensor binary(const Tensor& a, const Tensor& b, BinaryKind kind, const char* name) {
  if (!is_suffix(a.shape(), b.shape())) {
    throw DimensionError(std::string(name) + ": shapes " + shape_to_string(a.shape()) + " and " +
                         shape_to_string(b.shape()) + " are not broadcast-compatible");
  }
  const double* av = a.data().data();
  const double* bv = b.data().data();
  const std::size_t n = a.numel();
  const std::size_t period = std::max<std::size_t>(b.numel(), 1);
  const std::size_t blocks = n / period;
  std::vector<double> out(n);
  for (std::size_t blk = 0; blk < blocks; ++blk) {
    const double* x = av + blk * period;
    double* o = out.data() + blk * period;
    switch (kind) {
      case BinaryKind::add:
        for (std::size_t j = 0; j < period; ++j) o[j] = x[j] + bv[j];
        break;
      case BinaryKind::sub:
        for (std::size_t j = 0; j < period; ++j) o[j] = x[j] - bv[j];
        break;
      case BinaryKind::mul:
        for (std::size_t j = 0; j < period; ++j) o[j] = x[j] * bv[j];
        break;
    }
  }
  Tensor result = make_tensor(a.shape(), std::move(out));
  TensorNode* an = a.node().get();
  TensorNode* bn = b.node().get();
  TensorNode* on = result.node().get();
  record(name, {&a, &b}, result, [an, bn, on, kind, period, blocks]() {
    const double* g = on->grad.data();
    if (wants_grad(an)) {
      double* ga = grad_of(an).data();
      const double* y = bn->value.data();
      for (std::size_t blk = 0; blk < blocks; ++blk) {
        const double* gb = g + blk * period;
        double* dst = ga + blk * period;
        if (kind == BinaryKind::mul) {
          for (std::size_t j = 0; j < period; ++j) dst[j] += gb[j] * y[j];
        } else {
          for (std::size_t j = 0; j < period; ++j) dst[j] += gb[j];
        }
      }
    }
    if (wants_grad(bn)) {
      double* gbv = grad_of(bn).data();
      const double* x = an->value.data();
      for (std::size_t blk = 0; blk < blocks; ++blk) {
        const double* gb = g + blk * period;
        switch (kind) {
          case BinaryKind::add:
            for (std::size_t j = 0; j < period; ++j) gbv[j] += gb[j];
            break;
          case BinaryKind::sub:
            for (std::size_t j = 0; j < period; ++j) gbv[j] -= gb[j];
            break;
          case BinaryKind::mul: {
            const double* xb = x + blk * period;
            for (std::size_t j = 0; j < period; ++j) gbv[j] += gb[j] * xb[j];
            break;
          }
        }
      }
    }
  });
  return result;
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

constexpr double kInvSqrt2Pi = 0.39894228040143267794;

}  // namespace

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  if (shape.size() == 1) os << ',';
  os << ')';
  return os.str();
}

// ---------------------------------------------------------------------------
// Tensor

Tensor::Tensor() : node_(std::make_shared<TensorNode>()) {
  node_->value.assign(1, 0.0);
}

Tensor::Tensor(std::shared_ptr<detail::TensorNode> node) : node_(std::move(node)) {}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const std::size_t n = shape_numel(shape);
  Tensor t = make_tensor(std::move(shape), std::vector<double>(n, value));
  t.node_->requires_grad = requires_grad;
  return t;
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  if (shape_numel(shape) != values.size()) {
    throw DimensionError("shape " + shape_to_string(shape) + " needs " +
                         std::to_string(shape_numel(shape)) + " values, got " +
                         std::to_string(values.size()));
  }
  Tensor t = make_tensor(std::move(shape), std::move(values));
  t.node_->requires_grad = requires_grad;
  return t;
}

Tensor Tensor::scalar(double value) { return make_tensor({}, {value}); }

const Shape& Tensor::shape() const { return node_->shape; }
std::size_t Tensor::numel() const { return node_->value.size(); }

std::size_t Tensor::dim(int axis) const {
  return node_->shape[normalize_axis(axis, node_->shape.size())];
}

std::span<const double> Tensor::data() const { return node_->value; }
std::span<double> Tensor::mutable_data() { return node_->value; }

double Tensor::item() const {
  if (numel() != 1) {
    throw ContractError("item() on tensor of shape " + shape_to_string(shape()));
  }
  return node_->value[0];
}

bool Tensor::requires_grad() const { return node_->requires_grad; }
void Tensor::set_requires_grad(bool flag) { node_->requires_grad = flag; }
bool Tensor::has_grad() const { return !node_->grad.empty(); }
std::span<const double> Tensor::grad() const { return node_->grad; }
void Tensor::zero_grad() { node_->grad.clear(); }

Tensor Tensor::detach() const { return make_tensor(node_->shape, node_->value); }

// ---------------------------------------------------------------------------
// Tape

void Tape::record(Entry entry) { entries_.push_back(std::move(entry)); }

void Tape::clear() {
  entries_.clear();
  visited_.clear();
}

std::vector<std::string> Tape::op_names() const {
  std::vector<std::string> names;
  names.reserve(entries_.size());
  for (const auto& e : entries_) names.emplace_back(e.op);
  return names;
}

void Tape::backward(const Tensor& loss) {
  if (loss.numel() != 1) {
    throw ContractError("backward() needs a scalar loss, got shape " +
                        shape_to_string(loss.shape()));
  }
  if (entries_.empty()) throw ContractError("backward() on an empty tape");
  if (!loss.requires_grad()) throw ContractError("loss does not depend on any parameter");

  for (auto& e : entries_) e.output->grad.clear();
  grad_of(loss.node().get())[0] += 1.0;

  visited_.clear();
  visited_.reserve(entries_.size());
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
    visited_.emplace_back(it->op);
    if (it->output->grad.empty()) continue;
    it->backward();
    for (const auto& in : it->inputs) {
      if (!all_finite(in->grad)) {
        throw NumericError(std::string("non-finite gradient produced by op '") + it->op + "'");
      }
    }
  }
}

TapeScope::TapeScope(Tape& tape) : previous_(g_active_tape) { g_active_tape = &tape; }
TapeScope::~TapeScope() { g_active_tape = previous_; }

Tape* active_tape() { return g_active_tape; }

namespace {
thread_local BranchTrace* g_branch_trace = nullptr;
}

BranchTraceScope::BranchTraceScope(BranchTrace& trace) : previous_(g_branch_trace) {
  g_branch_trace = &trace;
}
BranchTraceScope::~BranchTraceScope() { g_branch_trace = previous_; }

BranchTrace* active_branch_trace() { return g_branch_trace; }

void configure_allocator() {
#if defined(__GLIBC__)
  constexpr int kThreshold = 1 << 30;
  mallopt(M_MMAP_THRESHOLD, kThreshold);
  mallopt(M_TRIM_THRESHOLD, kThreshold);
#endif
}

// ---------------------------------------------------------------------------
// Elementwise

Tensor add(const Tensor& a, const Tensor& b) { return binary(a, b, BinaryKind::add, "add"); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(a, b, BinaryKind::sub, "sub"); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(a, b, BinaryKind::mul, "mul"); }

Tensor scale(const Tensor& x, double factor) {
  const auto xv = x.data();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = xv[i] * factor;
  Tensor result = make_tensor(x.shape(), std::move(out));
  TensorNode* xn = x.node().get();
  TensorNode* on = result.node().get();
  record("scale", {&x}, result, [xn, on, factor]() {
    auto& gx = grad_of(xn);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += on->grad[i] * factor;
  });
  return result;
}

Tensor square(const Tensor& x) {
  const auto xv = x.data();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = xv[i] * xv[i];
  Tensor result = make_tensor(x.shape(), std::move(out));
  TensorNode* xn = x.node().get();
  TensorNode* on = result.node().get();
  record("square", {&x}, result, [xn, on]() {
    auto& gx = grad_of(xn);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += 2.0 * xn->value[i] * on->grad[i];
  });
  return result;
}

Tensor elementwise_unary(const Tensor& x, UnaryFn fn) {
  const auto xv = x.data();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) {
    const double v = xv[i];
    switch (fn) {
      case UnaryFn::gelu: out[i] = v * normal_cdf(v); break;
      case UnaryFn::sigmoid: out[i] = 1.0 / (1.0 + std::exp(-v)); break;
      case UnaryFn::relu: out[i] = v > 0.0 ? v : 0.0; break;
    }
  }
  if (fn == UnaryFn::relu && g_branch_trace) {
    for (double v : xv) g_branch_trace->choices.push_back(v > 0.0);
  }
  Tensor result = make_tensor(x.shape(), std::move(out));
  TensorNode* xn = x.node().get();
  TensorNode* on = result.node().get();
  const char* name = fn == UnaryFn::gelu ? "gelu" : fn == UnaryFn::sigmoid ? "sigmoid" : "relu";
  record(name, {&x}, result, [xn, on, fn]() {
    auto& gx = grad_of(xn);
    const auto& g = on->grad;
    for (std::size_t i = 0; i < gx.size(); ++i) {
      const double v = xn->value[i];
      double d = 0.0;
      switch (fn) {
        case UnaryFn::gelu:
          d = normal_cdf(v) + v * kInvSqrt2Pi * std::exp(-0.5 * v * v);
          break;
        case UnaryFn::sigmoid: {
          const double s = on->value[i];
          d = s * (1.0 - s);
          break;
        }
        case UnaryFn::relu: d = v > 0.0 ? 1.0 : 0.0; break;
      }
      gx[i] += g[i] * d;
    }
  });
  return result;
}

// ---------------------------------------------------------------------------
// matmul

namespace {

// C[i, j] += sum_p A(i, p) * B[p * n + j] with A addressed through (a_rs, a_cs)
// and B, C row-major. Full 8-column blocks keep two rows of accumulators in
// vector registers; the remainder runs scalar. The AVX2 clone performs the
// same sequence of float operations, so results do not depend on dispatch.
using Pack4 = double __attribute__((vector_size(32)));

inline Pack4 load4(const double* p) {
  Pack4 v;
  std::memcpy(&v, p, sizeof v);
  return v;
}

inline void add_store4(double* p, Pack4 v) {
  Pack4 cur = load4(p);
  cur += v;
  std::memcpy(p, &cur, sizeof cur);
}

__attribute__((target_clones("avx2", "default")))
void gemm_accumulate(std::size_t m, std::size_t n, std::size_t k, const double* A,
                     std::size_t a_rs, std::size_t a_cs, const double* B, double* C) {
  const std::size_t full = n - n % 8;
  std::size_t i = 0;
  for (; i + 2 <= m; i += 2) {
    const double* a0 = A + i * a_rs;
    const double* a1 = a0 + a_rs;
    double* c0 = C + i * n;
    double* c1 = c0 + n;
    for (std::size_t j0 = 0; j0 < full; j0 += 8) {
      Pack4 x0 = {}, x1 = {}, y0 = {}, y1 = {};
      for (std::size_t p = 0; p < k; ++p) {
        const double* b = B + p * n + j0;
        const Pack4 b0 = load4(b), b1 = load4(b + 4);
        const double s0 = a0[p * a_cs];
        const double s1 = a1[p * a_cs];
        x0 += s0 * b0;
        x1 += s0 * b1;
        y0 += s1 * b0;
        y1 += s1 * b1;
      }
      add_store4(c0 + j0, x0);
      add_store4(c0 + j0 + 4, x1);
      add_store4(c1 + j0, y0);
      add_store4(c1 + j0 + 4, y1);
    }
  }
  for (; i < m; ++i) {
    const double* a0 = A + i * a_rs;
    double* c0 = C + i * n;
    for (std::size_t j0 = 0; j0 < full; j0 += 8) {
      Pack4 x0 = {}, x1 = {};
      for (std::size_t p = 0; p < k; ++p) {
        const double* b = B + p * n + j0;
        const double s0 = a0[p * a_cs];
        x0 += s0 * load4(b);
        x1 += s0 * load4(b + 4);
      }
      add_store4(c0 + j0, x0);
      add_store4(c0 + j0 + 4, x1);
    }
  }
  if (full < n) {
    for (std::size_t r = 0; r < m; ++r) {
      const double* a0 = A + r * a_rs;
      double* c0 = C + r * n;
      for (std::size_t j = full; j < n; ++j) {
        double acc = 0.0;
        for (std::size_t p = 0; p < k; ++p) acc += a0[p * a_cs] * B[p * n + j];
        c0[j] += acc;
      }
    }
  }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  if (as.size() < 2 || bs.size() < 2 || as.back() != bs[bs.size() - 2]) {
    throw DimensionError("matmul: incompatible shapes " + shape_to_string(as) + " and " +
                         shape_to_string(bs));
  }
  std::size_t m = as[as.size() - 2];
  const std::size_t k = as.back();
  const std::size_t n = bs.back();

  const Shape abatch(as.begin(), as.end() - 2);
  const Shape bbatch(bs.begin(), bs.end() - 2);
  const std::size_t rank = std::max(abatch.size(), bbatch.size());
  Shape obatch(rank, 1);
  for (std::size_t i = 0; i < rank; ++i) {
    const std::size_t ai = i + abatch.size() >= rank ? abatch[i + abatch.size() - rank] : 1;
    const std::size_t bi = i + bbatch.size() >= rank ? bbatch[i + bbatch.size() - rank] : 1;
    if (ai != bi && ai != 1 && bi != 1) {
      throw DimensionError("matmul: batch dimensions of " + shape_to_string(as) + " and " +
                           shape_to_string(bs) + " do not broadcast");
    }
    obatch[i] = std::max(ai, bi);
  }
  std::size_t nbatch = shape_numel(obatch);

  // Per output batch, offsets (in matrices) into a and b.
  std::vector<std::size_t> aoff(nbatch), boff(nbatch);
  {
    std::vector<std::size_t> idx(rank, 0);
    for (std::size_t ob = 0; ob < nbatch; ++ob) {
      std::size_t ao = 0, bo = 0;
      for (std::size_t i = 0; i < rank; ++i) {
        if (i + abatch.size() >= rank) {
          const std::size_t d = abatch[i + abatch.size() - rank];
          ao = ao * d + (d == 1 ? 0 : idx[i]);
        }
        if (i + bbatch.size() >= rank) {
          const std::size_t d = bbatch[i + bbatch.size() - rank];
          bo = bo * d + (d == 1 ? 0 : idx[i]);
        }
      }
      aoff[ob] = ao;
      boff[ob] = bo;
      for (std::size_t i = rank; i-- > 0;) {
        if (++idx[i] < obatch[i]) break;
        idx[i] = 0;
      }
    }
  }

  Shape oshape = obatch;
  oshape.push_back(m);
  oshape.push_back(n);
  // An unbatched right operand lets the batch fold into rows of one product.
  if (bbatch.empty() && nbatch > 1) {
    m *= nbatch;
    nbatch = 1;
    aoff.assign(1, 0);
    boff.assign(1, 0);
  }
  std::vector<double> out(nbatch * m * n, 0.0);
  const double* av = a.data().data();
  const double* bv = b.data().data();
  for (std::size_t ob = 0; ob < nbatch; ++ob) {
    const double* A = av + aoff[ob] * m * k;
    const double* B = bv + boff[ob] * k * n;
    gemm_accumulate(m, n, k, A, k, 1, B, out.data() + ob * m * n);
  }

  Tensor result = make_tensor(std::move(oshape), std::move(out));
  TensorNode* an = a.node().get();
  TensorNode* bn = b.node().get();
  TensorNode* on = result.node().get();
  record("matmul", {&a, &b}, result,
         [an, bn, on, aoff = std::move(aoff), boff = std::move(boff), m, k, n, nbatch]() {
           const double* G = on->grad.data();
           double* gA = wants_grad(an) ? grad_of(an).data() : nullptr;
           double* gB = wants_grad(bn) ? grad_of(bn).data() : nullptr;
           for (std::size_t ob = 0; ob < nbatch; ++ob) {
             const double* A = an->value.data() + aoff[ob] * m * k;
             const double* B = bn->value.data() + boff[ob] * k * n;
             const double* Gb = G + ob * m * n;
             if (gA) {
               double* dA = gA + aoff[ob] * m * k;
               std::vector<double> bt(n * k);
               for (std::size_t p = 0; p < k; ++p) {
                 for (std::size_t j = 0; j < n; ++j) bt[j * k + p] = B[p * n + j];
               }
               gemm_accumulate(m, k, n, Gb, n, 1, bt.data(), dA);
             }
             if (gB) {
               double* dB = gB + boff[ob] * k * n;
               gemm_accumulate(k, n, m, A, 1, k, Gb, dB);
             }
           }
         });
  return result;
}

// ---------------------------------------------------------------------------
// Normalizations

Tensor softmax(const Tensor& x, int axis) {
  const std::size_t ax = normalize_axis(axis, x.rank());
  const AxisSplit s = split_at(x.shape(), ax);
  const auto xv = x.data();
  std::vector<double> out(xv.size());
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t in = 0; in < s.inner; ++in) {
      const std::size_t base = o * s.len * s.inner + in;
      double mx = xv[base];
      for (std::size_t j = 1; j < s.len; ++j) mx = std::max(mx, xv[base + j * s.inner]);
      double total = 0.0;
      for (std::size_t j = 0; j < s.len; ++j) {
        const double e = std::exp(xv[base + j * s.inner] - mx);
        out[base + j * s.inner] = e;
        total += e;
      }
      for (std::size_t j = 0; j < s.len; ++j) out[base + j * s.inner] /= total;
    }
  }
  Tensor result = make_tensor(x.shape(), std::move(out));
  TensorNode* xn = x.node().get();
  TensorNode* on = result.node().get();
  record("softmax", {&x}, result, [xn, on, s]() {
    auto& gx = grad_of(xn);
    const auto& y = on->value;
    const auto& g = on->grad;
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t in = 0; in < s.inner; ++in) {
        const std::size_t base = o * s.len * s.inner + in;
        double dot = 0.0;
        for (std::size_t j = 0; j < s.len; ++j) {
          const std::size_t idx = base + j * s.inner;
          dot += g[idx] * y[idx];
        }
        for (std::size_t j = 0; j < s.len; ++j) {
          const std::size_t idx = base + j * s.inner;
          gx[idx] += y[idx] * (g[idx] - dot);
        }
      }
    }
  });
  return result;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  if (x.rank() == 0) throw DimensionError("layer_norm: scalar input");
  const std::size_t d = x.shape().back();
  if (gain.shape() != Shape{d} || bias.shape() != Shape{d}) {
    throw DimensionError("layer_norm: gain " + shape_to_string(gain.shape()) + " / bias " +
                         shape_to_string(bias.shape()) + " must match last axis of " +
                         shape_to_string(x.shape()));
  }
  const std::size_t rows = d == 0 ? 0 : x.numel() / d;
  const auto xv = x.data();
  const auto gv = gain.data();
  const auto bv = bias.data();
  std::vector<double> out(xv.size());
  std::vector<double> xhat(xv.size());
  std::vector<double> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = xv.data() + r * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += row[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(var + eps);
    inv_std[r] = inv;
    for (std::size_t j = 0; j < d; ++j) {
      const double h = (row[j] - mu) * inv;
      xhat[r * d + j] = h;
      out[r * d + j] = h * gv[j] + bv[j];
    }
  }
  Tensor result = make_tensor(x.shape(), std::move(out));
  TensorNode* xn = x.node().get();
  TensorNode* gn = gain.node().get();
  TensorNode* bn = bias.node().get();
  TensorNode* on = result.node().get();
  record("layer_norm", {&x, &gain, &bias}, result,
         [xn, gn, bn, on, d, rows, xhat = std::move(xhat), inv_std = std::move(inv_std)]() {
           const auto& g = on->grad;
           if (wants_grad(gn)) {
             auto& gg = grad_of(gn);
             for (std::size_t r = 0; r < rows; ++r)
               for (std::size_t j = 0; j < d; ++j) gg[j] += g[r * d + j] * xhat[r * d + j];
           }
           if (wants_grad(bn)) {
             auto& gb = grad_of(bn);
             for (std::size_t r = 0; r < rows; ++r)
               for (std::size_t j = 0; j < d; ++j) gb[j] += g[r * d + j];
           }
           if (wants_grad(xn)) {
             auto& gx = grad_of(xn);
             const auto& gain_v = gn->value;
             const double inv_d = 1.0 / static_cast<double>(d);
             for (std::size_t r = 0; r < rows; ++r) {
               double sum_dh = 0.0, sum_dh_h = 0.0;
               for (std::size_t j = 0; j < d; ++j) {
                 const double dh = g[r * d + j] * gain_v[j];
                 sum_dh += dh;
                 sum_dh_h += dh * xhat[r * d + j];
               }
               for (std::size_t j = 0; j < d; ++j) {
                 const double dh = g[r * d + j] * gain_v[j];
                 gx[r * d + j] +=
                     inv_std[r] * (dh - inv_d * sum_dh - xhat[r * d + j] * inv_d * sum_dh_h);
               }
             }
           }
         });
  return result;
}

// ---------------------------------------------------------------------------
// Indexing and reductions

Tensor gather_rows(const Tensor& x, const IndexMatrix& idx) {
  if (x.rank() != 2) {
    throw DimensionError("gather_rows: expected [N, d] input, got " + shape_to_string(x.shape()));
  }
  const std::size_t n = x.shape()[0];
  const std::size_t d = x.shape()[1];
  for (std::size_t v : idx.data) {
    if (v >= n) {
      throw IndexError("gather_rows: index " + std::to_string(v) + " out of range for " +
                       std::to_string(n) + " rows");
    }
  }
  const auto xv = x.data();
  std::vector<double> out(idx.data.size() * d);
  for (std::size_t e = 0; e < idx.data.size(); ++e) {
    std::copy_n(xv.data() + idx.data[e] * d, d, out.data() + e * d);
  }
  Tensor result = make_tensor({idx.rows, idx.cols, d}, std::move(out));
  TensorNode* xn = x.node().get();
  TensorNode* on = result.node().get();
  record("gather_rows", {&x}, result, [xn, on, idx, d]() {
    auto& gx = grad_of(xn);
    const auto& g = on->grad;
    for (std::size_t e = 0; e < idx.data.size(); ++e) {
      double* dst = gx.data() + idx.data[e] * d;
      const double* src = g.data() + e * d;
      for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
    }
  });
  return result;
}

Tensor reduce_max_axis(const Tensor& x, int axis) {
  const std::size_t ax = normalize_axis(axis, x.rank());
  const AxisSplit s = split_at(x.shape(), ax);
  if (s.len == 0) throw DimensionError("reduce_max_axis: empty axis");
  Shape oshape = x.shape();
  oshape.erase(oshape.begin() + static_cast<std::ptrdiff_t>(ax));
  const auto xv = x.data();
  std::vector<double> out(s.outer * s.inner);
  std::vector<std::size_t> arg(s.outer * s.inner);
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t in = 0; in < s.inner; ++in) {
      const std::size_t base = o * s.len * s.inner + in;
      std::size_t best = base;
      for (std::size_t j = 1; j < s.len; ++j) {
        const std::size_t idx = base + j * s.inner;
        if (xv[idx] > xv[best]) best = idx;
      }
      out[o * s.inner + in] = xv[best];
      arg[o * s.inner + in] = best;
    }
  }
  if (g_branch_trace) g_branch_trace->choices.insert(g_branch_trace->choices.end(), arg.begin(), arg.end());
  Tensor result = make_tensor(std::move(oshape), std::move(out));
  TensorNode* xn = x.node().get();
  TensorNode* on = result.node().get();
  record("reduce_max_axis", {&x}, result, [xn, on, arg = std::move(arg)]() {
    auto& gx = grad_of(xn);
    for (std::size_t i = 0; i < arg.size(); ++i) gx[arg[i]] += on->grad[i];
  });
  return result;
}

Tensor sum_axis(const Tensor& x, int axis) {
  const std::size_t ax = normalize_axis(axis, x.rank());
  const AxisSplit s = split_at(x.shape(), ax);
  Shape oshape = x.shape();
  oshape.erase(oshape.begin() + static_cast<std::ptrdiff_t>(ax));
  const auto xv = x.data();
  std::vector<double> out(s.outer * s.inner, 0.0);
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t j = 0; j < s.len; ++j)
      for (std::size_t in = 0; in < s.inner; ++in)
        out[o * s.inner + in] += xv[(o * s.len + j) * s.inner + in];
  Tensor result = make_tensor(std::move(oshape), std::move(out));
  TensorNode* xn = x.node().get();
  TensorNode* on = result.node().get();
  record("sum_axis", {&x}, result, [xn, on, s]() {
    auto& gx = grad_of(xn);
    for (std::size_t o = 0; o < s.outer; ++o)
      for (std::size_t j = 0; j < s.len; ++j)
        for (std::size_t in = 0; in < s.inner; ++in)
          gx[(o * s.len + j) * s.inner + in] += on->grad[o * s.inner + in];
  });
  return result;
}

Tensor sum(const Tensor& x) {
  double total = 0.0;
  for (double v : x.data()) total += v;
  Tensor result = make_tensor({}, {total});
  TensorNode* xn = x.node().get();
  TensorNode* on = result.node().get();
  record("sum", {&x}, result, [xn, on]() {
    auto& gx = grad_of(xn);
    const double g = on->grad[0];
    for (double& v : gx) v += g;
  });
  return result;
}

Tensor mean(const Tensor& x) {
  if (x.numel() == 0) throw DimensionError("mean of empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(x.numel()));
}

// ---------------------------------------------------------------------------
// Layout

Tensor concat(const std::vector<Tensor>& xs, int axis) {
  if (xs.empty()) throw DimensionError("concat: no inputs");
  const std::size_t ax = normalize_axis(axis, xs.front().rank());
  Shape oshape = xs.front().shape();
  oshape[ax] = 0;
  for (const Tensor& t : xs) {
    const Shape& ts = t.shape();
    bool ok = ts.size() == oshape.size();
    for (std::size_t i = 0; ok && i < ts.size(); ++i)
      if (i != ax && ts[i] != xs.front().shape()[i]) ok = false;
    if (!ok) {
      throw DimensionError("concat: shape " + shape_to_string(ts) + " incompatible with " +
                           shape_to_string(xs.front().shape()) + " along axis " +
                           std::to_string(ax));
    }
    oshape[ax] += ts[ax];
  }
  const AxisSplit os = split_at(oshape, ax);
  std::vector<double> out(shape_numel(oshape));
  std::vector<std::size_t> offsets;  // column offset (in elements) of each input's chunk
  std::size_t col = 0;
  for (const Tensor& t : xs) {
    const std::size_t chunk = t.shape()[ax] * os.inner;
    offsets.push_back(col);
    const auto tv = t.data();
    for (std::size_t o = 0; o < os.outer; ++o)
      std::copy_n(tv.data() + o * chunk, chunk, out.data() + o * os.len * os.inner + col);
    col += chunk;
  }
  Tensor result = make_tensor(std::move(oshape), std::move(out));
  std::vector<TensorNode*> nodes;
  std::vector<std::size_t> chunks;
  for (const Tensor& t : xs) {
    nodes.push_back(t.node().get());
    chunks.push_back(t.shape()[ax] * os.inner);
  }
  TensorNode* on = result.node().get();
  const std::size_t row = os.len * os.inner;
  record_many("concat", xs, result, [nodes, chunks, offsets, on, os, row]() {
    for (std::size_t t = 0; t < nodes.size(); ++t) {
      if (!wants_grad(nodes[t])) continue;
      auto& g = grad_of(nodes[t]);
      for (std::size_t o = 0; o < os.outer; ++o) {
        const double* src = on->grad.data() + o * row + offsets[t];
        double* dst = g.data() + o * chunks[t];
        for (std::size_t j = 0; j < chunks[t]; ++j) dst[j] += src[j];
      }
    }
  });
  return result;
}

Tensor slice(const Tensor& x, int axis, std::size_t begin, std::size_t end) {
  const std::size_t ax = normalize_axis(axis, x.rank());
  if (begin > end || end > x.shape()[ax]) {
    throw IndexError("slice [" + std::to_string(begin) + ", " + std::to_string(end) +
                     ") out of range for axis of length " + std::to_string(x.shape()[ax]));
  }
  const AxisSplit s = split_at(x.shape(), ax);
  Shape oshape = x.shape();
  oshape[ax] = end - begin;
  const std::size_t chunk = (end - begin) * s.inner;
  const std::size_t off = begin * s.inner;
  const std::size_t row = s.len * s.inner;
  const auto xv = x.data();
  std::vector<double> out(s.outer * chunk);
  for (std::size_t o = 0; o < s.outer; ++o)
    std::copy_n(xv.data() + o * row + off, chunk, out.data() + o * chunk);
  Tensor result = make_tensor(std::move(oshape), std::move(out));
  TensorNode* xn = x.node().get();
  TensorNode* on = result.node().get();
  record("slice", {&x}, result, [xn, on, s, chunk, off, row]() {
    auto& gx = grad_of(xn);
    for (std::size_t o = 0; o < s.outer; ++o)
      for (std::size_t j = 0; j < chunk; ++j) gx[o * row + off + j] += on->grad[o * chunk + j];
  });
  return result;
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("reshape: cannot view " + shape_to_string(x.shape()) + " as " +
                         shape_to_string(shape));
  }
  const auto xv = x.data();
  Tensor result = make_tensor(std::move(shape), std::vector<double>(xv.begin(), xv.end()));
  TensorNode* xn = x.node().get();
  TensorNode* on = result.node().get();
  record("reshape", {&x}, result, [xn, on]() {
    auto& gx = grad_of(xn);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += on->grad[i];
  });
  return result;
}

Tensor permute(const Tensor& x, const std::vector<std::size_t>& axes) {
  const Shape& xs = x.shape();
  if (axes.size() != xs.size()) {
    throw DimensionError("permute: " + std::to_string(axes.size()) + " axes for rank " +
                         std::to_string(xs.size()));
  }
  std::vector<bool> seen(xs.size(), false);
  for (std::size_t a : axes) {
    if (a >= xs.size() || seen[a]) throw DimensionError("permute: invalid axis list");
    seen[a] = true;
  }
  std::vector<std::size_t> in_strides(xs.size(), 1);
  for (std::size_t i = xs.size(); i-- > 1;) in_strides[i - 1] = in_strides[i] * xs[i];
  Shape oshape(xs.size());
  for (std::size_t i = 0; i < axes.size(); ++i) oshape[i] = xs[axes[i]];

  const std::size_t n = x.numel();
  std::vector<std::size_t> src(n);
  std::vector<std::size_t> idx(oshape.size(), 0);
  for (std::size_t o = 0; o < n; ++o) {
    std::size_t off = 0;
    for (std::size_t i = 0; i < idx.size(); ++i) off += idx[i] * in_strides[axes[i]];
    src[o] = off;
    for (std::size_t i = idx.size(); i-- > 0;) {
      if (++idx[i] < oshape[i]) break;
      idx[i] = 0;
    }
  }
  const auto xv = x.data();
  std::vector<double> out(n);
  for (std::size_t o = 0; o < n; ++o) out[o] = xv[src[o]];
  Tensor result = make_tensor(std::move(oshape), std::move(out));
  TensorNode* xn = x.node().get();
  TensorNode* on = result.node().get();
  record("permute", {&x}, result, [xn, on, src = std::move(src)]() {
    auto& gx = grad_of(xn);
    for (std::size_t o = 0; o < src.size(); ++o) gx[src[o]] += on->grad[o];
  });
  return result;
}

}  // namespace noisetrans
