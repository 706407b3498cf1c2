#pragma once

// Minimal define-by-run reverse-mode automatic differentiation over dense
// row-major float64 matrices. A Graph records every op applied to its
// tensors; backward() replays the records in reverse, each node exactly once.
// Vectors are 1 x n matrices.

#include <cassert>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <functional>
#include <limits>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "mnlp/rng.hpp"

namespace mnlp::ad {

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct Shape {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t size() const { return rows * cols; }
  friend bool operator==(const Shape&, const Shape&) = default;
};

inline std::string to_string(Shape s) {
  return "(" + std::to_string(s.rows) + " x " + std::to_string(s.cols) + ")";
}

// ---------------------------------------------------------------------------
// Parameters and optimizer state

enum class Init { uniform_fan_in, zeros, ones };

struct Parameter {
  std::string name;
  Shape shape;
  std::vector<double> value;
  std::vector<double> m;  // Adam first moment
  std::vector<double> v;  // Adam second moment
  std::int64_t step = 0;
};

/// Named parameters with stable slot indices. Slots index GradBuffer entries.
class ParameterSet {
 public:
  Parameter& add(const std::string& name, Shape shape, Init init, std::uint64_t seed) {
    if (index_.contains(name)) throw std::invalid_argument("duplicate parameter '" + name + "'");
    Parameter p;
    p.name = name;
    p.shape = shape;
    p.value.assign(shape.size(), 0.0);
    p.m.assign(shape.size(), 0.0);
    p.v.assign(shape.size(), 0.0);
    if (init == Init::ones) {
      std::fill(p.value.begin(), p.value.end(), 1.0);
    } else if (init == Init::uniform_fan_in) {
      // One stream per parameter name keeps values independent of creation order.
      Rng rng(derive_seed(seed, name));
      const double bound = 1.0 / std::sqrt(static_cast<double>(shape.rows));
      for (auto& x : p.value) x = rng.uniform(-bound, bound);
    }
    index_[name] = params_.size();
    params_.push_back(std::move(p));
    return params_.back();
  }

  void insert(Parameter p) {
    if (index_.contains(p.name)) throw std::invalid_argument("duplicate parameter '" + p.name + "'");
    index_[p.name] = params_.size();
    params_.push_back(std::move(p));
  }

  std::size_t slot(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("no parameter '" + name + "'");
    return it->second;
  }
  bool contains(const std::string& name) const { return index_.contains(name); }

  Parameter& operator[](std::size_t i) { return params_[i]; }
  const Parameter& operator[](std::size_t i) const { return params_[i]; }
  Parameter& at(const std::string& name) { return params_[slot(name)]; }
  const Parameter& at(const std::string& name) const { return params_[slot(name)]; }

  std::size_t size() const { return params_.size(); }
  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  /// Total number of scalars.
  std::size_t census() const {
    std::size_t c = 0;
    for (const auto& p : params_) c += p.value.size();
    return c;
  }

  /// Copy without the parameters for which drop(name) is true.
  template <class Pred>
  ParameterSet without(Pred&& drop) const {
    ParameterSet out;
    for (const auto& p : params_)
      if (!drop(p.name)) out.insert(p);
    return out;
  }

  friend bool operator==(const ParameterSet& a, const ParameterSet& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i)
      if (a[i].name != b[i].name || a[i].shape != b[i].shape || a[i].value != b[i].value) return false;
    return true;
  }

 private:
  std::vector<Parameter> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Per-slot gradient accumulators. An empty entry means "no gradient reached
/// this parameter".
class GradBuffer {
 public:
  GradBuffer() = default;
  explicit GradBuffer(const ParameterSet& ps) : grads_(ps.size()) {}

  std::vector<double>& slot(std::size_t i, std::size_t size) {
    if (i >= grads_.size()) grads_.resize(i + 1);
    if (grads_[i].empty()) grads_[i].assign(size, 0.0);
    return grads_[i];
  }
  const std::vector<double>& operator[](std::size_t i) const {
    static const std::vector<double> empty;
    return i < grads_.size() ? grads_[i] : empty;
  }
  std::size_t size() const { return grads_.size(); }
  void reserve_slots(std::size_t n) {
    if (grads_.size() < n) grads_.resize(n);
  }

  /// this += other, slot by slot in index order.
  void accumulate(const GradBuffer& other) {
    for (std::size_t i = 0; i < other.size(); ++i) {
      if (other[i].empty()) continue;
      auto& g = slot(i, other[i].size());
      for (std::size_t k = 0; k < g.size(); ++k) g[k] += other[i][k];
    }
  }

  void clear() { grads_.clear(); }

 private:
  std::vector<std::vector<double>> grads_;
};

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Bias-corrected Adam. Parameters without a gradient entry are left untouched.
inline void adam_step(ParameterSet& params, const GradBuffer& grads, const AdamConfig& cfg) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& g = grads[i];
    if (g.empty()) continue;
    auto& p = params[i];
    ++p.step;
    const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(p.step));
    const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(p.step));
    for (std::size_t k = 0; k < p.value.size(); ++k) {
      p.m[k] = cfg.beta1 * p.m[k] + (1.0 - cfg.beta1) * g[k];
      p.v[k] = cfg.beta2 * p.v[k] + (1.0 - cfg.beta2) * g[k] * g[k];
      const double mhat = p.m[k] / c1;
      const double vhat = p.v[k] / c2;
      p.value[k] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
  }
}

// ---------------------------------------------------------------------------
// Kernels. Every output row depends only on the matching input row(s), and
// every reduction runs in a fixed order, so a row's result never depends on
// what else shares the matrix.

namespace kernel {

// 8-wide double vectors (GCC/Clang extension). Every output element is still
// summed in one fixed order, so results are reproducible bit for bit.
typedef double v8 __attribute__((vector_size(64)));

inline v8 load8(const double* p) {
  v8 v;
  std::memcpy(&v, p, sizeof v);
  return v;
}
inline void store8(double* p, v8 v) { std::memcpy(p, &v, sizeof v); }
inline double hsum8(v8 a) { return ((a[0] + a[1]) + (a[2] + a[3])) + ((a[4] + a[5]) + (a[6] + a[7])); }

// C (m x n) += A (m x k) * B (k x n)
inline void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                    std::size_t n) {
  const std::size_t n32 = n - n % 32, n8 = n - n % 8;
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a + i * k;
    double* ci = c + i * n;
    std::size_t j = 0;
    for (; j < n32; j += 32) {
      v8 c0 = load8(ci + j), c1 = load8(ci + j + 8), c2 = load8(ci + j + 16), c3 = load8(ci + j + 24);
      for (std::size_t p = 0; p < k; ++p) {
        const double* bp = b + p * n + j;
        const double x = ai[p];
        c0 += x * load8(bp);
        c1 += x * load8(bp + 8);
        c2 += x * load8(bp + 16);
        c3 += x * load8(bp + 24);
      }
      store8(ci + j, c0), store8(ci + j + 8, c1), store8(ci + j + 16, c2), store8(ci + j + 24, c3);
    }
    for (; j < n8; j += 8) {
      v8 c0 = load8(ci + j);
      for (std::size_t p = 0; p < k; ++p) c0 += ai[p] * load8(b + p * n + j);
      store8(ci + j, c0);
    }
    for (; j < n; ++j) {
      double s = ci[j];
      for (std::size_t p = 0; p < k; ++p) s += ai[p] * b[p * n + j];
      ci[j] = s;
    }
  }
}

// C (m x n) += A (m x k) * B^T, B is (n x k)
inline void gemm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                    std::size_t n) {
  const std::size_t k8 = k - k % 8;
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a + i * k;
    double* ci = c + i * n;
    std::size_t j = 0;
    for (; j + 4 <= n; j += 4) {
      const double *b0 = b + j * k, *b1 = b0 + k, *b2 = b1 + k, *b3 = b2 + k;
      v8 s0 = {}, s1 = {}, s2 = {}, s3 = {};
      for (std::size_t p = 0; p < k8; p += 8) {
        const v8 x = load8(ai + p);
        s0 += x * load8(b0 + p);
        s1 += x * load8(b1 + p);
        s2 += x * load8(b2 + p);
        s3 += x * load8(b3 + p);
      }
      double r0 = hsum8(s0), r1 = hsum8(s1), r2 = hsum8(s2), r3 = hsum8(s3);
      for (std::size_t p = k8; p < k; ++p) {
        r0 += ai[p] * b0[p];
        r1 += ai[p] * b1[p];
        r2 += ai[p] * b2[p];
        r3 += ai[p] * b3[p];
      }
      ci[j] += r0, ci[j + 1] += r1, ci[j + 2] += r2, ci[j + 3] += r3;
    }
    for (; j < n; ++j) {
      const double* bj = b + j * k;
      v8 s = {};
      for (std::size_t p = 0; p < k8; p += 8) s += load8(ai + p) * load8(bj + p);
      double r = hsum8(s);
      for (std::size_t p = k8; p < k; ++p) r += ai[p] * bj[p];
      ci[j] += r;
    }
  }
}

// C (k x n) += A^T * B, A is (m x k), B is (m x n)
inline void gemm_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                    std::size_t n) {
  const std::size_t n32 = n - n % 32, n8 = n - n % 8;
  for (std::size_t p = 0; p < k; ++p) {
    double* cp = c + p * n;
    std::size_t j = 0;
    for (; j < n32; j += 32) {
      v8 c0 = load8(cp + j), c1 = load8(cp + j + 8), c2 = load8(cp + j + 16), c3 = load8(cp + j + 24);
      for (std::size_t i = 0; i < m; ++i) {
        const double x = a[i * k + p];
        const double* bi = b + i * n + j;
        c0 += x * load8(bi);
        c1 += x * load8(bi + 8);
        c2 += x * load8(bi + 16);
        c3 += x * load8(bi + 24);
      }
      store8(cp + j, c0), store8(cp + j + 8, c1), store8(cp + j + 16, c2), store8(cp + j + 24, c3);
    }
    for (; j < n8; j += 8) {
      v8 c0 = load8(cp + j);
      for (std::size_t i = 0; i < m; ++i) c0 += a[i * k + p] * load8(b + i * n + j);
      store8(cp + j, c0);
    }
    for (; j < n; ++j) {
      double s = cp[j];
      for (std::size_t i = 0; i < m; ++i) s += a[i * k + p] * b[i * n + j];
      cp[j] = s;
    }
  }
}

}  // namespace kernel

// ---------------------------------------------------------------------------
// Graph and tensors

class Graph;

class Tensor {
 public:
  Tensor() = default;

  Shape shape() const;
  std::size_t rows() const { return shape().rows; }
  std::size_t cols() const { return shape().cols; }
  std::size_t size() const { return shape().size(); }
  std::span<const double> data() const;
  double at(std::size_t r, std::size_t c) const { return data()[r * cols() + c]; }
  double item() const;
  bool requires_grad() const;
  bool valid() const { return graph_ != nullptr; }
  Graph& graph() const { return *graph_; }
  int id() const { return id_; }

 private:
  friend class Graph;
  Tensor(Graph* g, int id) : graph_(g), id_(id) {}
  Graph* graph_ = nullptr;
  int id_ = -1;
};

class Graph {
 public:
  /// With track = false no backward records are kept (inference mode).
  explicit Graph(bool track = true) : track_(track) { nodes_.reserve(256); }
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  bool tracking() const { return track_; }

  Tensor constant(Shape shape, std::vector<double> values) {
    if (values.size() != shape.size())
      throw ShapeError("constant: " + std::to_string(values.size()) + " values for shape " + to_string(shape));
    const int id = push(shape, false);
    nodes_[id].value = std::move(values);
    return {this, id};
  }

  Tensor constant(Shape shape, double fill) { return constant(shape, std::vector<double>(shape.size(), fill)); }

  /// Leaf bound to a parameter's storage; its gradient lands in GradBuffer slot `slot`.
  Tensor parameter(const Parameter& p, std::size_t slot) {
    const int id = push(p.shape, track_);
    nodes_[id].external = p.value.data();
    nodes_[id].param_slot = static_cast<int>(slot);
    return {this, id};
  }

  Tensor parameter(const ParameterSet& ps, const std::string& name) {
    const auto s = ps.slot(name);
    return parameter(ps[s], s);
  }

  /// Reverse sweep from a scalar. Parameter gradients are added into `out`.
  void backward(const Tensor& loss, GradBuffer& out) {
    if (loss.graph_ != this) throw std::invalid_argument("backward: tensor belongs to another graph");
    if (loss.size() != 1)
      throw ShapeError("backward: loss must be scalar, got " + to_string(loss.shape()));
    if (!track_ || !nodes_[loss.id_].requires_grad) return;
    // Parameter leaves accumulate straight into `out`. Its slot table is
    // sized up front so references handed to op backwards stay valid.
    int max_slot = -1;
    for (const auto& nd : nodes_) max_slot = std::max(max_slot, nd.param_slot);
    out.reserve_slots(static_cast<std::size_t>(max_slot + 1));
    sink_ = &out;
    grad(loss.id_)[0] += 1.0;
    for (int id = loss.id_; id >= 0; --id) {
      Node& nd = nodes_[id];
      if (nd.grad.empty() || !nd.backward) continue;
      nd.backward(*this);
    }
    sink_ = nullptr;
  }

  std::size_t node_count() const { return nodes_.size(); }

  /// Hash of every ReLU activation pattern seen so far; two evaluations that
  /// take the same branch at every ReLU produce the same signature.
  std::uint64_t relu_signature() const { return relu_signature_; }

  // -- internals used by the op implementations below --------------------
  struct Node {
    Shape shape;
    std::vector<double> value;
    const double* external = nullptr;
    std::vector<double> grad;
    std::function<void(Graph&)> backward;
    bool requires_grad = false;
    int param_slot = -1;

    const double* data() const { return external ? external : value.data(); }
  };

  int push(Shape shape, bool requires_grad) {
    Node nd;
    nd.shape = shape;
    nd.requires_grad = requires_grad && track_;
    nodes_.push_back(std::move(nd));
    return static_cast<int>(nodes_.size() - 1);
  }

  /// New op output filled with zeros.
  int emit(Shape shape, bool requires_grad) {
    const int id = push(shape, requires_grad);
    nodes_[id].value.assign(shape.size(), 0.0);
    return id;
  }

  Node& node(int id) { return nodes_[id]; }
  const Node& node(int id) const { return nodes_[id]; }
  const double* value(int id) const { return nodes_[id].data(); }
  double* mutable_value(int id) { return nodes_[id].value.data(); }
  bool needs_grad(int id) const { return nodes_[id].requires_grad; }

  std::vector<double>& grad(int id) {
    auto& nd = nodes_[id];
    if (nd.param_slot >= 0 && sink_) return sink_->slot(static_cast<std::size_t>(nd.param_slot), nd.shape.size());
    if (nd.grad.empty()) nd.grad.assign(nd.shape.size(), 0.0);
    return nd.grad;
  }

  void on_backward(int id, std::function<void(Graph&)> fn) {
    if (nodes_[id].requires_grad) nodes_[id].backward = std::move(fn);
  }

  void mix_relu(std::uint64_t h) { relu_signature_ = mix64(relu_signature_ ^ h); }

  Tensor handle(int id) { return {this, id}; }

  void check_finite(int id) const {
#ifndef NDEBUG
    const auto& nd = nodes_[id];
    for (std::size_t k = 0; k < nd.shape.size(); ++k) assert(std::isfinite(nd.data()[k]));
#else
    (void)id;
#endif
  }

 private:
  bool track_;
  std::vector<Node> nodes_;
  GradBuffer* sink_ = nullptr;
  std::uint64_t relu_signature_ = 0;
};

inline Shape Tensor::shape() const { return graph_->node(id_).shape; }
inline std::span<const double> Tensor::data() const {
  const auto& nd = graph_->node(id_);
  return {nd.data(), nd.shape.size()};
}
inline double Tensor::item() const {
  if (size() != 1) throw ShapeError("item: tensor is " + to_string(shape()));
  return data()[0];
}
inline bool Tensor::requires_grad() const { return graph_->node(id_).requires_grad; }

namespace detail {

inline Graph& same_graph(const Tensor& a, const Tensor& b) {
  if (!a.valid() || !b.valid() || &a.graph() != &b.graph())
    throw std::invalid_argument("tensors belong to different graphs");
  return a.graph();
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Ops

/// (m x k) * (k x n)
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  Graph& g = detail::same_graph(a, b);
  const Shape sa = a.shape(), sb = b.shape();
  if (sa.cols != sb.rows) throw ShapeError("matmul: " + to_string(sa) + " * " + to_string(sb));
  const int ia = a.id(), ib = b.id();
  const int out = g.emit({sa.rows, sb.cols}, a.requires_grad() || b.requires_grad());
  kernel::gemm_nn(g.value(ia), g.value(ib), g.mutable_value(out), sa.rows, sa.cols, sb.cols);
  g.check_finite(out);
  g.on_backward(out, [=](Graph& g) {
    const double* go = g.grad(out).data();
    if (g.needs_grad(ia)) kernel::gemm_nt(go, g.value(ib), g.grad(ia).data(), sa.rows, sb.cols, sa.cols);
    if (g.needs_grad(ib)) kernel::gemm_tn(g.value(ia), go, g.grad(ib).data(), sa.rows, sa.cols, sb.cols);
  });
  return g.handle(out);
}

/// (m x k) * (n x k)^T
inline Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  Graph& g = detail::same_graph(a, b);
  const Shape sa = a.shape(), sb = b.shape();
  if (sa.cols != sb.cols) throw ShapeError("matmul_nt: " + to_string(sa) + " * " + to_string(sb) + "^T");
  const int ia = a.id(), ib = b.id();
  const int out = g.emit({sa.rows, sb.rows}, a.requires_grad() || b.requires_grad());
  kernel::gemm_nt(g.value(ia), g.value(ib), g.mutable_value(out), sa.rows, sa.cols, sb.rows);
  g.check_finite(out);
  g.on_backward(out, [=](Graph& g) {
    const double* go = g.grad(out).data();
    // dA = dC * B ; dB = dC^T * A
    if (g.needs_grad(ia)) kernel::gemm_nn(go, g.value(ib), g.grad(ia).data(), sa.rows, sb.rows, sa.cols);
    if (g.needs_grad(ib)) kernel::gemm_tn(go, g.value(ia), g.grad(ib).data(), sa.rows, sb.rows, sa.cols);
  });
  return g.handle(out);
}

/// Elementwise a + b. b may also be a single row broadcast over a's rows.
inline Tensor add(const Tensor& a, const Tensor& b) {
  Graph& g = detail::same_graph(a, b);
  const Shape sa = a.shape(), sb = b.shape();
  const bool broadcast = sb.rows == 1 && sb.cols == sa.cols && sa.rows != 1;
  if (!(sa == sb) && !broadcast) throw ShapeError("add: " + to_string(sa) + " + " + to_string(sb));
  const int ia = a.id(), ib = b.id();
  const int out = g.emit(sa, a.requires_grad() || b.requires_grad());
  double* o = g.mutable_value(out);
  const double* pa = g.value(ia);
  const double* pb = g.value(ib);
  for (std::size_t r = 0; r < sa.rows; ++r)
    for (std::size_t c = 0; c < sa.cols; ++c)
      o[r * sa.cols + c] = pa[r * sa.cols + c] + pb[(broadcast ? 0 : r) * sa.cols + c];
  g.on_backward(out, [=](Graph& g) {
    const auto& go = g.grad(out);
    if (g.needs_grad(ia)) {
      auto& ga = g.grad(ia);
      for (std::size_t k = 0; k < go.size(); ++k) ga[k] += go[k];
    }
    if (g.needs_grad(ib)) {
      auto& gb = g.grad(ib);
      for (std::size_t r = 0; r < sa.rows; ++r)
        for (std::size_t c = 0; c < sa.cols; ++c) gb[(broadcast ? 0 : r) * sa.cols + c] += go[r * sa.cols + c];
    }
  });
  return g.handle(out);
}

inline Tensor scale(const Tensor& a, double s) {
  Graph& g = a.graph();
  const int ia = a.id();
  const int out = g.emit(a.shape(), a.requires_grad());
  const double* pa = g.value(ia);
  double* o = g.mutable_value(out);
  for (std::size_t k = 0; k < a.size(); ++k) o[k] = pa[k] * s;
  g.on_backward(out, [=](Graph& g) {
    const auto& go = g.grad(out);
    auto& ga = g.grad(ia);
    for (std::size_t k = 0; k < go.size(); ++k) ga[k] += go[k] * s;
  });
  return g.handle(out);
}

inline Tensor relu(const Tensor& a) {
  Graph& g = a.graph();
  const int ia = a.id();
  const int out = g.emit(a.shape(), a.requires_grad());
  const double* pa = g.value(ia);
  double* o = g.mutable_value(out);
  std::uint64_t h = 0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    const bool on = pa[k] > 0.0;
    o[k] = on ? pa[k] : 0.0;
    h = mix64(h + (on ? 2 * k + 1 : 2 * k));
  }
  g.mix_relu(h);
  g.on_backward(out, [=](Graph& g) {
    const auto& go = g.grad(out);
    auto& ga = g.grad(ia);
    const double* x = g.value(ia);
    for (std::size_t k = 0; k < go.size(); ++k)
      if (x[k] > 0.0) ga[k] += go[k];
  });
  return g.handle(out);
}

/// Stacks tensors with equal column counts on top of each other.
inline Tensor concat_rows(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  Graph& g = parts[0].graph();
  const std::size_t cols = parts[0].cols();
  std::size_t rows = 0;
  bool rg = false;
  std::vector<int> ids;
  for (const auto& p : parts) {
    if (&p.graph() != &g) throw std::invalid_argument("concat_rows: tensors from different graphs");
    if (p.cols() != cols)
      throw ShapeError("concat_rows: " + to_string(parts[0].shape()) + " vs " + to_string(p.shape()));
    rows += p.rows();
    rg |= p.requires_grad();
    ids.push_back(p.id());
  }
  const int out = g.emit({rows, cols}, rg);
  double* o = g.mutable_value(out);
  for (int id : ids) {
    const auto n = g.node(id).shape.size();
    std::copy_n(g.value(id), n, o);
    o += n;
  }
  g.on_backward(out, [=](Graph& g) {
    const double* go = g.grad(out).data();
    for (int id : ids) {
      const auto n = g.node(id).shape.size();
      if (g.needs_grad(id)) {
        auto& gi = g.grad(id);
        for (std::size_t k = 0; k < n; ++k) gi[k] += go[k];
      }
      go += n;
    }
  });
  return g.handle(out);
}

inline Tensor concat_rows(std::initializer_list<Tensor> parts) {
  return concat_rows(std::span<const Tensor>(parts.begin(), parts.size()));
}

/// Places tensors with equal row counts side by side.
inline Tensor concat_cols(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  Graph& g = parts[0].graph();
  const std::size_t rows = parts[0].rows();
  std::size_t cols = 0;
  bool rg = false;
  std::vector<int> ids;
  std::vector<std::size_t> offs;
  for (const auto& p : parts) {
    if (&p.graph() != &g) throw std::invalid_argument("concat_cols: tensors from different graphs");
    if (p.rows() != rows)
      throw ShapeError("concat_cols: " + to_string(parts[0].shape()) + " vs " + to_string(p.shape()));
    offs.push_back(cols);
    cols += p.cols();
    rg |= p.requires_grad();
    ids.push_back(p.id());
  }
  const int out = g.emit({rows, cols}, rg);
  double* o = g.mutable_value(out);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const Shape s = g.node(ids[i]).shape;
    const double* src = g.value(ids[i]);
    for (std::size_t r = 0; r < rows; ++r) std::copy_n(src + r * s.cols, s.cols, o + r * cols + offs[i]);
  }
  g.on_backward(out, [=](Graph& g) {
    const double* go = g.grad(out).data();
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (!g.needs_grad(ids[i])) continue;
      const Shape s = g.node(ids[i]).shape;
      auto& gi = g.grad(ids[i]);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < s.cols; ++c) gi[r * s.cols + c] += go[r * cols + offs[i] + c];
    }
  });
  return g.handle(out);
}

inline Tensor concat_cols(std::initializer_list<Tensor> parts) {
  return concat_cols(std::span<const Tensor>(parts.begin(), parts.size()));
}

/// Columns [c0, c1).
inline Tensor slice_cols(const Tensor& a, std::size_t c0, std::size_t c1) {
  Graph& g = a.graph();
  const Shape s = a.shape();
  if (c0 > c1 || c1 > s.cols)
    throw ShapeError("slice_cols: [" + std::to_string(c0) + ", " + std::to_string(c1) + ") of " + to_string(s));
  const int ia = a.id();
  const std::size_t w = c1 - c0;
  const int out = g.emit({s.rows, w}, a.requires_grad());
  const double* pa = g.value(ia);
  double* o = g.mutable_value(out);
  for (std::size_t r = 0; r < s.rows; ++r) std::copy_n(pa + r * s.cols + c0, w, o + r * w);
  g.on_backward(out, [=](Graph& g) {
    const auto& go = g.grad(out);
    auto& ga = g.grad(ia);
    for (std::size_t r = 0; r < s.rows; ++r)
      for (std::size_t c = 0; c < w; ++c) ga[r * s.cols + c0 + c] += go[r * w + c];
  });
  return g.handle(out);
}

/// Selects rows by index; an index may repeat.
inline Tensor gather_rows(const Tensor& a, std::span<const int> index) {
  Graph& g = a.graph();
  const Shape s = a.shape();
  for (int i : index)
    if (i < 0 || static_cast<std::size_t>(i) >= s.rows)
      throw ShapeError("gather_rows: row " + std::to_string(i) + " of " + to_string(s));
  const int ia = a.id();
  std::vector<int> idx(index.begin(), index.end());
  const int out = g.emit({idx.size(), s.cols}, a.requires_grad());
  const double* pa = g.value(ia);
  double* o = g.mutable_value(out);
  for (std::size_t r = 0; r < idx.size(); ++r) std::copy_n(pa + idx[r] * s.cols, s.cols, o + r * s.cols);
  g.on_backward(out, [=](Graph& g) {
    const auto& go = g.grad(out);
    auto& ga = g.grad(ia);
    for (std::size_t r = 0; r < idx.size(); ++r)
      for (std::size_t c = 0; c < s.cols; ++c) ga[idx[r] * s.cols + c] += go[r * s.cols + c];
  });
  return g.handle(out);
}

inline Tensor gather_rows(const Tensor& a, std::initializer_list<int> index) {
  return gather_rows(a, std::span<const int>(index.begin(), index.size()));
}

inline constexpr double kLayerNormEps = 1e-5;

/// Row-wise layer normalization over the last axis followed by a per-feature
/// affine map (gain and shift are 1 x cols).
inline Tensor layernorm(const Tensor& x, const Tensor& gain, const Tensor& shift, double eps = kLayerNormEps) {
  Graph& g = detail::same_graph(x, gain);
  detail::same_graph(x, shift);
  const Shape s = x.shape();
  if (s.cols == 0) throw ShapeError("layernorm: zero-length axis");
  if (gain.shape() != Shape{1, s.cols} || shift.shape() != Shape{1, s.cols})
    throw ShapeError("layernorm: affine params " + to_string(gain.shape()) + " for input " + to_string(s));
  const int ix = x.id(), ig = gain.id(), ib = shift.id();
  const int out = g.emit(s, x.requires_grad() || gain.requires_grad() || shift.requires_grad());
  // Saved normalized activations and inverse std per row.
  std::vector<double> xhat(s.size()), inv(s.rows);
  const double* px = g.value(ix);
  const double* pg = g.value(ig);
  const double* pb = g.value(ib);
  double* o = g.mutable_value(out);
  const double n = static_cast<double>(s.cols);
  for (std::size_t r = 0; r < s.rows; ++r) {
    const double* row = px + r * s.cols;
    double mean = 0.0;
    for (std::size_t c = 0; c < s.cols; ++c) mean += row[c];
    mean /= n;
    double var = 0.0;
    for (std::size_t c = 0; c < s.cols; ++c) var += (row[c] - mean) * (row[c] - mean);
    var /= n;
    inv[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t c = 0; c < s.cols; ++c) {
      const double xh = (row[c] - mean) * inv[r];
      xhat[r * s.cols + c] = xh;
      o[r * s.cols + c] = xh * pg[c] + pb[c];
    }
  }
  g.check_finite(out);
  g.on_backward(out, [=, xhat = std::move(xhat), inv = std::move(inv)](Graph& g) {
    const auto& go = g.grad(out);
    const double* pg = g.value(ig);
    if (g.needs_grad(ig)) {
      auto& gg = g.grad(ig);
      for (std::size_t r = 0; r < s.rows; ++r)
        for (std::size_t c = 0; c < s.cols; ++c) gg[c] += go[r * s.cols + c] * xhat[r * s.cols + c];
    }
    if (g.needs_grad(ib)) {
      auto& gb = g.grad(ib);
      for (std::size_t r = 0; r < s.rows; ++r)
        for (std::size_t c = 0; c < s.cols; ++c) gb[c] += go[r * s.cols + c];
    }
    if (g.needs_grad(ix)) {
      auto& gx = g.grad(ix);
      for (std::size_t r = 0; r < s.rows; ++r) {
        double sum_d = 0.0, sum_dx = 0.0;
        for (std::size_t c = 0; c < s.cols; ++c) {
          const double d = go[r * s.cols + c] * pg[c];
          sum_d += d;
          sum_dx += d * xhat[r * s.cols + c];
        }
        for (std::size_t c = 0; c < s.cols; ++c) {
          const double d = go[r * s.cols + c] * pg[c];
          gx[r * s.cols + c] += inv[r] * (d - sum_d / n - xhat[r * s.cols + c] * sum_dx / n);
        }
      }
    }
  });
  return g.handle(out);
}

/// Row-wise softmax.
inline Tensor softmax_rows(const Tensor& a) {
  Graph& g = a.graph();
  const Shape s = a.shape();
  const int ia = a.id();
  const int out = g.emit(s, a.requires_grad());
  const double* pa = g.value(ia);
  double* o = g.mutable_value(out);
  for (std::size_t r = 0; r < s.rows; ++r) {
    const double* row = pa + r * s.cols;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < s.cols; ++c) mx = std::max(mx, row[c]);
    double z = 0.0;
    for (std::size_t c = 0; c < s.cols; ++c) z += (o[r * s.cols + c] = std::exp(row[c] - mx));
    for (std::size_t c = 0; c < s.cols; ++c) o[r * s.cols + c] /= z;
  }
  g.on_backward(out, [=](Graph& g) {
    const auto& go = g.grad(out);
    const double* p = g.value(out);
    auto& ga = g.grad(ia);
    for (std::size_t r = 0; r < s.rows; ++r) {
      double dot = 0.0;
      for (std::size_t c = 0; c < s.cols; ++c) dot += go[r * s.cols + c] * p[r * s.cols + c];
      for (std::size_t c = 0; c < s.cols; ++c)
        ga[r * s.cols + c] += p[r * s.cols + c] * (go[r * s.cols + c] - dot);
    }
  });
  return g.handle(out);
}

namespace detail {

inline void check_mask(const Tensor& logits, std::span<const char> mask, const char* who) {
  if (mask.size() != logits.size())
    throw ShapeError(std::string(who) + ": mask of " + std::to_string(mask.size()) + " for logits " +
                     to_string(logits.shape()));
  for (char m : mask)
    if (m) return;
  throw std::invalid_argument(std::string(who) + ": empty feasible set");
}

// Max over feasible entries and the log of the shifted partition function.
inline std::pair<double, double> masked_logsumexp_parts(const double* l, std::span<const char> mask) {
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < mask.size(); ++k)
    if (mask[k]) mx = std::max(mx, l[k]);
  double z = 0.0;
  for (std::size_t k = 0; k < mask.size(); ++k)
    if (mask[k]) z += std::exp(l[k] - mx);
  return {mx, std::log(z)};
}

}  // namespace detail

/// Softmax over the entries with mask != 0, treating the whole tensor as one
/// distribution. Masked entries are exactly 0 and receive zero gradient.
inline Tensor masked_softmax(const Tensor& logits, std::span<const char> mask) {
  detail::check_mask(logits, mask, "masked_softmax");
  Graph& g = logits.graph();
  const int il = logits.id();
  const int out = g.emit(logits.shape(), logits.requires_grad());
  const double* l = g.value(il);
  double* o = g.mutable_value(out);
  const auto [mx, lz] = detail::masked_logsumexp_parts(l, mask);
  for (std::size_t k = 0; k < mask.size(); ++k) o[k] = mask[k] ? std::exp(l[k] - mx - lz) : 0.0;
  std::vector<char> m(mask.begin(), mask.end());
  g.on_backward(out, [=, m = std::move(m)](Graph& g) {
    const auto& go = g.grad(out);
    const double* p = g.value(out);
    auto& gl = g.grad(il);
    double dot = 0.0;
    for (std::size_t k = 0; k < m.size(); ++k)
      if (m[k]) dot += go[k] * p[k];
    for (std::size_t k = 0; k < m.size(); ++k)
      if (m[k]) gl[k] += p[k] * (go[k] - dot);
  });
  return g.handle(out);
}

/// -log softmax(logits)[target] restricted to the feasible entries, computed
/// as a fused log-softmax. `target` indexes the flattened logits.
inline Tensor cross_entropy(const Tensor& logits, std::span<const char> mask, std::size_t target) {
  detail::check_mask(logits, mask, "cross_entropy");
  if (target >= mask.size() || !mask[target])
    throw std::invalid_argument("cross_entropy: target " + std::to_string(target) + " is masked");
  Graph& g = logits.graph();
  const int il = logits.id();
  const int out = g.emit({1, 1}, logits.requires_grad());
  const double* l = g.value(il);
  const auto [mx, lz] = detail::masked_logsumexp_parts(l, mask);
  g.mutable_value(out)[0] = -(l[target] - mx - lz);
  g.check_finite(out);
  std::vector<char> m(mask.begin(), mask.end());
  g.on_backward(out, [=, m = std::move(m)](Graph& g) {
    const double up = g.grad(out)[0];
    const double* l = g.value(il);
    auto& gl = g.grad(il);
    for (std::size_t k = 0; k < m.size(); ++k) {
      if (!m[k]) continue;
      const double p = std::exp(l[k] - mx - lz);
      gl[k] += up * (p - (k == target ? 1.0 : 0.0));
    }
  });
  return g.handle(out);
}

inline Tensor sum(const Tensor& a) {
  Graph& g = a.graph();
  const int ia = a.id();
  const int out = g.emit({1, 1}, a.requires_grad());
  const double* pa = g.value(ia);
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) s += pa[k];
  g.mutable_value(out)[0] = s;
  g.on_backward(out, [=](Graph& g) {
    const double up = g.grad(out)[0];
    auto& ga = g.grad(ia);
    for (auto& x : ga) x += up;
  });
  return g.handle(out);
}

// ---------------------------------------------------------------------------
// Finite-difference verification

struct Probe {
  double value = 0.0;
  std::uint64_t signature = 0;  // e.g. Graph::relu_signature()
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::size_t skipped = 0;  // coordinates whose +-h probes crossed a ReLU kink
  std::string worst;        // "name[index]" of the worst coordinate

  bool passed(double tol) const { return checked > 0 && max_rel_error < tol; }
};

/// Denominator floor for the relative error, so gradient entries that are
/// zero up to rounding are compared in absolute terms.
inline constexpr double kGradCheckFloor = 1e-3;

/// Compares `analytic` against central differences of f at every coordinate
/// of every parameter (optionally restricted by `select`). f re-evaluates the
/// objective from the current parameter values.
template <class Fn, class Select>
GradCheckReport grad_check(Fn&& f, ParameterSet& params, const GradBuffer& analytic, double h,
                           Select&& select) {
  GradCheckReport rep;
  const std::uint64_t base_sig = f().signature;
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    if (!select(p.name)) continue;
    const auto& a = analytic[i];
    for (std::size_t k = 0; k < p.value.size(); ++k) {
      const double orig = p.value[k];
      p.value[k] = orig + h;
      const Probe plus = f();
      p.value[k] = orig - h;
      const Probe minus = f();
      p.value[k] = orig;
      if (plus.signature != base_sig || minus.signature != base_sig) {
        ++rep.skipped;
        continue;
      }
      const double numeric = (plus.value - minus.value) / (2.0 * h);
      const double an = a.empty() ? 0.0 : a[k];
      const double denom = std::max({std::abs(an), std::abs(numeric), kGradCheckFloor});
      const double err = std::abs(an - numeric) / denom;
      ++rep.checked;
      if (err > rep.max_rel_error || rep.worst.empty()) {
        if (err >= rep.max_rel_error) rep.worst = p.name + "[" + std::to_string(k) + "]";
        rep.max_rel_error = std::max(rep.max_rel_error, err);
      }
    }
  }
  return rep;
}

template <class Fn>
GradCheckReport grad_check(Fn&& f, ParameterSet& params, const GradBuffer& analytic, double h = 1e-6) {
  return grad_check(std::forward<Fn>(f), params, analytic, h, [](const std::string&) { return true; });
}

}  // namespace mnlp::ad
