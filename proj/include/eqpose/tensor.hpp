#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "eqpose/error.hpp"
#include "eqpose/rng.hpp"

namespace eqpose {

inline std::string shape_str(const std::vector<int>& s) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

inline long long shape_numel(const std::vector<int>& s) {
  long long n = 1;
  for (int e : s) {
    contract(e > 0, "tensor extent must be positive, got shape " + shape_str(s));
    n *= e;
  }
  return n;
}

// Dense n-d array. Copies alias the same buffer; buffers are treated as
// immutable once an op has produced them. `node` ties the value to a tape.
template <typename T>
struct Tensor {
  std::vector<int> shape;
  std::shared_ptr<std::vector<T>> buf;
  int node = -1;

  Tensor() = default;
  explicit Tensor(std::vector<int> s)
      : shape(std::move(s)), buf(std::make_shared<std::vector<T>>(shape_numel(shape), T(0))) {}
  Tensor(std::vector<int> s, std::vector<T> v) : shape(std::move(s)) {
    contract(shape_numel(shape) == (long long)v.size(),
             "tensor data length does not match shape " + shape_str(shape));
    buf = std::make_shared<std::vector<T>>(std::move(v));
  }

  long long size() const { return buf ? (long long)buf->size() : 0; }
  T* data() { return buf->data(); }
  const T* data() const { return buf->data(); }
  T& operator[](long long i) { return (*buf)[i]; }
  const T& operator[](long long i) const { return (*buf)[i]; }

  int dim(int i) const { return shape[(size_t)i]; }
  int rank() const { return (int)shape.size(); }

  Tensor with_shape(std::vector<int> s) const {
    contract(shape_numel(s) == size(), "reshape " + shape_str(shape) + " -> " + shape_str(s) +
                                           " changes element count");
    Tensor r = *this;
    r.shape = std::move(s);
    return r;
  }

  static Tensor full(std::vector<int> s, T v) {
    Tensor t(std::move(s));
    for (auto& e : *t.buf) e = v;
    return t;
  }
  static Tensor zeros(std::vector<int> s) { return Tensor(std::move(s)); }
};

template <typename T>
Tensor<T> he_normal(Rng& rng, std::vector<int> shape, long long fan_in) {
  contract(fan_in > 0, "he_normal: fan_in must be positive");
  Tensor<T> t(std::move(shape));
  double scale = 1.0 / std::sqrt((double)fan_in);
  for (long long i = 0; i < t.size(); ++i) t[i] = (T)(rng.normal() * scale);
  return t;
}

// Reverse-mode tape. Nodes are appended in creation order, which is a valid
// topological order; backward walks it once in reverse. Single-owner: one
// logical thread builds the graph and runs backward.
template <typename T>
class Tape {
 public:
  bool checked = false;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  using BackFn = std::function<void(Tape&, const std::vector<T>&)>;

  int add_node(long long grad_size, BackFn fn) {
    nodes_.push_back(NodeRec{grad_size, std::move(fn)});
    return (int)nodes_.size() - 1;
  }

  // Registers a value (parameter or input) whose gradient is wanted.
  Tensor<T> leaf(Tensor<T> t) {
    t.node = add_node(t.size(), nullptr);
    return t;
  }

  std::vector<T>& ensure(int node) {
    auto& g = grads_[(size_t)node];
    if (g.empty()) g.assign((size_t)nodes_[(size_t)node].size, T(0));
    return g;
  }

  void backward(const Tensor<T>& loss) {
    contract(loss.node >= 0, "backward: loss is not on the tape");
    contract(loss.size() == 1, "backward: loss must be a scalar tensor");
    grads_.assign(nodes_.size(), {});
    ensure(loss.node)[0] = T(1);
    for (int i = loss.node; i >= 0; --i) {
      const auto& g = grads_[(size_t)i];
      if (g.empty() || !nodes_[(size_t)i].fn) continue;
      nodes_[(size_t)i].fn(*this, g);
    }
  }

  const std::vector<T>& grad(const Tensor<T>& t) {
    contract(t.node >= 0, "grad: tensor is not on the tape");
    contract(!grads_.empty(), "grad: backward has not run");
    return ensure(t.node);
  }

 private:
  struct NodeRec {
    long long size;
    BackFn fn;
  };
  std::vector<NodeRec> nodes_;
  std::vector<std::vector<T>> grads_;
};

template <typename T>
void check_finite(const Tape<T>* tape, const Tensor<T>& t, const char* op) {
  if (!tape || !tape->checked) return;
  for (long long i = 0; i < t.size(); ++i)
    contract(std::isfinite((double)t[i]), std::string(op) + ": non-finite value produced");
}

}  // namespace eqpose
