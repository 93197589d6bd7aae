#pragma once

// Small reverse-mode autodiff over dense row-major tensors. Scalar type is
// a template parameter: float for training, double where tests compare
// analytic gradients against central finite differences.

#include <cassert>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

#include "fsvos/util/rng.hpp"

namespace fsvos::nn {

using Shape = std::vector<int>;

inline int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (size_t i = 0; i < s.size(); ++i) out += (i ? "," : "") + std::to_string(s[i]);
  return out + "]";
}

// Tape recording is thread-local so parallel eval workers stay independent.
inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}

struct NoGrad {
  bool prev;
  NoGrad() : prev(grad_mode()) { grad_mode() = false; }
  ~NoGrad() { grad_mode() = prev; }
  NoGrad(const NoGrad&) = delete;
};

template <typename S>
struct Node {
  std::shared_ptr<std::vector<S>> data;
  Shape shape;
  std::vector<S> grad;  // sized lazily by ensure_grad()
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node<S>>> parents;
  std::function<void(Node<S>&)> backward_fn;

  int64_t numel() const { return shape_numel(shape); }
  void ensure_grad() {
    if (grad.size() != static_cast<size_t>(numel())) grad.assign(numel(), S(0));
  }
};

template <typename S>
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    return filled(std::move(shape), S(0), requires_grad);
  }

  static Tensor filled(Shape shape, S value, bool requires_grad = false) {
    Tensor t;
    t.n_ = std::make_shared<Node<S>>();
    t.n_->shape = std::move(shape);
    t.n_->data = std::make_shared<std::vector<S>>(t.n_->numel(), value);
    t.n_->requires_grad = requires_grad;
    return t;
  }

  static Tensor from(Shape shape, std::vector<S> values, bool requires_grad = false) {
    Tensor t;
    t.n_ = std::make_shared<Node<S>>();
    t.n_->shape = std::move(shape);
    if (static_cast<int64_t>(values.size()) != t.n_->numel())
      throw std::runtime_error("Tensor::from: value count does not match shape");
    t.n_->data = std::make_shared<std::vector<S>>(std::move(values));
    t.n_->requires_grad = requires_grad;
    return t;
  }

  static Tensor scalar(S value, bool requires_grad = false) {
    return from({1}, {value}, requires_grad);
  }

  static Tensor uniform(Shape shape, Rng& rng, S lo, S hi, bool requires_grad = false) {
    Tensor t = zeros(std::move(shape), requires_grad);
    for (S& v : t.vec()) v = static_cast<S>(rand_uniform(rng, lo, hi));
    return t;
  }

  static Tensor randn(Shape shape, Rng& rng, S stddev = S(1), bool requires_grad = false) {
    Tensor t = zeros(std::move(shape), requires_grad);
    for (S& v : t.vec()) v = static_cast<S>(rand_normal(rng, 0.0, stddev));
    return t;
  }

  bool defined() const { return n_ != nullptr; }
  const Shape& shape() const { return n_->shape; }
  int dim(int i) const { return n_->shape[i]; }
  int rank() const { return static_cast<int>(n_->shape.size()); }
  int64_t numel() const { return n_->numel(); }

  std::vector<S>& vec() { return *n_->data; }
  const std::vector<S>& vec() const { return *n_->data; }
  S* ptr() { return n_->data->data(); }
  const S* ptr() const { return n_->data->data(); }
  S operator[](int64_t i) const { return (*n_->data)[i]; }

  bool requires_grad() const { return n_->requires_grad; }
  Tensor& set_requires_grad(bool b) {
    n_->requires_grad = b;
    return *this;
  }

  std::vector<S>& grad() {
    n_->ensure_grad();
    return n_->grad;
  }
  void zero_grad() {
    if (n_) n_->grad.assign(n_->numel(), S(0));
  }

  S item() const {
    if (numel() != 1) throw std::runtime_error("Tensor::item on non-scalar " + shape_str(shape()));
    return (*n_->data)[0];
  }

  // Same data, no tape history.
  Tensor detach() const {
    Tensor t;
    t.n_ = std::make_shared<Node<S>>();
    t.n_->shape = n_->shape;
    t.n_->data = n_->data;
    return t;
  }

  Tensor clone() const {
    Tensor t;
    t.n_ = std::make_shared<Node<S>>();
    t.n_->shape = n_->shape;
    t.n_->data = std::make_shared<std::vector<S>>(*n_->data);
    return t;
  }

  std::shared_ptr<Node<S>> node() const { return n_; }

  void backward() {
    if (numel() != 1) throw std::runtime_error("backward() requires a scalar root");
    std::vector<Node<S>*> order;
    std::unordered_set<Node<S>*> seen;
    std::vector<std::pair<Node<S>*, size_t>> stack;
    stack.push_back({n_.get(), 0});
    seen.insert(n_.get());
    while (!stack.empty()) {
      auto& [node, child] = stack.back();
      if (child < node->parents.size()) {
        Node<S>* p = node->parents[child++].get();
        if (p->requires_grad && !seen.count(p)) {
          seen.insert(p);
          stack.push_back({p, 0});
        }
      } else {
        order.push_back(node);
        stack.pop_back();
      }
    }
    n_->ensure_grad();
    n_->grad[0] += S(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it)
      if ((*it)->backward_fn) (*it)->backward_fn(**it);
  }

 private:
  std::shared_ptr<Node<S>> n_;
};

namespace detail {

// Wires parents + backward closure when the tape is recording.
template <typename S, typename F>
inline void attach(Tensor<S>& out, const std::vector<Tensor<S>>& parents, F&& backward) {
  if (!grad_mode()) return;
  bool any = false;
  for (const auto& p : parents) any |= p.requires_grad();
  if (!any) return;
  out.node()->requires_grad = true;
  for (const auto& p : parents) out.node()->parents.push_back(p.node());
  out.node()->backward_fn = std::forward<F>(backward);
}

template <typename S, typename F>
inline void attach(Tensor<S>& out, std::initializer_list<Tensor<S>> parents, F&& backward) {
  attach(out, std::vector<Tensor<S>>(parents), std::forward<F>(backward));
}

}  // namespace detail

}  // namespace fsvos::nn
