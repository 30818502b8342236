#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <memory>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "caepl/error.hpp"

namespace caepl {

using Shape = std::vector<int>;

inline std::int64_t numel(const Shape& shape) {
  std::int64_t n = 1;
  for (int e : shape) {
    if (e <= 0) throw ShapeError("non-positive extent in shape");
    n *= e;
  }
  return n;
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

// Thread-local switch for graph recording. Evaluation passes that never call
// backward() run under NoGradGuard to skip closure allocation.
inline bool& grad_mode_flag() {
  thread_local bool enabled = true;
  return enabled;
}

struct NoGradGuard {
  bool prev;
  NoGradGuard() : prev(grad_mode_flag()) { grad_mode_flag() = false; }
  ~NoGradGuard() { grad_mode_flag() = prev; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

// Dense row-major tensor and node in the reverse-mode differentiation graph.
// Ops record parent links plus a closure that scatters the node's grad into
// its parents; backward() replays the closures in reverse topological order.
template <typename S>
class Tensor : public std::enable_shared_from_this<Tensor<S>> {
 public:
  using Ptr = std::shared_ptr<Tensor<S>>;

  Shape shape;
  std::vector<S> values;
  bool requires_grad = false;

  std::vector<Ptr> parents;
  std::function<void(Tensor<S>&)> backward_fn;

  static Ptr zeros(Shape s, bool req_grad = false) {
    auto t = std::make_shared<Tensor<S>>();
    t->shape = std::move(s);
    t->values.assign(static_cast<std::size_t>(numel(t->shape)), S(0));
    t->requires_grad = req_grad && grad_mode_flag();
    return t;
  }

  static Ptr full(Shape s, S value, bool req_grad = false) {
    auto t = zeros(std::move(s), req_grad);
    std::fill(t->values.begin(), t->values.end(), value);
    return t;
  }

  static Ptr from(Shape s, std::vector<S> vals, bool req_grad = false) {
    auto t = std::make_shared<Tensor<S>>();
    t->shape = std::move(s);
    if (static_cast<std::int64_t>(vals.size()) != numel(t->shape))
      throw ShapeError("value count " + std::to_string(vals.size()) + " does not match shape " +
                       shape_str(t->shape));
    t->values = std::move(vals);
    t->requires_grad = req_grad && grad_mode_flag();
    return t;
  }

  static Ptr scalar(S value, bool req_grad = false) { return from({1}, {value}, req_grad); }

  std::int64_t size() const { return static_cast<std::int64_t>(values.size()); }
  int dim(std::size_t i) const { return shape.at(i); }
  bool is_scalar() const { return size() == 1; }

  S item() const {
    if (!is_scalar()) throw ContractError("item() on non-scalar tensor " + shape_str(shape));
    return values[0];
  }

  // Grad buffer is allocated lazily; tensors off every loss path keep an
  // empty buffer which reads as all-zero.
  bool has_grad() const { return !grad_.empty(); }

  std::vector<S>& grad() {
    if (grad_.empty()) grad_.assign(values.size(), S(0));
    return grad_;
  }

  const std::vector<S>& grad_view() const {
    static const std::vector<S> empty;
    return grad_.empty() ? empty : grad_;
  }

  S grad_at(std::size_t i) const { return grad_.empty() ? S(0) : grad_[i]; }

  void zero_grad() { std::fill(grad_.begin(), grad_.end(), S(0)); }

  void detach() {
    parents.clear();
    backward_fn = nullptr;
  }

 private:
  std::vector<S> grad_;
};

template <typename S>
using TensorPtr = std::shared_ptr<Tensor<S>>;

// Result node factory used by every op: parents and the backward closure are
// recorded only when some parent can receive a gradient.
template <typename S>
TensorPtr<S> make_node(Shape shape, std::vector<S> vals, std::vector<TensorPtr<S>> parents,
                       std::function<void(Tensor<S>&)> backward_fn) {
  auto out = Tensor<S>::from(std::move(shape), std::move(vals));
  bool needs = false;
  if (grad_mode_flag()) {
    for (const auto& p : parents)
      if (p && (p->requires_grad || p->backward_fn)) needs = true;
  }
  if (needs) {
    out->requires_grad = true;
    out->parents = std::move(parents);
    out->backward_fn = std::move(backward_fn);
  }
  return out;
}

// Reverse sweep from a scalar loss. Grads accumulate across calls; resetting
// is the caller's job (ModelGraph::zero_grad or Tensor::zero_grad).
template <typename S>
void backward(const TensorPtr<S>& loss) {
  if (!loss) throw ContractError("backward: null loss");
  if (!loss->is_scalar())
    throw ContractError("backward: loss must be scalar, got " + shape_str(loss->shape));

  // Iterative topological order over the recorded graph.
  std::vector<Tensor<S>*> order;
  std::unordered_set<Tensor<S>*> visited;
  struct Frame {
    Tensor<S>* node;
    std::size_t next_parent;
  };
  std::vector<Frame> stack;
  stack.push_back({loss.get(), 0});
  visited.insert(loss.get());
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next_parent < f.node->parents.size()) {
      Tensor<S>* p = f.node->parents[f.next_parent++].get();
      if (p && !visited.count(p)) {
        visited.insert(p);
        stack.push_back({p, 0});
      }
    } else {
      order.push_back(f.node);
      stack.pop_back();
    }
  }

  loss->grad()[0] += S(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Tensor<S>* node = *it;
    if (node->backward_fn) node->backward_fn(*node);
  }
}

}  // namespace caepl
