#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

namespace dpseq {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ')';
  return os.str();
}

class ShapeError : public std::runtime_error {
 public:
  explicit ShapeError(const std::string& what) : std::runtime_error(what) {}
};

template <typename T>
struct TensorStorage {
  Shape shape;
  std::vector<T> values;
  bool requires_grad = false;
};

template <typename T>
class Tape;

// Dense row-major tensor. A Tensor is a cheap handle onto shared storage;
// values are treated as immutable once an op has consumed them (the
// optimizer mutates parameter storage between tapes, never inside one).
template <typename T>
class Tensor {
 public:
  using StoragePtr = std::shared_ptr<TensorStorage<T>>;

  Tensor() = default;
  Tensor(Shape shape, std::vector<T> values, bool requires_grad = false) {
    if (numel(shape) != values.size())
      throw ShapeError("tensor shape " + shape_str(shape) + " does not match " +
                       std::to_string(values.size()) + " values");
    s_ = std::make_shared<TensorStorage<T>>(
        TensorStorage<T>{std::move(shape), std::move(values), requires_grad});
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    std::size_t n = numel(shape);
    return Tensor(std::move(shape), std::vector<T>(n, T(0)), requires_grad);
  }
  static Tensor full(Shape shape, T v, bool requires_grad = false) {
    std::size_t n = numel(shape);
    return Tensor(std::move(shape), std::vector<T>(n, v), requires_grad);
  }
  static Tensor scalar(T v) { return Tensor({1}, {v}); }

  bool defined() const { return static_cast<bool>(s_); }
  const Shape& shape() const { return s_->shape; }
  std::size_t rank() const { return s_->shape.size(); }
  std::size_t size() const { return s_->values.size(); }
  std::size_t dim(std::size_t i) const { return s_->shape[i]; }

  const std::vector<T>& values() const { return s_->values; }
  std::vector<T>& values() { return s_->values; }

  bool requires_grad() const { return s_->requires_grad; }
  void set_requires_grad(bool b) { s_->requires_grad = b; }

  T item() const {
    if (size() != 1) throw ShapeError("item() on non-scalar tensor " + shape_str(shape()));
    return s_->values[0];
  }

  Tensor clone() const {
    return Tensor(s_->shape, s_->values, s_->requires_grad);
  }

  const StoragePtr& storage() const { return s_; }

 private:
  StoragePtr s_;
};

// Reverse-mode tape. Operations append nodes in execution order; backward()
// walks them once, last to first. Gradients are held per storage and only
// for tensors that participate (grad-tracking leaves or tape outputs) --
// everything else stays absent.
template <typename T>
class Tape {
 public:
  using StoragePtr = std::shared_ptr<TensorStorage<T>>;
  using BackwardFn = std::function<void(Tape&, const std::vector<T>&)>;

  void record(StoragePtr output, BackwardFn backward) {
    on_tape_.insert(output.get());
    nodes_.push_back(Node{std::move(output), std::move(backward)});
  }

  bool on_tape(const Tensor<T>& t) const {
    return t.defined() && on_tape_.count(t.storage().get()) != 0;
  }

  // Gradient buffer for a participating tensor, nullptr otherwise.
  // Callers accumulate (+=) into the returned buffer.
  std::vector<T>* grad_slot(const StoragePtr& s) {
    if (!s->requires_grad && on_tape_.count(s.get()) == 0) return nullptr;
    auto [it, inserted] = grads_.try_emplace(s.get());
    if (inserted) it->second.assign(s->values.size(), T(0));
    return &it->second;
  }

  void backward(const Tensor<T>& loss) {
    if (loss.size() != 1)
      throw ShapeError("backward() requires a scalar loss, got " + shape_str(loss.shape()));
    if (!on_tape(loss))
      throw std::runtime_error("backward() loss was not produced on this tape");
    grads_[loss.storage().get()] = {T(1)};
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
      auto g = grads_.find(it->output.get());
      if (g == grads_.end()) continue;  // did not influence the loss
      it->backward(*this, g->second);
    }
  }

  const std::vector<T>* grad(const Tensor<T>& t) const {
    auto it = grads_.find(t.storage().get());
    return it == grads_.end() ? nullptr : &it->second;
  }

  std::size_t num_nodes() const { return nodes_.size(); }

 private:
  struct Node {
    StoragePtr output;
    BackwardFn backward;
  };
  std::vector<Node> nodes_;
  std::unordered_set<const void*> on_tape_;
  std::unordered_map<const void*, std::vector<T>> grads_;
};

}  // namespace dpseq
