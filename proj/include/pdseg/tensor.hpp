#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "pdseg/error.hpp"

namespace pdseg {

/// Up to four extents, (N, C, H, W) order for image tensors.
using Shape = std::vector<std::int64_t>;

std::int64_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

/// Dense row-major tensor with optional reverse-mode gradient tracking.
///
/// A Tensor is a cheap handle onto a shared graph node. Values are fixed once an
/// op has produced them; only the gradient buffer is written afterwards, by
/// backward(). Leaves created with requires_grad=true accumulate gradients
/// across backward() calls until zero_grad() is called.
template <typename T>
class Tensor {
 public:
  struct Node {
    Shape shape;
    std::vector<T> value;
    std::vector<T> grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    // Reads this node's grad and accumulates into the parents that require grad.
    std::function<void(Node&)> backward;

    bool is_leaf() const { return parents.empty(); }
  };

  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, T value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<T> values, bool requires_grad = false);
  static Tensor scalar(T value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node().shape; }
  int rank() const { return static_cast<int>(node().shape.size()); }
  std::int64_t dim(int axis) const;
  std::int64_t numel() const { return static_cast<std::int64_t>(node().value.size()); }

  std::span<const T> data() const { return node().value; }
  /// Direct value access; only legal on leaves (parameters, inputs).
  std::span<T> mutable_data();
  T item() const;
  T at(std::int64_t flat_index) const { return node().value.at(static_cast<std::size_t>(flat_index)); }

  bool requires_grad() const { return node().requires_grad; }
  /// Empty span when no gradient has been allocated.
  std::span<const T> grad() const { return node().grad; }
  std::span<T> mutable_grad() { return node().grad; }
  void zero_grad();

  /// Copy of the values with no graph history.
  Tensor detach(bool requires_grad = false) const;
  /// Same values, converted element type, no history.
  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> v(node().value.begin(), node().value.end());
    return Tensor<U>::from(shape(), std::move(v));
  }

  const std::shared_ptr<Node>& node_ptr() const { return node_; }
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

 private:
  Node& node() const;
  std::shared_ptr<Node> node_;
};

/// Runs reverse-mode accumulation from a scalar loss. Leaf gradients are summed
/// into (+=); intermediate gradients are recomputed from zero on every call.
template <typename T>
void backward(const Tensor<T>& loss);

namespace detail {

/// Builds an op result. requires_grad is inherited from the parents; the backward
/// closure is dropped when no parent needs gradients. Throws NumericError when
/// the produced values are not finite.
template <typename T>
Tensor<T> make_result(const char* op, Shape shape, std::vector<T> value,
                      std::vector<Tensor<T>> parents,
                      std::function<void(typename Tensor<T>::Node&)> backward_fn);

/// Grad buffer of a parent, allocated on first use; nullptr when the parent does
/// not take gradients.
template <typename T>
T* grad_sink(typename Tensor<T>::Node& parent);

void check_finite_or_throw(const char* op, std::span<const float> v);
void check_finite_or_throw(const char* op, std::span<const double> v);

}  // namespace detail

extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace pdseg
