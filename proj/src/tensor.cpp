#include "pdseg/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>
#include <utility>

namespace pdseg {

std::int64_t numel(const Shape& shape) {
  std::int64_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace {

void validate_shape(const Shape& shape) {
  if (shape.empty() || shape.size() > 4) {
    throw DimensionError("tensor rank must be 1..4, got shape " + to_string(shape));
  }
  for (auto e : shape) {
    if (e <= 0) throw DimensionError("tensor extents must be positive, got " + to_string(shape));
  }
}

}  // namespace

template <typename T>
typename Tensor<T>::Node& Tensor<T>::node() const {
  if (!node_) throw Error("use of undefined tensor");
  return *node_;
}

template <typename T>
Tensor<T> Tensor<T>::from(Shape shape, std::vector<T> values, bool requires_grad) {
  validate_shape(shape);
  if (pdseg::numel(shape) != static_cast<std::int64_t>(values.size())) {
    throw DimensionError("value count " + std::to_string(values.size()) + " does not match shape " +
                         to_string(shape));
  }
  detail::check_finite_or_throw("from", std::span<const T>(values));
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value = std::move(values);
  n->requires_grad = requires_grad;
  if (requires_grad) n->grad.assign(n->value.size(), T(0));
  return Tensor(std::move(n));
}

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), T(0), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T value, bool requires_grad) {
  validate_shape(shape);
  auto n = static_cast<std::size_t>(pdseg::numel(shape));
  return from(std::move(shape), std::vector<T>(n, value), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T value, bool requires_grad) {
  return from({1}, {value}, requires_grad);
}

template <typename T>
std::int64_t Tensor<T>::dim(int axis) const {
  const auto& s = node().shape;
  if (axis < 0 || axis >= static_cast<int>(s.size())) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " + to_string(s));
  }
  return s[static_cast<std::size_t>(axis)];
}

template <typename T>
std::span<T> Tensor<T>::mutable_data() {
  if (!node().is_leaf()) throw Error("values of a computed tensor are immutable");
  return node().value;
}

template <typename T>
T Tensor<T>::item() const {
  if (node().value.size() != 1) {
    throw DimensionError("item() on non-scalar tensor of shape " + to_string(shape()));
  }
  return node().value[0];
}

template <typename T>
void Tensor<T>::zero_grad() {
  auto& g = node().grad;
  std::fill(g.begin(), g.end(), T(0));
}

template <typename T>
Tensor<T> Tensor<T>::detach(bool requires_grad) const {
  return from(shape(), node().value, requires_grad);
}

template <typename T>
void backward(const Tensor<T>& loss) {
  using Node = typename Tensor<T>::Node;
  if (loss.numel() != 1) {
    throw DimensionError("backward() needs a scalar loss, got shape " + to_string(loss.shape()));
  }
  Node* root = loss.node_ptr().get();
  if (!root->requires_grad) return;

  // Iterative post-order DFS gives a topological order (parents before children).
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack{{root, 0}};
  visited.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (Node* n : order) {
    if (!n->is_leaf()) n->grad.assign(n->value.size(), T(0));
  }
  root->grad.resize(1, T(0));
  root->grad[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (!n->is_leaf() && n->backward) n->backward(*n);
  }
}

namespace detail {

template <typename V>
static void check_finite_impl(const char* op, std::span<const V> v) {
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!std::isfinite(v[i])) {
      throw NumericError(std::string("non-finite value produced by ") + op + " at element " +
                         std::to_string(i));
    }
  }
}

void check_finite_or_throw(const char* op, std::span<const float> v) { check_finite_impl(op, v); }
void check_finite_or_throw(const char* op, std::span<const double> v) { check_finite_impl(op, v); }

template <typename T>
Tensor<T> make_result(const char* op, Shape shape, std::vector<T> value,
                      std::vector<Tensor<T>> parents,
                      std::function<void(typename Tensor<T>::Node&)> backward_fn) {
  check_finite_or_throw(op, std::span<const T>(value));
  auto n = std::make_shared<typename Tensor<T>::Node>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  bool needs = false;
  for (const auto& p : parents) needs = needs || p.requires_grad();
  n->requires_grad = needs;
  if (needs) {
    n->parents.reserve(parents.size());
    for (auto& p : parents) n->parents.push_back(p.node_ptr());
    n->backward = std::move(backward_fn);
  }
  return Tensor<T>(std::move(n));
}

template <typename T>
T* grad_sink(typename Tensor<T>::Node& parent) {
  if (!parent.requires_grad) return nullptr;
  if (parent.grad.size() != parent.value.size()) parent.grad.assign(parent.value.size(), T(0));
  return parent.grad.data();
}

template Tensor<float> make_result(const char*, Shape, std::vector<float>, std::vector<Tensor<float>>,
                                   std::function<void(Tensor<float>::Node&)>);
template Tensor<double> make_result(const char*, Shape, std::vector<double>,
                                    std::vector<Tensor<double>>,
                                    std::function<void(Tensor<double>::Node&)>);
template float* grad_sink<float>(Tensor<float>::Node&);
template double* grad_sink<double>(Tensor<double>::Node&);

}  // namespace detail

template class Tensor<float>;
template class Tensor<double>;
template void backward(const Tensor<float>&);
template void backward(const Tensor<double>&);

}  // namespace pdseg
