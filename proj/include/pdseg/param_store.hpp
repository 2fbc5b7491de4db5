#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "pdseg/tensor.hpp"

namespace pdseg {

/// Named trainable tensors, iterated in registration order.
template <typename T>
class ParamStore {
 public:
  struct Entry {
    std::string name;
    Tensor<T> tensor;
  };

  /// Registers a leaf with requires_grad=true. Throws ConfigError on duplicate names.
  Tensor<T>& add(const std::string& name, Shape shape, std::vector<T> values);
  Tensor<T>& add(const std::string& name, Shape shape);

  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  const Tensor<T>& get(const std::string& name) const;
  Tensor<T>& get(const std::string& name);

  std::vector<Entry>& entries() { return entries_; }
  const std::vector<Entry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }

  /// Total number of learnable scalars.
  std::int64_t scalar_count() const;
  /// Scalars whose parameter name starts with `prefix`.
  std::int64_t scalar_count(const std::string& prefix) const;
  void zero_grad();

  /// Copies values from `other` for every name present in both. Shapes must match.
  void load_values(const ParamStore& other);

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

extern template class ParamStore<float>;
extern template class ParamStore<double>;

}  // namespace pdseg
