#include "pdseg/param_store.hpp"

#include <algorithm>

namespace pdseg {

template <typename T>
Tensor<T>& ParamStore<T>::add(const std::string& name, Shape shape, std::vector<T> values) {
  if (contains(name)) throw ConfigError("duplicate parameter name '" + name + "'");
  index_.emplace(name, entries_.size());
  entries_.push_back({name, Tensor<T>::from(std::move(shape), std::move(values), true)});
  return entries_.back().tensor;
}

template <typename T>
Tensor<T>& ParamStore<T>::add(const std::string& name, Shape shape) {
  const auto n = static_cast<std::size_t>(numel(shape));
  return add(name, std::move(shape), std::vector<T>(n, T(0)));
}

template <typename T>
const Tensor<T>& ParamStore<T>::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("unknown parameter '" + name + "'");
  return entries_[it->second].tensor;
}

template <typename T>
Tensor<T>& ParamStore<T>::get(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("unknown parameter '" + name + "'");
  return entries_[it->second].tensor;
}

template <typename T>
std::int64_t ParamStore<T>::scalar_count() const {
  std::int64_t n = 0;
  for (const auto& e : entries_) n += e.tensor.numel();
  return n;
}

template <typename T>
std::int64_t ParamStore<T>::scalar_count(const std::string& prefix) const {
  std::int64_t n = 0;
  for (const auto& e : entries_) {
    if (e.name.rfind(prefix, 0) == 0) n += e.tensor.numel();
  }
  return n;
}

template <typename T>
void ParamStore<T>::zero_grad() {
  for (auto& e : entries_) e.tensor.zero_grad();
}

template <typename T>
void ParamStore<T>::load_values(const ParamStore& other) {
  for (auto& e : entries_) {
    if (!other.contains(e.name)) continue;
    const auto& src = other.get(e.name);
    if (src.shape() != e.tensor.shape()) {
      throw DimensionError("parameter '" + e.name + "': stored shape " + to_string(src.shape()) +
                           " != " + to_string(e.tensor.shape()));
    }
    auto dst = e.tensor.mutable_data();
    std::copy(src.data().begin(), src.data().end(), dst.begin());
  }
}

template class ParamStore<float>;
template class ParamStore<double>;

}  // namespace pdseg
