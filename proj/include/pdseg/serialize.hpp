#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>

#include "pdseg/param_store.hpp"
#include "pdseg/tensor.hpp"

namespace pdseg {

// Tensor container, little-endian:
//   "DFTN" | u8 rank | u32 extent × rank | u8 dtype (0=f32, 1=f64) | row-major payload
//
// Parameter container:
//   "DFPS" | u32 count | count × (u32 name length | name bytes | tensor container)
//
// Checkpoint: UTF-8 text header lines, a line "#end-header", then a parameter container.

enum class DType : std::uint8_t { kF32 = 0, kF64 = 1 };

template <typename T>
void write_tensor(std::ostream& os, const Tensor<T>& t);
/// Reads either dtype, converting to T.
template <typename T>
Tensor<T> read_tensor(std::istream& is);

template <typename T>
void save_tensor(const std::filesystem::path& path, const Tensor<T>& t);
template <typename T>
Tensor<T> load_tensor(const std::filesystem::path& path);

template <typename T>
void write_params(std::ostream& os, const ParamStore<T>& store);
template <typename T>
ParamStore<T> read_params(std::istream& is);

template <typename T>
struct Checkpoint {
  std::string header;
  ParamStore<T> params;
};

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const std::string& header, const ParamStore<T>& store);
template <typename T>
Checkpoint<T> load_checkpoint(const std::filesystem::path& path);

}  // namespace pdseg
