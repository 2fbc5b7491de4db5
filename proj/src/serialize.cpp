#include "pdseg/serialize.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

namespace pdseg {

namespace {

template <typename U>
void put_le(std::ostream& os, U v) {
  std::array<char, sizeof(U)> b{};
  std::memcpy(b.data(), &v, sizeof(U));
  if constexpr (std::endian::native == std::endian::big) std::reverse(b.begin(), b.end());
  os.write(b.data(), sizeof(U));
}

std::size_t offset_of(std::istream& is) {
  auto pos = is.tellg();
  return pos < 0 ? 0 : static_cast<std::size_t>(pos);
}

template <typename U>
U get_le(std::istream& is, const char* what) {
  const std::size_t at = offset_of(is);
  std::array<char, sizeof(U)> b{};
  if (!is.read(b.data(), sizeof(U))) throw ParseError(std::string("truncated ") + what, at);
  if constexpr (std::endian::native == std::endian::big) std::reverse(b.begin(), b.end());
  U v;
  std::memcpy(&v, b.data(), sizeof(U));
  return v;
}

void expect_magic(std::istream& is, const char* magic) {
  const std::size_t at = offset_of(is);
  char got[4] = {};
  if (!is.read(got, 4) || std::memcmp(got, magic, 4) != 0) {
    throw ParseError(std::string("bad magic, expected ") + magic, at);
  }
}

}  // namespace

template <typename T>
void write_tensor(std::ostream& os, const Tensor<T>& t) {
  os.write("DFTN", 4);
  put_le<std::uint8_t>(os, static_cast<std::uint8_t>(t.rank()));
  for (auto e : t.shape()) put_le<std::uint32_t>(os, static_cast<std::uint32_t>(e));
  put_le<std::uint8_t>(os, static_cast<std::uint8_t>(sizeof(T) == 4 ? DType::kF32 : DType::kF64));
  for (T v : t.data()) put_le<T>(os, v);
}

template <typename T>
Tensor<T> read_tensor(std::istream& is) {
  expect_magic(is, "DFTN");
  const std::size_t rank_at = offset_of(is);
  const auto rank = get_le<std::uint8_t>(is, "rank");
  if (rank < 1 || rank > 4) throw ParseError("tensor rank must be 1..4", rank_at);
  Shape shape;
  for (int i = 0; i < rank; ++i) {
    const std::size_t at = offset_of(is);
    const auto e = get_le<std::uint32_t>(is, "extent");
    if (e == 0) throw ParseError("zero tensor extent", at);
    shape.push_back(e);
  }
  const std::size_t dtype_at = offset_of(is);
  const auto dtype = get_le<std::uint8_t>(is, "dtype");
  if (dtype > 1) throw ParseError("unknown dtype tag " + std::to_string(dtype), dtype_at);
  std::vector<T> values(static_cast<std::size_t>(numel(shape)));
  for (auto& v : values) {
    v = dtype == 0 ? static_cast<T>(get_le<float>(is, "payload")) : static_cast<T>(get_le<double>(is, "payload"));
  }
  return Tensor<T>::from(std::move(shape), std::move(values));
}

template <typename T>
void save_tensor(const std::filesystem::path& path, const Tensor<T>& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  write_tensor(os, t);
  if (!os) throw IoError("write failed for " + path.string());
}

template <typename T>
Tensor<T> load_tensor(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  return read_tensor<T>(is);
}

template <typename T>
void write_params(std::ostream& os, const ParamStore<T>& store) {
  os.write("DFPS", 4);
  put_le<std::uint32_t>(os, static_cast<std::uint32_t>(store.size()));
  for (const auto& e : store.entries()) {
    put_le<std::uint32_t>(os, static_cast<std::uint32_t>(e.name.size()));
    os.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
    write_tensor(os, e.tensor);
  }
}

template <typename T>
ParamStore<T> read_params(std::istream& is) {
  expect_magic(is, "DFPS");
  const auto count = get_le<std::uint32_t>(is, "parameter count");
  ParamStore<T> store;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::size_t at = offset_of(is);
    const auto len = get_le<std::uint32_t>(is, "name length");
    if (len > 4096) throw ParseError("implausible parameter name length", at);
    std::string name(len, '\0');
    if (!is.read(name.data(), len)) throw ParseError("truncated parameter name", at);
    auto t = read_tensor<T>(is);
    store.add(name, t.shape(), std::vector<T>(t.data().begin(), t.data().end()));
  }
  return store;
}

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const std::string& header, const ParamStore<T>& store) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  os << header;
  if (!header.empty() && header.back() != '\n') os << '\n';
  os << "#end-header\n";
  write_params(os, store);
  if (!os) throw IoError("write failed for " + path.string());
}

template <typename T>
Checkpoint<T> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  std::ostringstream header;
  std::string line;
  bool found = false;
  while (std::getline(is, line)) {
    if (line == "#end-header") {
      found = true;
      break;
    }
    header << line << '\n';
  }
  if (!found) throw ParseError("checkpoint header terminator missing", offset_of(is));
  return {header.str(), read_params<T>(is)};
}

#define PDSEG_INSTANTIATE_IO(T)                                                              \
  template void write_tensor(std::ostream&, const Tensor<T>&);                               \
  template Tensor<T> read_tensor(std::istream&);                                             \
  template void save_tensor(const std::filesystem::path&, const Tensor<T>&);                 \
  template Tensor<T> load_tensor(const std::filesystem::path&);                              \
  template void write_params(std::ostream&, const ParamStore<T>&);                           \
  template ParamStore<T> read_params(std::istream&);                                         \
  template void save_checkpoint(const std::filesystem::path&, const std::string&, const ParamStore<T>&); \
  template Checkpoint<T> load_checkpoint(const std::filesystem::path&);

PDSEG_INSTANTIATE_IO(float)
PDSEG_INSTANTIATE_IO(double)

}  // namespace pdseg
