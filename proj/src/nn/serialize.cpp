#include "difflm/nn/serialize.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <stdexcept>
#include <vector>

namespace difflm::nn {

namespace {

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

template <typename T>
void put_le(std::ostream& out, T value) {
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  out.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <typename T>
T get_le(std::istream& in, const char* what) {
  unsigned char bytes[sizeof(T)];
  if (!in.read(reinterpret_cast<char*>(bytes), sizeof(T))) {
    throw std::runtime_error(std::string("parameter file truncated while reading ") + what);
  }
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  T value;
  std::memcpy(&value, bytes, sizeof(T));
  return value;
}

std::string get_bytes(std::istream& in, uint64_t n, const char* what) {
  std::string s(n, '\0');
  if (n > 0 && !in.read(s.data(), static_cast<std::streamsize>(n))) {
    throw std::runtime_error(std::string("parameter file truncated while reading ") + what);
  }
  return s;
}

void check_magic(std::istream& in) {
  char magic[sizeof(kParamMagic)];
  if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kParamMagic, sizeof(magic)) != 0) {
    throw std::runtime_error("not a parameter file (bad magic)");
  }
  const auto version = get_le<uint32_t>(in, "version");
  if (version != kParamFormatVersion) {
    throw std::runtime_error("unsupported parameter file version " + std::to_string(version));
  }
}

}  // namespace

template <typename Real>
void write_parameters(std::ostream& out, const ParameterStore<Real>& store,
                      std::string_view header) {
  out.write(kParamMagic, sizeof(kParamMagic));
  put_le<uint32_t>(out, kParamFormatVersion);
  put_le<uint8_t>(out, static_cast<uint8_t>(sizeof(Real)));
  put_le<uint64_t>(out, header.size());
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  put_le<uint64_t>(out, store.size());
  for (const auto& e : store.entries()) {
    put_le<uint32_t>(out, static_cast<uint32_t>(e.name.size()));
    out.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
    put_le<uint32_t>(out, static_cast<uint32_t>(e.value.rank()));
    for (size_t d : e.value.shape()) put_le<uint64_t>(out, d);
    for (Real v : e.value.values()) put_le<Real>(out, v);
  }
  if (!out) throw std::runtime_error("failed writing parameter file");
}

template <typename Real>
LoadedParameters<Real> read_parameters(std::istream& in) {
  check_magic(in);
  const auto width = get_le<uint8_t>(in, "value width");
  if (width != sizeof(Real)) {
    throw std::runtime_error("parameter file stores " + std::to_string(width) +
                             "-byte values, expected " + std::to_string(sizeof(Real)));
  }
  LoadedParameters<Real> loaded;
  const auto header_len = get_le<uint64_t>(in, "header length");
  loaded.header = get_bytes(in, header_len, "header");
  const auto count = get_le<uint64_t>(in, "parameter count");
  for (uint64_t p = 0; p < count; ++p) {
    const auto name_len = get_le<uint32_t>(in, "name length");
    std::string name = get_bytes(in, name_len, "parameter name");
    const auto rank = get_le<uint32_t>(in, "rank");
    Shape shape(rank);
    for (auto& d : shape) d = static_cast<size_t>(get_le<uint64_t>(in, "dimension"));
    std::vector<Real> values(shape_size(shape));
    for (Real& v : values) v = get_le<Real>(in, "values");
    loaded.params.add(std::move(name), Tensor<Real>(std::move(shape), std::move(values)));
  }
  return loaded;
}

size_t peek_value_width(std::istream& in) {
  const auto start = in.tellg();
  check_magic(in);
  const auto width = get_le<uint8_t>(in, "value width");
  in.seekg(start);
  return width;
}

template void write_parameters<float>(std::ostream&, const ParameterStore<float>&,
                                      std::string_view);
template void write_parameters<double>(std::ostream&, const ParameterStore<double>&,
                                       std::string_view);
template LoadedParameters<float> read_parameters<float>(std::istream&);
template LoadedParameters<double> read_parameters<double>(std::istream&);

}  // namespace difflm::nn
