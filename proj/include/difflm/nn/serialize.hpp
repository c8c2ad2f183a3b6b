#pragma once

#include <istream>
#include <ostream>
#include <string>
#include <string_view>

#include "difflm/nn/parameter_store.hpp"

namespace difflm::nn {

// Binary parameter file, all integers little-endian:
//
//   magic "DLMPARAM" | u32 version | u8 bytes-per-value (4 or 8)
//   u64 header length | header bytes (free-form text, e.g. JSON)
//   u64 parameter count
//   per parameter: u32 name length | name | u32 rank | u64 dims[rank] | values
inline constexpr char kParamMagic[8] = {'D', 'L', 'M', 'P', 'A', 'R', 'A', 'M'};
inline constexpr uint32_t kParamFormatVersion = 1;

template <typename Real>
struct LoadedParameters {
  std::string header;
  ParameterStore<Real> params;
};

template <typename Real>
void write_parameters(std::ostream& out, const ParameterStore<Real>& store,
                      std::string_view header);

template <typename Real>
LoadedParameters<Real> read_parameters(std::istream& in);

// Bytes per stored value, read without consuming the stream's parameters.
size_t peek_value_width(std::istream& in);

extern template void write_parameters<float>(std::ostream&, const ParameterStore<float>&,
                                             std::string_view);
extern template void write_parameters<double>(std::ostream&, const ParameterStore<double>&,
                                              std::string_view);
extern template LoadedParameters<float> read_parameters<float>(std::istream&);
extern template LoadedParameters<double> read_parameters<double>(std::istream&);

}  // namespace difflm::nn
