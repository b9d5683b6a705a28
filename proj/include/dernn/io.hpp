#pragma once

// Binary containers.
//
// HSIC (cubes, planes, masks):
//   "HSIC" | u32 version=1 | u32 H | u32 W | u32 C | f32 payload[C][H][W]
// The payload is band-major: plane c is written row by row before plane c+1.
//
// DPRM (parameter stores):
//   "DPRM" | u32 version=1 | u32 count |
//   count x { u32 name_len | name bytes | u32 rank | u32 extents[rank] | f32 payload (row-major) }
// Entries appear in lexicographic name order.
//
// All integers and floats are little-endian. Files are written to a temporary
// sibling and renamed into place.

#include <cstdint>
#include <string>

#include "dernn/param_store.hpp"
#include "dernn/tensor.hpp"

namespace dernn::io {

inline constexpr std::uint32_t kHsicVersion = 1;
inline constexpr std::uint32_t kDprmVersion = 1;

// Rank-2 [H, W] tensors are stored with C = 1; rank-3 as [H, W, C].
std::string encode_hsic(const Tensor& t);
// Always returns a rank-3 [H, W, C] tensor of the stored float values.
Tensor decode_hsic(const std::string& bytes);

void write_hsic(const std::string& path, const Tensor& t);
Tensor read_hsic(const std::string& path);

std::string encode_params(const ParamStore& store);
ParamStore decode_params(const std::string& bytes);

void write_params(const std::string& path, const ParamStore& store);
ParamStore read_params(const std::string& path);

// Atomic text/binary file helpers.
void write_file_atomic(const std::string& path, const std::string& bytes);
std::string read_file(const std::string& path);

}  // namespace dernn::io
