#pragma once

#include <filesystem>
#include <string>

#include "mmc/tensor.hpp"

namespace mmc {

// On-disk tensor blob:
//   "PVTD" | version u8 (0x01) | dtype u8 (0x01 = f64 LE) | rank u8 |
//   rank x u64 LE dims | row-major f64 LE payload
// Readers reject unknown magic, version or dtype.
void write_tensor_file(const std::filesystem::path& path, const Tensor& t);
Tensor read_tensor_file(const std::filesystem::path& path);

// Write to a temp file in the same directory, then rename into place.
void atomic_write_file(const std::filesystem::path& path, const std::string& contents);

}  // namespace mmc
