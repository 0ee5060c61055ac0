#pragma once

#include <filesystem>
#include <iosfwd>

#include "deepca/tensor.hpp"

namespace deepca {

// DCAT binary tensor format, byte layout fixed:
//   magic "DCAT" | version 0x01 | dtype 0x01 (f64) |
//   u32 LE rank | rank x u32 LE extents | row-major f64 LE payload
void write_dcat(std::ostream& out, const Tensor& t);
Tensor read_dcat(std::istream& in);

void write_dcat_file(const std::filesystem::path& path, const Tensor& t);
// Rejects trailing bytes after the payload so file round-trips are exact.
Tensor read_dcat_file(const std::filesystem::path& path);

}  // namespace deepca
