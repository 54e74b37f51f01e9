#pragma once

#include <filesystem>

#include "tafnet/tensor.hpp"

namespace tafnet {

// Binary 8-bit PPM (P6) / PGM (P5) with maxval 255. Tensors hold values
// in [0, 1]; writing rounds to the nearest of 256 levels.
void write_ppm(const Tensor4& rgb, const std::filesystem::path& path);   // (1,3,h,w)
void write_pgm(const Tensor4& gray, const std::filesystem::path& path);  // (1,1,h,w)
Tensor4 read_ppm(const std::filesystem::path& path);
Tensor4 read_pgm(const std::filesystem::path& path);

}  // namespace tafnet
