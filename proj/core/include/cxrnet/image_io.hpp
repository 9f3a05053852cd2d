#pragma once

#include <filesystem>
#include <string>

#include "cxrnet/binio.hpp"
#include "cxrnet/tensor.hpp"

// Netpbm grayscale (P2/P5, 8 or 16 bit) and colour (P6) images. Pixel values
// map to [0,1] by dividing by maxval.
namespace cxr::img {

Tensor decode_pgm(const io::Bytes& bytes, const std::string& context = "image");
Tensor load_pgm(const std::filesystem::path& path);

// [H,W] values in [0,1] (clamped), binary P5, maxval 255 or 65535.
io::Bytes encode_pgm(const Tensor& t, int bits = 16);
void save_pgm(const Tensor& t, const std::filesystem::path& path, int bits = 16);

// [H,W,3] values in [0,1] (clamped), binary P6 with maxval 255.
io::Bytes encode_ppm(const Tensor& rgb);
void save_ppm(const Tensor& rgb, const std::filesystem::path& path);

}  // namespace cxr::img
