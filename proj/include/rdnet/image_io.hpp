#pragma once

#include <filesystem>

#include "rdnet/tensor.hpp"

namespace rdnet {

// Reads a PNG or binary PPM (P6) as a 3 x H x W tensor in [0, 1]. Grey,
// palette and alpha PNGs are expanded to RGB; 16-bit samples keep full
// precision. The format is detected from the file's magic bytes.
Tensor<float> read_image(const std::filesystem::path& path);

// Writes 3 x H x W (or 1 x 3 x H x W) values clamped to [0, 1] and rounded
// to 8 bits. The extension picks the format: ".ppm" writes P6, anything else
// PNG.
void write_image(const std::filesystem::path& path, const Tensor<float>& image);

}  // namespace rdnet
