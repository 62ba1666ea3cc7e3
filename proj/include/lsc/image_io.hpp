#pragma once

#include <string>

#include "lsc/tensor.hpp"

// PNG and baseline JPEG ingestion plus PNG export. Pixel tensors are [3,H,W]
// (or [1,H,W] grayscale for export) with values in [0,1].
namespace lsc::img {

// Detects the format from the file's magic bytes; grayscale and paletted
// sources expand to RGB. Unreadable or unsupported files throw DataError.
Tensor read_image(const std::string& path);

// Writes [3,H,W] as 8-bit RGB or [1,H,W] as 8-bit grayscale; values are
// clamped to [0,1] before quantization.
void write_png(const std::string& path, const Tensor& image);

}  // namespace lsc::img
