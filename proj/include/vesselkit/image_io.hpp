#pragma once

// Image files: PFM (single-channel float, little-endian), PGM (P5, 8-bit) and
// PNG (8-bit gray or RGB via libpng).

#include <string>

#include "vesselkit/image.hpp"
#include "vesselkit/preprocess.hpp"

namespace vk {

void write_pfm(const std::string& path, const ImagePlane& image);
ImagePlane read_pfm(const std::string& path);

void write_pgm(const std::string& path, const Grid<std::uint8_t>& image);
Grid<std::uint8_t> read_pgm(const std::string& path);

void write_png(const std::string& path, const Grid<std::uint8_t>& gray);
/// Gray, gray+alpha, RGB or RGBA 8-bit PNG; alpha is dropped.
ColorImage read_png(const std::string& path);

/// 0/1 plane written as 0/255.
void write_mask_png(const std::string& path, const BinaryPlane& mask);
BinaryPlane read_mask_png(const std::string& path);

/// Values in [0,1] scaled to 0..255 (clamped, rounded).
Grid<std::uint8_t> to_8bit(const ImagePlane& image);

/// Loads an intensity plane in [0,1] by extension: .pfm as is, .pgm / gray
/// .png divided by 255, colour .png via its green channel.
ImagePlane load_plane(const std::string& path);

}  // namespace vk
