#pragma once

#include <string>
#include <vector>

#include "cardseg/data.hpp"

namespace cardseg {

/// 8-bit grayscale PNG; pixel values are scaled from/to [0,1].
Image read_png_gray(const std::string& path);
void write_png_gray(const std::string& path, const Image& image);

/// Image with the mask painted on top (label index scaled into distinct
/// gray bands), for quick visual checks.
Image overlay_mask(const Image& image, const LabelMask& mask);

/// Side-by-side composite of equally sized images with a 2px separator.
Image compose_row(const std::vector<Image>& images);

}  // namespace cardseg
