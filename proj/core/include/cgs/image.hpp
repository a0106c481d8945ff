#pragma once

#include <string>

#include "cgs/tensor.hpp"

namespace cgs {

/// Images are Tensors shaped [H, W, C] with values in [0,1], C = 3 (RGB) or
/// 4 (RGBA, straight alpha). PNG I/O quantizes to 8 bit.
Tensor load_png(const std::string& path);
void save_png(const Tensor& image, const std::string& path);

/// fg.rgb * a + bg * (1 - a); fg is [H,W,4], result [H,W,3].
Tensor composite_over(const Tensor& rgba, const double bg[3]);

double image_mse(const Tensor& a, const Tensor& b);

}  // namespace cgs
