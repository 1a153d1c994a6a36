#pragma once

#include <Eigen/Core>

#include <filesystem>
#include <map>
#include <string>

namespace setcomp {

// Grayscale image, row-major so data()[y * width + x] is pixel (x, y).
// Values in [0, 1]; ink is dark (near 0) on a light background (near 1).
using Image = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline constexpr int kGlyphSize = 64;
inline constexpr float kBackground = 1.0f;

// Bilinear resampling with pixel-centre alignment; when shrinking, each output
// pixel averages a supersampled footprint so thin strokes are not dropped.
Image resize(const Image& src, int height, int width);

// Centres the image on a square canvas filled with the background value.
Image pad_to_square(const Image& src, float fill = kBackground);

// Pads to square, then resizes to size x size.
Image fit_square(const Image& src, int size);

// Sample with bilinear interpolation; coordinates outside read `fill`.
float sample_bilinear(const Image& src, double x, double y, float fill);

Image read_png_gray(const std::filesystem::path& path);

// 8-bit grayscale PNG. `text` entries become tEXt chunks.
void write_png_gray(const std::filesystem::path& path, const Image& image,
                    const std::map<std::string, std::string>& text = {});

}  // namespace setcomp
