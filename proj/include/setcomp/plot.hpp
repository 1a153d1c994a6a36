#pragma once

#include "setcomp/image.hpp"

#include <vector>

namespace setcomp {

// Minimal grayscale charts for run reports: white canvas, black axes frame.
// Series are drawn in successively lighter grays; y is auto-scaled over all
// finite values.
Image line_plot(const std::vector<std::vector<double>>& series, int width = 480, int height = 320);

// Two overlaid histograms over [lo, hi]: dark bars for `a`, light outline for `b`.
Image histogram_plot(const std::vector<double>& a, const std::vector<double>& b, double lo, double hi, int bins = 40,
                     int width = 480, int height = 320);

// Tiles equally sized images row-major with a 2-pixel white gutter.
Image montage(const std::vector<Image>& tiles, int columns);

}  // namespace setcomp
