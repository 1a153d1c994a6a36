#include "setcomp/plot.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace setcomp {

namespace {

constexpr int kMargin = 24;

void draw_line(Image& img, double x0, double y0, double x1, double y1, float value) {
  const int steps = static_cast<int>(std::ceil(std::max(std::abs(x1 - x0), std::abs(y1 - y0)))) + 1;
  for (int i = 0; i <= steps; ++i) {
    const double t = static_cast<double>(i) / steps;
    const auto x = static_cast<Eigen::Index>(std::lround(x0 + t * (x1 - x0)));
    const auto y = static_cast<Eigen::Index>(std::lround(y0 + t * (y1 - y0)));
    if (x >= 0 && y >= 0 && x < img.cols() && y < img.rows()) img(y, x) = std::min(img(y, x), value);
  }
}

void draw_frame(Image& img) {
  const double l = kMargin;
  const double r = static_cast<double>(img.cols() - kMargin);
  const double t = kMargin;
  const double b = static_cast<double>(img.rows() - kMargin);
  draw_line(img, l, t, r, t, 0.0f);
  draw_line(img, l, b, r, b, 0.0f);
  draw_line(img, l, t, l, b, 0.0f);
  draw_line(img, r, t, r, b, 0.0f);
}

}  // namespace

Image line_plot(const std::vector<std::vector<double>>& series, int width, int height) {
  if (width <= 2 * kMargin || height <= 2 * kMargin) throw std::invalid_argument("line_plot: canvas too small");
  Image img = Image::Constant(height, width, 1.0f);
  draw_frame(img);
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  std::size_t longest = 0;
  for (const auto& s : series) {
    longest = std::max(longest, s.size());
    for (double v : s) {
      if (std::isfinite(v)) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
    }
  }
  if (longest < 2 || !std::isfinite(lo)) return img;
  if (hi - lo < 1e-12) hi = lo + 1.0;
  const double w = width - 2.0 * kMargin;
  const double h = height - 2.0 * kMargin;
  for (std::size_t k = 0; k < series.size(); ++k) {
    const float shade = std::min(0.6f, 0.2f * static_cast<float>(k));
    const auto& s = series[k];
    for (std::size_t i = 1; i < s.size(); ++i) {
      if (!std::isfinite(s[i - 1]) || !std::isfinite(s[i])) continue;
      const double x0 = kMargin + w * static_cast<double>(i - 1) / static_cast<double>(longest - 1);
      const double x1 = kMargin + w * static_cast<double>(i) / static_cast<double>(longest - 1);
      const double y0 = kMargin + h * (1.0 - (s[i - 1] - lo) / (hi - lo));
      const double y1 = kMargin + h * (1.0 - (s[i] - lo) / (hi - lo));
      draw_line(img, x0, y0, x1, y1, shade);
    }
  }
  return img;
}

Image histogram_plot(const std::vector<double>& a, const std::vector<double>& b, double lo, double hi, int bins,
                     int width, int height) {
  if (!(hi > lo) || bins < 1) throw std::invalid_argument("histogram_plot: bad range");
  Image img = Image::Constant(height, width, 1.0f);
  draw_frame(img);
  auto count = [&](const std::vector<double>& v) {
    std::vector<double> c(static_cast<std::size_t>(bins), 0.0);
    for (double x : v) {
      if (!std::isfinite(x)) continue;
      const int i = std::clamp(static_cast<int>((x - lo) / (hi - lo) * bins), 0, bins - 1);
      c[static_cast<std::size_t>(i)] += 1.0;
    }
    return c;
  };
  const auto ca = count(a);
  const auto cb = count(b);
  double top = 1.0;
  for (double c : ca) top = std::max(top, c);
  for (double c : cb) top = std::max(top, c);
  const double w = (width - 2.0 * kMargin) / bins;
  const double h = height - 2.0 * kMargin;
  const double base = height - kMargin;
  for (int i = 0; i < bins; ++i) {
    const double x0 = kMargin + w * i;
    const double ya = base - h * ca[static_cast<std::size_t>(i)] / top;
    for (double x = x0 + 1; x < x0 + w - 1; x += 1.0) draw_line(img, x, base, x, ya, 0.35f);
    const double yb = base - h * cb[static_cast<std::size_t>(i)] / top;
    draw_line(img, x0, yb, x0 + w, yb, 0.0f);
  }
  return img;
}

Image montage(const std::vector<Image>& tiles, int columns) {
  if (tiles.empty() || columns < 1) throw std::invalid_argument("montage: nothing to tile");
  const auto th = tiles.front().rows();
  const auto tw = tiles.front().cols();
  const int rows = (static_cast<int>(tiles.size()) + columns - 1) / columns;
  constexpr int gutter = 2;
  Image out = Image::Constant(rows * (th + gutter) - gutter, columns * (tw + gutter) - gutter, 1.0f);
  for (std::size_t i = 0; i < tiles.size(); ++i) {
    if (tiles[i].rows() != th || tiles[i].cols() != tw) throw std::invalid_argument("montage: tiles differ in size");
    const auto r = static_cast<Eigen::Index>(i) / columns;
    const auto c = static_cast<Eigen::Index>(i) % columns;
    out.block(r * (th + gutter), c * (tw + gutter), th, tw) = tiles[i];
  }
  return out;
}

}  // namespace setcomp
