#include "setcomp/image.hpp"

#include "setcomp/errors.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>
#include <stdexcept>
#include <vector>

namespace setcomp {

float sample_bilinear(const Image& src, double x, double y, float fill) {
  const double fx = std::floor(x);
  const double fy = std::floor(y);
  const auto x0 = static_cast<long>(fx);
  const auto y0 = static_cast<long>(fy);
  const double ax = x - fx;
  const double ay = y - fy;
  auto at = [&](long xx, long yy) -> double {
    if (xx < 0 || yy < 0 || xx >= src.cols() || yy >= src.rows()) return fill;
    return src(yy, xx);
  };
  const double top = at(x0, y0) * (1.0 - ax) + at(x0 + 1, y0) * ax;
  const double bottom = at(x0, y0 + 1) * (1.0 - ax) + at(x0 + 1, y0 + 1) * ax;
  return static_cast<float>(top * (1.0 - ay) + bottom * ay);
}

Image resize(const Image& src, int height, int width) {
  if (height < 1 || width < 1) throw std::invalid_argument("resize: target size must be positive");
  if (src.rows() == height && src.cols() == width) return src;
  Image out(height, width);
  const double sy = static_cast<double>(src.rows()) / height;
  const double sx = static_cast<double>(src.cols()) / width;
  const int ny = std::max(1, static_cast<int>(std::ceil(sy)));
  const int nx = std::max(1, static_cast<int>(std::ceil(sx)));
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      double acc = 0.0;
      for (int j = 0; j < ny; ++j) {
        const double v = (y + (j + 0.5) / ny) * sy - 0.5;
        for (int i = 0; i < nx; ++i) {
          const double u = (x + (i + 0.5) / nx) * sx - 0.5;
          // Clamp to the border rather than fading to background.
          const double cu = std::clamp(u, 0.0, static_cast<double>(src.cols() - 1));
          const double cv = std::clamp(v, 0.0, static_cast<double>(src.rows() - 1));
          acc += sample_bilinear(src, cu, cv, kBackground);
        }
      }
      out(y, x) = static_cast<float>(acc / (nx * ny));
    }
  }
  return out;
}

Image pad_to_square(const Image& src, float fill) {
  const auto side = std::max(src.rows(), src.cols());
  if (src.rows() == src.cols()) return src;
  Image out = Image::Constant(side, side, fill);
  out.block((side - src.rows()) / 2, (side - src.cols()) / 2, src.rows(), src.cols()) = src;
  return out;
}

Image fit_square(const Image& src, int size) { return resize(pad_to_square(src), size, size); }

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

// Only trivially destructible locals live in this frame, so longjmp out of
// libpng is safe.
bool write_rows(std::FILE* file, png_uint_32 width, png_uint_32 height, const unsigned char* pixels,
                png_text* chunks, int n_chunks) {
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) return false;
  png_infop info = png_create_info_struct(png);
  if (!info || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    return false;
  }
  png_init_io(png, file);
  png_set_IHDR(png, info, width, height, 8, PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  if (n_chunks > 0) png_set_text(png, info, chunks, n_chunks);
  png_write_info(png, info);
  for (png_uint_32 y = 0; y < height; ++y) png_write_row(png, pixels + static_cast<std::size_t>(y) * width);
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return true;
}

}  // namespace

Image read_png_gray(const std::filesystem::path& path) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.c_str())) {
    const std::string why = img.message;
    png_image_free(&img);
    throw IngestionError("cannot read image " + path.string() + ": " + why);
  }
  img.format = PNG_FORMAT_GRAY;
  std::vector<unsigned char> buffer(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, buffer.data(), 0, nullptr)) {
    const std::string why = img.message;
    png_image_free(&img);
    throw IngestionError("cannot decode image " + path.string() + ": " + why);
  }
  Image out(img.height, img.width);
  for (png_uint_32 y = 0; y < img.height; ++y) {
    for (png_uint_32 x = 0; x < img.width; ++x) {
      out(y, x) = static_cast<float>(buffer[static_cast<std::size_t>(y) * img.width + x]) / 255.0f;
    }
  }
  return out;
}

void write_png_gray(const std::filesystem::path& path, const Image& image,
                    const std::map<std::string, std::string>& text) {
  FilePtr file(std::fopen(path.c_str(), "wb"));
  if (!file) throw std::runtime_error("cannot write " + path.string());
  const auto width = static_cast<png_uint_32>(image.cols());
  const auto height = static_cast<png_uint_32>(image.rows());
  std::vector<unsigned char> pixels(static_cast<std::size_t>(width) * height);
  for (png_uint_32 y = 0; y < height; ++y) {
    for (png_uint_32 x = 0; x < width; ++x) {
      const float v = std::clamp(image(y, x), 0.0f, 1.0f);
      pixels[static_cast<std::size_t>(y) * width + x] = static_cast<unsigned char>(std::lround(v * 255.0f));
    }
  }
  std::vector<png_text> chunks;
  for (const auto& [key, value] : text) {
    png_text t{};
    t.compression = PNG_TEXT_COMPRESSION_NONE;
    t.key = const_cast<char*>(key.c_str());
    t.text = const_cast<char*>(value.c_str());
    t.text_length = value.size();
    chunks.push_back(t);
  }
  if (!write_rows(file.get(), width, height, pixels.data(), chunks.data(), static_cast<int>(chunks.size()))) {
    throw std::runtime_error("PNG encoding failed for " + path.string());
  }
}

}  // namespace setcomp
