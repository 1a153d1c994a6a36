#include "setcomp/renderer.hpp"

#include "setcomp/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace setcomp {

const Image& GlyphStore::exemplar(int class_id, int index) const {
  return exemplars.at(static_cast<std::size_t>(class_id)).at(static_cast<std::size_t>(index));
}

void RenderSpec::validate() const {
  if (!(shift_frac >= 0.0 && shift_frac <= 0.5)) throw std::invalid_argument("shift_frac must be in [0, 0.5]");
  if (!(scale_lo > 0.0 && scale_lo <= scale_hi)) throw std::invalid_argument("scale range must satisfy 0 < lo <= hi");
  if (!(rot_deg >= 0.0)) throw std::invalid_argument("rot_deg must be nonnegative");
  if (!(noise_sigma >= 0.0)) throw std::invalid_argument("noise_sigma must be nonnegative");
  if (mode == RenderMode::kGridScene && (grid_rows < 1 || grid_cols < 1)) {
    throw std::invalid_argument("grid dimensions must be positive");
  }
}

RenderSpec RenderSpec::identity() {
  RenderSpec s;
  s.shift_frac = 0.0;
  s.scale_lo = s.scale_hi = 1.0;
  s.rot_deg = 0.0;
  s.noise_sigma = 0.0;
  return s;
}

GlyphStore load_glyph_store(const std::filesystem::path& root) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(root)) throw IngestionError("not a directory: " + root.string());
  std::vector<fs::path> class_dirs;
  for (const auto& entry : fs::directory_iterator(root)) {
    if (entry.is_directory()) class_dirs.push_back(entry.path());
  }
  std::sort(class_dirs.begin(), class_dirs.end());
  GlyphStore store;
  store.provenance = "directory:" + root.string();
  for (const auto& dir : class_dirs) {
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(dir)) {
      if (entry.is_regular_file()) files.push_back(entry.path());
    }
    if (files.empty()) continue;
    std::sort(files.begin(), files.end());
    std::vector<Image> images;
    images.reserve(files.size());
    for (const auto& f : files) {
      Image img = read_png_gray(f);
      images.push_back(resize(img, kGlyphSize, kGlyphSize));
    }
    store.class_names.push_back(dir.filename().string());
    store.exemplars.push_back(std::move(images));
  }
  if (store.exemplars.empty()) throw EmptyStoreError("no glyph classes found under " + root.string());
  return store;
}

StrokeSkeleton synth_skeleton(std::uint64_t seed, int class_index) {
  Rng rng = make_rng({seed, 0x67'6c'79'70'68ULL, static_cast<std::uint64_t>(class_index)});
  StrokeSkeleton s;
  const int n_strokes = uniform_int(rng, 3, 6);
  constexpr double lo = 10.0;
  constexpr double hi = kGlyphSize - 10.0;
  for (int i = 0; i < n_strokes; ++i) {
    const int n_points = uniform_int(rng, 2, 4);
    std::vector<Eigen::Vector2d> stroke;
    Eigen::Vector2d p(uniform(rng, lo, hi), uniform(rng, lo, hi));
    stroke.push_back(p);
    double heading = uniform(rng, 0.0, 2.0 * std::numbers::pi);
    for (int j = 1; j < n_points; ++j) {
      heading += uniform(rng, -1.6, 1.6);
      const double len = uniform(rng, 10.0, 24.0);
      p += len * Eigen::Vector2d(std::cos(heading), std::sin(heading));
      p = p.cwiseMax(lo).cwiseMin(hi);
      stroke.push_back(p);
    }
    s.strokes.push_back(std::move(stroke));
  }
  return s;
}

StrokeSkeleton jitter_skeleton(const StrokeSkeleton& s, double sigma, Rng& rng) {
  StrokeSkeleton out = s;
  for (auto& stroke : out.strokes) {
    for (auto& p : stroke) {
      p.x() += sigma * standard_normal(rng);
      p.y() += sigma * standard_normal(rng);
    }
  }
  return out;
}

Image render_skeleton(const StrokeSkeleton& s, double pen_width) {
  Image dist = Image::Constant(kGlyphSize, kGlyphSize, 1e9f);
  const double reach = pen_width / 2.0 + 1.0;
  for (const auto& stroke : s.strokes) {
    for (std::size_t i = 0; i + 1 < stroke.size(); ++i) {
      const Eigen::Vector2d a = stroke[i];
      const Eigen::Vector2d ab = stroke[i + 1] - a;
      const double len2 = std::max(ab.squaredNorm(), 1e-12);
      const int x0 = std::max(0, static_cast<int>(std::floor(std::min(a.x(), stroke[i + 1].x()) - reach)));
      const int x1 = std::min(kGlyphSize - 1, static_cast<int>(std::ceil(std::max(a.x(), stroke[i + 1].x()) + reach)));
      const int y0 = std::max(0, static_cast<int>(std::floor(std::min(a.y(), stroke[i + 1].y()) - reach)));
      const int y1 = std::min(kGlyphSize - 1, static_cast<int>(std::ceil(std::max(a.y(), stroke[i + 1].y()) + reach)));
      for (int y = y0; y <= y1; ++y) {
        for (int x = x0; x <= x1; ++x) {
          const Eigen::Vector2d ap = Eigen::Vector2d(x, y) - a;
          const double t = std::clamp(ap.dot(ab) / len2, 0.0, 1.0);
          const double d = (ap - t * ab).norm();
          dist(y, x) = std::min(dist(y, x), static_cast<float>(d));
        }
      }
    }
  }
  // Antialiased pen: full ink within half width minus half a pixel.
  const float inner = static_cast<float>(pen_width / 2.0 - 0.5);
  return (dist.array() - inner).cwiseMax(0.0f).cwiseMin(1.0f).matrix();
}

GlyphStore synth_glyph_store(int n_classes, int n_exemplars, std::uint64_t seed) {
  if (n_classes < 1 || n_exemplars < 1) {
    throw std::invalid_argument("synth_glyph_store: counts must be positive");
  }
  GlyphStore store;
  store.provenance = "synthetic:" + std::to_string(seed);
  store.exemplars.resize(static_cast<std::size_t>(n_classes));
  for (int c = 0; c < n_classes; ++c) {
    const StrokeSkeleton skeleton = synth_skeleton(seed, c);
    Rng rng = make_rng({seed, 0x65'78'65'6dULL, static_cast<std::uint64_t>(c)});
    auto& images = store.exemplars[static_cast<std::size_t>(c)];
    images.reserve(static_cast<std::size_t>(n_exemplars));
    for (int e = 0; e < n_exemplars; ++e) images.push_back(render_skeleton(jitter_skeleton(skeleton, 1.5, rng)));
    store.class_names.push_back("synth_" + std::to_string(c));
  }
  return store;
}

AffineParams sample_affine(const RenderSpec& spec, Rng& rng) {
  const double max_shift = spec.shift_frac * kGlyphSize;
  AffineParams p;
  p.tx = uniform(rng, -max_shift, max_shift);
  p.ty = uniform(rng, -max_shift, max_shift);
  p.scale = uniform(rng, spec.scale_lo, spec.scale_hi);
  p.rot_deg = uniform(rng, -spec.rot_deg, spec.rot_deg);
  return p;
}

Image apply_affine(const Image& glyph, const AffineParams& p) {
  const double cx = (glyph.cols() - 1) / 2.0;
  const double cy = (glyph.rows() - 1) / 2.0;
  const double theta = p.rot_deg * std::numbers::pi / 180.0;
  const double c = std::cos(theta);
  const double s = std::sin(theta);
  Image out(glyph.rows(), glyph.cols());
  for (Eigen::Index y = 0; y < glyph.rows(); ++y) {
    for (Eigen::Index x = 0; x < glyph.cols(); ++x) {
      // Inverse map: undo translation, rotation, then scale about the centre.
      const double dx = static_cast<double>(x) - cx - p.tx;
      const double dy = static_cast<double>(y) - cy - p.ty;
      const double sx = (c * dx + s * dy) / p.scale + cx;
      const double sy = (-s * dx + c * dy) / p.scale + cy;
      out(y, x) = std::clamp(sample_bilinear(glyph, sx, sy, kBackground), 0.0f, 1.0f);
    }
  }
  return out;
}

Image affine_jitter(const Image& glyph, const RenderSpec& spec, Rng& rng) {
  return apply_affine(glyph, sample_affine(spec, rng));
}

Image composite_min(const std::vector<Image>& layers) {
  if (layers.empty()) throw std::invalid_argument("composite_min: no layers");
  Image out = layers.front();
  for (std::size_t i = 1; i < layers.size(); ++i) {
    if (layers[i].rows() != out.rows() || layers[i].cols() != out.cols()) {
      throw std::invalid_argument("composite_min: layer size mismatch");
    }
    out = out.cwiseMin(layers[i]);
  }
  return out;
}

void add_noise_and_clamp(Image& image, double sigma, Rng& rng) {
  if (sigma > 0.0) {
    for (Eigen::Index i = 0; i < image.size(); ++i) {
      image.data()[i] += static_cast<float>(sigma * standard_normal(rng));
    }
  }
  image = image.cwiseMax(0.0f).cwiseMin(1.0f);
}

namespace {

void check_render_args(const GlyphStore& store, const Episode& episode, const LabelSet& t) {
  if (t.empty()) throw std::invalid_argument("cannot render an empty label set");
  if (t.universe_size() != episode.size()) throw std::invalid_argument("label set universe does not match episode");
  for (int c : episode.class_ids) {
    if (c < 0 || c >= store.num_classes()) throw std::invalid_argument("episode class outside glyph store");
  }
}

Image jittered_exemplar(const GlyphStore& store, int class_id, const RenderSpec& spec, Rng& rng) {
  const auto& pool = store.exemplars[static_cast<std::size_t>(class_id)];
  const auto pick = uniform_index(rng, pool.size());
  return affine_jitter(pool[pick], spec, rng);
}

}  // namespace

Scene render_composite(const GlyphStore& store, const Episode& episode, const LabelSet& t,
                       const RenderSpec& spec, Rng& rng) {
  check_render_args(store, episode, t);
  std::vector<Image> layers;
  for (int i : canonical_elements(t)) {
    layers.push_back(jittered_exemplar(store, episode.class_ids[static_cast<std::size_t>(i)], spec, rng));
  }
  Scene scene{composite_min(layers), t, {}};
  add_noise_and_clamp(scene.image, spec.noise_sigma, rng);
  return scene;
}

Scene render_scene(const GlyphStore& store, const Episode& episode, const LabelSet& t, const RenderSpec& spec,
                   Rng& rng) {
  check_render_args(store, episode, t);
  const int n_cells = spec.grid_rows * spec.grid_cols;
  if (n_cells < t.size()) {
    throw std::invalid_argument("grid has " + std::to_string(n_cells) + " cells for " + std::to_string(t.size()) +
                                " classes");
  }
  std::vector<int> cells(static_cast<std::size_t>(n_cells));
  for (int i = 0; i < n_cells; ++i) cells[static_cast<std::size_t>(i)] = i;
  shuffle(cells, rng);
  Scene scene;
  scene.truth = t;
  scene.image = Image::Constant(kGlyphSize * spec.grid_rows, kGlyphSize * spec.grid_cols, kBackground);
  std::size_t next = 0;
  for (int i : canonical_elements(t)) {
    const int cell = cells[next++];
    const Image glyph = jittered_exemplar(store, episode.class_ids[static_cast<std::size_t>(i)], spec, rng);
    const int row = cell / spec.grid_cols;
    const int col = cell % spec.grid_cols;
    scene.image.block(row * kGlyphSize, col * kGlyphSize, kGlyphSize, kGlyphSize) = glyph;
    scene.cells[i] = cell;
  }
  add_noise_and_clamp(scene.image, spec.noise_sigma, rng);
  return scene;
}

Scene render(const GlyphStore& store, const Episode& episode, const LabelSet& t, const RenderSpec& spec, Rng& rng) {
  return spec.mode == RenderMode::kGridScene ? render_scene(store, episode, t, spec, rng)
                                             : render_composite(store, episode, t, spec, rng);
}

Image render_reference(const GlyphStore& store, const Episode& episode, int class_index, const RenderSpec& spec,
                       Rng& rng) {
  const auto ci = static_cast<std::size_t>(class_index);
  const int class_id = episode.class_ids.at(ci);
  const int exemplar = episode.reference_exemplar_ids.empty() ? 0 : episode.reference_exemplar_ids.at(ci);
  Image img = affine_jitter(store.exemplar(class_id, exemplar), spec, rng);
  add_noise_and_clamp(img, spec.noise_sigma, rng);
  return img;
}

}  // namespace setcomp
