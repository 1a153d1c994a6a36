#pragma once

#include "setcomp/image.hpp"
#include "setcomp/labelset.hpp"
#include "setcomp/random.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace setcomp {

// Per-class glyph exemplars, each kGlyphSize x kGlyphSize. Immutable once built.
struct GlyphStore {
  std::vector<std::string> class_names;
  std::vector<std::vector<Image>> exemplars;
  std::string provenance;  // "directory:<path>" or "synthetic:<seed>"

  int num_classes() const { return static_cast<int>(exemplars.size()); }
  const Image& exemplar(int class_id, int index) const;
};

enum class RenderMode { kOverlayMin, kGridScene };

struct RenderSpec {
  double shift_frac = 0.1;
  double scale_lo = 0.8;
  double scale_hi = 1.2;
  double rot_deg = 15.0;
  double noise_sigma = 0.05;
  RenderMode mode = RenderMode::kOverlayMin;
  int grid_rows = 2;
  int grid_cols = 2;

  void validate() const;
  static RenderSpec identity();
};

struct Scene {
  Image image;
  LabelSet truth;
  // Grid mode only: episode class index -> row-major cell index.
  std::map<int, int> cells;
};

// root/<class_name>/<exemplar>.png; classes ordered by name.
GlyphStore load_glyph_store(const std::filesystem::path& root);

struct StrokeSkeleton {
  std::vector<std::vector<Eigen::Vector2d>> strokes;
};

// The skeleton for one synthetic class; depends only on (seed, class_index).
StrokeSkeleton synth_skeleton(std::uint64_t seed, int class_index);
StrokeSkeleton jitter_skeleton(const StrokeSkeleton& s, double sigma, Rng& rng);
Image render_skeleton(const StrokeSkeleton& s, double pen_width = 2.0);

GlyphStore synth_glyph_store(int n_classes, int n_exemplars, std::uint64_t seed);

struct AffineParams {
  double tx = 0.0;
  double ty = 0.0;
  double scale = 1.0;
  double rot_deg = 0.0;
};

AffineParams sample_affine(const RenderSpec& spec, Rng& rng);
Image apply_affine(const Image& glyph, const AffineParams& p);
Image affine_jitter(const Image& glyph, const RenderSpec& spec, Rng& rng);

// Pointwise minimum of equally sized layers.
Image composite_min(const std::vector<Image>& layers);
void add_noise_and_clamp(Image& image, double sigma, Rng& rng);

Scene render_composite(const GlyphStore& store, const Episode& episode, const LabelSet& t,
                       const RenderSpec& spec, Rng& rng);
Scene render_scene(const GlyphStore& store, const Episode& episode, const LabelSet& t,
                   const RenderSpec& spec, Rng& rng);

// Dispatches on spec.mode.
Scene render(const GlyphStore& store, const Episode& episode, const LabelSet& t, const RenderSpec& spec,
             Rng& rng);

// Singleton render of an episode class from its fixed reference exemplar.
Image render_reference(const GlyphStore& store, const Episode& episode, int class_index,
                       const RenderSpec& spec, Rng& rng);

}  // namespace setcomp
