#pragma once

#include "setcomp/labelset.hpp"
#include "setcomp/random.hpp"
#include "setcomp/renderer.hpp"

#include <span>
#include <vector>

namespace setcomp {

// Uniform over nonempty T' != t with |T'| <= cap. Throws InvalidState when
// that pool is empty.
LabelSet sample_negative(int k, int cap, const LabelSet& t, Rng& rng);

// Same draw over a precomputed canonical candidate list.
LabelSet sample_negative(std::span<const LabelSet> candidates, const LabelSet& t, Rng& rng);

// |T| ~ size_weights (index l-1 weights size l; empty means uniform over
// 1..cap), then T uniform among sets of that size.
LabelSet sample_label_set(int k, int cap, std::span<const double> size_weights, Rng& rng);

// k distinct classes from `catalog` (order of draw is the recurrence order)
// and one uniformly chosen reference exemplar per class.
Episode sample_episode_classes(const GlyphStore& store, std::span<const int> catalog, int k, Rng& rng);

struct EpisodeSpec {
  int k = 5;
  int cap = 3;
  int batch = 32;
  std::vector<double> size_weights;
  RenderSpec render;
};

struct EpisodeBatch {
  Episode episode;
  std::vector<Image> references;  // one singleton render per episode class
  std::vector<Scene> scenes;
};

EpisodeBatch sample_episode(const GlyphStore& store, std::span<const int> catalog, const EpisodeSpec& spec, Rng& rng);

}  // namespace setcomp
