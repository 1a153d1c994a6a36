#pragma once

#include "setcomp/composition.hpp"
#include "setcomp/image.hpp"
#include "setcomp/labelset.hpp"

#include <span>
#include <utility>
#include <vector>

namespace setcomp {

// --- TradEm ---------------------------------------------------------------

inline constexpr double kTradEmThreshold = 0.5;

// Label-set inference with a singleton-trained encoder: the table entry for T
// is the normalized mean of T's singleton embeddings.
std::vector<std::vector<RankedSet>> tradem_predict_sets(const ParamStore<float>& params, const EncoderConfig& cfg,
                                                        std::span<const Image> references,
                                                        std::span<const Image> queries, int cap, int topk);

struct DistanceQuery {
  bool contains = false;
  double distance = 0.0;
};

// contains <=> |f(a) - f(b)| < threshold (strict).
std::vector<DistanceQuery> tradem_query(const ParamStore<float>& params, const EncoderConfig& cfg,
                                        std::span<const Image> images_a, std::span<const Image> images_b,
                                        double threshold = kTradEmThreshold);

// --- MF -----------------------------------------------------------------------

// The constant guess: candidates in canonical order, truncated to topk. With
// equally frequent candidates the most frequent one is the canonical first.
std::vector<LabelSet> mf_predict(std::span<const LabelSet> candidates, int topk);

// --- SlideWin -------------------------------------------------------------------

// Cell grid for an image: the longer side gets max_grid cells, the shorter side
// proportionally fewer (at least one).
std::pair<int, int> slidewin_grid(int height, int width, int max_grid = 4);

// One window per contiguous block of grid cells, row-major over (top, left,
// bottom, right), each fitted to size x size.
std::vector<Image> slidewin_windows(const Image& image, int size, int max_grid = 4);

// Number of windows for an r x c grid: T(r) * T(c), T(n) = n(n+1)/2.
inline int slidewin_window_count(int rows, int cols) { return rows * (rows + 1) / 2 * (cols * (cols + 1) / 2); }

// Min over windows of |f(window) - f(reference)| per (scene, reference) pair.
std::vector<double> slidewin_scores(const ParamStore<float>& params, const EncoderConfig& cfg,
                                    std::span<const Image> scenes, std::span<const Image> references,
                                    int max_grid = 4);

// contains <=> score < threshold.
inline bool slidewin_decide(double score, double threshold) { return score < threshold; }

// Threshold maximizing accuracy of "distance < threshold" on labelled
// distances; ties go to the smallest such threshold.
double calibrate_distance_threshold(std::span<const double> distances, std::span<const int> labels);

// --- independent-sigmoid multilabel CNN ------------------------------------------

// Per-class probabilities, n_classes x images.
Matrix<float> multilabel_predict(const ParamStore<float>& params, const EncoderConfig& cfg,
                                 std::span<const Image> images);

}  // namespace setcomp
