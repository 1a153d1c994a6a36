#include "setcomp/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace setcomp {

std::vector<std::vector<RankedSet>> tradem_predict_sets(const ParamStore<float>& params, const EncoderConfig& cfg,
                                                        std::span<const Image> references,
                                                        std::span<const Image> queries, int cap, int topk) {
  const auto table = build_mean_table<float>(embed_images(params, cfg, references), cap);
  const auto q = embed_images(params, cfg, queries);
  std::vector<std::vector<RankedSet>> out;
  out.reserve(queries.size());
  for (Eigen::Index j = 0; j < q.cols(); ++j) out.push_back(decode_nearest_subset<float>(q.col(j), table, topk));
  return out;
}

std::vector<DistanceQuery> tradem_query(const ParamStore<float>& params, const EncoderConfig& cfg,
                                        std::span<const Image> images_a, std::span<const Image> images_b,
                                        double threshold) {
  if (images_a.size() != images_b.size()) throw std::invalid_argument("tradem_query: unpaired inputs");
  if (images_a.empty()) return {};
  const auto ea = embed_images(params, cfg, images_a);
  const auto eb = embed_images(params, cfg, images_b);
  std::vector<DistanceQuery> out(images_a.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const auto j = static_cast<Eigen::Index>(i);
    const double d = (ea.col(j) - eb.col(j)).cast<double>().norm();
    out[i] = DistanceQuery{d < threshold, d};
  }
  return out;
}

std::vector<LabelSet> mf_predict(std::span<const LabelSet> candidates, int topk) {
  if (candidates.empty()) throw std::invalid_argument("mf_predict: no candidates");
  if (topk < 1) throw std::invalid_argument("mf_predict: topk must be positive");
  std::vector<LabelSet> sorted(candidates.begin(), candidates.end());
  std::sort(sorted.begin(), sorted.end());
  sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
  if (static_cast<int>(sorted.size()) > topk) sorted.resize(static_cast<std::size_t>(topk));
  return sorted;
}

std::pair<int, int> slidewin_grid(int height, int width, int max_grid) {
  if (height < 1 || width < 1 || max_grid < 1) throw std::invalid_argument("slidewin_grid: sizes must be positive");
  const double ratio = static_cast<double>(std::min(height, width)) / std::max(height, width);
  const int shorter = std::clamp(static_cast<int>(std::lround(max_grid * ratio)), 1, max_grid);
  return height >= width ? std::pair{max_grid, shorter} : std::pair{shorter, max_grid};
}

std::vector<Image> slidewin_windows(const Image& image, int size, int max_grid) {
  const auto [rows, cols] = slidewin_grid(static_cast<int>(image.rows()), static_cast<int>(image.cols()), max_grid);
  // Cell boundaries spread the remainder so every pixel belongs to one cell.
  auto edges = [](int extent, int cells) {
    std::vector<int> e(static_cast<std::size_t>(cells) + 1);
    for (int i = 0; i <= cells; ++i) e[static_cast<std::size_t>(i)] = static_cast<int>(static_cast<long>(extent) * i / cells);
    return e;
  };
  const auto ys = edges(static_cast<int>(image.rows()), rows);
  const auto xs = edges(static_cast<int>(image.cols()), cols);
  std::vector<Image> out;
  out.reserve(static_cast<std::size_t>(slidewin_window_count(rows, cols)));
  for (int top = 0; top < rows; ++top) {
    for (int left = 0; left < cols; ++left) {
      for (int bottom = top + 1; bottom <= rows; ++bottom) {
        for (int right = left + 1; right <= cols; ++right) {
          const int y0 = ys[static_cast<std::size_t>(top)];
          const int x0 = xs[static_cast<std::size_t>(left)];
          const Image crop = image.block(y0, x0, ys[static_cast<std::size_t>(bottom)] - y0,
                                         xs[static_cast<std::size_t>(right)] - x0);
          out.push_back(fit_square(crop, size));
        }
      }
    }
  }
  return out;
}

std::vector<double> slidewin_scores(const ParamStore<float>& params, const EncoderConfig& cfg,
                                    std::span<const Image> scenes, std::span<const Image> references, int max_grid) {
  if (scenes.size() != references.size()) throw std::invalid_argument("slidewin_scores: unpaired inputs");
  if (scenes.empty()) return {};
  const auto refs = embed_images(params, cfg, references);
  std::vector<double> out(scenes.size());
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    const auto windows = slidewin_windows(scenes[i], cfg.input_size, max_grid);
    const auto w = encode_batch<float>(params, cfg, "f", windows, 128);
    const Eigen::VectorXd r = refs.col(static_cast<Eigen::Index>(i)).cast<double>();
    double best = std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < w.cols(); ++j) best = std::min(best, (w.col(j).cast<double>() - r).norm());
    out[i] = best;
  }
  return out;
}

double calibrate_distance_threshold(std::span<const double> distances, std::span<const int> labels) {
  if (distances.size() != labels.size() || distances.empty()) {
    throw std::invalid_argument("calibrate_distance_threshold: need equally many distances and labels");
  }
  std::vector<std::size_t> order(distances.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return distances[a] < distances[b]; });
  // Threshold below everything: every query answered "no".
  long correct = 0;
  for (int y : labels) correct += y == 0;
  long best = correct;
  double best_threshold = distances[order.front()];
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && distances[order[j]] == distances[order[i]]) {
      correct += labels[order[j]] != 0 ? 1 : -1;
      ++j;
    }
    if (correct > best) {
      best = correct;
      // Midway to the next distinct value so the whole tie group is inside.
      best_threshold = j < order.size() ? 0.5 * (distances[order[i]] + distances[order[j]])
                                        : std::nextafter(distances[order[i]], std::numeric_limits<double>::infinity());
    }
    i = j;
  }
  return best_threshold;
}

Matrix<float> multilabel_predict(const ParamStore<float>& params, const EncoderConfig& cfg,
                                 std::span<const Image> images) {
  const auto feats = embed_images(params, cfg, images);
  ad::Tape<float> tape;
  Context<float> ctx(tape, params);
  return ad::sigmoid_value<float>(multilabel_logits(ctx, "ml", tape.constant(feats)).value());
}

}  // namespace setcomp
