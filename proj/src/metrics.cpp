#include "setcomp/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace setcomp {

double Rate::sigma() const {
  if (n == 0) return 0.0;
  const double p = value();
  return std::sqrt(p * (1.0 - p) / static_cast<double>(n));
}

LabelSetReport labelset_report(std::span<const std::vector<LabelSet>> ranked, std::span<const LabelSet> truths) {
  if (ranked.empty()) throw std::invalid_argument("labelset_report: no predictions");
  if (ranked.size() != truths.size()) throw std::invalid_argument("labelset_report: predictions and truths differ in length");
  LabelSetReport r;
  for (std::size_t i = 0; i < ranked.size(); ++i) {
    const auto& list = ranked[i];
    const auto& truth = truths[i];
    if (list.empty()) throw std::invalid_argument("labelset_report: empty prediction list at " + std::to_string(i));
    const bool exact = list.front() == truth;
    const auto top = std::min<std::size_t>(3, list.size());
    const bool top3 = std::find(list.begin(), list.begin() + static_cast<std::ptrdiff_t>(top), truth) !=
                      list.begin() + static_cast<std::ptrdiff_t>(top);
    auto& stratum = r.by_size[truth.size()];
    for (Rate* rate : {&r.exact, &r.top3, &r.set_size, &stratum.exact, &stratum.top3}) ++rate->n;
    r.exact.hits += exact;
    stratum.exact.hits += exact;
    r.top3.hits += top3;
    stratum.top3.hits += top3;
    r.set_size.hits += list.front().size() == truth.size();
  }
  return r;
}

double binary_accuracy(std::span<const double> scores, std::span<const int> labels, double threshold) {
  if (scores.size() != labels.size()) throw std::invalid_argument("binary_accuracy: length mismatch");
  if (scores.empty()) throw std::invalid_argument("binary_accuracy: no scores");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) hits += (scores[i] >= threshold) == (labels[i] != 0);
  return static_cast<double>(hits) / static_cast<double>(scores.size());
}

double auc_rank(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw std::invalid_argument("auc_rank: length mismatch");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // Mann-Whitney: sum of (1-based, tie-averaged) ranks of the positives.
  double rank_sum = 0.0;
  std::size_t n_pos = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const double avg_rank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
    for (std::size_t t = i; t < j; ++t) {
      if (labels[order[t]] != 0) {
        rank_sum += avg_rank;
        ++n_pos;
      }
    }
    i = j;
  }
  const std::size_t n_neg = scores.size() - n_pos;
  if (n_pos == 0 || n_neg == 0) throw std::invalid_argument("auc_rank: need both positive and negative labels");
  const double np = static_cast<double>(n_pos);
  return (rank_sum - np * (np + 1.0) / 2.0) / (np * static_cast<double>(n_neg));
}

nlohmann::json to_json(const Rate& r) {
  return nlohmann::json{{"n", r.n}, {"value", r.value()}, {"sigma", r.sigma()}};
}

nlohmann::json to_json(const LabelSetReport& r) {
  nlohmann::json by_size = nlohmann::json::object();
  for (const auto& [size, s] : r.by_size) {
    by_size[std::to_string(size)] = nlohmann::json{{"exact", to_json(s.exact)}, {"top3", to_json(s.top3)}};
  }
  return nlohmann::json{
      {"exact", to_json(r.exact)}, {"top3", to_json(r.top3)}, {"set_size", to_json(r.set_size)}, {"by_size", by_size}};
}

}  // namespace setcomp
