#pragma once

#include "setcomp/labelset.hpp"

#include <nlohmann/json.hpp>

#include <map>
#include <span>
#include <string>
#include <vector>

namespace setcomp {

struct Rate {
  std::size_t n = 0;
  std::size_t hits = 0;

  double value() const { return n == 0 ? 0.0 : static_cast<double>(hits) / static_cast<double>(n); }
  // Binomial standard error of value().
  double sigma() const;
};

struct LabelSetStratum {
  Rate exact;
  Rate top3;
};

struct LabelSetReport {
  Rate exact;
  Rate top3;
  Rate set_size;
  std::map<int, LabelSetStratum> by_size;  // keyed by |truth|
};

// ranked[i] is the prediction list for truths[i], best first.
LabelSetReport labelset_report(std::span<const std::vector<LabelSet>> ranked, std::span<const LabelSet> truths);

// Mean of [(score >= threshold) == label].
double binary_accuracy(std::span<const double> scores, std::span<const int> labels, double threshold);

// P(s+ > s-) + P(s+ = s-) / 2 over positive/negative pairs, via average ranks.
double auc_rank(std::span<const double> scores, std::span<const int> labels);

nlohmann::json to_json(const Rate& r);
nlohmann::json to_json(const LabelSetReport& r);

}  // namespace setcomp
