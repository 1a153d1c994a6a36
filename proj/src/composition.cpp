#include "setcomp/composition.hpp"

#include <bit>

namespace setcomp {

int SubsetPlan::index_of(const LabelSet& t) const {
  auto it = std::lower_bound(sets.begin(), sets.end(), t);
  if (it == sets.end() || *it != t) return -1;
  return static_cast<int>(it - sets.begin());
}

SubsetPlan make_subset_plan(int k, int cap) {
  SubsetPlan plan;
  plan.k = k;
  plan.cap = cap;
  plan.sets = enumerate_label_sets(k, cap);
  plan.prefix.assign(plan.sets.size(), -1);
  plan.last.assign(plan.sets.size(), -1);
  plan.levels.assign(static_cast<std::size_t>(cap), {0, 0});
  for (std::size_t i = 0; i < plan.sets.size(); ++i) {
    const auto& t = plan.sets[i];
    auto& level = plan.levels[static_cast<std::size_t>(t.size() - 1)];
    if (level.second == 0) level.first = static_cast<int>(i);
    level.second = static_cast<int>(i) + 1;
    if (t.size() == 1) continue;
    const int top = 31 - std::countl_zero(t.mask());
    plan.prefix[i] = plan.index_of(LabelSet(t.mask() & ~(1u << top), k));
    plan.last[i] = top;
  }
  return plan;
}

std::vector<Image> prepare_inputs(std::span<const Image> images, int input_size) {
  std::vector<Image> out;
  out.reserve(images.size());
  for (const auto& img : images) {
    if (img.rows() == input_size && img.cols() == input_size) {
      out.push_back(img);
    } else {
      out.push_back(fit_square(img, input_size));
    }
  }
  return out;
}

}  // namespace setcomp
