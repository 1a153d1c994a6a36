#include "setcomp/labelset.hpp"

#include <algorithm>
#include <bit>
#include <stdexcept>
#include <unordered_set>

namespace setcomp {
namespace {

void check_universe(int k) {
  if (k < 1 || k > kMaxUniverse) {
    throw std::invalid_argument("universe size must be in [1, " + std::to_string(kMaxUniverse) +
                                "], got " + std::to_string(k));
  }
}

void check_same_universe(const LabelSet& a, const LabelSet& b) {
  if (a.universe_size() != b.universe_size()) {
    throw std::invalid_argument("label sets over different universes (" +
                                std::to_string(a.universe_size()) + " vs " +
                                std::to_string(b.universe_size()) + ")");
  }
}

std::size_t binomial(int n, int r) {
  if (r < 0 || r > n) return 0;
  std::size_t c = 1;
  for (int i = 1; i <= r; ++i) c = c * static_cast<std::size_t>(n - r + i) / static_cast<std::size_t>(i);
  return c;
}

}  // namespace

LabelSet::LabelSet(std::uint32_t mask, int universe_size) : mask_(mask), universe_size_(universe_size) {
  check_universe(universe_size);
  if (mask >= (std::uint32_t{1} << universe_size)) {
    throw std::invalid_argument("mask " + std::to_string(mask) + " exceeds universe of size " +
                                std::to_string(universe_size));
  }
}

LabelSet LabelSet::from_elements(std::span<const int> elements, int universe_size) {
  check_universe(universe_size);
  std::uint32_t mask = 0;
  for (int e : elements) {
    if (e < 0 || e >= universe_size) {
      throw std::invalid_argument("element " + std::to_string(e) + " outside universe");
    }
    mask |= std::uint32_t{1} << e;
  }
  return LabelSet(mask, universe_size);
}

LabelSet LabelSet::singleton(int element, int universe_size) {
  const int e[] = {element};
  return from_elements(e, universe_size);
}

int LabelSet::size() const { return std::popcount(mask_); }

bool LabelSet::contains(int element) const {
  return element >= 0 && element < universe_size_ && ((mask_ >> element) & 1U) != 0;
}

std::strong_ordering operator<=>(const LabelSet& a, const LabelSet& b) {
  if (auto c = a.universe_size_ <=> b.universe_size_; c != 0) return c;
  if (auto c = a.size() <=> b.size(); c != 0) return c;
  return a.mask_ <=> b.mask_;
}

std::size_t count_label_sets(int k, int max_size) {
  std::size_t n = 0;
  for (int l = 1; l <= max_size; ++l) n += binomial(k, l);
  return n;
}

std::vector<LabelSet> enumerate_label_sets(int k, int max_size) {
  check_universe(k);
  if (max_size < 1 || max_size > k) {
    throw std::invalid_argument("max_size must be in [1, k], got " + std::to_string(max_size));
  }
  std::vector<LabelSet> out;
  out.reserve(count_label_sets(k, max_size));
  const std::uint32_t limit = std::uint32_t{1} << k;
  for (int l = 1; l <= max_size; ++l) {
    for (std::uint32_t mask = 1; mask < limit; ++mask) {
      if (std::popcount(mask) == l) out.emplace_back(mask, k);
    }
  }
  return out;
}

std::vector<int> canonical_elements(const LabelSet& t) {
  std::vector<int> out;
  out.reserve(static_cast<std::size_t>(t.size()));
  for (std::uint32_t m = t.mask(); m != 0; m &= m - 1) out.push_back(std::countr_zero(m));
  return out;
}

bool is_subset(const LabelSet& a, const LabelSet& b) {
  check_same_universe(a, b);
  return (a.mask() & ~b.mask()) == 0;
}

LabelSet set_union(const LabelSet& a, const LabelSet& b) {
  check_same_universe(a, b);
  return LabelSet(a.mask() | b.mask(), a.universe_size());
}

std::string to_string(const LabelSet& t) {
  std::string s = "[";
  bool first = true;
  for (int e : canonical_elements(t)) {
    if (!first) s += ',';
    s += std::to_string(e);
    first = false;
  }
  return s + "]";
}

void validate_episode(const Episode& episode) {
  check_universe(episode.size());
  std::unordered_set<int> seen(episode.class_ids.begin(), episode.class_ids.end());
  if (seen.size() != episode.class_ids.size()) {
    throw std::invalid_argument("episode class ids must be distinct");
  }
  if (!episode.reference_exemplar_ids.empty() &&
      episode.reference_exemplar_ids.size() != episode.class_ids.size()) {
    throw std::invalid_argument("episode needs one reference exemplar per class");
  }
}

}  // namespace setcomp
