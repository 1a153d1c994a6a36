#pragma once

#include <compare>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace setcomp {

inline constexpr int kMaxUniverse = 16;

// A subset of an episode-local class universe {0, ..., k-1}, stored as a
// bitmask. Ordering is the canonical one: by cardinality, then by mask.
class LabelSet {
 public:
  LabelSet() = default;
  LabelSet(std::uint32_t mask, int universe_size);

  static LabelSet from_elements(std::span<const int> elements, int universe_size);
  static LabelSet singleton(int element, int universe_size);

  std::uint32_t mask() const { return mask_; }
  int universe_size() const { return universe_size_; }
  int size() const;
  bool empty() const { return mask_ == 0; }
  bool contains(int element) const;

  friend bool operator==(const LabelSet&, const LabelSet&) = default;
  friend std::strong_ordering operator<=>(const LabelSet& a, const LabelSet& b);

 private:
  std::uint32_t mask_ = 0;
  int universe_size_ = 1;
};

// All nonempty subsets with |T| <= max_size in canonical order.
std::vector<LabelSet> enumerate_label_sets(int k, int max_size);

// Number of entries enumerate_label_sets(k, max_size) returns.
std::size_t count_label_sets(int k, int max_size);

std::vector<int> canonical_elements(const LabelSet& t);

bool is_subset(const LabelSet& a, const LabelSet& b);
LabelSet set_union(const LabelSet& a, const LabelSet& b);

// "[0,2,4]"
std::string to_string(const LabelSet& t);

// k distinct catalog classes; class_ids order is the recurrence order.
struct Episode {
  std::vector<int> class_ids;
  std::vector<int> reference_exemplar_ids;

  int size() const { return static_cast<int>(class_ids.size()); }
};

void validate_episode(const Episode& episode);

}  // namespace setcomp
