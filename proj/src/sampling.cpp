#include "setcomp/sampling.hpp"

#include "setcomp/errors.hpp"

#include <stdexcept>
#include <string>

namespace setcomp {

LabelSet sample_negative(std::span<const LabelSet> candidates, const LabelSet& t, Rng& rng) {
  std::size_t skip = candidates.size();
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    if (candidates[i] == t) {
      skip = i;
      break;
    }
  }
  const std::size_t pool = candidates.size() - (skip < candidates.size() ? 1 : 0);
  if (pool == 0) throw InvalidState("sample_negative: no candidate other than " + to_string(t));
  std::size_t pick = uniform_index(rng, pool);
  if (pick >= skip) ++pick;
  return candidates[pick];
}

LabelSet sample_negative(int k, int cap, const LabelSet& t, Rng& rng) {
  const auto candidates = enumerate_label_sets(k, cap);
  return sample_negative(candidates, t, rng);
}

LabelSet sample_label_set(int k, int cap, std::span<const double> size_weights, Rng& rng) {
  if (cap < 1 || cap > k || k > kMaxUniverse) throw std::invalid_argument("sample_label_set: need 1 <= cap <= k <= 16");
  int size = 1;
  if (size_weights.empty()) {
    size = uniform_int(rng, 1, cap);
  } else {
    if (static_cast<int>(size_weights.size()) != cap) {
      throw std::invalid_argument("sample_label_set: need one size weight per size 1.." + std::to_string(cap));
    }
    size = 1 + sample_weighted(std::vector<double>(size_weights.begin(), size_weights.end()), rng);
  }
  // Partial Fisher-Yates: the first `size` slots are a uniform size-subset.
  std::vector<int> pool(static_cast<std::size_t>(k));
  for (int i = 0; i < k; ++i) pool[static_cast<std::size_t>(i)] = i;
  std::uint32_t mask = 0;
  for (int i = 0; i < size; ++i) {
    const auto j = static_cast<std::size_t>(i) + uniform_index(rng, static_cast<std::uint64_t>(k - i));
    std::swap(pool[static_cast<std::size_t>(i)], pool[j]);
    mask |= 1u << pool[static_cast<std::size_t>(i)];
  }
  return LabelSet(mask, k);
}

Episode sample_episode_classes(const GlyphStore& store, std::span<const int> catalog, int k, Rng& rng) {
  if (k < 1 || k > kMaxUniverse) throw std::invalid_argument("sample_episode: k must be in [1, 16]");
  if (static_cast<int>(catalog.size()) < k) {
    throw std::invalid_argument("sample_episode: catalog has " + std::to_string(catalog.size()) + " classes, need " +
                                std::to_string(k));
  }
  std::vector<int> pool(catalog.begin(), catalog.end());
  Episode ep;
  for (int i = 0; i < k; ++i) {
    const auto j = static_cast<std::size_t>(i) + uniform_index(rng, pool.size() - static_cast<std::size_t>(i));
    std::swap(pool[static_cast<std::size_t>(i)], pool[j]);
    const int cls = pool[static_cast<std::size_t>(i)];
    if (cls < 0 || cls >= store.num_classes()) throw std::invalid_argument("sample_episode: class id out of range");
    ep.class_ids.push_back(cls);
    ep.reference_exemplar_ids.push_back(
        static_cast<int>(uniform_index(rng, store.exemplars[static_cast<std::size_t>(cls)].size())));
  }
  validate_episode(ep);
  return ep;
}

EpisodeBatch sample_episode(const GlyphStore& store, std::span<const int> catalog, const EpisodeSpec& spec, Rng& rng) {
  EpisodeBatch out;
  out.episode = sample_episode_classes(store, catalog, spec.k, rng);
  for (int i = 0; i < spec.k; ++i) out.references.push_back(render_reference(store, out.episode, i, spec.render, rng));
  out.scenes.reserve(static_cast<std::size_t>(spec.batch));
  for (int b = 0; b < spec.batch; ++b) {
    const auto t = sample_label_set(spec.k, spec.cap, spec.size_weights, rng);
    out.scenes.push_back(render(store, out.episode, t, spec.render, rng));
  }
  return out;
}

}  // namespace setcomp
