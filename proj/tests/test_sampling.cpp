#include "setcomp/errors.hpp"
#include "setcomp/sampling.hpp"

#include <doctest/doctest.h>

#include <map>
#include <numeric>
#include <set>

using namespace setcomp;

namespace {

// Upper 1% points of the chi-squared distribution.
constexpr double kChi2Crit01[] = {0, 6.635, 9.210, 11.345, 13.277, 15.086, 16.812, 18.475, 20.090, 21.666, 23.209,
                                  24.725, 26.217, 27.688, 29.141, 30.578, 32.000, 33.409, 34.805, 36.191, 37.566,
                                  38.932, 40.289, 41.638};

double chi2(const std::vector<double>& counts) {
  const double n = std::accumulate(counts.begin(), counts.end(), 0.0);
  const double e = n / static_cast<double>(counts.size());
  double s = 0.0;
  for (double c : counts) s += (c - e) * (c - e) / e;
  return s;
}

}  // namespace

TEST_CASE("negatives are uniform over the other candidates and never the positive") {
  Rng rng = make_rng({1});
  const auto candidates = enumerate_label_sets(5, 3);
  const auto t = candidates[7];
  std::map<std::uint32_t, double> hist;
  for (int i = 0; i < 100000; ++i) {
    const auto n = sample_negative(5, 3, t, rng);
    REQUIRE(n != t);
    REQUIRE(n.size() <= 3);
    hist[n.mask()] += 1.0;
  }
  REQUIRE(hist.size() == 24);
  std::vector<double> counts;
  for (const auto& [mask, c] : hist) counts.push_back(c);
  CHECK(chi2(counts) < kChi2Crit01[23]);

  // The candidate-list overload draws the same distribution.
  Rng a = make_rng({2});
  Rng b = make_rng({2});
  for (int i = 0; i < 100; ++i) CHECK(sample_negative(candidates, t, a) == sample_negative(5, 3, t, b));
}

TEST_CASE("empty negative pool is an error") {
  Rng rng = make_rng({1});
  CHECK_THROWS_AS(sample_negative(1, 1, LabelSet::singleton(0, 1), rng), InvalidState);
}

TEST_CASE("label set sizes follow the size distribution") {
  Rng rng = make_rng({3});
  std::vector<double> sizes(3, 0.0);
  std::map<std::uint32_t, double> within2;
  for (int i = 0; i < 10000; ++i) {
    const auto t = sample_label_set(5, 3, {}, rng);
    sizes[static_cast<std::size_t>(t.size() - 1)] += 1.0;
    if (t.size() == 2) within2[t.mask()] += 1.0;
  }
  CHECK(chi2(sizes) < kChi2Crit01[2]);
  std::vector<double> pairs;
  for (const auto& [m, c] : within2) pairs.push_back(c);
  CHECK(pairs.size() == 10);
  CHECK(chi2(pairs) < kChi2Crit01[9]);

  // Weighted sizes.
  const std::vector<double> w{0.0, 1.0, 0.0};
  for (int i = 0; i < 100; ++i) CHECK(sample_label_set(5, 3, w, rng).size() == 2);
  CHECK_THROWS_AS(sample_label_set(5, 3, std::vector<double>{1.0}, rng), std::invalid_argument);
}

TEST_CASE("episodes") {
  const auto store = synth_glyph_store(12, 3, 5);
  std::vector<int> catalog{0, 2, 4, 6, 8, 10};
  Rng rng = make_rng({4});
  for (int i = 0; i < 200; ++i) {
    const auto ep = sample_episode_classes(store, catalog, 5, rng);
    std::set<int> distinct(ep.class_ids.begin(), ep.class_ids.end());
    CHECK(distinct.size() == 5);
    for (int c : ep.class_ids) CHECK(c % 2 == 0);
    for (int r : ep.reference_exemplar_ids) CHECK((r >= 0 && r < 3));
  }
  CHECK_THROWS(sample_episode_classes(store, catalog, 7, rng));

  EpisodeSpec spec;
  spec.batch = 6;
  Rng a = make_rng({5});
  Rng b = make_rng({5});
  const auto x = sample_episode(store, catalog, spec, a);
  const auto y = sample_episode(store, catalog, spec, b);
  CHECK(x.episode.class_ids == y.episode.class_ids);
  REQUIRE(x.scenes.size() == 6);
  CHECK(x.references.size() == 5);
  for (std::size_t i = 0; i < 6; ++i) {
    CHECK(x.scenes[i].image == y.scenes[i].image);
    CHECK(x.scenes[i].truth == y.scenes[i].truth);
    CHECK(x.scenes[i].truth.size() <= 3);
  }
}
