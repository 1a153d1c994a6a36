#include "setcomp/composition.hpp"
#include "setcomp/renderer.hpp"

#include "gradcheck.hpp"
#include "oracles.hpp"

#include <doctest/doctest.h>

#include <cmath>

using namespace setcomp;
using setcomp::testing::random_matrix;

namespace {

Matrix<double> unit_columns(int m, int n, Rng& rng) {
  Matrix<double> x = random_matrix<double>(m, n, rng);
  return x.array().rowwise() / x.colwise().norm().array();
}

// Independent oracle: fold the composer over canonical elements left to
// right, one set at a time.
Matrix<double> naive_table(const Matrix<double>& singletons, int cap, const std::function<Vector<double>(const Vector<double>&, const Vector<double>&)>& g) {
  const int k = static_cast<int>(singletons.cols());
  const auto sets = enumerate_label_sets(k, cap);
  Matrix<double> out(singletons.rows(), static_cast<Eigen::Index>(sets.size()));
  for (std::size_t i = 0; i < sets.size(); ++i) {
    const auto e = canonical_elements(sets[i]);
    Vector<double> acc = singletons.col(e[0]);
    for (std::size_t j = 1; j < e.size(); ++j) acc = g(acc, singletons.col(e[j]));
    out.col(static_cast<Eigen::Index>(i)) = acc;
  }
  return out;
}

}  // namespace

TEST_CASE("subset plan follows the prefix recurrence") {
  const auto plan = make_subset_plan(6, 4);
  REQUIRE(plan.sets.size() == count_label_sets(6, 4));
  for (std::size_t i = 0; i < plan.sets.size(); ++i) {
    const auto& t = plan.sets[i];
    CHECK(plan.index_of(t) == static_cast<int>(i));
    if (t.size() == 1) {
      CHECK(plan.prefix[i] == -1);
      continue;
    }
    const auto e = canonical_elements(t);
    CHECK(plan.last[i] == e.back());
    const auto& p = plan.sets[static_cast<std::size_t>(plan.prefix[i])];
    CHECK(set_union(p, LabelSet::singleton(e.back(), 6)) == t);
    CHECK(p.size() == t.size() - 1);
  }
  CHECK(plan.index_of(LabelSet(0b11111, 6)) == -1);
}

TEST_CASE("subset table examples") {
  Rng rng = make_rng({1});
  const Matrix<double> s = unit_columns(8, 5, rng);
  ad::Tape<double> tape;

  std::size_t calls = 0;
  const auto table = build_subset_table<double>(s, 3, mean_composer<double>(), tape, &calls);
  CHECK(table.size() == 25);
  CHECK(table.embeddings.cols() == 25);
  // One composition per non-singleton entry: 10 pairs + 10 triples.
  CHECK(calls == 20);
  CHECK(table.embeddings.leftCols(5) == s);
  const int ij = make_subset_plan(5, 3).index_of(LabelSet(0b01010, 5));
  const Vector<double> expect = (s.col(1) + s.col(3)).normalized();
  CHECK((table.embeddings.col(ij) - expect).norm() < 1e-12);

  std::size_t none = 0;
  const auto singles = build_subset_table<double>(s, 1, mean_composer<double>(), tape, &none);
  CHECK(singles.embeddings == s);
  CHECK(none == 0);
}

TEST_CASE("learned heads build the same table as a naive fold") {
  const int m = 6;
  for (auto variant : {GVariant::kLin, GVariant::kLinFC, GVariant::kDNN}) {
    CAPTURE(to_string(variant));
    ParamStore<double> params;
    Rng rng = make_rng({2, static_cast<std::uint64_t>(variant)});
    init_g(params, variant, m, "g", rng);
    const Matrix<double> s = unit_columns(m, 6, rng);
    const auto table = build_subset_table<double>(s, 3, variant, params);
    const auto oracle = naive_table(s, 3, [&](const Vector<double>& a, const Vector<double>& b) {
      return g_forward<double>(variant, params, "g", a, b);
    });
    CHECK((table.embeddings - oracle).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("mean table holds normalized member means") {
  Rng rng = make_rng({3});
  const Matrix<double> s = unit_columns(4, 5, rng);
  const auto table = build_mean_table<double>(s, 3);
  for (std::size_t i = 0; i < table.sets.size(); ++i) {
    Vector<double> mean = Vector<double>::Zero(4);
    const auto e = canonical_elements(table.sets[i]);
    for (int c : e) mean += s.col(c);
    mean.normalize();
    CHECK((table.embeddings.col(static_cast<Eigen::Index>(i)) - mean).norm() < 1e-12);
  }
}

TEST_CASE("decode_nearest_subset") {
  Rng rng = make_rng({4});
  const auto table = build_mean_table<double>(unit_columns(4, 5, rng), 3);

  SUBCASE("an exact entry ranks first at distance zero") {
    for (std::size_t i = 0; i < table.size(); ++i) {
      const Vector<double> q = table.embeddings.col(static_cast<Eigen::Index>(i));
      const auto r = decode_nearest_subset<double>(q, table, 3);
      CHECK(r.front().set == table.sets[i]);
      CHECK(r.front().sq_distance == 0.0);
      CHECK(r.size() == 3);
    }
  }
  SUBCASE("ties resolve to the canonically smaller set") {
    SubsetTable<double> tied{2, 2, enumerate_label_sets(2, 2), Matrix<double>(2, 3)};
    tied.embeddings << 1, -1, 0,
                       0, 0, 5;
    const auto r = decode_nearest_subset<double>(Vector<double>::Zero(2), tied, 3);
    CHECK(r[0].set == tied.sets[0]);
    CHECK(r[1].set == tied.sets[1]);
    CHECK(r[0].sq_distance == r[1].sq_distance);
  }
  SUBCASE("topk larger than the table returns everything") {
    CHECK(decode_nearest_subset<double>(Vector<double>::Zero(4), table, 100).size() == 25);
  }
  SUBCASE("errors") {
    SubsetTable<double> empty;
    empty.embeddings.resize(4, 0);
    CHECK_THROWS_AS(decode_nearest_subset<double>(Vector<double>::Zero(4), empty, 1), InvalidState);
    CHECK_THROWS_AS(decode_nearest_subset<double>(Vector<double>::Zero(3), table, 1), std::invalid_argument);
    CHECK_THROWS_AS(decode_nearest_subset<double>(Vector<double>::Zero(4), table, 0), std::invalid_argument);
  }
}

TEST_CASE("decoder agrees with a naive double loop on random instances") {
  Rng rng = make_rng({5});
  int agree = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const auto table = build_mean_table<float>(unit_columns(8, 5, rng).cast<float>(), 3);
    const Vector<float> q = unit_columns(8, 1, rng).cast<float>();
    const auto ranked = decode_nearest_subset<float>(q, table, static_cast<int>(table.size()));
    const auto oracle = setcomp::testing::naive_ranking<float>(q, table);
    bool same = ranked.size() == oracle.size();
    for (std::size_t r = 0; same && r < ranked.size(); ++r) same = ranked[r].set == oracle[r];
    agree += same ? 1 : 0;
  }
  CHECK(agree == 1000);
}

TEST_CASE("inference is deterministic and query thresholds follow the >= rule") {
  EncoderConfig cfg;
  cfg.input_size = 16;
  cfg.m = 8;
  cfg.channels = {4, 4, 8, 8};
  ParamStore<float> params;
  Rng rng = make_rng({6});
  init_encoder(params, cfg, "f", rng);
  init_g(params, GVariant::kLin, cfg.m, "g", rng);
  init_h(params, HVariant::kLin, cfg.m, "h", rng);
  const auto store = synth_glyph_store(5, 1, 1);
  std::vector<Image> refs;
  for (int c = 0; c < 5; ++c) refs.push_back(store.exemplar(c, 0));
  const Image query = composite_min({refs[0], refs[3]});
  const auto a = infer_label_set<float>(params, cfg, GVariant::kLin, refs, query, 3, 3);
  const auto b = infer_label_set<float>(params, cfg, GVariant::kLin, refs, query, 3, 3);
  REQUIRE(a.size() == 3);
  for (int i = 0; i < 3; ++i) {
    CHECK(a[i].set == b[i].set);
    CHECK(a[i].sq_distance == b[i].sq_distance);
  }

  // Zero weights: score is sigmoid(bias).
  params.value("h.in.w1.w").setZero();
  params.value("h.in.w2.w").setZero();
  params.value("h.in.b").setConstant(0.0f);
  auto r = query_contains<float>(params, cfg, HVariant::kLin, refs[0], query);
  CHECK(r.score == 0.5);
  CHECK(r.contains);
  CHECK_FALSE(query_contains<float>(params, cfg, HVariant::kLin, refs[0], query, 1.0).contains);
  params.value("h.in.b").setConstant(static_cast<float>(std::log(0.7 / 0.3)));
  r = query_contains<float>(params, cfg, HVariant::kLin, refs[0], query);
  CHECK(r.score == doctest::Approx(0.7).epsilon(1e-6));
  CHECK(r.contains);
}
