#include "setcomp/model.hpp"
#include "setcomp/train.hpp"

#include <doctest/doctest.h>

#include <numeric>

using namespace setcomp;

namespace {

EncoderConfig tiny_encoder() {
  EncoderConfig cfg;
  cfg.m = 8;
  cfg.input_size = 16;
  cfg.channels = {4, 8, 8, 16};
  return cfg;
}

const GlyphStore& store() {
  static const GlyphStore s = synth_glyph_store(24, 4, 9);
  return s;
}

DataSpec data(int n_classes = 20) {
  DataSpec d{&store(), {}, RenderSpec()};
  for (int i = 0; i < n_classes; ++i) d.classes.push_back(i);
  return d;
}

TrainConfig small(int steps) {
  TrainConfig c;
  c.steps = steps;
  c.batch = 8;
  c.lr = 3e-3;
  c.log_every = 5;
  return c;
}

double mean_of(const std::vector<double>& v, std::size_t from, std::size_t to) {
  return std::accumulate(v.begin() + static_cast<std::ptrdiff_t>(from), v.begin() + static_cast<std::ptrdiff_t>(to), 0.0) /
         static_cast<double>(to - from);
}

}  // namespace

TEST_CASE("train config validation") {
  TrainConfig c;
  CHECK_NOTHROW(c.validate());
  c.cap = 6;
  CHECK_THROWS(c.validate());
  c = TrainConfig{};
  c.lr = 0.0;
  CHECK_THROWS(c.validate());
  c = TrainConfig{};
  c.size_weights = {1.0, 2.0};
  CHECK_THROWS(c.validate());
}

TEST_CASE("resumed training reproduces uninterrupted losses") {
  auto fresh = [] { return make_bundle(ModelKind::kUnion, tiny_encoder(), GVariant::kLinFC, HVariant::kDNN, {}, 3); };
  auto straight = fresh();
  const auto full = train_model1(straight, small(6), data());
  REQUIRE(full.losses.size() == 6);

  auto first = fresh();
  const auto head = train_model1(first, small(3), data());
  auto resumed = deserialize_checkpoint(serialize_checkpoint(first));
  const auto tail = train_model1(resumed, small(6), data());
  REQUIRE(tail.losses.size() == 3);
  for (int i = 0; i < 3; ++i) {
    CHECK(head.losses[static_cast<std::size_t>(i)] == full.losses[static_cast<std::size_t>(i)]);
    CHECK(tail.losses[static_cast<std::size_t>(i)] == full.losses[static_cast<std::size_t>(i + 3)]);
  }
  CHECK(serialize_checkpoint(resumed) == serialize_checkpoint(straight));
}

TEST_CASE("first step sends gradient to both encoder and composition head") {
  auto b = make_bundle(ModelKind::kUnion, tiny_encoder(), GVariant::kLin, HVariant::kDNN, {}, 4);
  bool f_moved = false;
  bool g_moved = false;
  TrainHooks hooks;
  hooks.after_backward = [&](const ModelBundle& bundle, std::int64_t step) {
    if (step != 0) return;
    for (const auto& e : bundle.params.entries()) {
      const bool nonzero = e.grad.cwiseAbs().maxCoeff() > 0.0f;
      if (e.name.starts_with("f.")) f_moved = f_moved || nonzero;
      if (e.name.starts_with("g.")) g_moved = g_moved || nonzero;
    }
  };
  train_model1(b, small(1), data(), hooks);
  CHECK(f_moved);
  CHECK(g_moved);
}

TEST_CASE("trace rows follow log_every and the final step") {
  auto b = make_bundle(ModelKind::kTradEm, tiny_encoder(), GVariant::kLin, HVariant::kDNN, {}, 5);
  std::vector<std::int64_t> steps;
  TrainHooks hooks;
  hooks.trace = [&](const TraceRow& r) { steps.push_back(r.step); };
  auto cfg = small(12);
  tradem_train(b, TradEmVariant::kUnion, cfg, data(), hooks);
  CHECK(steps == std::vector<std::int64_t>{5, 10, 12});
}

TEST_CASE("containment batches") {
  TrainConfig cfg;
  cfg.k = 10;
  cfg.cap = 5;
  Rng rng = make_rng({6});
  std::vector<double> sizes(5, 0.0);
  for (int i = 0; i < 200; ++i) {
    const auto b = sample_containment_batch(data(), cfg, 16, rng);
    REQUIRE(b.labels.cols() == 16);
    CHECK(b.labels.sum() == 8.0f);
    for (int j = 0; j < 16; ++j) {
      const auto& t = b.container_sets[static_cast<std::size_t>(j)];
      CHECK(t.contains(b.query_class[static_cast<std::size_t>(j)]) == (b.labels(0, j) > 0.5f));
      sizes[static_cast<std::size_t>(t.size() - 1)] += 1.0;
    }
  }
  // Container sizes uniform over 1..5 (chi-squared, 4 dof, 1% level).
  const double e = std::accumulate(sizes.begin(), sizes.end(), 0.0) / 5.0;
  double chi2 = 0.0;
  for (double c : sizes) chi2 += (c - e) * (c - e) / e;
  CHECK(chi2 < 13.277);
  TrainConfig bad;
  bad.k = 5;
  bad.cap = 5;
  CHECK_THROWS(sample_containment_batch(data(), bad, 4, rng));
}

TEST_CASE("supervised batches hold 1..cap classes per image") {
  TrainConfig cfg;
  cfg.cap = 4;
  Rng rng = make_rng({7});
  const auto b = sample_model3_batch(data(20), cfg, 50, rng);
  REQUIRE(b.images.size() == 50);
  REQUIRE(b.labels.rows() == 20);
  for (Eigen::Index j = 0; j < 50; ++j) {
    const float n = b.labels.col(j).sum();
    CHECK(n >= 1.0f);
    CHECK(n <= 4.0f);
  }
}

TEST_CASE("every trainer reduces its loss on a tiny problem") {
  const int steps = 150;
  Model3Config m3{8, 4, 6, 10};
  auto check = [&](TrainResult r) {
    REQUIRE(r.losses.size() == static_cast<std::size_t>(steps));
    CHECK(mean_of(r.losses, steps - 30, steps) < mean_of(r.losses, 0, 30));
  };
  SUBCASE("Model I") {
    auto b = make_bundle(ModelKind::kUnion, tiny_encoder(), GVariant::kLin, HVariant::kDNN, m3, 8);
    check(train_model1(b, small(steps), data()));
  }
  SUBCASE("Model II") {
    auto b = make_bundle(ModelKind::kContainment, tiny_encoder(), GVariant::kLin, HVariant::kDNN, m3, 8);
    auto cfg = small(steps);
    cfg.k = 8;
    check(train_model2(b, cfg, data()));
  }
  SUBCASE("Model III") {
    auto b = make_bundle(ModelKind::kSupervised, tiny_encoder(), GVariant::kLin, HVariant::kDNN, m3, 8);
    check(train_model3(b, small(steps), data(6)));
  }
  SUBCASE("multilabel") {
    auto b = make_bundle(ModelKind::kMultilabel, tiny_encoder(), GVariant::kLin, HVariant::kDNN, m3, 8);
    check(train_multilabel(b, small(steps), data(6)));
  }
  SUBCASE("TradEm") {
    auto b = make_bundle(ModelKind::kTradEm, tiny_encoder(), GVariant::kLin, HVariant::kDNN, m3, 8);
    check(tradem_train(b, TradEmVariant::kContainment, small(steps), data()));
  }
}
