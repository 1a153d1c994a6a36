#include "setcomp/errors.hpp"
#include "setcomp/renderer.hpp"

#include <doctest/doctest.h>

#include <algorithm>
#include <filesystem>
#include <set>

using namespace setcomp;
namespace fs = std::filesystem;

namespace {

const GlyphStore& small_store() {
  static const GlyphStore store = synth_glyph_store(12, 4, 3);
  return store;
}

Episode episode_of(std::vector<int> classes) {
  Episode e;
  e.class_ids = std::move(classes);
  e.reference_exemplar_ids.assign(e.class_ids.size(), 0);
  return e;
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST_CASE("synthetic store is deterministic and validated") {
  const auto a = synth_glyph_store(5, 3, 11);
  const auto b = synth_glyph_store(5, 3, 11);
  REQUIRE(a.num_classes() == 5);
  for (int c = 0; c < 5; ++c) {
    for (int e = 0; e < 3; ++e) CHECK(a.exemplar(c, e) == b.exemplar(c, e));
  }
  CHECK(synth_glyph_store(5, 3, 12).exemplar(0, 0) != a.exemplar(0, 0));
  CHECK_THROWS_AS(synth_glyph_store(0, 3, 1), std::invalid_argument);
  CHECK(a.exemplar(0, 0).rows() == kGlyphSize);
  CHECK(a.exemplar(0, 0).minCoeff() >= 0.0f);
  CHECK(a.exemplar(0, 0).maxCoeff() <= 1.0f);
}

TEST_CASE("50 synthetic class prototypes are pairwise distinct") {
  const auto store = synth_glyph_store(50, 5, 7);
  std::vector<Image> proto;
  for (int c = 0; c < 50; ++c) {
    Image mean = Image::Zero(kGlyphSize, kGlyphSize);
    for (const auto& img : store.exemplars[static_cast<std::size_t>(c)]) mean += img;
    proto.push_back(mean / 5.0f);
  }
  double closest = 1.0;
  for (int i = 0; i < 50; ++i) {
    for (int j = i + 1; j < 50; ++j) {
      closest = std::min(closest, static_cast<double>((proto[i] - proto[j]).cwiseAbs().mean()));
    }
  }
  CHECK(closest > 0.02);
}

TEST_CASE("directory ingestion") {
  TempDir dir("setcomp_ingest_test");
  for (const char* cls : {"alpha", "beta"}) {
    fs::create_directories(dir.path / cls);
    for (int i = 0; i < 20; ++i) {
      const int size = i == 0 ? 128 : 64;
      Image img = Image::Constant(size, size, 1.0f);
      img.block(size / 4, size / 4, size / 2, size / 8).setZero();
      write_png_gray(dir.path / cls / ("img" + std::to_string(100 + i) + ".png"), img);
    }
  }
  const auto store = load_glyph_store(dir.path);
  REQUIRE(store.num_classes() == 2);
  CHECK(store.class_names == std::vector<std::string>{"alpha", "beta"});
  CHECK(store.exemplars[0].size() == 20);
  CHECK(store.exemplars[1].size() == 20);
  // The 128x128 source is resized to the working size.
  CHECK(store.exemplar(0, 0).rows() == kGlyphSize);
  CHECK(store.exemplar(0, 0).cols() == kGlyphSize);

  TempDir empty("setcomp_ingest_empty");
  CHECK_THROWS_AS(load_glyph_store(empty.path), EmptyStoreError);
  CHECK_THROWS_AS(load_glyph_store(empty.path / "missing"), IngestionError);
}

TEST_CASE("identity affine transform reproduces its input") {
  const auto& glyph = small_store().exemplar(2, 1);
  Rng rng = make_rng({1});
  const Image out = affine_jitter(glyph, RenderSpec::identity(), rng);
  CHECK((out - glyph).cwiseAbs().maxCoeff() < 1e-6f);
}

TEST_CASE("affine jitter is seeded and stays in range") {
  const auto& glyph = small_store().exemplar(0, 0);
  RenderSpec spec;
  spec.rot_deg = 40.0;
  Rng a = make_rng({5});
  Rng b = make_rng({5});
  const Image x = affine_jitter(glyph, spec, a);
  CHECK(x == affine_jitter(glyph, spec, b));
  CHECK(x.minCoeff() >= 0.0f);
  CHECK(x.maxCoeff() <= 1.0f);
}

TEST_CASE("singleton composite without jitter or noise is an exemplar") {
  const auto& store = small_store();
  const auto ep = episode_of({4, 7, 9});
  Rng rng = make_rng({2});
  const auto scene = render_composite(store, ep, LabelSet::singleton(1, 3), RenderSpec::identity(), rng);
  const auto& pool = store.exemplars[7];
  CHECK(std::any_of(pool.begin(), pool.end(), [&](const Image& e) { return (e - scene.image).cwiseAbs().maxCoeff() < 1e-6f; }));
  CHECK(scene.truth == LabelSet::singleton(1, 3));
}

TEST_CASE("min compositing is commutative and bounded by every layer") {
  const auto& store = small_store();
  Rng rng = make_rng({3});
  std::vector<Image> layers;
  for (int c : {1, 5, 8}) layers.push_back(affine_jitter(store.exemplar(c, 0), RenderSpec(), rng));
  const Image forward = composite_min(layers);
  std::vector<Image> reversed(layers.rbegin(), layers.rend());
  CHECK(forward == composite_min(reversed));
  std::swap(layers[0], layers[1]);
  CHECK(forward == composite_min(layers));
  for (const auto& l : layers) CHECK((forward.array() <= l.array()).all());
  CHECK_THROWS_AS(composite_min({}), std::invalid_argument);
}

TEST_CASE("rendering is seed deterministic") {
  const auto& store = small_store();
  const auto ep = episode_of({0, 3, 6, 10, 11});
  const auto t = LabelSet(0b10101, 5);
  Rng a = make_rng({9, 1});
  Rng b = make_rng({9, 1});
  CHECK(render_composite(store, ep, t, RenderSpec(), a).image == render_composite(store, ep, t, RenderSpec(), b).image);
  RenderSpec grid;
  grid.mode = RenderMode::kGridScene;
  Rng c = make_rng({9, 2});
  Rng d = make_rng({9, 2});
  const auto s1 = render(store, ep, t, grid, c);
  const auto s2 = render(store, ep, t, grid, d);
  CHECK(s1.image == s2.image);
  CHECK(s1.cells == s2.cells);
}

TEST_CASE("grid scenes") {
  const auto& store = small_store();
  const auto ep = episode_of({2, 3, 4, 5});
  RenderSpec spec = RenderSpec::identity();
  spec.mode = RenderMode::kGridScene;

  SUBCASE("three classes in a 2x2 grid occupy three distinct cells") {
    Rng rng = make_rng({4});
    const auto scene = render_scene(store, ep, LabelSet(0b1011, 4), spec, rng);
    CHECK(scene.image.rows() == 2 * kGlyphSize);
    CHECK(scene.image.cols() == 2 * kGlyphSize);
    REQUIRE(scene.cells.size() == 3);
    std::set<int> cells;
    for (const auto& [cls, cell] : scene.cells) cells.insert(cell);
    CHECK(cells.size() == 3);
  }
  SUBCASE("1x1 grid singleton equals the exemplar") {
    spec.grid_rows = spec.grid_cols = 1;
    Rng rng = make_rng({4});
    const auto scene = render_scene(store, ep, LabelSet::singleton(2, 4), spec, rng);
    const auto& pool = store.exemplars[4];
    CHECK(std::any_of(pool.begin(), pool.end(), [&](const Image& e) { return (e - scene.image).cwiseAbs().maxCoeff() < 1e-6f; }));
  }
  SUBCASE("too many classes for the grid") {
    spec.grid_rows = spec.grid_cols = 1;
    Rng rng = make_rng({4});
    CHECK_THROWS_AS(render_scene(store, ep, LabelSet(0b11, 4), spec, rng), std::invalid_argument);
  }
}

TEST_CASE("render argument validation") {
  const auto& store = small_store();
  Rng rng = make_rng({1});
  CHECK_THROWS_AS(render(store, episode_of({0, 1}), LabelSet(0, 2), RenderSpec(), rng), std::invalid_argument);
  CHECK_THROWS_AS(render(store, episode_of({0, 1}), LabelSet(1, 3), RenderSpec(), rng), std::invalid_argument);
  CHECK_THROWS_AS(render(store, episode_of({0, 99}), LabelSet(1, 2), RenderSpec(), rng), std::invalid_argument);
  RenderSpec bad;
  bad.scale_lo = 2.0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}
