#include "setcomp/errors.hpp"
#include "setcomp/experiment.hpp"
#include "setcomp/model.hpp"

#include <doctest/doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

using namespace setcomp;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string tiny(const std::string& experiment, const fs::path& out, const std::string& extra) {
  return "experiment = " + experiment +
         "\n"
         "data.synthetic_classes = 30\n"
         "data.synthetic_exemplars = 3\n"
         "data.train_classes = 20\n"
         "encoder.m = 8\n"
         "encoder.input_size = 16\n"
         "encoder.channels = 4, 4, 8, 8\n"
         "train.steps = 4\n"
         "train.batch = 4\n"
         "train.log_every = 2\n"
         "eval.episodes = 2\n"
         "eval.queries = 4\n"
         "eval.calibration_episodes = 1\n"
         "out = " + out.string() + "\n" + extra;
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) { fs::remove_all(path); }
  ~TempDir() { fs::remove_all(path); }
};

void run_all(ExperimentRunner& r) {
  r.train();
  r.eval();
  r.render_preview();
  r.report();
}

}  // namespace

TEST_CASE("config parsing") {
  const auto cfg = parse_experiment_config(
      "# comment line\n"
      "experiment = exp2_containment  # trailing comment\n"
      "variants = DNN, Lin\n"
      "baselines = tradem\n"
      "train.k = 8\n"
      "train.cap = 5\n"
      "train.size_weights = 1, 1, 1, 1, 2\n"
      "render.mode = overlay_min\n"
      "seed = 9\n");
  CHECK(cfg.experiment == ExperimentTag::kContainment);
  CHECK(cfg.variants == std::vector<std::string>{"DNN", "Lin"});
  CHECK(cfg.train.k == 8);
  CHECK(cfg.train.size_weights.size() == 5);
  CHECK(cfg.seed == 9);
}

TEST_CASE("config errors") {
  const std::string base = "experiment = exp1_union\nvariants = Lin\n";
  CHECK_THROWS_AS(parse_experiment_config(base + "bogus = 1\n"), ConfigError);
  CHECK_THROWS_AS(parse_experiment_config(base + "train.steps = ten\n"), ConfigError);
  CHECK_THROWS_AS(parse_experiment_config(base + "train.lr = 1e-3x\n"), ConfigError);
  CHECK_THROWS_AS(parse_experiment_config(base + "seed = 1\nseed = 2\n"), ConfigError);
  CHECK_THROWS_AS(parse_experiment_config(base + "just words\n"), ConfigError);
  CHECK_THROWS_AS(parse_experiment_config("variants = Lin\n"), ConfigError);
  CHECK_THROWS_AS(parse_experiment_config("experiment = exp9\nvariants = Lin\n"), ConfigError);
  CHECK_THROWS_AS(parse_experiment_config("experiment = exp1_union\n"), ConfigError);
  CHECK_THROWS_AS(parse_experiment_config("experiment = exp1_union\nvariants = Nope\n"), ConfigError);
  CHECK_THROWS_AS(parse_experiment_config(base + "baselines = slidewin\n"), ConfigError);
  CHECK_THROWS_AS(parse_experiment_config(base + "data.dir = /definitely/not/here\n"), ConfigError);
  CHECK_THROWS_AS(parse_experiment_config(base + "train.cap = 9\n"), ConfigError);
  CHECK_THROWS_AS(parse_experiment_config("experiment = exp2_containment\nvariants = DNN\ntrain.cap = 5\n"), ConfigError);
  CHECK_THROWS_AS(parse_experiment_config("experiment = exp4_supervised\nvariants = Lin\n"), ConfigError);
  CHECK_THROWS_AS(load_experiment_config("/definitely/not/here.cfg"), ConfigError);
}

TEST_CASE("config hash ignores seed and output directory only") {
  const std::string base = "experiment = exp1_union\nvariants = Lin\n";
  const auto a = parse_experiment_config(base + "seed = 1\nout = x\n");
  const auto b = parse_experiment_config(base + "seed = 2\nout = y\n");
  const auto c = parse_experiment_config(base + "train.steps = 7\n");
  CHECK(a.hash() == b.hash());
  CHECK(a.hash() != c.hash());
  CHECK(a.hash().size() == 16);
  // Canonical text reparses to the same configuration.
  CHECK(parse_experiment_config(a.canonical()).hash() == a.hash());
}

TEST_CASE("directory lock is exclusive") {
  TempDir dir("setcomp_lock_test");
  {
    DirectoryLock lock(dir.path);
    CHECK(fs::exists(dir.path / ".lock"));
    CHECK_THROWS(DirectoryLock(dir.path));
  }
  CHECK_FALSE(fs::exists(dir.path / ".lock"));
  CHECK_NOTHROW(DirectoryLock(dir.path));
}

TEST_CASE("exp1 end to end: table layout, previews, determinism") {
  TempDir a("setcomp_exp1_a");
  TempDir b("setcomp_exp1_b");
  const std::string extra = "variants = DNN, LinFC, Lin, Mean\nbaselines = tradem, mf\n";
  ExperimentRunner ra(parse_experiment_config(tiny("exp1_union", a.path, extra)));
  ExperimentRunner rb(parse_experiment_config(tiny("exp1_union", b.path, extra)));
  CHECK(ra.model_names() == std::vector<std::string>{"g_DNN", "g_LinFC", "g_Lin", "g_Mean", "TradEm", "MF"});
  run_all(ra);
  run_all(rb);

  CHECK(slurp(a.path / "report" / "summary.json") == slurp(b.path / "report" / "summary.json"));
  CHECK(slurp(a.path / "metrics.json") == slurp(b.path / "metrics.json"));
  CHECK(slurp(a.path / "report" / "table.csv") == slurp(b.path / "report" / "table.csv"));

  std::istringstream csv(slurp(a.path / "report" / "table.csv"));
  std::string line;
  std::getline(csv, line);
  CHECK(line.find("config_hash=" + ra.config().hash()) != std::string::npos);
  std::getline(csv, line);
  CHECK(line == "stratum,metric,g_DNN,g_LinFC,g_Lin,g_Mean,TradEm,MF");
  int rows = 0;
  while (std::getline(csv, line)) ++rows;
  CHECK(rows == 9);  // All x2, three strata x2, set size

  int pngs = 0;
  for (const auto& e : fs::directory_iterator(a.path / "preview")) pngs += e.path().extension() == ".png";
  CHECK(pngs == 26);  // 25 subsets and the montage
  CHECK(fs::exists(a.path / "report" / "loss_curves.png"));
  CHECK(fs::exists(a.path / "traces" / "g_Lin.jsonl"));
  CHECK(!fs::exists(a.path / "checkpoints" / "MF.ckpt"));
}

TEST_CASE("resume skips finished models and extends unfinished ones") {
  TempDir dir("setcomp_resume_test");
  auto cfg = parse_experiment_config(tiny("exp1_union", dir.path, "variants = Lin\n"));
  ExperimentRunner(cfg).train();
  const auto ckpt = dir.path / "checkpoints" / "g_Lin.ckpt";
  const auto first = slurp(ckpt);
  ExperimentRunner(cfg).train();
  CHECK(slurp(ckpt) == first);
  auto longer = cfg;
  longer.train.steps = 6;
  // A different config hash refuses to resume.
  CHECK_THROWS(ExperimentRunner(longer).train());
  // Another seed is refused as well.
  auto other = cfg;
  other.seed = 99;
  CHECK_THROWS(ExperimentRunner(other).train());
}

TEST_CASE("eval leaves checkpoints untouched and requires them") {
  TempDir dir("setcomp_eval_test");
  const auto cfg = parse_experiment_config(tiny("exp2_containment", dir.path,
                                                "variants = Lin\nbaselines = tradem\ntrain.k = 6\ntrain.cap = 3\n"));
  ExperimentRunner runner(cfg);
  CHECK_THROWS(runner.eval());
  runner.train();
  const auto before = file_hash(dir.path / "checkpoints" / "h_Lin.ckpt");
  const auto doc = runner.eval();
  CHECK(file_hash(dir.path / "checkpoints" / "h_Lin.ckpt") == before);
  CHECK(doc["config_hash"] == cfg.hash());
  CHECK(doc["models"].contains("TradEm"));
  runner.report();
  std::istringstream csv(slurp(dir.path / "report" / "table.csv"));
  std::string line;
  std::getline(csv, line);
  std::getline(csv, line);
  CHECK(line == "metric,h_Lin,TradEm");
  CHECK(fs::exists(dir.path / "report" / "scores_h_Lin.png"));
}

TEST_CASE("scene and supervised experiments run end to end") {
  TempDir s("setcomp_exp3_test");
  ExperimentRunner scene(parse_experiment_config(tiny(
      "exp3_scene", s.path,
      "render.mode = grid_scene\nvariants = DNN\nbaselines = tradem, slidewin\ntrain.k = 6\ntrain.cap = 3\nslidewin.max_grid = 2\n")));
  CHECK(scene.model_names() == std::vector<std::string>{"h_DNN", "TradEm", "SlideWin"});
  run_all(scene);
  CHECK(fs::exists(s.path / "report" / "scores_SlideWin.png"));

  TempDir m("setcomp_exp4_test");
  ExperimentRunner sup(parse_experiment_config(tiny("exp4_supervised", m.path,
                                                    "baselines = multilabel\ntrain.cap = 3\n"
                                                    "model3.image_dim = 8\nmodel3.label_dim = 4\nmodel3.hidden = 8\n")));
  run_all(sup);
  const auto metrics = nlohmann::json::parse(slurp(m.path / "metrics.json"));
  // Half of the supervised queries are positive.
  CHECK(metrics["models"]["ModelIII"]["n"] == 8);
  const auto scores = nlohmann::json::parse(slurp(m.path / "eval_scores.json"));
  int pos = 0;
  for (int y : scores["ModelIII"]["labels"]) pos += y;
  CHECK(pos == 4);
}

TEST_CASE("shipped configs parse") {
  int n = 0;
  for (const auto& e : fs::directory_iterator(SETCOMP_CONFIG_DIR)) {
    if (e.path().extension() != ".cfg") continue;
    CAPTURE(e.path().string());
    const auto cfg = load_experiment_config(e.path());
    CHECK(cfg.encoder.input_size == 32);
    ++n;
  }
  CHECK(n == 4);
}
