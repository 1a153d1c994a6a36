#include "setcomp/experiment.hpp"

#include "setcomp/baselines.hpp"
#include "setcomp/composition.hpp"
#include "setcomp/errors.hpp"
#include "setcomp/metrics.hpp"
#include "setcomp/model.hpp"
#include "setcomp/plot.hpp"
#include "setcomp/sampling.hpp"

#include <algorithm>
#include <cerrno>
#include <charconv>
#include <cstdio>
#include <cstring>
#include <fcntl.h>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>
#include <unistd.h>

namespace setcomp {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

// Generator streams for evaluation data, disjoint from the training streams.
constexpr std::uint64_t kEvalStream = 0x6576616cULL;
constexpr std::uint64_t kCalibrationStream = 0x63616c69ULL;
constexpr std::uint64_t kPreviewStream = 0x70726576ULL;

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::string join(const std::vector<std::string>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + v[i];
  return out;
}

std::string format_double(double v) {
  std::ostringstream ss;
  ss << std::setprecision(17) << v;
  return ss.str();
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
  T out{};
  const auto* end = value.data() + value.size();
  const auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc() || ptr != end) throw ConfigError(key + ": '" + value + "' is not a valid number");
  return out;
}

double parse_real(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    const double v = std::stod(value, &used);
    if (used != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw ConfigError(key + ": '" + value + "' is not a valid real number");
  }
}

ExperimentTag parse_tag(const std::string& s) {
  if (s == "exp1_union") return ExperimentTag::kUnion;
  if (s == "exp2_containment") return ExperimentTag::kContainment;
  if (s == "exp3_scene") return ExperimentTag::kScene;
  if (s == "exp4_supervised") return ExperimentTag::kSupervised;
  throw ConfigError("experiment: unknown tag '" + s + "'");
}

bool binary_experiment(ExperimentTag t) { return t == ExperimentTag::kContainment || t == ExperimentTag::kScene; }

std::string percent(double v) {
  std::ostringstream ss;
  ss << std::fixed << std::setprecision(1) << 100.0 * v;
  return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  return json::parse(in);
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return v.empty() ? 0.0 : v[v.size() / 2];
}

struct BinaryEval {
  std::vector<double> scores;  // larger means "contains"
  std::vector<int> labels;
  double accuracy = 0.0;
  double threshold = 0.0;
};

json binary_json(const BinaryEval& e, const std::string& rule) {
  return json{{"n", e.labels.size()},
              {"accuracy", e.accuracy},
              {"auc", auc_rank(e.scores, e.labels)},
              {"threshold", e.threshold},
              {"rule", rule}};
}

}  // namespace

std::string to_string(ExperimentTag t) {
  switch (t) {
    case ExperimentTag::kUnion: return "exp1_union";
    case ExperimentTag::kContainment: return "exp2_containment";
    case ExperimentTag::kScene: return "exp3_scene";
    case ExperimentTag::kSupervised: return "exp4_supervised";
  }
  return "?";
}

std::string fnv1a_hex(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string file_hash(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return fnv1a_hex(ss.str());
}

std::string ExperimentConfig::canonical() const {
  std::map<std::string, std::string> kv;
  kv["experiment"] = to_string(experiment);
  kv["data.dir"] = data_dir.string();
  kv["data.synthetic_classes"] = std::to_string(synth_classes);
  kv["data.synthetic_exemplars"] = std::to_string(synth_exemplars);
  kv["data.synthetic_seed"] = std::to_string(synth_seed);
  kv["data.train_classes"] = std::to_string(train_classes);
  kv["render.shift_frac"] = format_double(render.shift_frac);
  kv["render.scale_lo"] = format_double(render.scale_lo);
  kv["render.scale_hi"] = format_double(render.scale_hi);
  kv["render.rot_deg"] = format_double(render.rot_deg);
  kv["render.noise_sigma"] = format_double(render.noise_sigma);
  kv["render.mode"] = render.mode == RenderMode::kGridScene ? "grid_scene" : "overlay_min";
  kv["render.grid_rows"] = std::to_string(render.grid_rows);
  kv["render.grid_cols"] = std::to_string(render.grid_cols);
  kv["encoder.backbone"] = to_string(encoder.backbone);
  kv["encoder.m"] = std::to_string(encoder.m);
  kv["encoder.input_size"] = std::to_string(encoder.input_size);
  std::vector<std::string> ch;
  for (int c : encoder.channels) ch.push_back(std::to_string(c));
  kv["encoder.channels"] = join(ch);
  kv["variants"] = join(variants);
  kv["baselines"] = join(baselines);
  kv["model3.image_dim"] = std::to_string(model3.image_dim);
  kv["model3.label_dim"] = std::to_string(model3.label_dim);
  kv["model3.hidden"] = std::to_string(model3.hidden);
  kv["train.steps"] = std::to_string(train.steps);
  kv["train.batch"] = std::to_string(train.batch);
  kv["train.lr"] = format_double(train.lr);
  kv["train.margin"] = format_double(train.margin);
  kv["train.k"] = std::to_string(train.k);
  kv["train.cap"] = std::to_string(train.cap);
  std::vector<std::string> sw;
  for (double w : train.size_weights) sw.push_back(format_double(w));
  kv["train.size_weights"] = join(sw);
  kv["train.log_every"] = std::to_string(train.log_every);
  kv["baseline.steps"] = std::to_string(baseline_steps);
  kv["eval.episodes"] = std::to_string(eval_episodes);
  kv["eval.queries"] = std::to_string(eval_queries);
  kv["eval.calibration_episodes"] = std::to_string(calibration_episodes);
  kv["slidewin.max_grid"] = std::to_string(slidewin_max_grid);
  std::string out;
  for (const auto& [k, v] : kv) out += k + "=" + v + "\n";
  return out;
}

std::string ExperimentConfig::hash() const { return fnv1a_hex(canonical()); }

ExperimentConfig parse_experiment_config(const std::string& text) {
  ExperimentConfig cfg;
  std::set<std::string> seen;
  bool have_experiment = false;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (!seen.insert(key).second) throw ConfigError("line " + std::to_string(lineno) + ": duplicate key '" + key + "'");
    auto integer = [&] { return parse_number<int>(key, value); };
    auto real = [&] { return parse_real(key, value); };
    if (key == "experiment") {
      cfg.experiment = parse_tag(value);
      have_experiment = true;
    } else if (key == "data.dir") {
      cfg.data_dir = value;
    } else if (key == "data.synthetic_classes") {
      cfg.synth_classes = integer();
    } else if (key == "data.synthetic_exemplars") {
      cfg.synth_exemplars = integer();
    } else if (key == "data.synthetic_seed") {
      cfg.synth_seed = parse_number<std::uint64_t>(key, value);
    } else if (key == "data.train_classes") {
      cfg.train_classes = integer();
    } else if (key == "render.shift_frac") {
      cfg.render.shift_frac = real();
    } else if (key == "render.scale_lo") {
      cfg.render.scale_lo = real();
    } else if (key == "render.scale_hi") {
      cfg.render.scale_hi = real();
    } else if (key == "render.rot_deg") {
      cfg.render.rot_deg = real();
    } else if (key == "render.noise_sigma") {
      cfg.render.noise_sigma = real();
    } else if (key == "render.mode") {
      if (value == "overlay_min") {
        cfg.render.mode = RenderMode::kOverlayMin;
      } else if (value == "grid_scene") {
        cfg.render.mode = RenderMode::kGridScene;
      } else {
        throw ConfigError("render.mode: expected overlay_min or grid_scene, got '" + value + "'");
      }
    } else if (key == "render.grid_rows") {
      cfg.render.grid_rows = integer();
    } else if (key == "render.grid_cols") {
      cfg.render.grid_cols = integer();
    } else if (key == "encoder.backbone") {
      try {
        cfg.encoder.backbone = parse_backbone(value);
      } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("encoder.backbone: ") + e.what());
      }
    } else if (key == "encoder.m") {
      cfg.encoder.m = integer();
    } else if (key == "encoder.input_size") {
      cfg.encoder.input_size = integer();
    } else if (key == "encoder.channels") {
      cfg.encoder.channels.clear();
      for (const auto& c : split_list(value)) cfg.encoder.channels.push_back(parse_number<int>(key, c));
    } else if (key == "variants") {
      cfg.variants = split_list(value);
    } else if (key == "baselines") {
      cfg.baselines = split_list(value);
    } else if (key == "model3.image_dim") {
      cfg.model3.image_dim = integer();
    } else if (key == "model3.label_dim") {
      cfg.model3.label_dim = integer();
    } else if (key == "model3.hidden") {
      cfg.model3.hidden = integer();
    } else if (key == "train.steps") {
      cfg.train.steps = integer();
    } else if (key == "train.batch") {
      cfg.train.batch = integer();
    } else if (key == "train.lr") {
      cfg.train.lr = real();
    } else if (key == "train.margin") {
      cfg.train.margin = real();
    } else if (key == "train.k") {
      cfg.train.k = integer();
    } else if (key == "train.cap") {
      cfg.train.cap = integer();
    } else if (key == "train.size_weights") {
      cfg.train.size_weights.clear();
      for (const auto& w : split_list(value)) cfg.train.size_weights.push_back(parse_real(key, w));
    } else if (key == "train.log_every") {
      cfg.train.log_every = integer();
    } else if (key == "baseline.steps") {
      cfg.baseline_steps = integer();
    } else if (key == "eval.episodes") {
      cfg.eval_episodes = integer();
    } else if (key == "eval.queries") {
      cfg.eval_queries = integer();
    } else if (key == "eval.calibration_episodes") {
      cfg.calibration_episodes = integer();
    } else if (key == "slidewin.max_grid") {
      cfg.slidewin_max_grid = integer();
    } else if (key == "seed") {
      cfg.seed = parse_number<std::uint64_t>(key, value);
    } else if (key == "out") {
      cfg.out = value;
    } else {
      throw ConfigError("line " + std::to_string(lineno) + ": unknown key '" + key + "'");
    }
  }
  if (!have_experiment) throw ConfigError("missing required key 'experiment'");

  // Cross-field checks.
  try {
    cfg.render.validate();
    cfg.encoder.validate();
    cfg.train.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (!cfg.data_dir.empty() && !fs::is_directory(cfg.data_dir)) {
    throw ConfigError("data.dir: '" + cfg.data_dir.string() + "' is not a directory");
  }
  if (cfg.data_dir.empty() && (cfg.synth_classes < 1 || cfg.synth_exemplars < 1)) {
    throw ConfigError("data.synthetic_classes and data.synthetic_exemplars must be positive");
  }
  if (cfg.train_classes < 1) throw ConfigError("data.train_classes must be positive");
  if (cfg.eval_episodes < 1 || cfg.eval_queries < 2 || cfg.eval_queries % 2 != 0) {
    throw ConfigError("eval.episodes must be positive and eval.queries an even number >= 2");
  }
  if (cfg.slidewin_max_grid < 1 || cfg.slidewin_max_grid > 8) throw ConfigError("slidewin.max_grid must be in [1, 8]");
  const std::set<std::string> allowed_baselines = [&]() -> std::set<std::string> {
    switch (cfg.experiment) {
      case ExperimentTag::kUnion: return {"tradem", "mf"};
      case ExperimentTag::kContainment: return {"tradem"};
      case ExperimentTag::kScene: return {"tradem", "slidewin"};
      case ExperimentTag::kSupervised: return {"multilabel"};
    }
    return {};
  }();
  for (const auto& b : cfg.baselines) {
    if (!allowed_baselines.count(b)) {
      throw ConfigError("baselines: '" + b + "' is not available for " + to_string(cfg.experiment));
    }
  }
  if (cfg.experiment == ExperimentTag::kSupervised) {
    if (!cfg.variants.empty()) throw ConfigError("variants: exp4_supervised has a single model; leave variants unset");
    if (cfg.train.cap > cfg.train_classes) throw ConfigError("train.cap exceeds the class inventory");
  } else {
    if (cfg.variants.empty()) throw ConfigError("variants: at least one variant is required");
    for (const auto& v : cfg.variants) {
      try {
        if (cfg.experiment == ExperimentTag::kUnion) {
          parse_g_variant(v);
        } else {
          parse_h_variant(v);
        }
      } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("variants: ") + e.what());
      }
    }
    if (binary_experiment(cfg.experiment) && cfg.train.k <= cfg.train.cap) {
      throw ConfigError("train.k must exceed train.cap so containment queries have negatives");
    }
  }
  if (cfg.render.mode == RenderMode::kGridScene && cfg.render.grid_rows * cfg.render.grid_cols < cfg.train.cap) {
    throw ConfigError("render grid has fewer cells than train.cap");
  }
  return cfg;
}

ExperimentConfig load_experiment_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_experiment_config(ss.str());
}

// --- lock -------------------------------------------------------------------

DirectoryLock::DirectoryLock(const fs::path& dir) : path_(dir / ".lock") {
  fs::create_directories(dir);
  const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
  if (fd < 0) {
    if (errno == EEXIST) {
      throw std::runtime_error("output directory " + dir.string() + " is locked by another run (" + path_.string() + ")");
    }
    throw std::runtime_error("cannot create lock " + path_.string() + ": " + std::strerror(errno));
  }
  const auto pid = std::to_string(::getpid()) + "\n";
  [[maybe_unused]] const auto n = ::write(fd, pid.data(), pid.size());
  ::close(fd);
}

DirectoryLock::~DirectoryLock() {
  std::error_code ec;
  fs::remove(path_, ec);
}

// --- runner -------------------------------------------------------------------

ExperimentRunner::ExperimentRunner(ExperimentConfig cfg, ProgressSink progress)
    : cfg_(std::move(cfg)), progress_(std::move(progress)) {}

const GlyphStore& ExperimentRunner::store() {
  if (!store_) {
    store_ = cfg_.data_dir.empty() ? synth_glyph_store(cfg_.synth_classes, cfg_.synth_exemplars, cfg_.synth_seed)
                                   : load_glyph_store(cfg_.data_dir);
    const int needed = cfg_.experiment == ExperimentTag::kSupervised ? cfg_.train_classes : cfg_.train_classes + cfg_.train.k;
    if (store_->num_classes() < needed) {
      throw std::runtime_error("glyph store has " + std::to_string(store_->num_classes()) + " classes; need " +
                               std::to_string(needed));
    }
  }
  return *store_;
}

DataSpec ExperimentRunner::train_data() {
  DataSpec d{&store(), {}, cfg_.render};
  for (int i = 0; i < cfg_.train_classes; ++i) d.classes.push_back(i);
  return d;
}

DataSpec ExperimentRunner::test_data() {
  // The supervised protocol shares its classes between training and test.
  if (cfg_.experiment == ExperimentTag::kSupervised) return train_data();
  DataSpec d{&store(), {}, cfg_.render};
  for (int i = cfg_.train_classes; i < store().num_classes(); ++i) d.classes.push_back(i);
  return d;
}

json ExperimentRunner::stamp() const {
  return json{{"config_hash", cfg_.hash()}, {"seed", cfg_.seed}, {"experiment", to_string(cfg_.experiment)}};
}

fs::path ExperimentRunner::checkpoint_path(const std::string& model) const {
  return cfg_.out / "checkpoints" / (model + ".ckpt");
}

std::vector<std::string> ExperimentRunner::model_names() const {
  std::vector<std::string> names;
  auto has = [&](const char* b) { return std::find(cfg_.baselines.begin(), cfg_.baselines.end(), b) != cfg_.baselines.end(); };
  switch (cfg_.experiment) {
    case ExperimentTag::kUnion:
      for (const auto& v : cfg_.variants) names.push_back("g_" + to_string(parse_g_variant(v)));
      if (has("tradem")) names.push_back("TradEm");
      if (has("mf")) names.push_back("MF");
      break;
    case ExperimentTag::kContainment:
    case ExperimentTag::kScene:
      for (const auto& v : cfg_.variants) names.push_back("h_" + to_string(parse_h_variant(v)));
      if (has("tradem")) names.push_back("TradEm");
      if (has("slidewin")) names.push_back("SlideWin");
      break;
    case ExperimentTag::kSupervised:
      names.push_back("ModelIII");
      if (has("multilabel")) names.push_back("Multilabel");
      break;
  }
  return names;
}

void ExperimentRunner::train() {
  const auto data = train_data();
  const int baseline_steps = cfg_.baseline_steps < 0 ? cfg_.train.steps : cfg_.baseline_steps;
  Model3Config m3 = cfg_.model3;
  m3.n_classes = cfg_.train_classes;

  struct Job {
    std::string name;
    ModelKind kind;
    GVariant g = GVariant::kLin;
    HVariant h = HVariant::kDNN;
    int steps;
  };
  std::vector<Job> jobs;
  for (const auto& name : model_names()) {
    if (name == "MF") continue;
    if (name == "SlideWin") {
      // SlideWin reuses the singleton-trained TradEm encoder.
      if (std::none_of(jobs.begin(), jobs.end(), [](const Job& j) { return j.name == "TradEm"; })) {
        jobs.push_back(Job{"TradEm", ModelKind::kTradEm, {}, {}, baseline_steps});
      }
      continue;
    }
    if (name == "TradEm") {
      jobs.push_back(Job{name, ModelKind::kTradEm, {}, {}, baseline_steps});
    } else if (name == "ModelIII") {
      jobs.push_back(Job{name, ModelKind::kSupervised, {}, {}, cfg_.train.steps});
    } else if (name == "Multilabel") {
      jobs.push_back(Job{name, ModelKind::kMultilabel, {}, {}, baseline_steps});
    } else if (name.rfind("g_", 0) == 0) {
      jobs.push_back(Job{name, ModelKind::kUnion, parse_g_variant(name.substr(2)), {}, cfg_.train.steps});
    } else {
      jobs.push_back(Job{name, ModelKind::kContainment, {}, parse_h_variant(name.substr(2)), cfg_.train.steps});
    }
  }

  for (const auto& job : jobs) {
    const auto ckpt = checkpoint_path(job.name);
    ModelBundle bundle;
    if (fs::exists(ckpt)) {
      bundle = load_checkpoint(ckpt);
      const auto saved = bundle.extra.value("config_hash", std::string());
      if (saved != cfg_.hash() || bundle.seed != cfg_.seed) {
        throw std::runtime_error("checkpoint " + ckpt.string() + " belongs to another config or seed");
      }
      if (bundle.step >= job.steps) {
        if (progress_) progress_(job.name + ": already trained (" + std::to_string(bundle.step) + " steps)");
        continue;
      }
      if (progress_) progress_(job.name + ": resuming at step " + std::to_string(bundle.step));
    } else {
      bundle = make_bundle(job.kind, cfg_.encoder, job.g, job.h, m3, cfg_.seed, cfg_.train.lr);
      bundle.extra = stamp();
      bundle.extra["model"] = job.name;
    }
    TrainConfig tc = cfg_.train;
    tc.steps = job.steps;
    bundle.extra["train"] = to_json(tc);

    const auto trace_path = cfg_.out / "traces" / (job.name + ".jsonl");
    fs::create_directories(trace_path.parent_path());
    std::ofstream trace(trace_path, std::ios::app);
    TrainHooks hooks;
    hooks.trace = [&](const TraceRow& row) {
      json j{{"step", row.step}, {"loss", row.loss}, {"smoothed", row.smoothed}, {"model", job.name}};
      j.update(stamp());
      trace << j.dump() << "\n";
      trace.flush();
      if (progress_ && row.step % (tc.log_every * 10) == 0) {
        progress_(job.name + ": step " + std::to_string(row.step) + " loss " + format_double(row.smoothed));
      }
    };
    if (progress_) progress_(job.name + ": training " + std::to_string(job.steps) + " steps");
    switch (job.kind) {
      case ModelKind::kUnion: train_model1(bundle, tc, data, hooks); break;
      case ModelKind::kContainment: train_model2(bundle, tc, data, hooks); break;
      case ModelKind::kSupervised: train_model3(bundle, tc, data, hooks); break;
      case ModelKind::kMultilabel: train_multilabel(bundle, tc, data, hooks); break;
      case ModelKind::kTradEm:
        tradem_train(bundle,
                     cfg_.experiment == ExperimentTag::kContainment ? TradEmVariant::kContainment : TradEmVariant::kUnion,
                     tc, data, hooks);
        break;
    }
    fs::create_directories(ckpt.parent_path());
    save_checkpoint(ckpt, bundle);
  }
}

json ExperimentRunner::eval_union() {
  const auto test = test_data();
  const int k = cfg_.train.k;
  const int cap = cfg_.train.cap;
  const auto candidates = enumerate_label_sets(k, cap);
  const RenderSpec single = test.singleton_spec();

  struct EpisodeData {
    std::vector<Image> refs;
    std::vector<Image> queries;
  };
  std::vector<EpisodeData> episodes;
  std::vector<LabelSet> truths;
  for (int e = 0; e < cfg_.eval_episodes; ++e) {
    Rng rng = make_rng({cfg_.seed, kEvalStream, static_cast<std::uint64_t>(e)});
    const auto ep = sample_episode_classes(*test.store, test.classes, k, rng);
    EpisodeData d;
    for (int i = 0; i < k; ++i) d.refs.push_back(render_reference(*test.store, ep, i, single, rng));
    for (int q = 0; q < cfg_.eval_queries; ++q) {
      // Uniform over the candidate sets, the protocol under which MF is chance.
      const auto t = candidates[uniform_index(rng, candidates.size())];
      d.queries.push_back(render(*test.store, ep, t, test.scene, rng).image);
      truths.push_back(t);
    }
    episodes.push_back(std::move(d));
  }

  json models = json::object();
  for (const auto& name : model_names()) {
    std::vector<std::vector<LabelSet>> ranked;
    if (name == "MF") {
      const auto guess = mf_predict(candidates, 3);
      ranked.assign(truths.size(), guess);
    } else {
      const auto bundle = load_checkpoint(checkpoint_path(name));
      for (const auto& d : episodes) {
        const auto preds = name == "TradEm" ? tradem_predict_sets(bundle.params, bundle.encoder, d.refs, d.queries, cap, 3)
                                            : infer_label_sets<float>(bundle.params, bundle.encoder, bundle.g, d.refs,
                                                                      d.queries, cap, 3);
        for (const auto& p : preds) {
          std::vector<LabelSet> sets;
          for (const auto& r : p) sets.push_back(r.set);
          ranked.push_back(std::move(sets));
        }
      }
    }
    models[name] = to_json(labelset_report(ranked, truths));
    if (progress_) progress_(name + ": exact " + percent(models[name]["exact"]["value"].get<double>()) + "%");
  }
  return models;
}

json ExperimentRunner::eval_containment() {
  const auto test = test_data();
  std::vector<ContainmentBatch> batches;
  for (int e = 0; e < cfg_.eval_episodes; ++e) {
    Rng rng = make_rng({cfg_.seed, kEvalStream, static_cast<std::uint64_t>(e)});
    batches.push_back(sample_containment_batch(test, cfg_.train, cfg_.eval_queries, rng));
  }
  std::vector<int> labels;
  for (const auto& b : batches) {
    for (Eigen::Index j = 0; j < b.labels.cols(); ++j) labels.push_back(b.labels(0, j) > 0.5f ? 1 : 0);
  }

  json models = json::object();
  json scores_doc = json::object();
  for (const auto& name : model_names()) {
    BinaryEval ev;
    ev.labels = labels;
    std::string rule;
    if (name == "SlideWin") {
      const auto bundle = load_checkpoint(checkpoint_path("TradEm"));
      // Threshold chosen on validation queries over the training classes.
      const auto val_data = train_data();
      std::vector<double> val_d;
      std::vector<int> val_y;
      for (int e = 0; e < cfg_.calibration_episodes; ++e) {
        Rng rng = make_rng({cfg_.seed, kCalibrationStream, static_cast<std::uint64_t>(e)});
        const auto b = sample_containment_batch(val_data, cfg_.train, cfg_.eval_queries, rng);
        const auto d = slidewin_scores(bundle.params, bundle.encoder, b.containers, b.queries, cfg_.slidewin_max_grid);
        val_d.insert(val_d.end(), d.begin(), d.end());
        for (Eigen::Index j = 0; j < b.labels.cols(); ++j) val_y.push_back(b.labels(0, j) > 0.5f ? 1 : 0);
      }
      ev.threshold = calibrate_distance_threshold(val_d, val_y);
      std::size_t hits = 0;
      std::size_t i = 0;
      for (const auto& b : batches) {
        for (double d : slidewin_scores(bundle.params, bundle.encoder, b.containers, b.queries, cfg_.slidewin_max_grid)) {
          ev.scores.push_back(-d);
          hits += slidewin_decide(d, ev.threshold) == (labels[i++] != 0);
        }
      }
      ev.accuracy = static_cast<double>(hits) / static_cast<double>(labels.size());
      rule = "min window distance < threshold";
    } else if (name == "TradEm") {
      const auto bundle = load_checkpoint(checkpoint_path(name));
      ev.threshold = kTradEmThreshold;
      std::size_t hits = 0;
      std::size_t i = 0;
      for (const auto& b : batches) {
        for (const auto& q : tradem_query(bundle.params, bundle.encoder, b.containers, b.queries)) {
          ev.scores.push_back(-q.distance);
          hits += q.contains == (labels[i++] != 0);
        }
      }
      ev.accuracy = static_cast<double>(hits) / static_cast<double>(labels.size());
      rule = "distance < threshold";
    } else {
      const auto bundle = load_checkpoint(checkpoint_path(name));
      ev.threshold = 0.5;
      for (const auto& b : batches) {
        for (const auto& q : query_contains<float>(bundle.params, bundle.encoder, bundle.h, b.containers, b.queries)) {
          ev.scores.push_back(q.score);
        }
      }
      ev.accuracy = binary_accuracy(ev.scores, ev.labels, ev.threshold);
      rule = "score >= threshold";
    }
    models[name] = binary_json(ev, rule);
    scores_doc[name] = json{{"scores", ev.scores}, {"labels", ev.labels}};
    if (progress_) {
      progress_(name + ": acc " + percent(ev.accuracy) + "% auc " + percent(models[name]["auc"].get<double>()));
    }
  }
  write_text(cfg_.out / "eval_scores.json", scores_doc.dump() + "\n");
  return models;
}

json ExperimentRunner::eval_supervised() {
  const auto test = test_data();
  const int n = static_cast<int>(test.classes.size());
  std::vector<Image> images;
  std::vector<int> query_class;
  std::vector<int> labels;
  for (int e = 0; e < cfg_.eval_episodes; ++e) {
    Rng rng = make_rng({cfg_.seed, kEvalStream, static_cast<std::uint64_t>(e)});
    const auto batch = sample_model3_batch(test, cfg_.train, cfg_.eval_queries / 2, rng);
    for (std::size_t b = 0; b < batch.images.size(); ++b) {
      // One positive and one negative query per image.
      std::vector<int> pos;
      std::vector<int> neg;
      for (int c = 0; c < n; ++c) (batch.labels(c, static_cast<Eigen::Index>(b)) > 0.5f ? pos : neg).push_back(c);
      images.push_back(batch.images[b]);
      query_class.push_back(pos[uniform_index(rng, pos.size())]);
      labels.push_back(1);
      if (!neg.empty()) {
        images.push_back(batch.images[b]);
        query_class.push_back(neg[uniform_index(rng, neg.size())]);
        labels.push_back(0);
      }
    }
  }

  json models = json::object();
  json scores_doc = json::object();
  for (const auto& name : model_names()) {
    const auto bundle = load_checkpoint(checkpoint_path(name));
    BinaryEval ev;
    ev.labels = labels;
    ev.threshold = 0.5;
    if (name == "ModelIII") {
      const auto emb = embed_images(bundle.params, bundle.encoder, images);
      Matrix<float> one_hot = Matrix<float>::Zero(n, static_cast<Eigen::Index>(images.size()));
      for (std::size_t i = 0; i < images.size(); ++i) one_hot(query_class[i], static_cast<Eigen::Index>(i)) = 1.0f;
      ad::Tape<float> tape;
      Context<float> ctx(tape, bundle.params);
      const auto z = model3_logits(ctx, bundle.model3, "head", tape.constant(emb), label_embed(ctx, "label", one_hot));
      const auto p = ad::sigmoid_value<float>(z.value());
      for (Eigen::Index j = 0; j < p.cols(); ++j) ev.scores.push_back(static_cast<double>(p(0, j)));
    } else {
      const auto p = multilabel_predict(bundle.params, bundle.encoder, images);
      for (std::size_t i = 0; i < images.size(); ++i) {
        ev.scores.push_back(static_cast<double>(p(query_class[i], static_cast<Eigen::Index>(i))));
      }
    }
    ev.accuracy = binary_accuracy(ev.scores, ev.labels, ev.threshold);
    models[name] = binary_json(ev, "score >= threshold");
    scores_doc[name] = json{{"scores", ev.scores}, {"labels", ev.labels}};
    if (progress_) {
      progress_(name + ": acc " + percent(ev.accuracy) + "% auc " + percent(models[name]["auc"].get<double>()));
    }
  }
  write_text(cfg_.out / "eval_scores.json", scores_doc.dump() + "\n");
  return models;
}

json ExperimentRunner::eval() {
  std::map<std::string, std::string> before;
  for (const auto& name : model_names()) {
    const auto p = checkpoint_path(name == "SlideWin" ? "TradEm" : name);
    if (name == "MF") continue;
    if (!fs::exists(p)) throw std::runtime_error("missing checkpoint " + p.string() + "; run train first");
    before[p.string()] = file_hash(p);
  }
  json models;
  switch (cfg_.experiment) {
    case ExperimentTag::kUnion: models = eval_union(); break;
    case ExperimentTag::kContainment:
    case ExperimentTag::kScene: models = eval_containment(); break;
    case ExperimentTag::kSupervised: models = eval_supervised(); break;
  }
  for (const auto& [path, hash] : before) {
    if (file_hash(path) != hash) throw std::runtime_error("checkpoint " + path + " changed during evaluation");
  }
  json doc = stamp();
  doc["models"] = models;
  doc["order"] = model_names();
  write_text(cfg_.out / "metrics.json", doc.dump(2) + "\n");
  return doc;
}

void ExperimentRunner::render_preview() {
  const auto test = test_data();
  const auto dir = cfg_.out / "preview";
  fs::create_directories(dir);
  Rng rng = make_rng({cfg_.seed, kPreviewStream});
  std::vector<Image> tiles;
  std::vector<std::string> captions;
  const std::map<std::string, std::string> base{{"config_hash", cfg_.hash()}, {"seed", std::to_string(cfg_.seed)}};
  auto emit = [&](const Image& img, const std::string& caption) {
    const auto idx = tiles.size();
    char name[32];
    std::snprintf(name, sizeof name, "%02zu_", idx);
    auto text = base;
    text["label_set"] = caption;
    write_png_gray(dir / (name + caption + ".png"), img, text);
    tiles.push_back(fit_square(img, kGlyphSize));
    captions.push_back(caption);
  };
  if (cfg_.experiment == ExperimentTag::kSupervised) {
    const auto batch = sample_model3_batch(test, cfg_.train, 25, rng);
    for (std::size_t b = 0; b < batch.images.size(); ++b) {
      std::vector<std::string> cls;
      for (Eigen::Index c = 0; c < batch.labels.rows(); ++c) {
        if (batch.labels(c, static_cast<Eigen::Index>(b)) > 0.5f) cls.push_back(std::to_string(c));
      }
      emit(batch.images[b], "[" + join(cls) + "]");
    }
  } else {
    // The 25 sets of at most 3 out of 5 classes for one episode.
    const int k = std::min(cfg_.train.k, 5);
    const auto ep = sample_episode_classes(*test.store, test.classes, k, rng);
    for (const auto& t : enumerate_label_sets(k, std::min(cfg_.train.cap, 3))) {
      emit(render(*test.store, ep, t, test.scene, rng).image, to_string(t));
    }
  }
  auto text = base;
  text["captions"] = join(captions);
  write_png_gray(dir / "montage.png", montage(tiles, 5), text);
  if (progress_) progress_("wrote " + std::to_string(tiles.size()) + " previews to " + dir.string());
}

void ExperimentRunner::report() {
  const auto metrics_path = cfg_.out / "metrics.json";
  if (!fs::exists(metrics_path)) throw std::runtime_error("missing " + metrics_path.string() + "; run eval first");
  const json metrics = read_json(metrics_path);
  if (metrics.value("config_hash", std::string()) != cfg_.hash()) {
    throw std::runtime_error(metrics_path.string() + " was produced by a different config");
  }
  const auto names = metrics.at("order").get<std::vector<std::string>>();
  const auto& models = metrics.at("models");
  const auto dir = cfg_.out / "report";
  fs::create_directories(dir);

  std::ostringstream csv;
  csv << "# config_hash=" << cfg_.hash() << " seed=" << cfg_.seed << " experiment=" << to_string(cfg_.experiment)
      << "\n";
  json rows = json::array();
  if (cfg_.experiment == ExperimentTag::kUnion) {
    csv << "stratum,metric";
    for (const auto& n : names) csv << "," << n;
    csv << "\n";
    auto row = [&](const std::string& stratum, const std::string& metric, auto&& get) {
      csv << stratum << "," << metric;
      json r{{"stratum", stratum}, {"metric", metric}};
      for (const auto& n : names) {
        const auto v = get(models.at(n));
        csv << "," << (v ? percent(*v) : std::string());
        r[n] = v ? json(*v) : json(nullptr);
      }
      csv << "\n";
      rows.push_back(r);
    };
    using Opt = std::optional<double>;
    row("All", "Exact", [](const json& m) { return Opt(m["exact"]["value"].get<double>()); });
    row("All", "Top-3", [](const json& m) { return Opt(m["top3"]["value"].get<double>()); });
    for (int l = 1; l <= cfg_.train.cap; ++l) {
      const auto key = std::to_string(l);
      for (const char* metric : {"exact", "top3"}) {
        row(key + "-sets", metric == std::string("exact") ? "Exact" : "Top-3", [&](const json& m) {
          const auto& by = m["by_size"];
          return by.contains(key) ? Opt(by[key][metric]["value"].get<double>()) : Opt();
        });
      }
    }
    row("Set size", "All", [](const json& m) { return Opt(m["set_size"]["value"].get<double>()); });
  } else {
    csv << "metric";
    for (const auto& n : names) csv << "," << n;
    csv << "\n";
    for (const char* metric : {"accuracy", "auc"}) {
      const std::string label = metric == std::string("accuracy") ? "Acc %" : "AUC";
      csv << label;
      json r{{"metric", label}};
      for (const auto& n : names) {
        const double v = models.at(n).at(metric).get<double>();
        csv << "," << percent(v);
        r[n] = v;
      }
      csv << "\n";
      rows.push_back(r);
    }
  }
  write_text(dir / "table.csv", csv.str());

  json summary = stamp();
  summary["models"] = names;
  summary["table"] = rows;
  write_text(dir / "summary.json", summary.dump(2) + "\n");

  // Smoothed loss curves, one series per trained model.
  std::vector<std::vector<double>> curves;
  std::vector<std::string> curve_names;
  for (const auto& n : names) {
    const auto path = cfg_.out / "traces" / (n + ".jsonl");
    if (!fs::exists(path)) continue;
    std::ifstream in(path);
    std::vector<double> s;
    std::string line;
    while (std::getline(in, line)) {
      if (!line.empty()) s.push_back(json::parse(line).at("smoothed").get<double>());
    }
    curves.push_back(std::move(s));
    curve_names.push_back(n);
  }
  const std::map<std::string, std::string> text{
      {"config_hash", cfg_.hash()}, {"seed", std::to_string(cfg_.seed)}, {"series", join(curve_names)}};
  if (!curves.empty()) write_png_gray(dir / "loss_curves.png", line_plot(curves), text);

  const auto scores_path = cfg_.out / "eval_scores.json";
  if (cfg_.experiment != ExperimentTag::kUnion && fs::exists(scores_path)) {
    const json scores = read_json(scores_path);
    for (const auto& n : names) {
      if (!scores.contains(n)) continue;
      const auto s = scores[n]["scores"].get<std::vector<double>>();
      const auto y = scores[n]["labels"].get<std::vector<int>>();
      std::vector<double> pos;
      std::vector<double> neg;
      for (std::size_t i = 0; i < s.size(); ++i) (y[i] ? pos : neg).push_back(s[i]);
      double lo = *std::min_element(s.begin(), s.end());
      double hi = *std::max_element(s.begin(), s.end());
      if (!(hi > lo)) hi = lo + 1.0;
      auto t = text;
      t["series"] = n + " positives (bars), negatives (outline)";
      t["median_positive"] = format_double(median(pos));
      t["median_negative"] = format_double(median(neg));
      write_png_gray(dir / ("scores_" + n + ".png"), histogram_plot(pos, neg, lo, hi), t);
    }
  }
  if (progress_) progress_("wrote report to " + dir.string());
}

}  // namespace setcomp
