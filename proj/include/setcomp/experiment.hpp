#pragma once

#include "setcomp/blocks.hpp"
#include "setcomp/renderer.hpp"
#include "setcomp/train.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace setcomp {

enum class ExperimentTag { kUnion, kContainment, kScene, kSupervised };

std::string to_string(ExperimentTag t);

// Parsed experiment configuration. The file format is flat `key = value`
// lines; `#` starts a comment; unknown keys are errors. See README for keys.
struct ExperimentConfig {
  ExperimentTag experiment = ExperimentTag::kUnion;

  // Data: a glyph directory, or a synthetic store when data_dir is empty.
  std::filesystem::path data_dir;
  int synth_classes = 250;
  int synth_exemplars = 20;
  std::uint64_t synth_seed = 7;
  int train_classes = 200;  // the first N classes; the rest are held out
  RenderSpec render;

  EncoderConfig encoder;
  std::vector<std::string> variants;   // g or h variant names
  std::vector<std::string> baselines;  // tradem, mf, slidewin, multilabel
  Model3Config model3;

  TrainConfig train;
  int baseline_steps = -1;  // -1: same as train.steps

  int eval_episodes = 100;
  int eval_queries = 20;  // per episode
  int calibration_episodes = 20;
  int slidewin_max_grid = 4;

  std::uint64_t seed = 1;
  std::filesystem::path out = "runs/out";

  // Canonical `key=value` text (every key, sorted) and its 64-bit FNV-1a hash
  // in hex; seed and out are excluded so reruns under other seeds compare.
  std::string canonical() const;
  std::string hash() const;
};

// Throws ConfigError naming the offending line or key.
ExperimentConfig parse_experiment_config(const std::string& text);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

// Progress messages (stage, detail). Defaults to silence.
using ProgressSink = std::function<void(const std::string&)>;

// Runs the four CLI commands against cfg.out. Artifacts:
//   checkpoints/<model>.ckpt   traces/<model>.jsonl   metrics.json
//   preview/*.png              report/table.csv report/summary.json report/*.png
class ExperimentRunner {
 public:
  ExperimentRunner(ExperimentConfig cfg, ProgressSink progress = {});

  // Trains (or resumes) every configured model.
  void train();
  // Evaluates saved checkpoints; returns the metrics document also written
  // to metrics.json. Checkpoints are verified unchanged afterwards.
  nlohmann::json eval();
  void render_preview();
  void report();

  const ExperimentConfig& config() const { return cfg_; }
  // Names of the models this experiment trains and evaluates, in table order.
  std::vector<std::string> model_names() const;

 private:
  const GlyphStore& store();
  DataSpec train_data();
  DataSpec test_data();
  nlohmann::json stamp() const;
  std::filesystem::path checkpoint_path(const std::string& model) const;

  nlohmann::json eval_union();
  nlohmann::json eval_containment();
  nlohmann::json eval_supervised();

  ExperimentConfig cfg_;
  ProgressSink progress_;
  std::optional<GlyphStore> store_;
};

// Exclusive lock on an output directory for the lifetime of the object.
class DirectoryLock {
 public:
  explicit DirectoryLock(const std::filesystem::path& dir);
  ~DirectoryLock();
  DirectoryLock(const DirectoryLock&) = delete;
  DirectoryLock& operator=(const DirectoryLock&) = delete;

 private:
  std::filesystem::path path_;
};

// 64-bit FNV-1a over the bytes of a file, as 16 hex digits.
std::string file_hash(const std::filesystem::path& path);
std::string fnv1a_hex(const std::string& bytes);

}  // namespace setcomp
