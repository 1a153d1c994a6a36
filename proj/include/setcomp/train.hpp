#pragma once

#include "setcomp/model.hpp"
#include "setcomp/renderer.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

namespace setcomp {

struct TrainConfig {
  double margin = 0.1;
  int k = 5;
  int cap = 3;
  int steps = 20000;
  int batch = 32;
  double lr = 1e-3;
  // Weight of |T| = l at index l-1; empty means uniform over 1..cap.
  std::vector<double> size_weights;
  int log_every = 50;

  void validate() const;
};

// Where training images come from. `scene` renders containers (Model II x_a,
// Model III images); singletons always use the overlay mode of `scene`.
struct DataSpec {
  const GlyphStore* store = nullptr;
  std::vector<int> classes;
  RenderSpec scene;

  RenderSpec singleton_spec() const;
};

struct TraceRow {
  std::int64_t step = 0;
  double loss = 0.0;
  double smoothed = 0.0;
};

struct TrainHooks {
  // Every log_every steps and on the last step.
  std::function<void(const TraceRow&)> trace;
  // After backward, before the optimizer step; gradients are readable.
  std::function<void(const ModelBundle&, std::int64_t step)> after_backward;
};

struct TrainResult {
  std::vector<double> losses;  // one per executed step
};

// Each step draws from a generator keyed by (bundle.seed, step), so a run
// resumed from a checkpoint replays exactly the same batches.

// Model I: joint f and g with the triplet loss over subset-table entries.
TrainResult train_model1(ModelBundle& bundle, const TrainConfig& cfg, const DataSpec& data,
                         const TrainHooks& hooks = {});

// Model II: joint f and h with BCE on containment queries. x_a holds 1..cap
// classes of a k-class episode (k > cap); half the queries are positive.
TrainResult train_model2(ModelBundle& bundle, const TrainConfig& cfg, const DataSpec& data,
                         const TrainHooks& hooks = {});

// Model III: f_im, f_label and the head, weighted multilabel BCE over every
// class of the fixed inventory data.classes. Images hold 1..cap classes.
TrainResult train_model3(ModelBundle& bundle, const TrainConfig& cfg, const DataSpec& data,
                         const TrainHooks& hooks = {});

// Independent-sigmoid baseline on the same data and loss as Model III.
TrainResult train_multilabel(ModelBundle& bundle, const TrainConfig& cfg, const DataSpec& data,
                             const TrainHooks& hooks = {});

enum class TradEmVariant { kUnion, kContainment };

// Union: triplets of singleton renders only. Containment: composite anchors
// of two classes, positive = the lower-id class, negative = a class outside.
TrainResult tradem_train(ModelBundle& bundle, TradEmVariant variant, const TrainConfig& cfg, const DataSpec& data,
                         const TrainHooks& hooks = {});

struct Model3Batch {
  std::vector<Image> images;
  Matrix<float> labels;  // n_classes x B, 0/1
};

// Images with 1..cap classes of the inventory, set sizes per cfg.size_weights.
Model3Batch sample_model3_batch(const DataSpec& data, const TrainConfig& cfg, int batch, Rng& rng);

struct ContainmentBatch {
  std::vector<Image> containers;  // x_a
  std::vector<Image> queries;     // x_b, singletons
  std::vector<LabelSet> container_sets;
  std::vector<int> query_class;  // episode class index of x_b
  Matrix<float> labels;          // 1 x B; the first half is positive
};

// One k-class episode; x_a sizes uniform over 1..cap unless size_weights is
// set, sets uniform within a size. batch must be even.
ContainmentBatch sample_containment_batch(const DataSpec& data, const TrainConfig& cfg, int batch, Rng& rng);

nlohmann::json to_json(const TrainConfig& cfg);

}  // namespace setcomp
