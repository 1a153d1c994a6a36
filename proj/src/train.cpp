#include "setcomp/train.hpp"

#include "setcomp/composition.hpp"
#include "setcomp/errors.hpp"
#include "setcomp/losses.hpp"
#include "setcomp/sampling.hpp"

#include <cmath>
#include <string>

namespace setcomp {

namespace {

// Generator streams, one per trainer.
enum Stream : std::uint64_t { kModel1 = 1, kModel2 = 2, kModel3 = 3, kTradEm = 4, kMultilabel = 5 };

using Tape = ad::Tape<float>;
using Var = ad::Var<float>;

void check_data(const DataSpec& data, int min_classes) {
  if (!data.store) throw std::invalid_argument("training data has no glyph store");
  if (static_cast<int>(data.classes.size()) < min_classes) {
    throw std::invalid_argument("training needs at least " + std::to_string(min_classes) + " classes, got " +
                                std::to_string(data.classes.size()));
  }
}

Var encode(Context<float>& ctx, const ModelBundle& b, std::span<const Image> images) {
  const auto prepared = prepare_inputs(images, b.encoder.input_size);
  auto px = ctx.tape().constant(pack_images<float>(prepared, b.encoder.input_size));
  return encoder_forward(ctx, b.encoder, "f", px, static_cast<int>(prepared.size()));
}

// Runs steps [bundle.step, cfg.steps): each step builds a loss on a fresh
// tape, backpropagates into bundle.params and applies the optimizer.
template <typename StepFn>
TrainResult run_loop(ModelBundle& bundle, const TrainConfig& cfg, Stream stream, const TrainHooks& hooks,
                     StepFn&& build_loss) {
  cfg.validate();
  TrainResult result;
  double smoothed = 0.0;
  bool have_smoothed = false;
  for (; bundle.step < cfg.steps;) {
    const std::int64_t step = bundle.step;
    Rng rng = make_rng({bundle.seed, static_cast<std::uint64_t>(stream), static_cast<std::uint64_t>(step)});
    bundle.params.zero_grad();
    Tape tape;
    Context<float> ctx(tape, bundle.params, Mode::kTrain);
    Var loss = build_loss(ctx, rng);
    const double value = static_cast<double>(loss.value()(0, 0));
    if (!std::isfinite(value)) {
      throw TrainingDiverged(to_string(bundle.kind) + " training diverged at step " + std::to_string(step) +
                             ": loss is " + std::to_string(value));
    }
    tape.backward(loss);
    if (hooks.after_backward) hooks.after_backward(bundle, step);
    bundle.optimizer.step(bundle.params);
    if (!bundle.params.all_finite()) {
      throw TrainingDiverged(to_string(bundle.kind) + " training diverged at step " + std::to_string(step) +
                             ": non-finite parameters");
    }
    ++bundle.step;
    result.losses.push_back(value);
    smoothed = have_smoothed ? 0.98 * smoothed + 0.02 * value : value;
    have_smoothed = true;
    if (hooks.trace && (bundle.step % cfg.log_every == 0 || bundle.step == cfg.steps)) {
      hooks.trace(TraceRow{bundle.step, value, smoothed});
    }
  }
  return result;
}

// Triplet loss over a subset table: anchors (m x B) against table columns.
Var table_triplet(const Var& anchors, const Var& table, const SubsetPlan& plan, const std::vector<LabelSet>& truths,
                  double margin, Rng& rng) {
  std::vector<int> pos;
  std::vector<int> neg;
  for (const auto& t : truths) {
    pos.push_back(plan.index_of(t));
    neg.push_back(plan.index_of(sample_negative(plan.sets, t, rng)));
  }
  return triplet_margin_loss(anchors, ad::gather_cols(table, std::move(pos)), ad::gather_cols(table, std::move(neg)),
                             static_cast<float>(margin));
}

Matrix<float> one_hot_columns(int n_classes, int batch) {
  Matrix<float> out = Matrix<float>::Zero(n_classes, static_cast<Eigen::Index>(n_classes) * batch);
  for (int b = 0; b < batch; ++b) {
    for (int c = 0; c < n_classes; ++c) out(c, static_cast<Eigen::Index>(b) * n_classes + c) = 1.0f;
  }
  return out;
}

}  // namespace

void TrainConfig::validate() const {
  if (!(margin > 0)) throw std::invalid_argument("margin must be positive");
  if (k < 1 || k > kMaxUniverse) throw std::invalid_argument("k must be in [1, 16]");
  if (cap < 1 || cap > k) throw std::invalid_argument("cap must be in [1, k]");
  if (steps < 0) throw std::invalid_argument("steps must be nonnegative");
  if (batch < 2) throw std::invalid_argument("batch must be at least 2");
  if (!(lr > 0)) throw std::invalid_argument("learning rate must be positive");
  if (!size_weights.empty() && static_cast<int>(size_weights.size()) != cap) {
    throw std::invalid_argument("size_weights needs one weight per size 1..cap");
  }
  if (log_every < 1) throw std::invalid_argument("log_every must be positive");
}

RenderSpec DataSpec::singleton_spec() const {
  RenderSpec s = scene;
  s.mode = RenderMode::kOverlayMin;
  return s;
}

nlohmann::json to_json(const TrainConfig& cfg) {
  return nlohmann::json{{"margin", cfg.margin}, {"k", cfg.k},         {"cap", cfg.cap},
                        {"steps", cfg.steps},   {"batch", cfg.batch}, {"lr", cfg.lr},
                        {"size_weights", cfg.size_weights}};
}

TrainResult train_model1(ModelBundle& bundle, const TrainConfig& cfg, const DataSpec& data, const TrainHooks& hooks) {
  if (bundle.kind != ModelKind::kUnion) throw std::invalid_argument("train_model1 needs a union bundle");
  check_data(data, cfg.k);
  const auto plan = make_subset_plan(cfg.k, cfg.cap);
  const EpisodeSpec spec{cfg.k, cfg.cap, cfg.batch, cfg.size_weights, data.scene};
  return run_loop(bundle, cfg, kModel1, hooks, [&](Context<float>& ctx, Rng& rng) {
    const auto ep = sample_episode(*data.store, data.classes, spec, rng);
    std::vector<Image> images = ep.references;
    std::vector<LabelSet> truths;
    for (const auto& s : ep.scenes) {
      images.push_back(s.image);
      truths.push_back(s.truth);
    }
    // References and composites share one batch-norm batch.
    auto emb = encode(ctx, bundle, images);
    auto singles = ad::slice_cols(emb, 0, cfg.k);
    auto anchors = ad::slice_cols(emb, cfg.k, cfg.batch);
    auto table = build_subset_table(singles, plan, make_composer(ctx, bundle.g));
    return table_triplet(anchors, table, plan, truths, cfg.margin, rng);
  });
}

ContainmentBatch sample_containment_batch(const DataSpec& data, const TrainConfig& cfg, int batch, Rng& rng) {
  if (batch % 2 != 0) throw std::invalid_argument("containment batch must be even");
  if (cfg.k <= cfg.cap) throw std::invalid_argument("containment episodes need k > cap for negatives");
  const Episode ep = sample_episode_classes(*data.store, data.classes, cfg.k, rng);
  const RenderSpec single = data.singleton_spec();
  ContainmentBatch out;
  out.labels = Matrix<float>::Zero(1, batch);
  for (int b = 0; b < batch; ++b) {
    const bool positive = b < batch / 2;
    const auto t = sample_label_set(cfg.k, cfg.cap, cfg.size_weights, rng);
    std::vector<int> pool;
    for (int i = 0; i < cfg.k; ++i) {
      if (t.contains(i) == positive) pool.push_back(i);
    }
    const int q = pool[uniform_index(rng, pool.size())];
    out.containers.push_back(render(*data.store, ep, t, data.scene, rng).image);
    out.queries.push_back(render_composite(*data.store, ep, LabelSet::singleton(q, cfg.k), single, rng).image);
    out.container_sets.push_back(t);
    out.query_class.push_back(q);
    out.labels(0, b) = positive ? 1.0f : 0.0f;
  }
  return out;
}

TrainResult train_model2(ModelBundle& bundle, const TrainConfig& cfg, const DataSpec& data, const TrainHooks& hooks) {
  if (bundle.kind != ModelKind::kContainment) throw std::invalid_argument("train_model2 needs a containment bundle");
  check_data(data, cfg.k);
  return run_loop(bundle, cfg, kModel2, hooks, [&](Context<float>& ctx, Rng& rng) {
    const auto batch = sample_containment_batch(data, cfg, cfg.batch, rng);
    std::vector<Image> images = batch.containers;
    images.insert(images.end(), batch.queries.begin(), batch.queries.end());
    auto emb = encode(ctx, bundle, images);
    auto a = ad::slice_cols(emb, 0, cfg.batch);
    auto b = ad::slice_cols(emb, cfg.batch, cfg.batch);
    auto p = h_forward(ctx, bundle.h, "h", a, b);
    return bce_query_loss(p, batch.labels);
  });
}

Model3Batch sample_model3_batch(const DataSpec& data, const TrainConfig& cfg, int batch, Rng& rng) {
  const int n = static_cast<int>(data.classes.size());
  if (cfg.cap > n) throw std::invalid_argument("images cannot hold more classes than the inventory");
  Model3Batch out;
  out.labels = Matrix<float>::Zero(n, batch);
  for (int b = 0; b < batch; ++b) {
    // Inventories may exceed the 16-class LabelSet width, so members are
    // drawn directly and each image gets its own episode.
    int size = 1;
    if (cfg.size_weights.empty()) {
      size = uniform_int(rng, 1, cfg.cap);
    } else {
      size = 1 + sample_weighted(cfg.size_weights, rng);
    }
    std::vector<int> idx(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) idx[static_cast<std::size_t>(i)] = i;
    Episode ep;
    for (int i = 0; i < size; ++i) {
      const auto j = static_cast<std::size_t>(i) + uniform_index(rng, static_cast<std::uint64_t>(n - i));
      std::swap(idx[static_cast<std::size_t>(i)], idx[j]);
      const int label = idx[static_cast<std::size_t>(i)];
      out.labels(label, b) = 1.0f;
      ep.class_ids.push_back(data.classes[static_cast<std::size_t>(label)]);
    }
    const LabelSet all((1u << size) - 1u, size);
    out.images.push_back(render(*data.store, ep, all, data.scene, rng).image);
  }
  return out;
}

TrainResult train_model3(ModelBundle& bundle, const TrainConfig& cfg, const DataSpec& data, const TrainHooks& hooks) {
  if (bundle.kind != ModelKind::kSupervised) throw std::invalid_argument("train_model3 needs a supervised bundle");
  check_data(data, 2);
  const int n = static_cast<int>(data.classes.size());
  if (n != bundle.model3.n_classes) throw std::invalid_argument("class inventory does not match the label embedder");
  const Matrix<float> one_hot = one_hot_columns(n, cfg.batch);
  std::vector<int> repeat;
  for (int b = 0; b < cfg.batch; ++b) {
    for (int c = 0; c < n; ++c) repeat.push_back(b);
  }
  return run_loop(bundle, cfg, kModel3, hooks, [&](Context<float>& ctx, Rng& rng) {
    const auto batch = sample_model3_batch(data, cfg, cfg.batch, rng);
    auto img = ad::gather_cols(encode(ctx, bundle, batch.images), repeat);
    auto lab = label_embed(ctx, "label", one_hot);
    auto z = model3_logits(ctx, bundle.model3, "head", img, lab);
    return weighted_multilabel_bce(z, batch.labels);
  });
}

TrainResult train_multilabel(ModelBundle& bundle, const TrainConfig& cfg, const DataSpec& data,
                             const TrainHooks& hooks) {
  if (bundle.kind != ModelKind::kMultilabel) throw std::invalid_argument("train_multilabel needs a multilabel bundle");
  check_data(data, 2);
  if (static_cast<int>(data.classes.size()) != bundle.model3.n_classes) {
    throw std::invalid_argument("class inventory does not match the output layer");
  }
  return run_loop(bundle, cfg, kMultilabel, hooks, [&](Context<float>& ctx, Rng& rng) {
    const auto batch = sample_model3_batch(data, cfg, cfg.batch, rng);
    auto z = multilabel_logits(ctx, "ml", encode(ctx, bundle, batch.images));
    return weighted_multilabel_bce(z, batch.labels);
  });
}

TrainResult tradem_train(ModelBundle& bundle, TradEmVariant variant, const TrainConfig& cfg, const DataSpec& data,
                         const TrainHooks& hooks) {
  if (bundle.kind != ModelKind::kTradEm) throw std::invalid_argument("tradem_train needs a tradem bundle");
  check_data(data, cfg.k);
  if (variant == TradEmVariant::kContainment && cfg.k < 3) {
    throw std::invalid_argument("containment TradEm needs k >= 3");
  }
  const RenderSpec single = data.singleton_spec();
  return run_loop(bundle, cfg, kTradEm, hooks, [&](Context<float>& ctx, Rng& rng) {
    const Episode ep = sample_episode_classes(*data.store, data.classes, cfg.k, rng);
    std::vector<Image> images;
    for (int i = 0; i < cfg.k; ++i) images.push_back(render_reference(*data.store, ep, i, single, rng));
    std::vector<int> pos;
    std::vector<int> neg;
    for (int b = 0; b < cfg.batch; ++b) {
      if (variant == TradEmVariant::kUnion) {
        const int c = static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(cfg.k)));
        images.push_back(render_composite(*data.store, ep, LabelSet::singleton(c, cfg.k), single, rng).image);
        int other = static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(cfg.k - 1)));
        if (other >= c) ++other;
        pos.push_back(c);
        neg.push_back(other);
      } else {
        auto t = sample_label_set(cfg.k, 2, std::vector<double>{0.0, 1.0}, rng);
        const auto elems = canonical_elements(t);
        // The fixed ordering is the global class id.
        const int first = ep.class_ids[static_cast<std::size_t>(elems[0])] <
                                  ep.class_ids[static_cast<std::size_t>(elems[1])]
                              ? elems[0]
                              : elems[1];
        std::vector<int> outside;
        for (int i = 0; i < cfg.k; ++i) {
          if (!t.contains(i)) outside.push_back(i);
        }
        images.push_back(render_composite(*data.store, ep, t, single, rng).image);
        pos.push_back(first);
        neg.push_back(outside[uniform_index(rng, outside.size())]);
      }
    }
    auto emb = encode(ctx, bundle, images);
    auto refs = ad::slice_cols(emb, 0, cfg.k);
    auto anchors = ad::slice_cols(emb, cfg.k, cfg.batch);
    return triplet_margin_loss(anchors, ad::gather_cols(refs, std::move(pos)), ad::gather_cols(refs, std::move(neg)),
                               static_cast<float>(cfg.margin));
  });
}

}  // namespace setcomp
