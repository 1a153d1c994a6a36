#pragma once

#include "setcomp/blocks.hpp"
#include "setcomp/errors.hpp"
#include "setcomp/image.hpp"
#include "setcomp/labelset.hpp"

#include <algorithm>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <stdexcept>
#include <vector>

namespace setcomp {

// How each table entry is built: entry i (|T| >= 2) composes the entry for T
// minus its largest element (prefix[i]) with the singleton of that element
// (last[i]). Entries are in canonical order, so every prefix precedes its use.
struct SubsetPlan {
  int k = 0;
  int cap = 0;
  std::vector<LabelSet> sets;
  std::vector<int> prefix;
  std::vector<int> last;
  // [begin, end) of the entries with |T| = l is levels[l - 1].
  std::vector<std::pair<int, int>> levels;

  std::size_t size() const { return sets.size(); }
  // Position of t in `sets`; -1 when t is not a table entry.
  int index_of(const LabelSet& t) const;
};

SubsetPlan make_subset_plan(int k, int cap);

// Subset embeddings as columns, aligned with `sets`.
template <typename Scalar>
struct SubsetTable {
  int k = 0;
  int cap = 0;
  std::vector<LabelSet> sets;
  Matrix<Scalar> embeddings;  // m x sets.size()

  std::size_t size() const { return sets.size(); }
  Vector<Scalar> entry(std::size_t i) const { return embeddings.col(static_cast<Eigen::Index>(i)); }
};

// Batched composition g(a, b) on m x B operands.
template <typename Scalar>
using Composer = std::function<ad::Var<Scalar>(const ad::Var<Scalar>&, const ad::Var<Scalar>&)>;

// Differentiable table construction. singletons: m x k, column i the
// embedding of class i. Returns m x plan.size() in plan order. Each
// non-singleton entry costs exactly one composition; the count is added to
// *compositions when given.
template <typename Scalar>
ad::Var<Scalar> build_subset_table(const ad::Var<Scalar>& singletons, const SubsetPlan& plan,
                                   const Composer<Scalar>& g, std::size_t* compositions = nullptr) {
  if (singletons.cols() != plan.k) throw std::invalid_argument("build_subset_table: need one embedding per class");
  ad::Var<Scalar> table = singletons;
  for (std::size_t l = 1; l < plan.levels.size(); ++l) {
    const auto [begin, end] = plan.levels[l];
    std::vector<int> prefix(plan.prefix.begin() + begin, plan.prefix.begin() + end);
    std::vector<int> last(plan.last.begin() + begin, plan.last.begin() + end);
    auto level = g(ad::gather_cols(table, std::move(prefix)), ad::gather_cols(singletons, std::move(last)));
    if (compositions) *compositions += static_cast<std::size_t>(end - begin);
    const ad::Var<Scalar> parts[] = {table, level};
    table = ad::concat_cols<Scalar>(parts);
  }
  return table;
}

template <typename Scalar>
Composer<Scalar> make_composer(Context<Scalar>& ctx, GVariant variant, const std::string& prefix = "g") {
  return [&ctx, variant, prefix](const ad::Var<Scalar>& a, const ad::Var<Scalar>& b) {
    return g_forward(ctx, variant, prefix, a, b);
  };
}

// Composer that averages then normalizes; the TradEm table rule.
template <typename Scalar>
Composer<Scalar> mean_composer() {
  return [](const ad::Var<Scalar>& a, const ad::Var<Scalar>& b) {
    return ad::l2_normalize_cols(ad::scale(ad::add(a, b), Scalar(0.5)));
  };
}

// Evaluation-mode table from plain singleton embeddings (m x k).
template <typename Scalar>
SubsetTable<Scalar> build_subset_table(const Matrix<Scalar>& singletons, int cap, const Composer<Scalar>& g,
                                       ad::Tape<Scalar>& tape, std::size_t* compositions = nullptr) {
  const int k = static_cast<int>(singletons.cols());
  if (k < 1 || k > kMaxUniverse) throw std::invalid_argument("build_subset_table: k out of range");
  if (cap < 1 || cap > k) throw std::invalid_argument("build_subset_table: cap must be in [1, k]");
  const auto plan = make_subset_plan(k, cap);
  auto table = build_subset_table(tape.constant(singletons), plan, g, compositions);
  return SubsetTable<Scalar>{k, cap, plan.sets, table.value()};
}

template <typename Scalar>
SubsetTable<Scalar> build_subset_table(const Matrix<Scalar>& singletons, int cap, GVariant variant,
                                       const ParamStore<Scalar>& params, std::size_t* compositions = nullptr) {
  ad::Tape<Scalar> tape;
  Context<Scalar> ctx(tape, params);
  return build_subset_table(singletons, cap, make_composer(ctx, variant), tape, compositions);
}

// The TradEm table: every entry is the normalized mean of its singletons.
template <typename Scalar>
SubsetTable<Scalar> build_mean_table(const Matrix<Scalar>& singletons, int cap) {
  const int k = static_cast<int>(singletons.cols());
  if (cap < 1 || cap > k) throw std::invalid_argument("build_mean_table: cap must be in [1, k]");
  SubsetTable<Scalar> out{k, cap, enumerate_label_sets(k, cap), Matrix<Scalar>()};
  out.embeddings.resize(singletons.rows(), static_cast<Eigen::Index>(out.sets.size()));
  for (std::size_t i = 0; i < out.sets.size(); ++i) {
    Vector<Scalar> sum = Vector<Scalar>::Zero(singletons.rows());
    const auto elems = canonical_elements(out.sets[i]);
    for (int e : elems) sum += singletons.col(e);
    sum /= static_cast<Scalar>(elems.size());
    const Scalar n = sum.norm();
    out.embeddings.col(static_cast<Eigen::Index>(i)) = n > Scalar(0) ? (sum / n).eval() : sum;
  }
  return out;
}

struct RankedSet {
  LabelSet set;
  double sq_distance = 0.0;
};

// Exhaustive nearest-subset scan. Ascending squared distance, ties broken by
// canonical set order; returns min(topk, table size) entries.
template <typename Scalar>
std::vector<RankedSet> decode_nearest_subset(const Eigen::Ref<const Vector<Scalar>>& query,
                                             const SubsetTable<Scalar>& table, int topk) {
  if (table.size() == 0) throw InvalidState("decode_nearest_subset: empty table");
  if (topk < 1) throw std::invalid_argument("decode_nearest_subset: topk must be positive");
  if (query.size() != table.embeddings.rows()) throw std::invalid_argument("decode_nearest_subset: dimension mismatch");
  std::vector<RankedSet> all(table.size());
  for (std::size_t i = 0; i < table.size(); ++i) {
    double d = 0.0;
    for (Eigen::Index r = 0; r < query.size(); ++r) {
      const double diff = static_cast<double>(query(r)) - static_cast<double>(table.embeddings(r, static_cast<Eigen::Index>(i)));
      d += diff * diff;
    }
    all[i] = RankedSet{table.sets[i], d};
  }
  const auto n = std::min<std::size_t>(static_cast<std::size_t>(topk), all.size());
  std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(n), all.end(),
                    [](const RankedSet& a, const RankedSet& b) {
                      if (a.sq_distance != b.sq_distance) return a.sq_distance < b.sq_distance;
                      return a.set < b.set;
                    });
  all.resize(n);
  return all;
}

// Images at any size are fitted to the encoder input before encoding.
std::vector<Image> prepare_inputs(std::span<const Image> images, int input_size);

template <typename Scalar>
Matrix<Scalar> embed_images(const ParamStore<Scalar>& params, const EncoderConfig& cfg, std::span<const Image> images,
                            const std::string& prefix = "f") {
  const auto prepared = prepare_inputs(images, cfg.input_size);
  return encode_batch<Scalar>(params, cfg, prefix, prepared);
}

// One-shot label-set inference for a batch of queries against one episode's
// references (one per class, in class order).
template <typename Scalar>
std::vector<std::vector<RankedSet>> infer_label_sets(const ParamStore<Scalar>& params, const EncoderConfig& cfg,
                                                     GVariant variant, std::span<const Image> references,
                                                     std::span<const Image> queries, int cap, int topk) {
  const auto table = build_subset_table<Scalar>(embed_images(params, cfg, references), cap, variant, params);
  const auto q = embed_images(params, cfg, queries);
  std::vector<std::vector<RankedSet>> out;
  out.reserve(queries.size());
  for (Eigen::Index j = 0; j < q.cols(); ++j) out.push_back(decode_nearest_subset<Scalar>(q.col(j), table, topk));
  return out;
}

template <typename Scalar>
std::vector<RankedSet> infer_label_set(const ParamStore<Scalar>& params, const EncoderConfig& cfg, GVariant variant,
                                       std::span<const Image> references, const Image& query, int cap, int topk) {
  return infer_label_sets(params, cfg, variant, references, std::span<const Image>(&query, 1), cap, topk).front();
}

struct QueryResult {
  bool contains = false;
  double score = 0.0;
};

// score = h(f(a), f(b)); "b's classes are inside a's" when score >= threshold.
template <typename Scalar>
std::vector<QueryResult> query_contains(const ParamStore<Scalar>& params, const EncoderConfig& cfg, HVariant variant,
                                        std::span<const Image> images_a, std::span<const Image> images_b,
                                        double threshold = 0.5) {
  if (images_a.size() != images_b.size()) throw std::invalid_argument("query_contains: unpaired inputs");
  if (images_a.empty()) return {};
  const auto ea = embed_images(params, cfg, images_a);
  const auto eb = embed_images(params, cfg, images_b);
  ad::Tape<Scalar> tape;
  Context<Scalar> ctx(tape, params);
  const auto p = h_forward(ctx, variant, "h", tape.constant(ea), tape.constant(eb)).value();
  std::vector<QueryResult> out(images_a.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double s = static_cast<double>(p(0, static_cast<Eigen::Index>(i)));
    out[i] = QueryResult{s >= threshold, s};
  }
  return out;
}

template <typename Scalar>
QueryResult query_contains(const ParamStore<Scalar>& params, const EncoderConfig& cfg, HVariant variant,
                           const Image& image_a, const Image& image_b, double threshold = 0.5) {
  return query_contains(params, cfg, variant, std::span<const Image>(&image_a, 1), std::span<const Image>(&image_b, 1),
                        threshold)
      .front();
}

}  // namespace setcomp
