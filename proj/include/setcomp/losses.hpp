#pragma once

#include "setcomp/ops.hpp"
#include "setcomp/params.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace setcomp {

inline constexpr double kBceClamp = 1e-7;

// max(0, |a - p| - |a - n| + margin) with unsquared Euclidean distances.
template <typename Derived>
double triplet_margin_loss(const Eigen::MatrixBase<Derived>& anchor, const Eigen::MatrixBase<Derived>& pos,
                           const Eigen::MatrixBase<Derived>& neg, double margin) {
  if (anchor.size() != pos.size() || anchor.size() != neg.size()) {
    throw std::invalid_argument("triplet_margin_loss: dimension mismatch");
  }
  const double dp = (anchor - pos).template cast<double>().norm();
  const double dn = (anchor - neg).template cast<double>().norm();
  return std::max(0.0, dp - dn + margin);
}

// Batched triplet loss over columns, averaged. Zero gradient on the flat side
// of the hinge, including the hinge point itself.
template <typename Scalar>
ad::Var<Scalar> triplet_margin_loss(const ad::Var<Scalar>& anchor, const ad::Var<Scalar>& pos,
                                    const ad::Var<Scalar>& neg, Scalar margin) {
  ad::detail::same_shape(anchor, pos, "triplet_margin_loss");
  ad::detail::same_shape(anchor, neg, "triplet_margin_loss");
  auto d = ad::sub(ad::col_norm(ad::sub(anchor, pos)), ad::col_norm(ad::sub(anchor, neg)));
  return ad::mean(ad::relu(ad::add_scalar(d, margin)));
}

// -[y ln p + (1 - y) ln(1 - p)] with p clamped to [delta, 1 - delta].
inline double bce_query_loss(double p, double label) {
  const double q = std::clamp(p, kBceClamp, 1.0 - kBceClamp);
  return -(label * std::log(q) + (1.0 - label) * std::log(1.0 - q));
}

// Mean BCE of probabilities p (1 x N) against labels; clamped like the scalar
// version, with zero gradient where the clamp is active.
template <typename Scalar>
ad::Var<Scalar> bce_query_loss(const ad::Var<Scalar>& p, const Matrix<Scalar>& labels) {
  if (p.rows() != 1 || labels.rows() != 1 || p.cols() != labels.cols()) {
    throw std::invalid_argument("bce_query_loss: shape mismatch");
  }
  const auto n = p.cols();
  const Scalar lo = static_cast<Scalar>(kBceClamp);
  const Scalar hi = Scalar(1) - lo;
  Matrix<Scalar> v(1, 1);
  Scalar total = 0;
  for (Eigen::Index j = 0; j < n; ++j) {
    total += static_cast<Scalar>(bce_query_loss(static_cast<double>(p.value()(0, j)), labels(0, j)));
  }
  v(0, 0) = total / static_cast<Scalar>(n);
  const int ip = p.id();
  return p.tape().record(std::move(v), p.requires_grad(), [ip, labels, n, lo, hi](ad::Tape<Scalar>& t, int self) {
    const Scalar g = t.grad(self)(0, 0) / static_cast<Scalar>(n);
    const auto& pv = t.value(ip);
    Matrix<Scalar> d(1, n);
    for (Eigen::Index j = 0; j < n; ++j) {
      const Scalar q = pv(0, j);
      const Scalar y = labels(0, j);
      d(0, j) = (q < lo || q > hi) ? Scalar(0) : g * (-y / q + (Scalar(1) - y) / (Scalar(1) - q));
    }
    t.accumulate(ip, std::move(d));
  });
}

// Per-class weights for one image's 0/1 labels: positives get n_neg/n,
// negatives n_pos/n; uniform 1 when the image is all-positive or all-negative.
template <typename Derived>
Eigen::VectorXd multilabel_weights(const Eigen::MatrixBase<Derived>& labels) {
  const auto n = labels.size();
  Eigen::Index n_pos = 0;
  for (Eigen::Index i = 0; i < n; ++i) n_pos += labels(i) > 0.5 ? 1 : 0;
  const Eigen::Index n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) return Eigen::VectorXd::Ones(n);
  Eigen::VectorXd w(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    w(i) = labels(i) > 0.5 ? static_cast<double>(n_neg) / static_cast<double>(n) : static_cast<double>(n_pos) / n;
  }
  return w;
}

// Sum over classes of w_c * BCE(p_c, y_c) for one image.
template <typename Derived, typename Derived2>
double weighted_multilabel_bce(const Eigen::MatrixBase<Derived>& probs, const Eigen::MatrixBase<Derived2>& labels) {
  if (probs.size() != labels.size()) throw std::invalid_argument("weighted_multilabel_bce: dimension mismatch");
  const auto w = multilabel_weights(labels);
  double total = 0.0;
  for (Eigen::Index i = 0; i < probs.size(); ++i) {
    total += w(i) * bce_query_loss(static_cast<double>(probs(i)), static_cast<double>(labels(i)));
  }
  return total;
}

// Batched form on logits. labels is n_classes x B (one image per column);
// logits is either the same shape or a 1 x (n_classes*B) row ordered image by
// image. Returns the per-image weighted sum averaged over images.
template <typename Scalar>
ad::Var<Scalar> weighted_multilabel_bce(const ad::Var<Scalar>& logits, const Matrix<Scalar>& labels) {
  const auto classes = labels.rows();
  const auto images = labels.cols();
  const bool row = logits.rows() == 1 && logits.cols() == classes * images;
  if (!row && (logits.rows() != classes || logits.cols() != images)) {
    throw std::invalid_argument("weighted_multilabel_bce: shape mismatch");
  }
  Matrix<Scalar> y(1, classes * images);
  Matrix<Scalar> w(1, classes * images);
  for (Eigen::Index b = 0; b < images; ++b) {
    const auto wb = multilabel_weights(labels.col(b));
    for (Eigen::Index c = 0; c < classes; ++c) {
      y(0, b * classes + c) = labels(c, b);
      w(0, b * classes + c) = static_cast<Scalar>(wb(c) * static_cast<double>(classes));
    }
  }
  return ad::bce_with_logits(row ? logits : ad::flatten_cols(logits), y, w);
}

}  // namespace setcomp
