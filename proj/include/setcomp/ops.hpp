#pragma once

// Differentiable ops on Var. Batches are stored column-wise: a batch of B
// feature vectors of width F is an F x B matrix. Spatial feature maps are
// C x (B*H*W) with column index b*H*W + y*W + x, so per-channel statistics
// are row reductions and convolution is one GEMM over im2col columns.

#include "setcomp/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace setcomp::ad {

namespace detail {

inline void require(bool ok, const char* what) {
  if (!ok) throw std::invalid_argument(what);
}

template <typename Scalar>
void same_shape(const Var<Scalar>& a, const Var<Scalar>& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch");
  }
}

}  // namespace detail

template <typename Scalar>
Var<Scalar> matmul(const Var<Scalar>& a, const Var<Scalar>& b) {
  detail::require(a.cols() == b.rows(), "matmul: inner dimensions differ");
  const int ia = a.id();
  const int ib = b.id();
  Matrix<Scalar> v = a.value() * b.value();
  return a.tape().record(std::move(v), a.requires_grad() || b.requires_grad(), [ia, ib](Tape<Scalar>& t, int self) {
    const auto& g = t.grad(self);
    if (t.requires_grad(ia)) t.accumulate(ia, g * t.value(ib).transpose());
    if (t.requires_grad(ib)) t.accumulate(ib, t.value(ia).transpose() * g);
  });
}

// W x + b, with b a column broadcast across the batch.
template <typename Scalar>
Var<Scalar> affine(const Var<Scalar>& w, const Var<Scalar>& x, const Var<Scalar>& b) {
  detail::require(w.cols() == x.rows(), "affine: weight/input mismatch");
  detail::require(b.rows() == w.rows() && b.cols() == 1, "affine: bias shape");
  const int iw = w.id();
  const int ix = x.id();
  const int ib = b.id();
  Matrix<Scalar> v = w.value() * x.value();
  v.colwise() += b.value().col(0);
  const bool rg = w.requires_grad() || x.requires_grad() || b.requires_grad();
  return w.tape().record(std::move(v), rg, [iw, ix, ib](Tape<Scalar>& t, int self) {
    const auto& g = t.grad(self);
    if (t.requires_grad(iw)) t.accumulate(iw, g * t.value(ix).transpose());
    if (t.requires_grad(ix)) t.accumulate(ix, t.value(iw).transpose() * g);
    if (t.requires_grad(ib)) t.accumulate(ib, g.rowwise().sum());
  });
}

template <typename Scalar>
Var<Scalar> add(const Var<Scalar>& a, const Var<Scalar>& b) {
  detail::same_shape(a, b, "add");
  const int ia = a.id();
  const int ib = b.id();
  return a.tape().record(a.value() + b.value(), a.requires_grad() || b.requires_grad(),
                         [ia, ib](Tape<Scalar>& t, int self) {
                           t.accumulate(ia, t.grad(self));
                           t.accumulate(ib, t.grad(self));
                         });
}

template <typename Scalar>
Var<Scalar> sub(const Var<Scalar>& a, const Var<Scalar>& b) {
  detail::same_shape(a, b, "sub");
  const int ia = a.id();
  const int ib = b.id();
  return a.tape().record(a.value() - b.value(), a.requires_grad() || b.requires_grad(),
                         [ia, ib](Tape<Scalar>& t, int self) {
                           t.accumulate(ia, t.grad(self));
                           t.accumulate(ib, -t.grad(self));
                         });
}

// Elementwise product.
template <typename Scalar>
Var<Scalar> mul(const Var<Scalar>& a, const Var<Scalar>& b) {
  detail::same_shape(a, b, "mul");
  const int ia = a.id();
  const int ib = b.id();
  return a.tape().record(a.value().cwiseProduct(b.value()), a.requires_grad() || b.requires_grad(),
                         [ia, ib](Tape<Scalar>& t, int self) {
                           const auto& g = t.grad(self);
                           if (t.requires_grad(ia)) t.accumulate(ia, g.cwiseProduct(t.value(ib)));
                           if (t.requires_grad(ib)) t.accumulate(ib, g.cwiseProduct(t.value(ia)));
                         });
}

template <typename Scalar>
Var<Scalar> scale(const Var<Scalar>& a, Scalar s) {
  const int ia = a.id();
  return a.tape().record(a.value() * s, a.requires_grad(),
                         [ia, s](Tape<Scalar>& t, int self) { t.accumulate(ia, t.grad(self) * s); });
}

template <typename Scalar>
Var<Scalar> add_scalar(const Var<Scalar>& a, Scalar s) {
  const int ia = a.id();
  Matrix<Scalar> v = a.value().array() + s;
  return a.tape().record(std::move(v), a.requires_grad(),
                         [ia](Tape<Scalar>& t, int self) { t.accumulate(ia, t.grad(self)); });
}

template <typename Scalar>
Var<Scalar> relu(const Var<Scalar>& a) {
  const int ia = a.id();
  Matrix<Scalar> v = a.value().cwiseMax(Scalar(0));
  return a.tape().record(std::move(v), a.requires_grad(), [ia](Tape<Scalar>& t, int self) {
    // The output is positive exactly where the input was.
    Matrix<Scalar> d = (t.value(self).array() > Scalar(0)).select(t.grad(self), Scalar(0));
    t.accumulate(ia, std::move(d));
  });
}

template <typename Scalar>
Matrix<Scalar> sigmoid_value(const Matrix<Scalar>& z) {
  return z.unaryExpr([](Scalar x) {
    if (x >= 0) return Scalar(1) / (Scalar(1) + std::exp(-x));
    const Scalar e = std::exp(x);
    return e / (Scalar(1) + e);
  });
}

template <typename Scalar>
Var<Scalar> sigmoid(const Var<Scalar>& a) {
  const int ia = a.id();
  return a.tape().record(sigmoid_value<Scalar>(a.value()), a.requires_grad(), [ia](Tape<Scalar>& t, int self) {
    const auto& y = t.value(self);
    t.accumulate(ia, t.grad(self).cwiseProduct(y.cwiseProduct((Scalar(1) - y.array()).matrix())));
  });
}

// Each column divided by its Euclidean norm.
template <typename Scalar>
Var<Scalar> l2_normalize_cols(const Var<Scalar>& a) {
  const int ia = a.id();
  Matrix<Scalar> norms = a.value().colwise().norm().cwiseMax(std::numeric_limits<Scalar>::min());
  Matrix<Scalar> v = a.value().array().rowwise() / norms.row(0).array();
  return a.tape().record(std::move(v), a.requires_grad(), [ia, norms](Tape<Scalar>& t, int self) {
    const auto& y = t.value(self);
    const auto& g = t.grad(self);
    Matrix<Scalar> dots = (y.cwiseProduct(g)).colwise().sum();
    Matrix<Scalar> dx = g - (y.array().rowwise() * dots.row(0).array()).matrix();
    dx.array().rowwise() /= norms.row(0).array();
    t.accumulate(ia, std::move(dx));
  });
}

// 1 x B row of column norms; the subgradient at a zero column is 0.
template <typename Scalar>
Var<Scalar> col_norm(const Var<Scalar>& a) {
  const int ia = a.id();
  Matrix<Scalar> v = a.value().colwise().norm();
  return a.tape().record(std::move(v), a.requires_grad(), [ia](Tape<Scalar>& t, int self) {
    const auto& n = t.value(self);
    const auto& g = t.grad(self);
    const auto& x = t.value(ia);
    Matrix<Scalar> dx(x.rows(), x.cols());
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      dx.col(j) = n(0, j) > Scalar(0) ? (x.col(j) * (g(0, j) / n(0, j))).eval() : Matrix<Scalar>::Zero(x.rows(), 1);
    }
    t.accumulate(ia, dx);
  });
}

template <typename Scalar>
Var<Scalar> sum(const Var<Scalar>& a) {
  const int ia = a.id();
  Matrix<Scalar> v(1, 1);
  v(0, 0) = a.value().sum();
  return a.tape().record(std::move(v), a.requires_grad(), [ia](Tape<Scalar>& t, int self) {
    const auto& x = t.value(ia);
    t.accumulate(ia, Matrix<Scalar>::Constant(x.rows(), x.cols(), t.grad(self)(0, 0)));
  });
}

template <typename Scalar>
Var<Scalar> mean(const Var<Scalar>& a) {
  return scale(sum(a), Scalar(1) / static_cast<Scalar>(a.value().size()));
}

template <typename Scalar>
Var<Scalar> concat_cols(std::span<const Var<Scalar>> parts) {
  detail::require(!parts.empty(), "concat_cols: no inputs");
  const auto rows = parts.front().rows();
  Eigen::Index cols = 0;
  bool rg = false;
  std::vector<int> ids;
  for (const auto& p : parts) {
    detail::require(p.rows() == rows, "concat_cols: row mismatch");
    cols += p.cols();
    rg = rg || p.requires_grad();
    ids.push_back(p.id());
  }
  Matrix<Scalar> v(rows, cols);
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    v.middleCols(at, p.cols()) = p.value();
    at += p.cols();
  }
  return parts.front().tape().record(std::move(v), rg, [ids](Tape<Scalar>& t, int self) {
    const auto& g = t.grad(self);
    Eigen::Index at = 0;
    for (int id : ids) {
      const auto c = t.value(id).cols();
      t.accumulate(id, g.middleCols(at, c));
      at += c;
    }
  });
}

template <typename Scalar>
Var<Scalar> concat_rows(const Var<Scalar>& a, const Var<Scalar>& b) {
  detail::require(a.cols() == b.cols(), "concat_rows: column mismatch");
  const int ia = a.id();
  const int ib = b.id();
  Matrix<Scalar> v(a.rows() + b.rows(), a.cols());
  v.topRows(a.rows()) = a.value();
  v.bottomRows(b.rows()) = b.value();
  const auto ra = a.rows();
  const auto rb = b.rows();
  return a.tape().record(std::move(v), a.requires_grad() || b.requires_grad(),
                         [ia, ib, ra, rb](Tape<Scalar>& t, int self) {
                           const auto& g = t.grad(self);
                           t.accumulate(ia, g.topRows(ra));
                           t.accumulate(ib, g.bottomRows(rb));
                         });
}

// Columns of a in the given order (indices may repeat).
template <typename Scalar>
Var<Scalar> gather_cols(const Var<Scalar>& a, std::vector<int> indices) {
  const int ia = a.id();
  Matrix<Scalar> v(a.rows(), static_cast<Eigen::Index>(indices.size()));
  for (std::size_t j = 0; j < indices.size(); ++j) {
    detail::require(indices[j] >= 0 && indices[j] < a.cols(), "gather_cols: index out of range");
    v.col(static_cast<Eigen::Index>(j)) = a.value().col(indices[j]);
  }
  return a.tape().record(std::move(v), a.requires_grad(), [ia, idx = std::move(indices)](Tape<Scalar>& t, int self) {
    const auto& g = t.grad(self);
    auto& dst = t.grad(ia);
    for (std::size_t j = 0; j < idx.size(); ++j) dst.col(idx[j]) += g.col(static_cast<Eigen::Index>(j));
  });
}

template <typename Scalar>
Var<Scalar> slice_cols(const Var<Scalar>& a, Eigen::Index start, Eigen::Index count) {
  detail::require(start >= 0 && count >= 0 && start + count <= a.cols(), "slice_cols: out of range");
  const int ia = a.id();
  return a.tape().record(a.value().middleCols(start, count), a.requires_grad(),
                         [ia, start, count](Tape<Scalar>& t, int self) {
                           t.grad(ia).middleCols(start, count) += t.grad(self);
                         });
}

// Per-row batch normalisation. Training mode normalises with the batch
// statistics over all columns and folds them into the running estimates;
// evaluation mode uses the running estimates.
template <typename Scalar>
Var<Scalar> batch_norm(const Var<Scalar>& x, const Var<Scalar>& gamma, const Var<Scalar>& beta,
                       Matrix<Scalar>* running_mean, Matrix<Scalar>* running_var, bool training,
                       Scalar momentum = Scalar(0.1), Scalar eps = Scalar(1e-5)) {
  const auto features = x.rows();
  const auto n = x.cols();
  detail::require(gamma.rows() == features && beta.rows() == features, "batch_norm: parameter shape");
  const int ix = x.id();
  const int ig = gamma.id();
  const int ib = beta.id();
  Matrix<Scalar> mu(features, 1);
  Matrix<Scalar> var(features, 1);
  const auto& xv = x.value();
  if (training) {
    detail::require(n > 1, "batch_norm: training needs more than one column");
    for (Eigen::Index r = 0; r < features; ++r) {
      const auto row = xv.row(r).array();
      const Scalar m = row.mean();
      mu(r, 0) = m;
      var(r, 0) = (row - m).square().mean();
    }
    if (running_mean && running_var) {
      const Scalar unbias = static_cast<Scalar>(n) / static_cast<Scalar>(n - 1);
      *running_mean = (Scalar(1) - momentum) * *running_mean + momentum * mu;
      *running_var = (Scalar(1) - momentum) * *running_var + (momentum * unbias) * var;
    }
  } else {
    detail::require(running_mean && running_var, "batch_norm: evaluation needs running statistics");
    mu = *running_mean;
    var = *running_var;
  }
  Matrix<Scalar> inv_std = (var.array() + eps).rsqrt().matrix();
  const bool rg = x.requires_grad() || gamma.requires_grad() || beta.requires_grad();
  Matrix<Scalar> v(features, n);
  Matrix<Scalar> xhat;
  if (rg) xhat.resize(features, n);
  for (Eigen::Index r = 0; r < features; ++r) {
    const Scalar m = mu(r, 0);
    const Scalar s = inv_std(r, 0);
    const Scalar gm = gamma.value()(r, 0);
    const Scalar bt = beta.value()(r, 0);
    if (rg) {
      xhat.row(r).array() = (xv.row(r).array() - m) * s;
      v.row(r).array() = xhat.row(r).array() * gm + bt;
    } else {
      v.row(r).array() = (xv.row(r).array() - m) * (s * gm) + bt;
    }
  }
  return x.tape().record(
      std::move(v), rg,
      [ix, ig, ib, training, inv_std = std::move(inv_std), xhat = std::move(xhat)](Tape<Scalar>& t, int self) {
        const auto& g = t.grad(self);
        const auto rows = g.rows();
        const auto cols = g.cols();
        Matrix<Scalar> sum_g(rows, 1);
        Matrix<Scalar> sum_gx(rows, 1);
        for (Eigen::Index r = 0; r < rows; ++r) {
          sum_g(r, 0) = g.row(r).sum();
          sum_gx(r, 0) = g.row(r).dot(xhat.row(r));
        }
        if (t.requires_grad(ig)) t.accumulate(ig, sum_gx);
        if (t.requires_grad(ib)) t.accumulate(ib, sum_g);
        if (!t.requires_grad(ix)) return;
        const auto& gamma_v = t.value(ig);
        Matrix<Scalar> dx(rows, cols);
        const Scalar inv_n = Scalar(1) / static_cast<Scalar>(cols);
        for (Eigen::Index r = 0; r < rows; ++r) {
          const Scalar k = gamma_v(r, 0) * inv_std(r, 0);
          if (training) {
            const Scalar mg = sum_g(r, 0) * inv_n;
            const Scalar mgx = sum_gx(r, 0) * inv_n;
            dx.row(r).array() = k * (g.row(r).array() - mg - xhat.row(r).array() * mgx);
          } else {
            dx.row(r) = k * g.row(r);
          }
        }
        t.accumulate(ix, std::move(dx));
      });
}

// Spatial layout of a C x (B*H*W) feature map.
struct MapShape {
  int channels = 1;
  int height = 1;
  int width = 1;
  int batch = 1;

  Eigen::Index pixels() const { return static_cast<Eigen::Index>(height) * width; }
  Eigen::Index columns() const { return pixels() * batch; }
};

struct ConvGeometry {
  int kernel = 3;
  int stride = 1;
  int pad = 1;

  int out_size(int in) const { return (in + 2 * pad - kernel) / stride + 1; }
};

namespace detail {

template <typename Scalar>
Matrix<Scalar> im2col(const Matrix<Scalar>& x, const MapShape& in, const ConvGeometry& geo, int oh, int ow) {
  const int k = geo.kernel;
  const Eigen::Index out_pixels = static_cast<Eigen::Index>(oh) * ow;
  Matrix<Scalar> col(static_cast<Eigen::Index>(in.channels) * k * k, out_pixels * in.batch);
  for (int c = 0; c < in.channels; ++c) {
    const Scalar* plane = x.data() + static_cast<Eigen::Index>(c) * x.cols();
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        Scalar* dst = col.data() + ((static_cast<Eigen::Index>(c) * k + ky) * k + kx) * col.cols();
        for (int b = 0; b < in.batch; ++b) {
          const Scalar* img = plane + static_cast<Eigen::Index>(b) * in.pixels();
          for (int oy = 0; oy < oh; ++oy) {
            Scalar* out = dst + (static_cast<Eigen::Index>(b) * oh + oy) * ow;
            const int iy = oy * geo.stride - geo.pad + ky;
            if (iy < 0 || iy >= in.height) {
              std::fill(out, out + ow, Scalar(0));
              continue;
            }
            const Scalar* row = img + static_cast<Eigen::Index>(iy) * in.width;
            if (geo.stride == 1) {
              // Valid ox range where 0 <= ox - pad + kx < width.
              const int lo = std::clamp(geo.pad - kx, 0, ow);
              const int hi = std::clamp(in.width + geo.pad - kx, lo, ow);
              std::fill(out, out + lo, Scalar(0));
              std::copy(row + (lo - geo.pad + kx), row + (hi - geo.pad + kx), out + lo);
              std::fill(out + hi, out + ow, Scalar(0));
            } else {
              for (int ox = 0; ox < ow; ++ox) {
                const int ix = ox * geo.stride - geo.pad + kx;
                out[ox] = (ix < 0 || ix >= in.width) ? Scalar(0) : row[ix];
              }
            }
          }
        }
      }
    }
  }
  return col;
}

template <typename Scalar>
void col2im_add(const Matrix<Scalar>& dcol, const MapShape& in, const ConvGeometry& geo, int oh, int ow,
                Matrix<Scalar>& dx) {
  const int k = geo.kernel;
  for (int c = 0; c < in.channels; ++c) {
    Scalar* plane = dx.data() + static_cast<Eigen::Index>(c) * dx.cols();
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const Scalar* src = dcol.data() + ((static_cast<Eigen::Index>(c) * k + ky) * k + kx) * dcol.cols();
        for (int b = 0; b < in.batch; ++b) {
          Scalar* img = plane + static_cast<Eigen::Index>(b) * in.pixels();
          for (int oy = 0; oy < oh; ++oy) {
            const int iy = oy * geo.stride - geo.pad + ky;
            if (iy < 0 || iy >= in.height) continue;
            const Scalar* g = src + (static_cast<Eigen::Index>(b) * oh + oy) * ow;
            Scalar* row = img + static_cast<Eigen::Index>(iy) * in.width;
            if (geo.stride == 1) {
              const int lo = std::clamp(geo.pad - kx, 0, ow);
              const int hi = std::clamp(in.width + geo.pad - kx, lo, ow);
              Scalar* r = row - geo.pad + kx;
              for (int ox = lo; ox < hi; ++ox) r[ox] += g[ox];
            } else {
              for (int ox = 0; ox < ow; ++ox) {
                const int ix = ox * geo.stride - geo.pad + kx;
                if (ix >= 0 && ix < in.width) row[ix] += g[ox];
              }
            }
          }
        }
      }
    }
  }
}

}  // namespace detail

// 2-D convolution. w is Cout x (Cin*k*k), b is Cout x 1.
template <typename Scalar>
Var<Scalar> conv2d(const Var<Scalar>& x, const MapShape& in, const Var<Scalar>& w, const Var<Scalar>& b,
                   const ConvGeometry& geo, MapShape* out_shape) {
  detail::require(x.rows() == in.channels && x.cols() == in.columns(), "conv2d: input does not match shape");
  detail::require(w.cols() == static_cast<Eigen::Index>(in.channels) * geo.kernel * geo.kernel,
                  "conv2d: weight does not match input channels");
  detail::require(b.rows() == w.rows() && b.cols() == 1, "conv2d: bias shape");
  const int oh = geo.out_size(in.height);
  const int ow = geo.out_size(in.width);
  detail::require(oh > 0 && ow > 0, "conv2d: input smaller than kernel");
  MapShape out{static_cast<int>(w.rows()), oh, ow, in.batch};
  if (out_shape) *out_shape = out;
  Matrix<Scalar> col = detail::im2col<Scalar>(x.value(), in, geo, oh, ow);
  Matrix<Scalar> v = w.value() * col;
  v.colwise() += b.value().col(0);
  const int ix = x.id();
  const int iw = w.id();
  const int ib = b.id();
  const bool rg = x.requires_grad() || w.requires_grad() || b.requires_grad();
  if (!rg) return x.tape().constant(std::move(v));
  return x.tape().record(std::move(v), true,
                         [ix, iw, ib, in, geo, oh, ow, col = std::move(col)](Tape<Scalar>& t, int self) {
                           const auto& g = t.grad(self);
                           if (t.requires_grad(iw)) t.accumulate(iw, g * col.transpose());
                           if (t.requires_grad(ib)) t.accumulate(ib, g.rowwise().sum());
                           if (t.requires_grad(ix)) {
                             Matrix<Scalar> dcol = t.value(iw).transpose() * g;
                             detail::col2im_add<Scalar>(dcol, in, geo, oh, ow, t.grad(ix));
                           }
                         });
}

// Max pooling with a k x k window; padded positions never win.
template <typename Scalar>
Var<Scalar> max_pool(const Var<Scalar>& x, const MapShape& in, const ConvGeometry& geo, MapShape* out_shape) {
  detail::require(x.rows() == in.channels && x.cols() == in.columns(), "max_pool: input does not match shape");
  const int oh = geo.out_size(in.height);
  const int ow = geo.out_size(in.width);
  MapShape out{in.channels, oh, ow, in.batch};
  if (out_shape) *out_shape = out;
  Matrix<Scalar> v(in.channels, out.columns());
  std::vector<std::int32_t> arg(static_cast<std::size_t>(v.size()));
  const auto& xv = x.value();
  const bool fast2x2 = geo.kernel == 2 && geo.stride == 2 && geo.pad == 0;
  for (int c = 0; c < in.channels; ++c) {
    const Scalar* plane = xv.data() + static_cast<Eigen::Index>(c) * xv.cols();
    Scalar* dst = v.data() + static_cast<Eigen::Index>(c) * v.cols();
    std::int32_t* dst_arg = arg.data() + static_cast<Eigen::Index>(c) * v.cols();
    for (int b = 0; b < in.batch; ++b) {
      const Eigen::Index base = static_cast<Eigen::Index>(b) * in.pixels();
      if (fast2x2) {
        for (int oy = 0; oy < oh; ++oy) {
          const Eigen::Index r0 = base + static_cast<Eigen::Index>(2 * oy) * in.width;
          const Eigen::Index r1 = r0 + in.width;
          const Eigen::Index o = (static_cast<Eigen::Index>(b) * oh + oy) * ow;
          for (int ox = 0; ox < ow; ++ox) {
            Eigen::Index best_col = r0 + 2 * ox;
            for (const Eigen::Index ic : {r0 + 2 * ox + 1, r1 + 2 * ox, r1 + 2 * ox + 1}) {
              if (plane[ic] > plane[best_col]) best_col = ic;
            }
            dst[o + ox] = plane[best_col];
            dst_arg[o + ox] = static_cast<std::int32_t>(best_col);
          }
        }
        continue;
      }
      for (int oy = 0; oy < oh; ++oy) {
        for (int ox = 0; ox < ow; ++ox) {
          Scalar best = -std::numeric_limits<Scalar>::infinity();
          Eigen::Index best_col = base;
          for (int ky = 0; ky < geo.kernel; ++ky) {
            const int iy = oy * geo.stride - geo.pad + ky;
            if (iy < 0 || iy >= in.height) continue;
            for (int kx = 0; kx < geo.kernel; ++kx) {
              const int ix = ox * geo.stride - geo.pad + kx;
              if (ix < 0 || ix >= in.width) continue;
              const Eigen::Index ic = base + static_cast<Eigen::Index>(iy) * in.width + ix;
              if (plane[ic] > best) {
                best = plane[ic];
                best_col = ic;
              }
            }
          }
          const Eigen::Index oc = (static_cast<Eigen::Index>(b) * oh + oy) * ow + ox;
          dst[oc] = best;
          dst_arg[oc] = static_cast<std::int32_t>(best_col);
        }
      }
    }
  }
  const int ix = x.id();
  if (!x.requires_grad()) return x.tape().constant(std::move(v));
  return x.tape().record(std::move(v), true, [ix, arg = std::move(arg)](Tape<Scalar>& t, int self) {
    const auto& g = t.grad(self);
    auto& dx = t.grad(ix);
    for (Eigen::Index c = 0; c < g.rows(); ++c) {
      const Scalar* gs = g.data() + c * g.cols();
      const std::int32_t* as = arg.data() + c * g.cols();
      Scalar* d = dx.data() + c * dx.cols();
      for (Eigen::Index oc = 0; oc < g.cols(); ++oc) d[as[oc]] += gs[oc];
    }
  });
}

// C x (B*H*W) -> C x B mean over pixels.
template <typename Scalar>
Var<Scalar> global_avg_pool(const Var<Scalar>& x, const MapShape& in) {
  detail::require(x.rows() == in.channels && x.cols() == in.columns(), "global_avg_pool: shape");
  const auto p = in.pixels();
  Matrix<Scalar> v(in.channels, in.batch);
  for (int b = 0; b < in.batch; ++b) v.col(b) = x.value().middleCols(b * p, p).rowwise().mean();
  const int ix = x.id();
  return x.tape().record(std::move(v), x.requires_grad(), [ix, p](Tape<Scalar>& t, int self) {
    const auto& g = t.grad(self);
    auto& dx = t.grad(ix);
    for (Eigen::Index b = 0; b < g.cols(); ++b) {
      dx.middleCols(b * p, p).colwise() += g.col(b) / static_cast<Scalar>(p);
    }
  });
}

// C x (B*H*W) -> (C*H*W) x B, row index c*H*W + pixel.
template <typename Scalar>
Var<Scalar> flatten(const Var<Scalar>& x, const MapShape& in) {
  detail::require(x.rows() == in.channels && x.cols() == in.columns(), "flatten: shape");
  const auto p = in.pixels();
  const auto& xv = x.value();
  Matrix<Scalar> v(in.channels * p, in.batch);
  for (int b = 0; b < in.batch; ++b) {
    for (int c = 0; c < in.channels; ++c) v.col(b).segment(c * p, p) = xv.row(c).segment(b * p, p).transpose();
  }
  const int ix = x.id();
  return x.tape().record(std::move(v), x.requires_grad(), [ix, in, p](Tape<Scalar>& t, int self) {
    const auto& g = t.grad(self);
    auto& dx = t.grad(ix);
    for (int b = 0; b < in.batch; ++b) {
      for (int c = 0; c < in.channels; ++c) dx.row(c).segment(b * p, p) += g.col(b).segment(c * p, p).transpose();
    }
  });
}

// R x C -> 1 x (R*C), column-major: entry (r, c) lands at c*R + r.
template <typename Scalar>
Var<Scalar> flatten_cols(const Var<Scalar>& a) {
  const auto r = a.rows();
  const auto c = a.cols();
  Matrix<Scalar> v(1, r * c);
  for (Eigen::Index j = 0; j < c; ++j) {
    for (Eigen::Index i = 0; i < r; ++i) v(0, j * r + i) = a.value()(i, j);
  }
  const int ia = a.id();
  return a.tape().record(std::move(v), a.requires_grad(), [ia, r, c](Tape<Scalar>& t, int self) {
    const auto& g = t.grad(self);
    Matrix<Scalar> d(r, c);
    for (Eigen::Index j = 0; j < c; ++j) {
      for (Eigen::Index i = 0; i < r; ++i) d(i, j) = g(0, j * r + i);
    }
    t.accumulate(ia, std::move(d));
  });
}

// Mean over columns of w_j * BCE(sigmoid(z_j), y_j), computed stably from
// logits. z, y, w are all 1 x N.
template <typename Scalar>
Var<Scalar> bce_with_logits(const Var<Scalar>& z, const Matrix<Scalar>& y, const Matrix<Scalar>& w) {
  detail::require(z.rows() == 1 && y.rows() == 1 && w.rows() == 1 && z.cols() == y.cols() && z.cols() == w.cols(),
                  "bce_with_logits: shapes");
  const auto n = z.cols();
  Matrix<Scalar> v(1, 1);
  Scalar total = 0;
  for (Eigen::Index j = 0; j < n; ++j) {
    const Scalar zj = z.value()(0, j);
    // log(1 + exp(-|z|)) + max(z, 0) - z*y
    total += w(0, j) * (std::log1p(std::exp(-std::abs(zj))) + std::max(zj, Scalar(0)) - zj * y(0, j));
  }
  v(0, 0) = total / static_cast<Scalar>(n);
  const int iz = z.id();
  return z.tape().record(std::move(v), z.requires_grad(), [iz, y, w, n](Tape<Scalar>& t, int self) {
    const Scalar g = t.grad(self)(0, 0) / static_cast<Scalar>(n);
    Matrix<Scalar> p = sigmoid_value<Scalar>(t.value(iz));
    t.accumulate(iz, ((p - y).cwiseProduct(w) * g).eval());
  });
}

}  // namespace setcomp::ad
