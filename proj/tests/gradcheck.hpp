#pragma once

#include "setcomp/params.hpp"

#include <cmath>
#include <functional>
#include <vector>

namespace setcomp::testing {

// Relative error between an analytic gradient and central finite differences
// of the same function evaluated in double. `f` is a generic callable
// (Context<S>&, const std::vector<Var<S>>&) -> 1x1 Var<S>, instantiated for
// both the tested scalar and double. Returns the worst error over every
// input and trainable parameter, measured as ||a - n|| / max(||a||, ||n||, 1):
// relative for ordinary gradients, absolute for ones that vanish identically
// (a bias feeding straight into batch norm).
template <typename Scalar, typename F>
double gradcheck(F&& f, ParamStore<Scalar> params, const std::vector<Matrix<Scalar>>& inputs, double step = 1e-6) {
  // Analytic pass in Scalar.
  ad::Tape<Scalar> tape;
  params.zero_grad();
  Context<Scalar> ctx(tape, params, Mode::kTrain, true);
  std::vector<ad::Var<Scalar>> xs;
  for (const auto& x : inputs) xs.push_back(tape.variable(x));
  tape.backward(f(ctx, xs));

  const auto p64 = params.template cast<double>();
  std::vector<Matrix<double>> x64;
  for (const auto& x : inputs) x64.push_back(x.template cast<double>());
  auto eval = [&](ParamStore<double>& ps, const std::vector<Matrix<double>>& in) {
    ad::Tape<double> t;
    Context<double> c(t, ps, Mode::kTrain, false);
    std::vector<ad::Var<double>> v;
    for (const auto& x : in) v.push_back(t.constant(x));
    return f(c, v).value()(0, 0);
  };
  auto rel = [](const Matrix<double>& a, const Matrix<double>& n) {
    const double scale = std::max({a.norm(), n.norm(), 1.0});
    return (a - n).norm() / scale;
  };

  double worst = 0.0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    Matrix<double> numeric(x64[i].rows(), x64[i].cols());
    auto in = x64;
    for (Eigen::Index j = 0; j < numeric.size(); ++j) {
      auto ps = p64.template cast<double>();
      const double orig = in[i].data()[j];
      in[i].data()[j] = orig + step;
      const double up = eval(ps, in);
      in[i].data()[j] = orig - step;
      const double down = eval(ps, in);
      in[i].data()[j] = orig;
      numeric.data()[j] = (up - down) / (2 * step);
    }
    const Matrix<double> analytic = tape.grad(xs[i].id()).template cast<double>();
    worst = std::max(worst, rel(analytic, numeric));
  }
  for (const auto& e : params.entries()) {
    if (!e.trainable) continue;
    Matrix<double> numeric(e.value.rows(), e.value.cols());
    for (Eigen::Index j = 0; j < numeric.size(); ++j) {
      auto ps = p64.template cast<double>();
      auto& v = ps.value(e.name);
      const double orig = v.data()[j];
      v.data()[j] = orig + step;
      const double up = eval(ps, x64);
      v.data()[j] = orig - step;
      const double down = eval(ps, x64);
      numeric.data()[j] = (up - down) / (2 * step);
    }
    worst = std::max(worst, rel(e.grad.template cast<double>(), numeric));
  }
  return worst;
}

template <typename Scalar>
Matrix<Scalar> random_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Matrix<Scalar> m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<Scalar>(uniform(rng, lo, hi));
  return m;
}

}  // namespace setcomp::testing
