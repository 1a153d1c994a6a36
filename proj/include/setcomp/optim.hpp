#pragma once

#include "setcomp/params.hpp"

#include <cmath>
#include <string>

namespace setcomp {

// Adam over the trainable entries of a ParamStore. Moments live in stores
// keyed like the parameters so they checkpoint the same way.
template <typename Scalar>
class Adam {
 public:
  struct Settings {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
  };

  Adam() = default;
  explicit Adam(Settings s) : settings_(s) {}

  const Settings& settings() const { return settings_; }
  long long steps() const { return t_; }
  ParamStore<Scalar>& first_moment() { return m_; }
  ParamStore<Scalar>& second_moment() { return v_; }
  const ParamStore<Scalar>& first_moment() const { return m_; }
  const ParamStore<Scalar>& second_moment() const { return v_; }

  // Restores a saved state; moments must cover every trainable parameter.
  void restore(Settings s, long long t, ParamStore<Scalar> m, ParamStore<Scalar> v) {
    settings_ = s;
    t_ = t;
    m_ = std::move(m);
    v_ = std::move(v);
  }

  void step(ParamStore<Scalar>& params) {
    ++t_;
    const double c1 = 1.0 - std::pow(settings_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(settings_.beta2, static_cast<double>(t_));
    const auto b1 = static_cast<Scalar>(settings_.beta1);
    const auto b2 = static_cast<Scalar>(settings_.beta2);
    const auto step_size = static_cast<Scalar>(settings_.lr / c1);
    const auto inv_c2 = static_cast<Scalar>(1.0 / c2);
    const auto eps = static_cast<Scalar>(settings_.eps);
    for (auto& e : params.entries()) {
      if (!e.trainable) continue;
      if (!m_.contains(e.name)) {
        m_.add(e.name, Matrix<Scalar>::Zero(e.value.rows(), e.value.cols()));
        v_.add(e.name, Matrix<Scalar>::Zero(e.value.rows(), e.value.cols()));
      }
      auto& m = m_.value(e.name);
      auto& v = v_.value(e.name);
      m = b1 * m + (Scalar(1) - b1) * e.grad;
      v = b2 * v + (Scalar(1) - b2) * e.grad.cwiseAbs2();
      e.value.array() -= step_size * m.array() / ((v.array() * inv_c2).sqrt() + eps);
    }
  }

 private:
  Settings settings_;
  long long t_ = 0;
  ParamStore<Scalar> m_;
  ParamStore<Scalar> v_;
};

}  // namespace setcomp
