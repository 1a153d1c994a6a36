#pragma once

#include "setcomp/autodiff.hpp"
#include "setcomp/random.hpp"

#include <cmath>
#include <deque>
#include <stdexcept>
#include <string>
#include <unordered_map>

namespace setcomp {

template <typename Scalar>
using Matrix = ad::Matrix<Scalar>;

// Named matrices in insertion order. Non-trainable entries hold running
// statistics; they are saved with the model but never receive gradients.
template <typename Scalar>
class ParamStore {
 public:
  struct Entry {
    std::string name;
    Matrix<Scalar> value;
    Matrix<Scalar> grad;
    bool trainable = true;
  };

  Matrix<Scalar>& add(const std::string& name, Matrix<Scalar> value, bool trainable = true) {
    if (index_.count(name)) throw std::invalid_argument("duplicate parameter " + name);
    index_[name] = entries_.size();
    Matrix<Scalar> grad = Matrix<Scalar>::Zero(value.rows(), value.cols());
    entries_.push_back(Entry{name, std::move(value), std::move(grad), trainable});
    return entries_.back().value;
  }

  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  Entry& entry(const std::string& name) { return entries_[lookup(name)]; }
  const Entry& entry(const std::string& name) const { return entries_[lookup(name)]; }
  Matrix<Scalar>& value(const std::string& name) { return entry(name).value; }
  const Matrix<Scalar>& value(const std::string& name) const { return entry(name).value; }

  std::deque<Entry>& entries() { return entries_; }
  const std::deque<Entry>& entries() const { return entries_; }

  void zero_grad() {
    for (auto& e : entries_) e.grad.setZero();
  }

  // Trainable scalar count over names starting with `prefix`.
  std::size_t trainable_count(const std::string& prefix = "") const {
    std::size_t n = 0;
    for (const auto& e : entries_) {
      if (e.trainable && e.name.rfind(prefix, 0) == 0) n += static_cast<std::size_t>(e.value.size());
    }
    return n;
  }

  template <typename Other>
  ParamStore<Other> cast() const {
    ParamStore<Other> out;
    for (const auto& e : entries_) out.add(e.name, e.value.template cast<Other>(), e.trainable);
    return out;
  }

  bool all_finite() const {
    for (const auto& e : entries_) {
      if (!e.value.allFinite()) return false;
    }
    return true;
  }

 private:
  std::size_t lookup(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("unknown parameter " + name);
    return it->second;
  }

  std::deque<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

enum class Mode { kTrain, kEval };

// One forward pass: the tape, the parameters it reads, and the mode. Each
// parameter is placed on the tape at most once per context.
template <typename Scalar>
class Context {
 public:
  // Evaluation without gradients; parameters are read-only.
  Context(ad::Tape<Scalar>& tape, const ParamStore<Scalar>& params) : tape_(tape), params_(&params) {}

  // Gradients flow into params' grad buffers; training mode also updates
  // running statistics.
  Context(ad::Tape<Scalar>& tape, ParamStore<Scalar>& params, Mode mode, bool track_grads = true)
      : tape_(tape), params_(&params), mutable_params_(&params), mode_(mode), track_grads_(track_grads) {}

  ad::Tape<Scalar>& tape() { return tape_; }
  const ParamStore<Scalar>& params() const { return *params_; }
  bool training() const { return mode_ == Mode::kTrain; }

  ad::Var<Scalar> param(const std::string& name) {
    if (auto it = bound_.find(name); it != bound_.end()) return it->second;
    const auto& e = params_->entry(name);
    ad::Var<Scalar> v;
    if (track_grads_ && mutable_params_ && e.trainable) {
      v = tape_.parameter(e.value, &mutable_params_->entry(name).grad);
    } else {
      v = tape_.constant(e.value);
    }
    bound_.emplace(name, v);
    return v;
  }

  // Running statistic storage, writable only in training mode.
  Matrix<Scalar>* running(const std::string& name) {
    if (training()) {
      if (!mutable_params_) throw std::logic_error("training pass needs mutable parameters");
      return &mutable_params_->value(name);
    }
    return const_cast<Matrix<Scalar>*>(&params_->value(name));
  }

 private:
  ad::Tape<Scalar>& tape_;
  const ParamStore<Scalar>* params_;
  ParamStore<Scalar>* mutable_params_ = nullptr;
  Mode mode_ = Mode::kEval;
  bool track_grads_ = false;
  std::unordered_map<std::string, ad::Var<Scalar>> bound_;
};

// Weight initialisers: uniform with fan-in scaling, zero biases.
template <typename Scalar>
void add_dense(ParamStore<Scalar>& store, const std::string& name, int in, int out, Rng& rng, bool bias = true) {
  const double bound = std::sqrt(6.0 / in);
  Matrix<Scalar> w(out, in);
  for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = static_cast<Scalar>(uniform(rng, -bound, bound));
  store.add(name + ".w", std::move(w));
  if (bias) store.add(name + ".b", Matrix<Scalar>::Zero(out, 1));
}

template <typename Scalar>
void add_conv(ParamStore<Scalar>& store, const std::string& name, int in_channels, int out_channels, int kernel,
              Rng& rng) {
  const int fan_in = in_channels * kernel * kernel;
  const double bound = std::sqrt(6.0 / fan_in);
  Matrix<Scalar> w(out_channels, fan_in);
  for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = static_cast<Scalar>(uniform(rng, -bound, bound));
  store.add(name + ".w", std::move(w));
  store.add(name + ".b", Matrix<Scalar>::Zero(out_channels, 1));
}

template <typename Scalar>
void add_batch_norm(ParamStore<Scalar>& store, const std::string& name, int features) {
  store.add(name + ".gamma", Matrix<Scalar>::Ones(features, 1));
  store.add(name + ".beta", Matrix<Scalar>::Zero(features, 1));
  store.add(name + ".running_mean", Matrix<Scalar>::Zero(features, 1), false);
  store.add(name + ".running_var", Matrix<Scalar>::Ones(features, 1), false);
}

}  // namespace setcomp
