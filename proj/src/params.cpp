#include "mdasr/params.hpp"

#include <cmath>
#include <stdexcept>

namespace mdasr {

template <typename T>
Var<T> ParamStore<T>::add(const std::string& name, Tensor<T> init) {
  if (contains(name)) throw std::invalid_argument("duplicate parameter name '" + name + "'");
  Entry e;
  e.name = name;
  e.param = parameter(std::move(init), name);
  e.m.assign(e.param->value.size(), T{0});
  e.v.assign(e.param->value.size(), T{0});
  index_[name] = entries_.size();
  entries_.push_back(std::move(e));
  return entries_.back().param;
}

template <typename T>
Var<T> ParamStore<T>::add_normal(const std::string& name, std::vector<int> shape, double stddev,
                                 std::mt19937_64& rng) {
  Tensor<T> t(std::move(shape));
  std::normal_distribution<double> dist(0.0, stddev);
  for (auto& v : t.data) v = static_cast<T>(dist(rng));
  return add(name, std::move(t));
}

template <typename T>
Var<T> ParamStore<T>::add_constant(const std::string& name, std::vector<int> shape, T value) {
  return add(name, Tensor<T>(std::move(shape), value));
}

template <typename T>
const Var<T>& ParamStore<T>::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("unknown parameter '" + name + "'");
  return entries_[it->second].param;
}

template <typename T>
typename ParamStore<T>::Entry& ParamStore<T>::entry(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("unknown parameter '" + name + "'");
  return entries_[it->second];
}

template <typename T>
void ParamStore<T>::set_trainable(const std::string& prefix, bool trainable) {
  for (auto& e : entries_)
    if (e.name.rfind(prefix, 0) == 0) {
      e.trainable = trainable;
      e.param->requires_grad = trainable;
    }
}

template <typename T>
void ParamStore<T>::zero_grad() {
  for (auto& e : entries_) {
    e.param->ensure_grad();
    e.param->zero_grad();
  }
}

template <typename T>
void ParamStore<T>::adam_step(double lr, const AdamConfig& cfg) {
  for (const auto& e : entries_)
    if (e.trainable && !e.param->touched)
      throw std::logic_error("adam_step: missing gradient for parameter '" + e.name + "'");
  ++step_;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step_));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step_));
  for (auto& e : entries_) {
    if (!e.trainable) continue;
    auto& p = e.param->value.data;
    const auto& g = e.param->grad;
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double gi = g[i];
      const double m = cfg.beta1 * e.m[i] + (1.0 - cfg.beta1) * gi;
      const double v = cfg.beta2 * e.v[i] + (1.0 - cfg.beta2) * gi * gi;
      e.m[i] = static_cast<T>(m);
      e.v[i] = static_cast<T>(v);
      const double update = (m / bc1) / (std::sqrt(v / bc2) + cfg.eps) + cfg.weight_decay * p[i];
      p[i] = static_cast<T>(p[i] - lr * update);
    }
  }
}

template <typename T>
std::size_t ParamStore<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.param->value.size();
  return n;
}

template class ParamStore<float>;
template class ParamStore<double>;

}  // namespace mdasr
