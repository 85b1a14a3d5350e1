#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "mdasr/autograd.hpp"

namespace mdasr {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

// Named parameters with AdamW moment buffers. Iteration order is insertion
// order, which fixes the checkpoint layout.
template <typename T>
class ParamStore {
 public:
  struct Entry {
    std::string name;
    Var<T> param;
    std::vector<T> m;
    std::vector<T> v;
    bool trainable = true;
  };

  Var<T> add(const std::string& name, Tensor<T> init);
  // Gaussian init with the given standard deviation.
  Var<T> add_normal(const std::string& name, std::vector<int> shape, double stddev, std::mt19937_64& rng);
  Var<T> add_constant(const std::string& name, std::vector<int> shape, T value);

  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  const Var<T>& get(const std::string& name) const;
  Entry& entry(const std::string& name);
  const std::vector<Entry>& entries() const { return entries_; }
  std::vector<Entry>& entries() { return entries_; }

  // Marks every parameter whose name starts with prefix.
  void set_trainable(const std::string& prefix, bool trainable);

  void zero_grad();

  // One AdamW step over trainable parameters. Throws if a trainable
  // parameter received no gradient since the last zero_grad.
  void adam_step(double lr, const AdamConfig& cfg = {});

  std::int64_t step_count() const { return step_; }
  void set_step_count(std::int64_t s) { step_ = s; }
  std::size_t parameter_count() const;

  // Copies values (and optimizer state) by name from a store of another precision.
  template <typename U>
  void copy_from(const ParamStore<U>& other) {
    for (const auto& e : other.entries()) {
      Entry& mine = entry(e.name);
      if (mine.param->value.shape != e.param->value.shape)
        throw DimensionError("copy_from: shape mismatch for parameter '" + e.name + "'");
      mine.param->value.data.assign(e.param->value.data.begin(), e.param->value.data.end());
      mine.m.assign(e.m.begin(), e.m.end());
      mine.v.assign(e.v.begin(), e.v.end());
      mine.trainable = e.trainable;
    }
    step_ = other.step_count();
  }

 private:
  std::vector<Entry> entries_;
  std::map<std::string, std::size_t> index_;
  std::int64_t step_ = 0;
};

}  // namespace mdasr
