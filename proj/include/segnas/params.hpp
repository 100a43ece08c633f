#pragma once

#include <Eigen/Core>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace segnas {

/// One named parameter (or buffer) with its gradient, Polyak shadow and
/// optimizer moments. Buffers (trainable == false) carry value only.
template <typename Scalar>
struct ParamArray {
  using Array = Eigen::Array<Scalar, Eigen::Dynamic, 1>;

  std::string name;
  std::vector<int> shape;
  bool trainable = true;
  Array value, grad, shadow, opt_m, opt_v;

  Eigen::Index size() const { return value.size(); }
};

template <typename Scalar>
class ParamStore {
 public:
  using Array = typename ParamArray<Scalar>::Array;

  int add(const std::string& name, std::vector<int> shape, bool trainable = true) {
    if (index_.count(name)) throw std::invalid_argument("duplicate param " + name);
    Eigen::Index size = 1;
    for (int d : shape) size *= d;
    ParamArray<Scalar> p;
    p.name = name;
    p.shape = std::move(shape);
    p.trainable = trainable;
    p.value = Array::Zero(size);
    if (trainable) {
      p.grad = Array::Zero(size);
      p.shadow = Array::Zero(size);
      p.opt_m = Array::Zero(size);
      p.opt_v = Array::Zero(size);
    }
    const int handle = static_cast<int>(arrays_.size());
    index_.emplace(p.name, handle);
    arrays_.push_back(std::move(p));
    return handle;
  }

  ParamArray<Scalar>& operator[](int handle) { return arrays_[handle]; }
  const ParamArray<Scalar>& operator[](int handle) const { return arrays_[handle]; }

  ParamArray<Scalar>& by_name(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("no param " + name);
    return arrays_[it->second];
  }
  const ParamArray<Scalar>& by_name(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("no param " + name);
    return arrays_[it->second];
  }
  bool contains(const std::string& name) const { return index_.count(name) > 0; }

  std::size_t count() const { return arrays_.size(); }
  auto begin() { return arrays_.begin(); }
  auto end() { return arrays_.end(); }
  auto begin() const { return arrays_.begin(); }
  auto end() const { return arrays_.end(); }

  Eigen::Index trainable_size() const {
    Eigen::Index total = 0;
    for (const auto& p : arrays_)
      if (p.trainable) total += p.size();
    return total;
  }

  void zero_grad() {
    for (auto& p : arrays_)
      if (p.trainable) p.grad.setZero();
  }

  // Polyak averaging. The shadow starts at the current values and tracks
  // shadow <- decay * shadow + (1 - decay) * value after each step.
  void polyak_init() {
    for (auto& p : arrays_)
      if (p.trainable) p.shadow = p.value;
  }

  void polyak_update(Scalar decay) {
    for (auto& p : arrays_)
      if (p.trainable)
        p.shadow = decay * p.shadow + (Scalar(1) - decay) * p.value;
  }

  void polyak_swap_in() {
    if (swapped_) throw std::logic_error("polyak shadow already swapped in");
    for (auto& p : arrays_)
      if (p.trainable) p.value.swap(p.shadow);
    swapped_ = true;
  }

  void polyak_swap_out() {
    if (!swapped_) throw std::logic_error("polyak shadow is not swapped in");
    for (auto& p : arrays_)
      if (p.trainable) p.value.swap(p.shadow);
    swapped_ = false;
  }

  bool polyak_swapped() const { return swapped_; }

 private:
  std::vector<ParamArray<Scalar>> arrays_;
  std::unordered_map<std::string, int> index_;
  bool swapped_ = false;
};

}  // namespace segnas
