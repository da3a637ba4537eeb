#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "slmicl/error.hpp"

namespace slmicl {

template <typename T>
struct Tensor {
  std::string name;
  std::vector<std::size_t> shape;
  std::vector<T> data;

  std::size_t numel() const { return data.size(); }
  std::size_t rows() const { return shape.empty() ? 1 : shape.front(); }
  std::size_t cols() const {
    if (shape.size() < 2) return data.size();
    std::size_t c = 1;
    for (std::size_t i = 1; i < shape.size(); ++i) c *= shape[i];
    return c;
  }
};

inline std::size_t shape_numel(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

/// Ordered collection of named tensors. Models, prompt banks, gradient sets
/// and optimizer moments all share this representation so that checkpointing,
/// hashing and update rules are written once.
template <typename T>
class ParamSet {
 public:
  std::size_t add(const std::string& name, std::vector<std::size_t> shape) {
    if (index_.count(name)) fail(ErrorCode::invalid_argument, "duplicate tensor name '" + name + "'");
    Tensor<T> t;
    t.name = name;
    t.data.assign(shape_numel(shape), T(0));
    t.shape = std::move(shape);
    index_.emplace(name, tensors_.size());
    tensors_.push_back(std::move(t));
    return tensors_.size() - 1;
  }

  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  std::size_t index_of(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) fail(ErrorCode::invalid_argument, "no tensor named '" + name + "'");
    return it->second;
  }

  Tensor<T>& operator[](std::size_t i) { return tensors_[i]; }
  const Tensor<T>& operator[](std::size_t i) const { return tensors_[i]; }
  Tensor<T>& at(const std::string& name) { return tensors_[index_of(name)]; }
  const Tensor<T>& at(const std::string& name) const { return tensors_[index_of(name)]; }

  std::size_t size() const { return tensors_.size(); }
  auto begin() { return tensors_.begin(); }
  auto end() { return tensors_.end(); }
  auto begin() const { return tensors_.begin(); }
  auto end() const { return tensors_.end(); }

  std::size_t numel() const {
    std::size_t n = 0;
    for (const auto& t : tensors_) n += t.numel();
    return n;
  }

  /// Same names and shapes, zero-filled.
  ParamSet zeros_like() const {
    ParamSet out;
    for (const auto& t : tensors_) out.add(t.name, t.shape);
    return out;
  }

  void set_zero() {
    for (auto& t : tensors_) std::fill(t.data.begin(), t.data.end(), T(0));
  }

  bool same_layout(const ParamSet& other) const {
    if (other.size() != size()) return false;
    for (std::size_t i = 0; i < size(); ++i) {
      if (tensors_[i].name != other[i].name || tensors_[i].shape != other[i].shape) return false;
    }
    return true;
  }

  /// this += scale * other (layouts must match).
  void axpy(T scale, const ParamSet& other) {
    require(same_layout(other), "axpy: mismatched parameter layouts");
    for (std::size_t i = 0; i < size(); ++i) {
      auto& dst = tensors_[i].data;
      const auto& src = other[i].data;
      for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += scale * src[j];
    }
  }

  double squared_norm() const {
    double acc = 0.0;
    for (const auto& t : tensors_) {
      for (T v : t.data) acc += static_cast<double>(v) * static_cast<double>(v);
    }
    return acc;
  }

  bool all_finite() const;

  template <typename U>
  ParamSet<U> cast() const {
    ParamSet<U> out;
    for (const auto& t : tensors_) {
      auto idx = out.add(t.name, t.shape);
      std::transform(t.data.begin(), t.data.end(), out[idx].data.begin(),
                     [](T v) { return static_cast<U>(v); });
    }
    return out;
  }

 private:
  std::vector<Tensor<T>> tensors_;
  std::unordered_map<std::string, std::size_t> index_;
};

template <typename T>
bool ParamSet<T>::all_finite() const {
  for (const auto& t : tensors_) {
    for (T v : t.data) {
      if (!(v == v) || v - v != T(0)) return false;
    }
  }
  return true;
}

/// Sums gradient sets with a fixed pairwise tree so the result does not depend
/// on how the per-example gradients were scheduled.
template <typename T>
ParamSet<T> pairwise_sum(std::vector<ParamSet<T>> parts) {
  require(!parts.empty(), "pairwise_sum: no parts");
  while (parts.size() > 1) {
    std::vector<ParamSet<T>> next;
    next.reserve((parts.size() + 1) / 2);
    for (std::size_t i = 0; i + 1 < parts.size(); i += 2) {
      parts[i].axpy(T(1), parts[i + 1]);
      next.push_back(std::move(parts[i]));
    }
    if (parts.size() % 2 == 1) next.push_back(std::move(parts.back()));
    parts = std::move(next);
  }
  return std::move(parts.front());
}

}  // namespace slmicl
