#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "mmx/error.hpp"

namespace mmx {

/// Row-major dense matrix; activations are (tokens x features).
template <class T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <class T>
using Row = Eigen::Matrix<T, 1, Eigen::Dynamic>;

struct Shape {
  int rows = 0;
  int cols = 0;
  friend bool operator==(const Shape&, const Shape&) = default;
};

/// Name -> shape table; std::map keeps enumeration sorted and stable.
using ParamShapes = std::map<std::string, Shape>;

/// Named learnable arrays. Biases and other vectors are stored as 1 x n.
template <class T>
class ParamStore {
 public:
  using Map = std::map<std::string, Mat<T>>;

  ParamStore() = default;

  explicit ParamStore(const ParamShapes& shapes) {
    for (const auto& [name, shape] : shapes) arrays_[name] = Mat<T>::Zero(shape.rows, shape.cols);
  }

  Mat<T>& operator[](const std::string& name) {
    auto it = arrays_.find(name);
    if (it == arrays_.end()) fail(ErrorCode::invalid_argument, "unknown parameter array " + name);
    return it->second;
  }

  const Mat<T>& operator[](const std::string& name) const {
    auto it = arrays_.find(name);
    if (it == arrays_.end()) fail(ErrorCode::invalid_argument, "unknown parameter array " + name);
    return it->second;
  }

  bool contains(const std::string& name) const { return arrays_.count(name) != 0; }

  void insert(const std::string& name, Mat<T> value) { arrays_[name] = std::move(value); }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    out.reserve(arrays_.size());
    for (const auto& kv : arrays_) out.push_back(kv.first);
    return out;
  }

  ParamShapes shapes() const {
    ParamShapes out;
    for (const auto& [name, m] : arrays_)
      out[name] = Shape{static_cast<int>(m.rows()), static_cast<int>(m.cols())};
    return out;
  }

  ParamStore zeros_like() const { return ParamStore(shapes()); }

  void set_zero() {
    for (auto& kv : arrays_) kv.second.setZero();
  }

  std::size_t array_count() const { return arrays_.size(); }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& kv : arrays_) n += static_cast<std::size_t>(kv.second.size());
    return n;
  }

  bool all_finite() const {
    for (const auto& kv : arrays_)
      if (!kv.second.allFinite()) return false;
    return true;
  }

  /// this += other, in sorted-name order.
  void accumulate(const ParamStore& other) {
    for (auto& [name, m] : arrays_) m += other[name];
  }

  void scale(T factor) {
    for (auto& kv : arrays_) kv.second *= factor;
  }

  template <class U>
  ParamStore<U> cast() const {
    ParamStore<U> out;
    for (const auto& [name, m] : arrays_) out.insert(name, m.template cast<U>());
    return out;
  }

  typename Map::iterator begin() { return arrays_.begin(); }
  typename Map::iterator end() { return arrays_.end(); }
  typename Map::const_iterator begin() const { return arrays_.begin(); }
  typename Map::const_iterator end() const { return arrays_.end(); }

  friend bool operator==(const ParamStore& a, const ParamStore& b) {
    if (a.arrays_.size() != b.arrays_.size()) return false;
    for (const auto& [name, m] : a.arrays_) {
      auto it = b.arrays_.find(name);
      if (it == b.arrays_.end() || it->second.rows() != m.rows() || it->second.cols() != m.cols())
        return false;
      if (!(it->second.array() == m.array()).all()) return false;
    }
    return true;
  }

 private:
  Map arrays_;
};

template <class T>
Row<T> to_row(const std::vector<double>& v) {
  Row<T> r(static_cast<Eigen::Index>(v.size()));
  for (std::size_t i = 0; i < v.size(); ++i) r(static_cast<Eigen::Index>(i)) = static_cast<T>(v[i]);
  return r;
}

}  // namespace mmx
