#ifndef L2RW_PARAM_VECTOR_HPP_
#define L2RW_PARAM_VECTOR_HPP_

#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "l2rw/types.hpp"

namespace l2rw {

/// One named block of a flat parameter vector. Blocks are column-major
/// matrices (rows x cols); vectors use cols == 1.
struct LayoutEntry {
  int layer = 0;
  std::string name;
  Index offset = 0;
  Index rows = 0;
  Index cols = 1;

  Index size() const { return rows * cols; }
};

/// Layer-layout metadata for a flat parameter vector. Entries are appended
/// contiguously, so offsets never overlap and always cover [0, size()).
class ParamLayout {
 public:
  ParamLayout() = default;

  Index add(int layer, std::string name, Index rows, Index cols = 1) {
    if (rows < 0 || cols < 0)
      throw ConfigError("ParamLayout: negative block shape for " + name);
    entries_.push_back({layer, std::move(name), size_, rows, cols});
    size_ += rows * cols;
    return entries_.size() - 1;
  }

  Index size() const { return size_; }
  const std::vector<LayoutEntry>& entries() const { return entries_; }
  const LayoutEntry& operator[](std::size_t i) const { return entries_[i]; }

  const LayoutEntry& find(int layer, const std::string& name) const {
    for (const auto& e : entries_)
      if (e.layer == layer && e.name == name) return e;
    throw ConfigError("ParamLayout: no block " + name + " in layer " +
                      std::to_string(layer));
  }

  template <typename Scalar>
  Eigen::Map<const Mat<Scalar>> block(const Vec<Scalar>& values,
                                      const LayoutEntry& e) const {
    return {values.data() + e.offset, e.rows, e.cols};
  }

  template <typename Scalar>
  Eigen::Map<Mat<Scalar>> block(Vec<Scalar>& values,
                                const LayoutEntry& e) const {
    return {values.data() + e.offset, e.rows, e.cols};
  }

  friend bool operator==(const ParamLayout& a, const ParamLayout& b) {
    if (a.size_ != b.size_ || a.entries_.size() != b.entries_.size())
      return false;
    for (std::size_t i = 0; i < a.entries_.size(); ++i) {
      const auto& x = a.entries_[i];
      const auto& y = b.entries_[i];
      if (x.layer != y.layer || x.name != y.name || x.offset != y.offset ||
          x.rows != y.rows || x.cols != y.cols)
        return false;
    }
    return true;
  }

 private:
  std::vector<LayoutEntry> entries_;
  Index size_ = 0;
};

/// Flat, contiguous parameter storage plus shared layout metadata.
template <typename Scalar>
struct ParamVector {
  Vec<Scalar> values;
  std::shared_ptr<const ParamLayout> layout;

  ParamVector() = default;
  explicit ParamVector(std::shared_ptr<const ParamLayout> l)
      : values(Vec<Scalar>::Zero(l->size())), layout(std::move(l)) {}
  ParamVector(Vec<Scalar> v, std::shared_ptr<const ParamLayout> l)
      : values(std::move(v)), layout(std::move(l)) {
    if (values.size() != layout->size())
      throw ConfigError("ParamVector: value length " +
                        std::to_string(values.size()) + " != layout size " +
                        std::to_string(layout->size()));
  }

  Index size() const { return values.size(); }

  Eigen::Map<const Mat<Scalar>> block(const LayoutEntry& e) const {
    return layout->block(values, e);
  }
  Eigen::Map<Mat<Scalar>> block(const LayoutEntry& e) {
    return layout->block(values, e);
  }
};

}  // namespace l2rw

#endif  // L2RW_PARAM_VECTOR_HPP_
