#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <initializer_list>
#include <optional>
#include <string>
#include <vector>

namespace knas {

using Index = Eigen::Index;
using Shape = std::vector<int>;

Index shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

// Dense row-major n-d array of doubles. The first extent is the batch axis
// wherever a tensor flows through a Graph.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, Eigen::VectorXd data);
  Tensor(Shape shape, std::initializer_list<double> values);

  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int axis) const { return shape_.at(static_cast<std::size_t>(axis)); }
  Index size() const { return data_.size(); }
  bool empty() const { return data_.size() == 0; }

  Eigen::VectorXd& data() { return data_; }
  const Eigen::VectorXd& data() const { return data_; }
  double& operator[](Index i) { return data_[i]; }
  double operator[](Index i) const { return data_[i]; }

  // Flat index of (i0, i1, ...).
  Index offset(std::initializer_list<int> idx) const;
  double& at(std::initializer_list<int> idx) { return data_[offset(idx)]; }
  double at(std::initializer_list<int> idx) const { return data_[offset(idx)]; }

  bool all_finite() const { return data_.allFinite(); }

  // Rows [begin, begin + count) along axis 0.
  Tensor slice(Index begin, Index count) const;
  // Gather rows along axis 0.
  Tensor gather(const std::vector<Index>& rows) const;
  Tensor reshaped(Shape shape) const;

  bool requires_grad = false;
  std::optional<Eigen::VectorXd> grad;

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_;
  Eigen::VectorXd data_;
};

}  // namespace knas
