#include "knas/tensor.hpp"

#include "knas/errors.hpp"

#include <numeric>
#include <sstream>

namespace knas {

Index shape_size(const Shape& shape) {
  Index n = 1;
  for (int e : shape) {
    if (e <= 0) throw ShapeError("tensor extents must be positive, got " + shape_string(shape));
    n *= e;
  }
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? ", " : "") << shape[i];
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, double fill)
    : shape_(std::move(shape)), data_(Eigen::VectorXd::Constant(shape_size(shape_), fill)) {}

Tensor::Tensor(Shape shape, Eigen::VectorXd data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_size(shape_) != data_.size())
    throw ShapeError("tensor data length " + std::to_string(data_.size()) + " does not match shape " +
                     shape_string(shape_));
}

Tensor::Tensor(Shape shape, std::initializer_list<double> values)
    : Tensor(std::move(shape), Eigen::VectorXd(Eigen::Map<const Eigen::VectorXd>(
                                   values.begin(), static_cast<Index>(values.size())))) {}

Index Tensor::offset(std::initializer_list<int> idx) const {
  if (idx.size() != shape_.size()) throw ShapeError("index rank does not match tensor rank");
  Index off = 0;
  std::size_t axis = 0;
  for (int i : idx) {
    if (i < 0 || i >= shape_[axis]) throw ShapeError("index out of range on axis " + std::to_string(axis));
    off = off * shape_[axis] + i;
    ++axis;
  }
  return off;
}

Tensor Tensor::slice(Index begin, Index count) const {
  if (shape_.empty() || begin < 0 || count <= 0 || begin + count > shape_[0])
    throw ShapeError("slice out of range for shape " + shape_string(shape_));
  const Index row = data_.size() / shape_[0];
  Shape s = shape_;
  s[0] = static_cast<int>(count);
  return Tensor(std::move(s), Eigen::VectorXd(data_.segment(begin * row, count * row)));
}

Tensor Tensor::gather(const std::vector<Index>& rows) const {
  if (shape_.empty() || rows.empty()) throw ShapeError("gather needs a batched tensor and at least one row");
  const Index row = data_.size() / shape_[0];
  Shape s = shape_;
  s[0] = static_cast<int>(rows.size());
  Eigen::VectorXd out(static_cast<Index>(rows.size()) * row);
  for (std::size_t k = 0; k < rows.size(); ++k) {
    if (rows[k] < 0 || rows[k] >= shape_[0]) throw ShapeError("gather row out of range");
    out.segment(static_cast<Index>(k) * row, row) = data_.segment(rows[k] * row, row);
  }
  return Tensor(std::move(s), std::move(out));
}

Tensor Tensor::reshaped(Shape shape) const { return Tensor(std::move(shape), data_); }

}  // namespace knas
