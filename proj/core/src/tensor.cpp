#include "gft/tensor.hpp"

#include <cmath>
#include <limits>
#include <sstream>

namespace gft {

Shape::Shape(std::initializer_list<std::size_t> dims) : Shape(std::vector<std::size_t>(dims)) {}

Shape::Shape(std::vector<std::size_t> dims) : dims_(std::move(dims)) {
  if (dims_.empty()) throw std::invalid_argument("shape: rank must be at least 1");
  numel_ = 1;
  for (std::size_t d : dims_) {
    if (d == 0) throw std::invalid_argument("shape: zero extent in " + str());
    if (numel_ > std::numeric_limits<std::size_t>::max() / d)
      throw std::invalid_argument("shape: element count overflows");
    numel_ *= d;
  }
}

std::size_t Shape::operator[](std::size_t axis) const {
  if (axis >= dims_.size()) throw std::out_of_range("shape: axis out of range");
  return dims_[axis];
}

std::size_t Shape::outer(std::size_t axis) const {
  std::size_t n = 1;
  for (std::size_t i = 0; i < axis && i < dims_.size(); ++i) n *= dims_[i];
  return n;
}

std::size_t Shape::inner(std::size_t axis) const {
  std::size_t n = 1;
  for (std::size_t i = axis + 1; i < dims_.size(); ++i) n *= dims_[i];
  return n;
}

std::string Shape::str() const {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < dims_.size(); ++i) os << (i ? "x" : "") << dims_[i];
  os << ']';
  return os.str();
}

template <class T>
BasicTensor<T>::BasicTensor(Shape shape, T fill) : shape_(std::move(shape)), data_(shape_.numel(), fill) {}

template <class T>
BasicTensor<T>::BasicTensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (data_.size() != shape_.numel())
    throw std::invalid_argument("tensor: data length " + std::to_string(data_.size()) + " does not match shape " +
                                shape_.str());
}

template <class T>
BasicTensor<T> BasicTensor<T>::from(std::initializer_list<T> values) {
  return BasicTensor(Shape{values.size()}, std::vector<T>(values));
}

template <class T>
BasicTensor<T> BasicTensor<T>::matrix(std::initializer_list<std::initializer_list<T>> rows) {
  const std::size_t m = rows.size();
  const std::size_t n = m ? rows.begin()->size() : 0;
  std::vector<T> data;
  data.reserve(m * n);
  for (const auto& row : rows) {
    if (row.size() != n) throw std::invalid_argument("tensor: ragged matrix literal");
    data.insert(data.end(), row.begin(), row.end());
  }
  return BasicTensor(Shape{m, n}, std::move(data));
}

template <class T>
std::size_t BasicTensor<T>::offset(std::initializer_list<std::size_t> index) const {
  if (index.size() != shape_.rank()) throw std::invalid_argument("tensor: index rank mismatch");
  std::size_t off = 0;
  std::size_t axis = 0;
  for (std::size_t i : index) {
    if (i >= shape_[axis]) throw std::out_of_range("tensor: index out of range");
    off = off * shape_[axis] + i;
    ++axis;
  }
  return off;
}

template <class T>
T& BasicTensor<T>::at(std::initializer_list<std::size_t> index) {
  return data_[offset(index)];
}

template <class T>
const T& BasicTensor<T>::at(std::initializer_list<std::size_t> index) const {
  return data_[offset(index)];
}

template <class T>
BasicTensor<T> BasicTensor<T>::reshaped(Shape shape) const& {
  return BasicTensor(std::move(shape), data_);
}

template <class T>
BasicTensor<T> BasicTensor<T>::reshaped(Shape shape) && {
  return BasicTensor(std::move(shape), std::move(data_));
}

template <class T>
bool BasicTensor<T>::all_finite() const {
  for (T v : data_)
    if (!std::isfinite(v)) return false;
  return true;
}

template class BasicTensor<float>;
template class BasicTensor<double>;

}  // namespace gft
