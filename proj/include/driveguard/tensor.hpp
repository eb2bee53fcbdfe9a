#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace driveguard {

/// Raised when a caller breaks an operation's preconditions (shape
/// mismatches, out-of-range arguments, stale graphs, malformed files).
class ContractViolation : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

template <typename... Parts>
[[noreturn]] void fail(const Parts&... parts) {
  std::ostringstream os;
  (os << ... << parts);
  throw ContractViolation(os.str());
}

template <typename... Parts>
void require(bool condition, const Parts&... parts) {
  if (!condition) fail(parts...);
}

}  // namespace detail

using Shape = std::vector<std::size_t>;

inline std::string to_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

inline std::size_t element_count(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

/// Dense row-major array. Images use the NCHW layout
/// (batch x channels x height x width).
template <typename T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor() = default;

  explicit BasicTensor(Shape shape, T fill = T{0}) : shape_(std::move(shape)) {
    validate_shape();
    data_.assign(element_count(shape_), fill);
  }

  BasicTensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    validate_shape();
    detail::require(data_.size() == element_count(shape_), "tensor data length ", data_.size(),
                    " does not match shape ", to_string(shape_));
  }

  static BasicTensor zeros(Shape shape) { return BasicTensor(std::move(shape), T{0}); }
  static BasicTensor full(Shape shape, T value) { return BasicTensor(std::move(shape), value); }

  [[nodiscard]] bool empty() const { return data_.empty(); }
  [[nodiscard]] const Shape& shape() const { return shape_; }
  [[nodiscard]] std::size_t rank() const { return shape_.size(); }
  [[nodiscard]] std::size_t size() const { return data_.size(); }
  [[nodiscard]] std::size_t dim(std::size_t axis) const {
    detail::require(axis < shape_.size(), "axis ", axis, " out of range for shape ", to_string(shape_));
    return shape_[axis];
  }

  // NCHW accessors; only meaningful on rank-4 tensors.
  [[nodiscard]] std::size_t batch() const { return dim(0); }
  [[nodiscard]] std::size_t channels() const { return dim(1); }
  [[nodiscard]] std::size_t height() const { return dim(2); }
  [[nodiscard]] std::size_t width() const { return dim(3); }

  [[nodiscard]] std::span<T> data() { return data_; }
  [[nodiscard]] std::span<const T> data() const { return data_; }
  [[nodiscard]] const std::vector<T>& values() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  T& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
    return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }
  const T& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }

  /// Contiguous H*W plane of image n, channel c.
  std::span<T> plane(std::size_t n, std::size_t c) {
    const std::size_t hw = shape_[2] * shape_[3];
    return std::span<T>(data_).subspan((n * shape_[1] + c) * hw, hw);
  }
  std::span<const T> plane(std::size_t n, std::size_t c) const {
    const std::size_t hw = shape_[2] * shape_[3];
    return std::span<const T>(data_).subspan((n * shape_[1] + c) * hw, hw);
  }

  void fill(T value) { std::fill(data_.begin(), data_.end(), value); }

  template <typename U>
  [[nodiscard]] BasicTensor<U> cast() const {
    std::vector<U> out(data_.size());
    std::transform(data_.begin(), data_.end(), out.begin(), [](T v) { return static_cast<U>(v); });
    return BasicTensor<U>(shape_, std::move(out));
  }

  [[nodiscard]] bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
  }

  /// Slice [begin, end) along axis 0.
  [[nodiscard]] BasicTensor slice_batch(std::size_t begin, std::size_t end) const {
    detail::require(rank() >= 1 && begin < end && end <= shape_[0], "invalid batch slice");
    const std::size_t stride = data_.size() / shape_[0];
    Shape s = shape_;
    s[0] = end - begin;
    return BasicTensor(std::move(s), std::vector<T>(data_.begin() + begin * stride, data_.begin() + end * stride));
  }

  friend bool operator==(const BasicTensor& a, const BasicTensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  void validate_shape() const {
    for (std::size_t extent : shape_) {
      detail::require(extent > 0, "tensor extents must be positive, got ", to_string(shape_));
    }
  }

  Shape shape_;
  std::vector<T> data_;
};

using Tensor = BasicTensor<float>;

/// Stack rank-4 tensors with identical C/H/W along the batch axis.
template <typename T>
BasicTensor<T> stack_batch(std::span<const BasicTensor<T>> items) {
  detail::require(!items.empty(), "stack_batch: no tensors");
  Shape s = items.front().shape();
  std::size_t total = 0;
  for (const auto& t : items) {
    detail::require(t.rank() == s.size() && std::equal(s.begin() + 1, s.end(), t.shape().begin() + 1),
                    "stack_batch: shape mismatch ", to_string(t.shape()), " vs ", to_string(s));
    total += t.shape()[0];
  }
  s[0] = total;
  std::vector<T> data;
  data.reserve(element_count(s));
  for (const auto& t : items) data.insert(data.end(), t.data().begin(), t.data().end());
  return BasicTensor<T>(std::move(s), std::move(data));
}

template <typename T>
BasicTensor<T> stack_batch(const std::vector<BasicTensor<T>>& items) {
  return stack_batch(std::span<const BasicTensor<T>>(items));
}

}  // namespace driveguard
