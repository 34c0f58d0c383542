#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace darht {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_str(const Shape& shape);

// Dense row-major float32 array. A value type: copies are deep.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape);  // zero-filled
  Tensor(Shape shape, std::vector<float> data);
  Tensor(Shape shape, std::initializer_list<float> data);

  static Tensor scalar(float v);
  static Tensor filled(Shape shape, float v);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<float> data() { return data_; }
  std::span<const float> data() const { return data_; }
  const std::vector<float>& values() const { return data_; }

  float& operator[](std::size_t i) { return data_[i]; }
  float operator[](std::size_t i) const { return data_[i]; }

  // 2-D element access, row-major.
  float& at(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
  float at(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }

  // Value of a single-element tensor.
  float item() const;

  Tensor reshaped(Shape shape) const;

  // Rows [begin, end) along axis 0.
  Tensor rows(std::size_t begin, std::size_t end) const;
  // Gathers rows along axis 0 in the given order.
  Tensor gather_rows(std::span<const std::size_t> index) const;

  bool all_finite() const;

  // Bitwise equality of shape and data.
  bool identical(const Tensor& other) const;

 private:
  Shape shape_;
  std::vector<float> data_;
};

// Throws NumericError naming `where` if any element is NaN/Inf.
void require_finite(const Tensor& t, const char* where);

// Stacks equally-shaped tensors along a new leading axis.
Tensor stack(std::span<const Tensor> items);

// FNV-1a over shape and raw float bytes; used for input-identity logging.
std::uint64_t content_hash(const Tensor& t);

}  // namespace darht
