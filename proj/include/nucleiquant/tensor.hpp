#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace nucleiquant {

struct Shape4 {
  std::size_t n = 0, c = 0, h = 0, w = 0;

  std::size_t size() const { return n * c * h * w; }
  friend bool operator==(const Shape4&, const Shape4&) = default;
};

// Dense f64 (n, c, h, w) array, row-major.
class Tensor4 {
 public:
  Tensor4() = default;
  explicit Tensor4(Shape4 shape, double fill = 0.0)
      : shape_(shape), data_(shape.size(), fill) {}
  Tensor4(Shape4 shape, std::vector<double> data);

  const Shape4& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }

  double& operator()(std::size_t n, std::size_t c, std::size_t y, std::size_t x) {
    return data_[((n * shape_.c + c) * shape_.h + y) * shape_.w + x];
  }
  double operator()(std::size_t n, std::size_t c, std::size_t y,
                    std::size_t x) const {
    return data_[((n * shape_.c + c) * shape_.h + y) * shape_.w + x];
  }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }

  // One (h, w) plane.
  std::span<double> plane(std::size_t n, std::size_t c) {
    return std::span(data_).subspan((n * shape_.c + c) * shape_.h * shape_.w,
                                    shape_.h * shape_.w);
  }
  std::span<const double> plane(std::size_t n, std::size_t c) const {
    return std::span(data_).subspan((n * shape_.c + c) * shape_.h * shape_.w,
                                    shape_.h * shape_.w);
  }

  // Samples [first, first + count) as a new tensor.
  Tensor4 slice_batch(std::size_t first, std::size_t count) const;

  friend bool operator==(const Tensor4&, const Tensor4&) = default;

 private:
  Shape4 shape_;
  std::vector<double> data_;
};

// Channel-wise concatenation; batch and spatial extents must agree.
Tensor4 concat_channels(const Tensor4& a, const Tensor4& b);
// Inverse of concat_channels: splits off the first `channels` channels.
std::pair<Tensor4, Tensor4> split_channels(const Tensor4& t, std::size_t channels);

// Stacks equally-shaped tensors along the batch axis.
Tensor4 stack_batch(std::span<const Tensor4> parts);

double dot(const Tensor4& a, const Tensor4& b);

}  // namespace nucleiquant
