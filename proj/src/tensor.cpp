#include "nucleiquant/tensor.hpp"

#include <algorithm>
#include <string>
#include <utility>

#include "nucleiquant/error.hpp"

namespace nucleiquant {

Tensor4::Tensor4(Shape4 shape, std::vector<double> data)
    : shape_(shape), data_(std::move(data)) {
  if (data_.size() != shape_.size()) {
    throw Error(ErrorKind::kShapeError,
                "buffer of " + std::to_string(data_.size()) +
                    " values for shape of " + std::to_string(shape_.size()));
  }
}

Tensor4 Tensor4::slice_batch(std::size_t first, std::size_t count) const {
  if (first + count > shape_.n) {
    throw Error(ErrorKind::kShapeError, "batch slice out of range");
  }
  const std::size_t stride = shape_.c * shape_.h * shape_.w;
  Shape4 s = shape_;
  s.n = count;
  return Tensor4(s, std::vector<double>(data_.begin() + first * stride,
                                        data_.begin() + (first + count) * stride));
}

Tensor4 concat_channels(const Tensor4& a, const Tensor4& b) {
  const Shape4& sa = a.shape();
  const Shape4& sb = b.shape();
  if (sa.n != sb.n || sa.h != sb.h || sa.w != sb.w) {
    throw Error(ErrorKind::kShapeError, "concat of mismatched tensors");
  }
  Tensor4 out({sa.n, sa.c + sb.c, sa.h, sa.w});
  const std::size_t plane = sa.h * sa.w;
  auto dst = out.data().begin();
  for (std::size_t n = 0; n < sa.n; ++n) {
    auto pa = a.data().begin() + n * sa.c * plane;
    auto pb = b.data().begin() + n * sb.c * plane;
    dst = std::copy(pa, pa + sa.c * plane, dst);
    dst = std::copy(pb, pb + sb.c * plane, dst);
  }
  return out;
}

std::pair<Tensor4, Tensor4> split_channels(const Tensor4& t, std::size_t channels) {
  const Shape4& s = t.shape();
  if (channels > s.c) throw Error(ErrorKind::kShapeError, "split past channel count");
  Tensor4 a({s.n, channels, s.h, s.w});
  Tensor4 b({s.n, s.c - channels, s.h, s.w});
  const std::size_t plane = s.h * s.w;
  auto da = a.data().begin();
  auto db = b.data().begin();
  for (std::size_t n = 0; n < s.n; ++n) {
    auto src = t.data().begin() + n * s.c * plane;
    da = std::copy(src, src + channels * plane, da);
    db = std::copy(src + channels * plane, src + s.c * plane, db);
  }
  return {std::move(a), std::move(b)};
}

Tensor4 stack_batch(std::span<const Tensor4> parts) {
  if (parts.empty()) return Tensor4();
  Shape4 out = parts.front().shape();
  out.n = 0;
  std::vector<double> data;
  for (const Tensor4& part : parts) {
    const Shape4& p = part.shape();
    if (p.c != out.c || p.h != out.h || p.w != out.w) {
      throw Error(ErrorKind::kShapeError, "stack of mismatched tensors");
    }
    out.n += p.n;
    data.insert(data.end(), part.data().begin(), part.data().end());
  }
  return Tensor4(out, std::move(data));
}

double dot(const Tensor4& a, const Tensor4& b) {
  if (a.shape() != b.shape()) throw Error(ErrorKind::kShapeError, "dot of mismatched tensors");
  double sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) sum += a.data()[i] * b.data()[i];
  return sum;
}

}  // namespace nucleiquant
