#pragma once

// Reader/writer for the NumPy .npy container (little-endian, C order).
//
// Files are written in version 1.0 with the same header layout that
// numpy.save produces: the dict text, room for the first axis to grow,
// space padding to a 64-byte boundary and a trailing newline. Reading
// accepts versions 1.0 and 2.0.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace nucleiquant {

enum class Dtype { kU8, kU16, kI64, kF32, kF64 };

std::string_view descr(Dtype dtype);
std::size_t item_size(Dtype dtype);

using NpyBuffer =
    std::variant<std::vector<std::uint8_t>, std::vector<std::uint16_t>,
                 std::vector<std::int64_t>, std::vector<float>,
                 std::vector<double>>;

template <class T>
struct DtypeOf;
template <> struct DtypeOf<std::uint8_t> { static constexpr Dtype value = Dtype::kU8; };
template <> struct DtypeOf<std::uint16_t> { static constexpr Dtype value = Dtype::kU16; };
template <> struct DtypeOf<std::int64_t> { static constexpr Dtype value = Dtype::kI64; };
template <> struct DtypeOf<float> { static constexpr Dtype value = Dtype::kF32; };
template <> struct DtypeOf<double> { static constexpr Dtype value = Dtype::kF64; };

class NpyArray {
 public:
  NpyArray() : NpyArray(std::vector<std::size_t>{0}, std::vector<std::uint8_t>{}) {}

  // Throws Error(kHeaderShapeMismatch) when product(shape) != data.size().
  template <class T>
  NpyArray(std::vector<std::size_t> shape, std::vector<T> data,
           bool fortran_order = false)
      : shape_(std::move(shape)), data_(std::move(data)),
        fortran_order_(fortran_order) {
    check_extent();
  }

  Dtype dtype() const { return static_cast<Dtype>(data_.index()); }
  const std::vector<std::size_t>& shape() const { return shape_; }
  bool fortran_order() const { return fortran_order_; }
  std::size_t element_count() const;

  template <class T>
  std::span<const T> values() const {
    return std::get<std::vector<T>>(data_);
  }
  template <class T>
  std::span<T> values() {
    return std::get<std::vector<T>>(data_);
  }
  template <class T>
  bool holds() const {
    return std::holds_alternative<std::vector<T>>(data_);
  }

  // Payload in native (little-endian) byte order.
  std::span<const std::byte> bytes() const;

  // Element i converted to double, for reporting.
  double as_double(std::size_t i) const;

  friend bool operator==(const NpyArray&, const NpyArray&) = default;

 private:
  void check_extent() const;

  std::vector<std::size_t> shape_;
  NpyBuffer data_;
  bool fortran_order_ = false;
};

// Header text exactly as written by write_npy, including padding and '\n'.
std::string npy_header_text(Dtype dtype, std::span<const std::size_t> shape,
                            bool fortran_order = false);

NpyArray read_npy(std::span<const std::byte> bytes);
std::vector<std::byte> write_npy(const NpyArray& array);

NpyArray load_npy_file(const std::string& path);
void save_npy_file(const std::string& path, const NpyArray& array);

std::vector<std::byte> read_file_bytes(const std::string& path);
void write_file_bytes(const std::string& path, std::span<const std::byte> bytes);

}  // namespace nucleiquant
