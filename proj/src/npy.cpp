#include "nucleiquant/npy.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <cstring>
#include <fstream>
#include <functional>
#include <iterator>
#include <numeric>

#include "nucleiquant/error.hpp"

namespace nucleiquant {

static_assert(std::endian::native == std::endian::little,
              "payloads are copied verbatim; big-endian hosts unsupported");

namespace {

constexpr char kMagic[] = "\x93NUMPY";
constexpr std::size_t kMagicLen = 6;
constexpr std::size_t kArrayAlign = 64;
constexpr std::size_t kGrowthAxisMaxDigits = 21;

std::size_t product(std::span<const std::size_t> shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

std::string shape_repr(std::span<const std::size_t> shape) {
  std::string out = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i > 0) out += ", ";
    out += std::to_string(shape[i]);
  }
  if (shape.size() == 1) out += ",";
  out += ")";
  return out;
}

Dtype parse_descr(std::string_view text) {
  if (text == "|u1" || text == "<u1") return Dtype::kU8;
  if (text == "<u2") return Dtype::kU16;
  if (text == "<i8") return Dtype::kI64;
  if (text == "<f4") return Dtype::kF32;
  if (text == "<f8") return Dtype::kF64;
  throw Error(ErrorKind::kUnsupportedDtype, "descr '" + std::string(text) + "'");
}

// Minimal scanner over the Python dict literal in the header.
class HeaderScanner {
 public:
  explicit HeaderScanner(std::string_view text) : text_(text) {}

  void skip_space() {
    while (pos_ < text_.size() &&
           std::isspace(static_cast<unsigned char>(text_[pos_]))) {
      ++pos_;
    }
  }

  bool consume(char c) {
    skip_space();
    if (pos_ < text_.size() && text_[pos_] == c) {
      ++pos_;
      return true;
    }
    return false;
  }

  void expect(char c) {
    if (!consume(c)) fail(std::string("expected '") + c + "'");
  }

  std::string_view quoted() {
    skip_space();
    if (pos_ >= text_.size() || (text_[pos_] != '\'' && text_[pos_] != '"')) {
      fail("expected string");
    }
    const char quote = text_[pos_++];
    const std::size_t end = text_.find(quote, pos_);
    if (end == std::string_view::npos) fail("unterminated string");
    std::string_view out = text_.substr(pos_, end - pos_);
    pos_ = end + 1;
    return out;
  }

  std::string_view word() {
    skip_space();
    const std::size_t start = pos_;
    while (pos_ < text_.size() &&
           std::isalnum(static_cast<unsigned char>(text_[pos_]))) {
      ++pos_;
    }
    if (start == pos_) fail("expected identifier or number");
    return text_.substr(start, pos_ - start);
  }

  std::vector<std::size_t> tuple() {
    expect('(');
    std::vector<std::size_t> out;
    while (!consume(')')) {
      const std::string_view digits = word();
      std::size_t value = 0;
      for (char c : digits) {
        if (!std::isdigit(static_cast<unsigned char>(c))) fail("bad extent");
        value = value * 10 + static_cast<std::size_t>(c - '0');
      }
      out.push_back(value);
      if (!consume(',')) {
        expect(')');
        break;
      }
    }
    return out;
  }

  [[noreturn]] void fail(const std::string& what) const {
    throw Error(ErrorKind::kParse,
                "npy header: " + what + " at offset " + std::to_string(pos_));
  }

 private:
  std::string_view text_;
  std::size_t pos_ = 0;
};

struct Header {
  Dtype dtype = Dtype::kU8;
  bool fortran_order = false;
  std::vector<std::size_t> shape;
};

Header parse_header(std::string_view text) {
  HeaderScanner scan(text);
  Header header;
  bool have_descr = false, have_order = false, have_shape = false;
  scan.expect('{');
  while (!scan.consume('}')) {
    const std::string_view key = scan.quoted();
    scan.expect(':');
    if (key == "descr") {
      header.dtype = parse_descr(scan.quoted());
      have_descr = true;
    } else if (key == "fortran_order") {
      const std::string_view value = scan.word();
      if (value != "True" && value != "False") scan.fail("bad fortran_order");
      header.fortran_order = value == "True";
      have_order = true;
    } else if (key == "shape") {
      header.shape = scan.tuple();
      have_shape = true;
    } else {
      scan.fail("unknown key '" + std::string(key) + "'");
    }
    if (!scan.consume(',')) {
      scan.expect('}');
      break;
    }
  }
  if (!have_descr || !have_order || !have_shape) scan.fail("missing key");
  return header;
}

template <class T>
std::vector<T> decode_payload(std::span<const std::byte> payload, std::size_t count) {
  std::vector<T> out(count);
  if (count > 0) std::memcpy(out.data(), payload.data(), count * sizeof(T));
  return out;
}

}  // namespace

std::string_view descr(Dtype dtype) {
  switch (dtype) {
    case Dtype::kU8: return "|u1";
    case Dtype::kU16: return "<u2";
    case Dtype::kI64: return "<i8";
    case Dtype::kF32: return "<f4";
    case Dtype::kF64: return "<f8";
  }
  return "?";
}

std::size_t item_size(Dtype dtype) {
  switch (dtype) {
    case Dtype::kU8: return 1;
    case Dtype::kU16: return 2;
    case Dtype::kI64: return 8;
    case Dtype::kF32: return 4;
    case Dtype::kF64: return 8;
  }
  return 0;
}

std::span<const std::byte> NpyArray::bytes() const {
  return std::visit(
      [](const auto& v) { return std::as_bytes(std::span(v.data(), v.size())); },
      data_);
}

std::size_t NpyArray::element_count() const {
  return std::visit([](const auto& v) { return v.size(); }, data_);
}

double NpyArray::as_double(std::size_t i) const {
  return std::visit([i](const auto& v) { return static_cast<double>(v.at(i)); },
                    data_);
}

void NpyArray::check_extent() const {
  if (product(shape_) != element_count()) {
    throw Error(ErrorKind::kHeaderShapeMismatch,
                "shape " + shape_repr(shape_) + " holds " +
                    std::to_string(product(shape_)) + " elements, buffer has " +
                    std::to_string(element_count()));
  }
}

std::string npy_header_text(Dtype dtype, std::span<const std::size_t> shape,
                            bool fortran_order) {
  std::string dict = "{'descr': '" + std::string(descr(dtype)) +
                     "', 'fortran_order': " + (fortran_order ? "True" : "False") +
                     ", 'shape': " + shape_repr(shape) + ", }";
  if (!shape.empty()) {
    const std::size_t growth_axis = fortran_order ? shape.size() - 1 : 0;
    const std::size_t digits = std::to_string(shape[growth_axis]).size();
    if (digits < kGrowthAxisMaxDigits) {
      dict.append(kGrowthAxisMaxDigits - digits, ' ');
    }
  }
  const std::size_t text_len = dict.size() + 1;
  const std::size_t pad = kArrayAlign - ((kMagicLen + 4 + text_len) % kArrayAlign);
  dict.append(pad, ' ');
  dict.push_back('\n');
  return dict;
}

NpyArray read_npy(std::span<const std::byte> bytes) {
  if (bytes.size() < kMagicLen + 2 ||
      std::memcmp(bytes.data(), kMagic, kMagicLen) != 0) {
    throw Error(ErrorKind::kBadMagic, "not an npy stream");
  }
  const auto major = static_cast<unsigned>(bytes[kMagicLen]);
  const auto minor = static_cast<unsigned>(bytes[kMagicLen + 1]);
  std::size_t len_bytes = 0;
  if (major == 1 && minor == 0) {
    len_bytes = 2;
  } else if (major == 2 && minor == 0) {
    len_bytes = 4;
  } else {
    throw Error(ErrorKind::kParse, "unsupported npy version " +
                                       std::to_string(major) + "." +
                                       std::to_string(minor));
  }
  const std::size_t prefix = kMagicLen + 2 + len_bytes;
  if (bytes.size() < prefix) throw Error(ErrorKind::kParse, "truncated header");
  std::size_t header_len = 0;
  for (std::size_t i = 0; i < len_bytes; ++i) {
    header_len |= static_cast<std::size_t>(bytes[kMagicLen + 2 + i]) << (8 * i);
  }
  if (bytes.size() < prefix + header_len) {
    throw Error(ErrorKind::kParse, "truncated header");
  }
  const std::string_view text(reinterpret_cast<const char*>(bytes.data()) + prefix,
                              header_len);
  const Header header = parse_header(text);

  const std::size_t count = product(header.shape);
  const std::span<const std::byte> payload = bytes.subspan(prefix + header_len);
  if (payload.size() != count * item_size(header.dtype)) {
    throw Error(ErrorKind::kHeaderShapeMismatch,
                "payload has " + std::to_string(payload.size()) +
                    " bytes, shape " + shape_repr(header.shape) + " needs " +
                    std::to_string(count * item_size(header.dtype)));
  }

  switch (header.dtype) {
    case Dtype::kU8:
      return NpyArray(header.shape,
                      decode_payload<std::uint8_t>(payload, count),
                      header.fortran_order);
    case Dtype::kU16:
      return NpyArray(header.shape,
                      decode_payload<std::uint16_t>(payload, count),
                      header.fortran_order);
    case Dtype::kI64:
      return NpyArray(header.shape,
                      decode_payload<std::int64_t>(payload, count),
                      header.fortran_order);
    case Dtype::kF32:
      return NpyArray(header.shape,
                      decode_payload<float>(payload, count),
                      header.fortran_order);
    case Dtype::kF64:
      return NpyArray(header.shape,
                      decode_payload<double>(payload, count),
                      header.fortran_order);
  }
  throw Error(ErrorKind::kUnsupportedDtype, "unreachable");
}

std::vector<std::byte> write_npy(const NpyArray& array) {
  const std::string header =
      npy_header_text(array.dtype(), array.shape(), array.fortran_order());
  if (header.size() > 0xFFFF) {
    throw Error(ErrorKind::kShapeError, "header does not fit a version 1.0 file");
  }
  const std::size_t payload_bytes = array.element_count() * item_size(array.dtype());
  std::vector<std::byte> out;
  out.reserve(kMagicLen + 4 + header.size() + payload_bytes);
  for (std::size_t i = 0; i < kMagicLen; ++i) {
    out.push_back(static_cast<std::byte>(kMagic[i]));
  }
  out.push_back(std::byte{1});
  out.push_back(std::byte{0});
  out.push_back(static_cast<std::byte>(header.size() & 0xFF));
  out.push_back(static_cast<std::byte>(header.size() >> 8));
  for (char c : header) out.push_back(static_cast<std::byte>(c));
  const std::span<const std::byte> payload = array.bytes();
  out.insert(out.end(), payload.begin(), payload.end());
  return out;
}

NpyArray load_npy_file(const std::string& path) {
  const std::vector<std::byte> bytes = read_file_bytes(path);
  return read_npy(bytes);
}

void save_npy_file(const std::string& path, const NpyArray& array) {
  write_file_bytes(path, write_npy(array));
}

std::vector<std::byte> read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::kParse, "cannot open " + path);
  std::vector<char> raw((std::istreambuf_iterator<char>(in)),
                        std::istreambuf_iterator<char>());
  std::vector<std::byte> out(raw.size());
  if (!raw.empty()) std::memcpy(out.data(), raw.data(), raw.size());
  return out;
}

void write_file_bytes(const std::string& path, std::span<const std::byte> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::kParse, "cannot write " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorKind::kParse, "short write to " + path);
}

}  // namespace nucleiquant
