#include "nucleiquant/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <unordered_map>

#include "nucleiquant/error.hpp"
#include "nucleiquant/rng.hpp"

namespace nucleiquant {

namespace {

std::string shape_string(const std::vector<std::size_t>& shape) {
  std::string out = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i > 0) out += ", ";
    out += std::to_string(shape[i]);
  }
  return out + ")";
}

void require_rank4(const NpyArray& array, std::size_t channels,
                   std::string_view what) {
  const auto& shape = array.shape();
  if (shape.size() != 4 || shape[3] != channels) {
    throw Error(ErrorKind::kShapeMismatch,
                std::string(what) + " must be [N, H, W, " +
                    std::to_string(channels) + "], got " + shape_string(shape));
  }
}

// Source coordinate for destination (y, x) of an output with extents
// (out_h, out_w), given source extents (h, w).
struct CoordMap {
  AugmentOp op;
  std::size_t h, w;

  std::size_t out_height() const {
    return (op == AugmentOp::kRot90 || op == AugmentOp::kRot270) ? w : h;
  }
  std::size_t out_width() const {
    return (op == AugmentOp::kRot90 || op == AugmentOp::kRot270) ? h : w;
  }

  std::size_t source(std::size_t y, std::size_t x) const {
    switch (op) {
      case AugmentOp::kIdentity: return y * w + x;
      case AugmentOp::kHFlip: return y * w + (w - 1 - x);
      case AugmentOp::kVFlip: return (h - 1 - y) * w + x;
      case AugmentOp::kRot90: return x * w + (w - 1 - y);
      case AugmentOp::kRot180: return (h - 1 - y) * w + (w - 1 - x);
      case AugmentOp::kRot270: return (h - 1 - x) * w + y;
    }
    return 0;
  }
};

template <class T>
std::vector<T> remap(std::span<const T> src, const CoordMap& map,
                     std::size_t channels) {
  std::vector<T> out(src.size());
  const std::size_t oh = map.out_height(), ow = map.out_width();
  for (std::size_t y = 0; y < oh; ++y) {
    for (std::size_t x = 0; x < ow; ++x) {
      const std::size_t s = map.source(y, x) * channels;
      const std::size_t d = (y * ow + x) * channels;
      for (std::size_t c = 0; c < channels; ++c) out[d + c] = src[s + c];
    }
  }
  return out;
}

}  // namespace

void validate_labels(const LabelMap& labels, int num_classes) {
  std::unordered_map<std::uint32_t, std::uint32_t> owner;
  for (std::size_t i = 0; i < labels.pixels(); ++i) {
    const std::uint32_t id = labels.instance[i];
    const std::uint32_t cls = labels.cls[i];
    if (cls > static_cast<std::uint32_t>(num_classes)) {
      throw Error(ErrorKind::kLabelInconsistency,
                  "class id " + std::to_string(cls) + " exceeds " +
                      std::to_string(num_classes) + " at pixel " +
                      std::to_string(i));
    }
    if ((id == 0) != (cls == 0)) {
      throw Error(ErrorKind::kLabelInconsistency,
                  "instance " + std::to_string(id) + " paired with class " +
                      std::to_string(cls) + " at pixel " + std::to_string(i));
    }
    if (id == 0) continue;
    const auto [it, inserted] = owner.emplace(id, cls);
    if (!inserted && it->second != cls) {
      throw Error(ErrorKind::kLabelInconsistency,
                  "instance " + std::to_string(id) + " spans classes " +
                      std::to_string(it->second) + " and " + std::to_string(cls));
    }
  }
}

LabeledPatchSet::LabeledPatchSet(NpyArray images, NpyArray labels,
                                 int num_classes)
    : images_(std::move(images)), labels_(std::move(labels)),
      num_classes_(num_classes) {
  if (!images_.holds<std::uint8_t>()) {
    throw Error(ErrorKind::kDtypeMismatch,
                "images must be |u1, got " + std::string(descr(images_.dtype())));
  }
  if (!labels_.holds<std::uint16_t>()) {
    throw Error(ErrorKind::kDtypeMismatch,
                "labels must be <u2, got " + std::string(descr(labels_.dtype())));
  }
  if (images_.fortran_order() || labels_.fortran_order()) {
    throw Error(ErrorKind::kShapeMismatch, "fortran-ordered arrays unsupported");
  }
  require_rank4(images_, 3, "images");
  require_rank4(labels_, 2, "labels");
  const auto& is = images_.shape();
  const auto& ls = labels_.shape();
  if (is[0] != ls[0] || is[1] != ls[1] || is[2] != ls[2]) {
    throw Error(ErrorKind::kShapeMismatch, "images " + shape_string(is) +
                                               " vs labels " + shape_string(ls));
  }
  count_ = is[0];
  height_ = is[1];
  width_ = is[2];
  for (std::size_t n = 0; n < count_; ++n) {
    validate_labels(label(n), num_classes_);
  }
}

ImagePatch LabeledPatchSet::image(std::size_t index) const {
  const std::size_t stride = height_ * width_ * 3;
  const auto src = images_.values<std::uint8_t>().subspan(index * stride, stride);
  return ImagePatch{height_, width_, 3, {src.begin(), src.end()}};
}

LabelMap LabeledPatchSet::label(std::size_t index) const {
  const std::size_t pixels = height_ * width_;
  const auto src = labels_.values<std::uint16_t>().subspan(index * pixels * 2,
                                                           pixels * 2);
  LabelMap out(height_, width_);
  for (std::size_t i = 0; i < pixels; ++i) {
    out.instance[i] = src[2 * i];
    out.cls[i] = src[2 * i + 1];
  }
  return out;
}

std::vector<LabelMap> labels_from_array(const NpyArray& labels,
                                        int num_classes) {
  if (!labels.holds<std::uint16_t>()) {
    throw Error(ErrorKind::kDtypeMismatch,
                "labels must be <u2, got " + std::string(descr(labels.dtype())));
  }
  require_rank4(labels, 2, "labels");
  const auto& s = labels.shape();
  const std::size_t pixels = s[1] * s[2];
  const auto values = labels.values<std::uint16_t>();
  std::vector<LabelMap> out;
  out.reserve(s[0]);
  for (std::size_t n = 0; n < s[0]; ++n) {
    LabelMap map(s[1], s[2]);
    const auto src = values.subspan(n * pixels * 2, pixels * 2);
    for (std::size_t i = 0; i < pixels; ++i) {
      map.instance[i] = src[2 * i];
      map.cls[i] = src[2 * i + 1];
    }
    validate_labels(map, num_classes);
    out.push_back(std::move(map));
  }
  return out;
}

NpyArray labels_to_array(std::span<const LabelMap> maps) {
  const std::size_t h = maps.empty() ? 0 : maps.front().height;
  const std::size_t w = maps.empty() ? 0 : maps.front().width;
  std::vector<std::uint16_t> data;
  data.reserve(maps.size() * h * w * 2);
  for (const LabelMap& map : maps) {
    if (map.height != h || map.width != w) {
      throw Error(ErrorKind::kShapeMismatch, "label maps differ in extent");
    }
    for (std::size_t i = 0; i < map.pixels(); ++i) {
      if (map.instance[i] > 0xFFFF || map.cls[i] > 0xFFFF) {
        throw Error(ErrorKind::kShapeError, "label id exceeds u16 range");
      }
      data.push_back(static_cast<std::uint16_t>(map.instance[i]));
      data.push_back(static_cast<std::uint16_t>(map.cls[i]));
    }
  }
  return NpyArray({maps.size(), h, w, 2}, std::move(data));
}

std::vector<ImagePatch> images_from_array(const NpyArray& images) {
  if (!images.holds<std::uint8_t>()) {
    throw Error(ErrorKind::kDtypeMismatch,
                "images must be |u1, got " + std::string(descr(images.dtype())));
  }
  require_rank4(images, 3, "images");
  const auto& s = images.shape();
  const std::size_t stride = s[1] * s[2] * 3;
  const auto values = images.values<std::uint8_t>();
  std::vector<ImagePatch> out;
  out.reserve(s[0]);
  for (std::size_t n = 0; n < s[0]; ++n) {
    const auto src = values.subspan(n * stride, stride);
    out.push_back(ImagePatch{s[1], s[2], 3, {src.begin(), src.end()}});
  }
  return out;
}

NpyArray images_to_array(std::span<const ImagePatch> images) {
  const std::size_t h = images.empty() ? 0 : images.front().height;
  const std::size_t w = images.empty() ? 0 : images.front().width;
  std::vector<std::uint8_t> data;
  data.reserve(images.size() * h * w * 3);
  for (const ImagePatch& image : images) {
    if (image.height != h || image.width != w || image.channels != 3) {
      throw Error(ErrorKind::kShapeMismatch, "images differ in extent");
    }
    data.insert(data.end(), image.pixels.begin(), image.pixels.end());
  }
  return NpyArray({images.size(), h, w, 3}, std::move(data));
}

LabeledPatchSet load_patch_set(std::span<const std::byte> image_bytes,
                               std::span<const std::byte> label_bytes,
                               int num_classes) {
  return LabeledPatchSet(read_npy(image_bytes), read_npy(label_bytes),
                         num_classes);
}

Split split(std::size_t n, const SplitSpec& spec) {
  if (n < 2) throw Error(ErrorKind::kConfigError, "split needs n >= 2");
  if (!(spec.train_fraction > 0.0 && spec.train_fraction < 1.0)) {
    throw Error(ErrorKind::kConfigError, "train_fraction must lie in (0, 1)");
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(spec.seed);
  for (std::size_t i = n - 1; i > 0; --i) {
    std::swap(order[i], order[rng.below(i + 1)]);
  }
  const auto train_count = static_cast<std::size_t>(
      std::llround(spec.train_fraction * static_cast<double>(n)));
  Split out;
  out.train.assign(order.begin(), order.begin() + train_count);
  out.test.assign(order.begin() + train_count, order.end());
  return out;
}

std::string_view to_string(AugmentOp op) {
  switch (op) {
    case AugmentOp::kIdentity: return "identity";
    case AugmentOp::kHFlip: return "h_flip";
    case AugmentOp::kVFlip: return "v_flip";
    case AugmentOp::kRot90: return "rot90";
    case AugmentOp::kRot180: return "rot180";
    case AugmentOp::kRot270: return "rot270";
  }
  return "?";
}

ImagePatch augment(const ImagePatch& image, AugmentOp op) {
  const CoordMap map{op, image.height, image.width};
  return ImagePatch{map.out_height(), map.out_width(), image.channels,
                    remap<std::uint8_t>(image.pixels, map, image.channels)};
}

LabelMap augment(const LabelMap& labels, AugmentOp op) {
  const CoordMap map{op, labels.height, labels.width};
  LabelMap out;
  out.height = map.out_height();
  out.width = map.out_width();
  out.instance = remap<std::uint32_t>(labels.instance, map, 1);
  out.cls = remap<std::uint32_t>(labels.cls, map, 1);
  return out;
}

std::pair<ImagePatch, LabelMap> augment(const ImagePatch& image,
                                        const LabelMap& labels, AugmentOp op) {
  if (image.height != labels.height || image.width != labels.width) {
    throw Error(ErrorKind::kShapeMismatch, "image and labels differ in extent");
  }
  return {augment(image, op), augment(labels, op)};
}

std::vector<std::size_t> class_counts(const LabelMap& labels, int num_classes) {
  std::unordered_map<std::uint32_t, std::uint32_t> owner;
  for (std::size_t i = 0; i < labels.pixels(); ++i) {
    if (labels.instance[i] != 0) owner.emplace(labels.instance[i], labels.cls[i]);
  }
  std::vector<std::size_t> counts(static_cast<std::size_t>(num_classes), 0);
  for (const auto& [id, cls] : owner) {
    if (cls >= 1 && cls <= static_cast<std::uint32_t>(num_classes)) {
      ++counts[cls - 1];
    }
  }
  return counts;
}

}  // namespace nucleiquant
