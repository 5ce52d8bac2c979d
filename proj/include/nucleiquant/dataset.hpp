#pragma once

// Lizard-style patch sets: RGB patches as u8 [N, H, W, 3] and label pairs as
// u16 [N, H, W, 2] (channel 0 instance ids, channel 1 class ids).

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <utility>
#include <vector>

#include "nucleiquant/npy.hpp"

namespace nucleiquant {

// One patch worth of labels, stored as two planes in row-major order.
// Instance ids are scoped to the patch and need not be contiguous.
struct LabelMap {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint32_t> instance;
  std::vector<std::uint32_t> cls;

  LabelMap() = default;
  LabelMap(std::size_t h, std::size_t w)
      : height(h), width(w), instance(h * w, 0), cls(h * w, 0) {}

  std::size_t pixels() const { return height * width; }

  friend bool operator==(const LabelMap&, const LabelMap&) = default;
};

// Interleaved HWC u8 image.
struct ImagePatch {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 3;
  std::vector<std::uint8_t> pixels;

  friend bool operator==(const ImagePatch&, const ImagePatch&) = default;
};

// Throws Error(kLabelInconsistency) unless: class ids lie in 0..num_classes,
// instance 0 <=> class 0 at every pixel, and every instance id carries a
// single class.
void validate_labels(const LabelMap& labels, int num_classes);

class LabeledPatchSet {
 public:
  // Validates eagerly; see load_patch_set for the error kinds.
  LabeledPatchSet(NpyArray images, NpyArray labels, int num_classes);

  std::size_t size() const { return count_; }
  std::size_t height() const { return height_; }
  std::size_t width() const { return width_; }
  int num_classes() const { return num_classes_; }

  const NpyArray& images() const { return images_; }
  const NpyArray& labels() const { return labels_; }

  ImagePatch image(std::size_t index) const;
  LabelMap label(std::size_t index) const;

 private:
  NpyArray images_;
  NpyArray labels_;
  int num_classes_;
  std::size_t count_ = 0;
  std::size_t height_ = 0;
  std::size_t width_ = 0;
};

// Label arrays alone (u16 [N, H, W, 2]); used by evaluation and counting.
std::vector<LabelMap> labels_from_array(const NpyArray& labels, int num_classes);
NpyArray labels_to_array(std::span<const LabelMap> maps);

std::vector<ImagePatch> images_from_array(const NpyArray& images);
NpyArray images_to_array(std::span<const ImagePatch> images);

// Errors: DtypeMismatch, ShapeMismatch, LabelInconsistency (plus codec errors).
LabeledPatchSet load_patch_set(std::span<const std::byte> image_bytes,
                               std::span<const std::byte> label_bytes,
                               int num_classes);

struct SplitSpec {
  double train_fraction = 0.8;
  std::uint64_t seed = 0;
};

struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

// Seeded Fisher-Yates shuffle of 0..n-1, then a prefix of
// round(train_fraction * n) indices goes to train.
Split split(std::size_t n, const SplitSpec& spec);

enum class AugmentOp { kIdentity, kHFlip, kVFlip, kRot90, kRot180, kRot270 };

inline constexpr AugmentOp kAllAugmentOps[] = {
    AugmentOp::kIdentity, AugmentOp::kHFlip,  AugmentOp::kVFlip,
    AugmentOp::kRot90,    AugmentOp::kRot180, AugmentOp::kRot270};

std::string_view to_string(AugmentOp op);

// Rotations are counter-clockwise (np.rot90 convention). Nearest-neighbour
// by construction: every op is a permutation of pixel positions.
ImagePatch augment(const ImagePatch& image, AugmentOp op);
LabelMap augment(const LabelMap& labels, AugmentOp op);
std::pair<ImagePatch, LabelMap> augment(const ImagePatch& image,
                                        const LabelMap& labels, AugmentOp op);

// Entry t-1 is the number of distinct instances of class t.
std::vector<std::size_t> class_counts(const LabelMap& labels, int num_classes);

}  // namespace nucleiquant
