#pragma once

// Seeded synthetic nuclei: discs of random radius and class over a noisy
// background, with class-specific stain colours so that a small network
// can learn the mapping.

#include <cstddef>
#include <cstdint>
#include <vector>

#include "nucleiquant/dataset.hpp"
#include "nucleiquant/rng.hpp"

namespace nucleiquant {

struct Nucleus {
  double cy = 0.0;
  double cx = 0.0;
  double radius = 1.0;
  std::uint32_t cls = 1;
};

std::vector<Nucleus> random_nuclei(Rng& rng, std::size_t height, std::size_t width,
                                   int num_classes, std::size_t count);

// Nucleus i gets instance id i + 1; earlier nuclei keep contested pixels.
LabelMap rasterize(const std::vector<Nucleus>& nuclei, std::size_t height,
                   std::size_t width);

ImagePatch render(const LabelMap& labels, Rng& rng);

struct SyntheticSpec {
  std::size_t count = 8;
  std::size_t height = 32;
  std::size_t width = 32;
  int num_classes = 6;
  std::size_t max_nuclei = 6;
  std::uint64_t seed = 7;
};

struct SyntheticSet {
  std::vector<ImagePatch> images;
  std::vector<LabelMap> labels;
};

SyntheticSet make_synthetic_set(const SyntheticSpec& spec);

struct FixturePair {
  LabelMap gt;
  LabelMap pred;
};

// A ground-truth map and a prediction derived from it by jittering,
// dropping, adding and re-classing nuclei, with instance ids shuffled.
FixturePair random_fixture_pair(std::size_t height, std::size_t width,
                                int num_classes, std::uint64_t seed);

}  // namespace nucleiquant
