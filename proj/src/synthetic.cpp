#include "nucleiquant/synthetic.hpp"

#include <algorithm>
#include <array>
#include <numeric>

namespace nucleiquant {

std::vector<Nucleus> random_nuclei(Rng& rng, std::size_t height, std::size_t width,
                                   int num_classes, std::size_t count) {
  std::vector<Nucleus> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    Nucleus n;
    n.cy = rng.uniform(0.0, static_cast<double>(height));
    n.cx = rng.uniform(0.0, static_cast<double>(width));
    n.radius = rng.uniform(1.5, 4.5);
    n.cls = static_cast<std::uint32_t>(1 + rng.below(static_cast<std::uint64_t>(num_classes)));
    out.push_back(n);
  }
  return out;
}

LabelMap rasterize(const std::vector<Nucleus>& nuclei, std::size_t height,
                   std::size_t width) {
  LabelMap out(height, width);
  for (std::size_t i = 0; i < nuclei.size(); ++i) {
    const Nucleus& n = nuclei[i];
    for (std::size_t y = 0; y < height; ++y) {
      for (std::size_t x = 0; x < width; ++x) {
        const double dy = static_cast<double>(y) + 0.5 - n.cy;
        const double dx = static_cast<double>(x) + 0.5 - n.cx;
        const std::size_t p = y * width + x;
        if (dy * dy + dx * dx <= n.radius * n.radius && out.instance[p] == 0) {
          out.instance[p] = static_cast<std::uint32_t>(i + 1);
          out.cls[p] = n.cls;
        }
      }
    }
  }
  return out;
}

ImagePatch render(const LabelMap& labels, Rng& rng) {
  // Background plus one colour per class, cycling after six.
  static constexpr std::array<std::array<int, 3>, 7> kPalette = {{
      {230, 190, 215},
      {90, 40, 140},
      {180, 80, 110},
      {40, 30, 90},
      {120, 60, 170},
      {200, 120, 60},
      {60, 130, 160},
  }};
  ImagePatch image{labels.height, labels.width, 3,
                   std::vector<std::uint8_t>(labels.pixels() * 3)};
  for (std::size_t p = 0; p < labels.pixels(); ++p) {
    const std::size_t cls = labels.cls[p];
    const auto& colour = kPalette[cls == 0 ? 0 : 1 + (cls - 1) % 6];
    for (std::size_t c = 0; c < 3; ++c) {
      const double v = colour[c] + rng.uniform(-12.0, 12.0);
      image.pixels[p * 3 + c] = static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0));
    }
  }
  return image;
}

SyntheticSet make_synthetic_set(const SyntheticSpec& spec) {
  Rng rng(spec.seed);
  SyntheticSet set;
  for (std::size_t i = 0; i < spec.count; ++i) {
    const std::size_t k = 1 + rng.below(std::max<std::size_t>(spec.max_nuclei, 1));
    const auto nuclei = random_nuclei(rng, spec.height, spec.width, spec.num_classes, k);
    set.labels.push_back(rasterize(nuclei, spec.height, spec.width));
    set.images.push_back(render(set.labels.back(), rng));
  }
  return set;
}

FixturePair random_fixture_pair(std::size_t height, std::size_t width,
                                int num_classes, std::uint64_t seed) {
  Rng rng(seed);
  const std::size_t count = rng.below(9);
  std::vector<Nucleus> gt = random_nuclei(rng, height, width, num_classes, count);
  std::vector<Nucleus> pred;
  for (const Nucleus& n : gt) {
    const double r = rng.uniform();
    if (r < 0.15) continue;  // missed
    Nucleus m = n;
    m.cy += rng.uniform(-1.5, 1.5);
    m.cx += rng.uniform(-1.5, 1.5);
    m.radius = std::max(1.0, m.radius + rng.uniform(-1.0, 1.0));
    if (rng.uniform() < 0.15) {
      m.cls = static_cast<std::uint32_t>(1 + rng.below(static_cast<std::uint64_t>(num_classes)));
    }
    pred.push_back(m);
  }
  const auto extra = random_nuclei(rng, height, width, num_classes, rng.below(3));
  pred.insert(pred.end(), extra.begin(), extra.end());

  FixturePair out{rasterize(gt, height, width), rasterize(pred, height, width)};
  // Shuffle the prediction's ids so they share no ordering with the gt.
  std::vector<std::uint32_t> perm(pred.size() + 1);
  std::iota(perm.begin(), perm.end(), 0u);
  for (std::size_t i = perm.size() - 1; i > 1; --i) {
    std::swap(perm[i], perm[1 + rng.below(i)]);
  }
  for (auto& id : out.pred.instance) id = id == 0 ? 0 : perm[id] + 100;
  return out;
}

}  // namespace nucleiquant
