#include "nucleiquant/labeling.hpp"

#include <vector>

#include "nucleiquant/error.hpp"

namespace nucleiquant {

LabelMap label_components(std::span<const std::uint32_t> class_map,
                          std::size_t height, std::size_t width,
                          std::size_t min_size) {
  if (class_map.size() != height * width) {
    throw Error(ErrorKind::kShapeError, "class map size does not match extents");
  }
  LabelMap out(height, width);
  std::vector<std::uint32_t> provisional(class_map.size(), 0);
  std::vector<std::size_t> sizes{0};
  std::vector<std::size_t> stack;

  for (std::size_t start = 0; start < class_map.size(); ++start) {
    const std::uint32_t cls = class_map[start];
    if (cls == 0 || provisional[start] != 0) continue;
    const auto id = static_cast<std::uint32_t>(sizes.size());
    std::size_t size = 0;
    provisional[start] = id;
    stack.push_back(start);
    while (!stack.empty()) {
      const std::size_t p = stack.back();
      stack.pop_back();
      ++size;
      const std::size_t y = p / width, x = p % width;
      for (int dy = -1; dy <= 1; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          if (dy == 0 && dx == 0) continue;
          const auto ny = static_cast<std::ptrdiff_t>(y) + dy;
          const auto nx = static_cast<std::ptrdiff_t>(x) + dx;
          if (ny < 0 || nx < 0 || ny >= static_cast<std::ptrdiff_t>(height) ||
              nx >= static_cast<std::ptrdiff_t>(width)) {
            continue;
          }
          const std::size_t q = static_cast<std::size_t>(ny) * width +
                                static_cast<std::size_t>(nx);
          if (class_map[q] == cls && provisional[q] == 0) {
            provisional[q] = id;
            stack.push_back(q);
          }
        }
      }
    }
    sizes.push_back(size);
  }

  // Provisional ids are already in raster order; drop small ones and close
  // the gaps.
  std::vector<std::uint32_t> final_id(sizes.size(), 0);
  std::uint32_t next = 1;
  for (std::size_t id = 1; id < sizes.size(); ++id) {
    if (sizes[id] >= min_size) final_id[id] = next++;
  }
  for (std::size_t p = 0; p < class_map.size(); ++p) {
    const std::uint32_t id = final_id[provisional[p]];
    out.instance[p] = id;
    out.cls[p] = id == 0 ? 0 : class_map[p];
  }
  return out;
}

}  // namespace nucleiquant
