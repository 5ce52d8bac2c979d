#pragma once

#include <cstddef>
#include <cstdint>
#include <span>

#include "nucleiquant/dataset.hpp"

namespace nucleiquant {

// Connected components of equal nonzero class under 8-connectivity. Ids
// start at 1 in raster order of each component's first pixel. Components
// with fewer than min_size pixels are cleared to background (instance and
// class both 0) and do not consume an id.
LabelMap label_components(std::span<const std::uint32_t> class_map,
                          std::size_t height, std::size_t width,
                          std::size_t min_size);

}  // namespace nucleiquant
