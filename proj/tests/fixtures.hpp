#pragma once
// Hand-built label fixtures shared by the unit tests and the acceptance run.

#include <cstdint>
#include <map>
#include <numeric>
#include <utility>
#include <vector>

#include "nucleiquant/dataset.hpp"
#include "nucleiquant/rng.hpp"

namespace fixtures {

inline void paint(nucleiquant::LabelMap& m, std::size_t first, std::size_t count,
                  std::uint32_t id, std::uint32_t cls) {
  for (std::size_t i = first; i < first + count; ++i) {
    m.instance[i] = id;
    m.cls[i] = cls;
  }
}

// One TP with IoU 0.8 (gt 10 px, pred 8 of them), one FN and one FP.
inline std::pair<nucleiquant::LabelMap, nucleiquant::LabelMap> worked_pq_case(
    std::uint32_t cls = 1) {
  nucleiquant::LabelMap gt(10, 10), pred(10, 10);
  paint(gt, 0, 10, 1, cls);
  paint(pred, 0, 8, 4, cls);
  paint(gt, 30, 6, 2, cls);
  paint(pred, 60, 5, 7, cls);
  return {gt, pred};
}

// Random bijection onto sparse new ids.
inline nucleiquant::LabelMap permute_ids(const nucleiquant::LabelMap& m,
                                         nucleiquant::Rng& rng) {
  std::map<std::uint32_t, std::uint32_t> relabel;
  for (auto id : m.instance) {
    if (id != 0) relabel[id] = 0;
  }
  std::vector<std::uint32_t> fresh(relabel.size());
  std::iota(fresh.begin(), fresh.end(), 1u);
  for (std::size_t i = fresh.size(); i > 1; --i) std::swap(fresh[i - 1], fresh[rng.below(i)]);
  std::size_t k = 0;
  for (auto& [id, to] : relabel) to = fresh[k++] * 37 + 5;
  nucleiquant::LabelMap out = m;
  for (auto& id : out.instance) {
    if (id != 0) id = relabel[id];
  }
  return out;
}

}  // namespace fixtures
