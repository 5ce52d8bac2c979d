#include "nucleiquant/metrics.hpp"

#include <algorithm>
#include <charconv>
#include <map>
#include <nlohmann/json.hpp>
#include <sstream>
#include <unordered_map>

#include "nucleiquant/error.hpp"
#include "nucleiquant/parallel.hpp"

namespace nucleiquant {

namespace {

struct InstanceInfo {
  std::uint64_t area = 0;
  std::uint32_t cls = 0;
};

// Shared by the per-class and class-agnostic matchers. With
// class_agnostic every instance is treated as class 1.
std::vector<ClassMatch> match_impl(const LabelMap& gt, const LabelMap& pred,
                                   int num_classes, bool class_agnostic) {
  if (gt.height != pred.height || gt.width != pred.width) {
    throw Error(ErrorKind::kShapeMismatch,
                "gt " + std::to_string(gt.height) + "x" + std::to_string(gt.width) +
                    " vs pred " + std::to_string(pred.height) + "x" +
                    std::to_string(pred.width));
  }
  std::map<std::uint32_t, InstanceInfo> gt_info, pred_info;
  std::unordered_map<std::uint64_t, std::uint64_t> overlap;
  for (std::size_t i = 0; i < gt.pixels(); ++i) {
    const std::uint32_t g = gt.instance[i];
    const std::uint32_t p = pred.instance[i];
    const std::uint32_t gc = class_agnostic ? 1 : gt.cls[i];
    const std::uint32_t pc = class_agnostic ? 1 : pred.cls[i];
    if (g != 0) {
      auto& info = gt_info[g];
      ++info.area;
      info.cls = gc;
    }
    if (p != 0) {
      auto& info = pred_info[p];
      ++info.area;
      info.cls = pc;
    }
    if (g != 0 && p != 0 && gc == pc) {
      ++overlap[(static_cast<std::uint64_t>(g) << 32) | p];
    }
  }

  std::vector<std::pair<std::uint64_t, std::uint64_t>> pairs(overlap.begin(), overlap.end());
  std::sort(pairs.begin(), pairs.end());

  const std::size_t classes = class_agnostic ? 1 : static_cast<std::size_t>(num_classes);
  std::vector<ClassMatch> out(classes);
  std::map<std::uint32_t, bool> gt_matched, pred_matched;
  for (const auto& [key, inter] : pairs) {
    const auto g = static_cast<std::uint32_t>(key >> 32);
    const auto p = static_cast<std::uint32_t>(key & 0xFFFFFFFFu);
    const std::uint64_t uni = gt_info[g].area + pred_info[p].area - inter;
    if (2 * inter > uni) {
      out[gt_info[g].cls - 1].tp.push_back(
          {g, p, inter, uni, static_cast<double>(inter) / static_cast<double>(uni)});
      gt_matched[g] = true;
      pred_matched[p] = true;
    }
  }
  for (const auto& [id, info] : gt_info) {
    if (!gt_matched.contains(id)) out[info.cls - 1].fn.push_back(id);
  }
  for (const auto& [id, info] : pred_info) {
    if (!pred_matched.contains(id)) out[info.cls - 1].fp.push_back(id);
  }
  return out;
}

double mean(std::span<const double> values) {
  double sum = 0.0;
  for (double v : values) sum += v;
  return sum / static_cast<double>(values.size());
}

nlohmann::json optional_json(const std::optional<double>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

std::string optional_csv(const std::optional<double>& v) {
  if (!v) return "";
  char buf[32];
  const auto end = std::to_chars(buf, buf + sizeof buf, *v).ptr;  // shortest round-trip
  return std::string(buf, end);
}

}  // namespace

double iou(std::span<const std::size_t> a, std::span<const std::size_t> b) {
  if (a.empty() && b.empty()) throw Error(ErrorKind::kEmptyPair, "both pixel sets empty");
  std::size_t inter = 0;
  std::size_t i = 0, j = 0;
  while (i < a.size() && j < b.size()) {
    if (a[i] < b[j]) {
      ++i;
    } else if (b[j] < a[i]) {
      ++j;
    } else {
      ++inter;
      ++i;
      ++j;
    }
  }
  return static_cast<double>(inter) / static_cast<double>(a.size() + b.size() - inter);
}

MatchResult match_instances(const LabelMap& gt, const LabelMap& pred,
                            int num_classes) {
  validate_labels(gt, num_classes);
  validate_labels(pred, num_classes);
  return MatchResult{match_impl(gt, pred, num_classes, false)};
}

ClassMatch match_class_agnostic(const LabelMap& gt, const LabelMap& pred) {
  return match_impl(gt, pred, 1, true).front();
}

void PqStats::add(const ClassMatch& m) {
  tp += m.tp.size();
  fp += m.fp.size();
  fn += m.fn.size();
  // Summed by value so that relabeling instances cannot change the result.
  std::vector<double> ious;
  ious.reserve(m.tp.size());
  for (const MatchedPair& pair : m.tp) ious.push_back(pair.iou);
  std::sort(ious.begin(), ious.end());
  for (double v : ious) iou_sum += v;
}

PqValue pq_from_stats(const PqStats& s) {
  if (s.tp + s.fp + s.fn == 0) {
    throw Error(ErrorKind::kUndefinedClass, "no instances on either side");
  }
  PqValue v;
  const auto tp = static_cast<double>(s.tp);
  v.dq = tp / (tp + 0.5 * static_cast<double>(s.fp) + 0.5 * static_cast<double>(s.fn));
  v.sq = s.tp == 0 ? 0.0 : s.iou_sum / tp;
  v.pq = v.dq * v.sq;
  return v;
}

PqValue pq_per_class(const MatchResult& m, int cls) {
  PqStats stats;
  stats.add(m.at(cls));
  return pq_from_stats(stats);
}

double mpq(std::span<const MatchResult> matches, int num_classes) {
  std::vector<double> values;
  for (int t = 1; t <= num_classes; ++t) {
    PqStats stats;
    for (const MatchResult& m : matches) stats.add(m.at(t));
    if (stats.tp + stats.fp + stats.fn > 0) values.push_back(pq_from_stats(stats).pq);
  }
  if (values.empty()) {
    throw Error(ErrorKind::kNoInstancesAnywhere, "no class has any instance");
  }
  return mean(values);
}

double r2_per_class(std::span<const double> gt, std::span<const double> pred) {
  if (gt.size() != pred.size() || gt.size() < 2) {
    throw Error(ErrorKind::kShapeMismatch, "R2 needs two equal series of length >= 2");
  }
  const double m = mean(gt);
  double rss = 0.0, tss = 0.0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    rss += (pred[i] - gt[i]) * (pred[i] - gt[i]);
    tss += (gt[i] - m) * (gt[i] - m);
  }
  if (tss == 0.0) throw Error(ErrorKind::kDegenerateTss, "ground-truth counts are constant");
  return 1.0 - rss / tss;
}

double multi_r2(std::span<const std::optional<double>> per_class) {
  std::vector<double> values;
  for (const auto& v : per_class) {
    if (v) values.push_back(*v);
  }
  if (values.empty()) throw Error(ErrorKind::kAllDegenerate, "every class is degenerate");
  return mean(values);
}

std::string_view to_string(Aggregation aggregation) {
  return aggregation == Aggregation::kDataset ? "dataset" : "per_image";
}

MetricsReport evaluate(std::span<const LabelMap> gt, std::span<const LabelMap> pred,
                       int num_classes, const EvaluateOptions& options) {
  if (gt.size() != pred.size()) {
    throw Error(ErrorKind::kShapeMismatch, "gt has " + std::to_string(gt.size()) +
                                               " patches, pred has " +
                                               std::to_string(pred.size()));
  }
  const std::size_t n = gt.size();
  const auto classes = static_cast<std::size_t>(num_classes);

  MetricsReport report;
  report.num_classes = num_classes;
  report.num_patches = n;
  report.aggregation = options.aggregation;
  report.gt_counts.resize(n);
  report.pred_counts.resize(n);

  std::vector<MatchResult> matches(n);
  std::vector<ClassMatch> agnostic(n);
  parallel_for(n, options.threads, [&](std::size_t i) {
    matches[i] = match_instances(gt[i], pred[i], num_classes);
    agnostic[i] = match_class_agnostic(gt[i], pred[i]);
    report.gt_counts[i] = class_counts(gt[i], num_classes);
    report.pred_counts[i] = class_counts(pred[i], num_classes);
  });

  report.classes.resize(classes);
  std::vector<PqStats> pooled(classes);
  for (std::size_t t = 0; t < classes; ++t) {
    ClassReport& c = report.classes[t];
    c.cls = static_cast<int>(t + 1);
    for (std::size_t i = 0; i < n; ++i) {
      pooled[t].add(matches[i].classes[t]);
      c.gt_total += report.gt_counts[i][t];
      c.pred_total += report.pred_counts[i][t];
    }
    c.tp = pooled[t].tp;
    c.fp = pooled[t].fp;
    c.fn = pooled[t].fn;
    c.iou_sum = pooled[t].iou_sum;
  }

  if (options.aggregation == Aggregation::kDataset) {
    std::vector<double> defined;
    for (std::size_t t = 0; t < classes; ++t) {
      if (pooled[t].tp + pooled[t].fp + pooled[t].fn == 0) continue;
      const PqValue v = pq_from_stats(pooled[t]);
      report.classes[t].pq = v.pq;
      report.classes[t].dq = v.dq;
      report.classes[t].sq = v.sq;
      defined.push_back(v.pq);
    }
    if (!defined.empty()) report.mpq = mean(defined);
    PqStats binary;
    for (const ClassMatch& m : agnostic) binary.add(m);
    if (binary.tp + binary.fp + binary.fn > 0) report.binary_pq = pq_from_stats(binary).pq;
  } else {
    std::vector<std::vector<double>> pq(classes), dq(classes), sq(classes);
    std::vector<double> patch_means, binary;
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<double> present;
      for (std::size_t t = 0; t < classes; ++t) {
        PqStats stats;
        stats.add(matches[i].classes[t]);
        if (stats.tp + stats.fp + stats.fn == 0) continue;
        const PqValue v = pq_from_stats(stats);
        pq[t].push_back(v.pq);
        dq[t].push_back(v.dq);
        sq[t].push_back(v.sq);
        present.push_back(v.pq);
      }
      if (!present.empty()) patch_means.push_back(mean(present));
      PqStats b;
      b.add(agnostic[i]);
      if (b.tp + b.fp + b.fn > 0) binary.push_back(pq_from_stats(b).pq);
    }
    for (std::size_t t = 0; t < classes; ++t) {
      if (pq[t].empty()) continue;
      report.classes[t].pq = mean(pq[t]);
      report.classes[t].dq = mean(dq[t]);
      report.classes[t].sq = mean(sq[t]);
    }
    if (!patch_means.empty()) report.mpq = mean(patch_means);
    if (!binary.empty()) report.binary_pq = mean(binary);
  }

  std::vector<std::optional<double>> r2(classes);
  for (std::size_t t = 0; t < classes && n >= 2; ++t) {
    std::vector<double> g(n), p(n);
    for (std::size_t i = 0; i < n; ++i) {
      g[i] = static_cast<double>(report.gt_counts[i][t]);
      p[i] = static_cast<double>(report.pred_counts[i][t]);
    }
    try {
      r2[t] = r2_per_class(g, p);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::kDegenerateTss) throw;
    }
    report.classes[t].r2 = r2[t];
  }
  if (std::any_of(r2.begin(), r2.end(), [](const auto& v) { return v.has_value(); })) {
    report.multi_r2 = multi_r2(r2);
  }
  return report;
}

nlohmann::json MetricsReport::to_json() const {
  nlohmann::json j;
  j["num_classes"] = num_classes;
  j["num_patches"] = num_patches;
  j["aggregation"] = std::string(to_string(aggregation));
  auto per_class = [&](auto&& field) {
    nlohmann::json arr = nlohmann::json::array();
    for (const ClassReport& c : classes) arr.push_back(field(c));
    return arr;
  };
  j["pq"] = per_class([](const ClassReport& c) { return optional_json(c.pq); });
  j["dq"] = per_class([](const ClassReport& c) { return optional_json(c.dq); });
  j["sq"] = per_class([](const ClassReport& c) { return optional_json(c.sq); });
  j["tp"] = per_class([](const ClassReport& c) { return nlohmann::json(c.tp); });
  j["fp"] = per_class([](const ClassReport& c) { return nlohmann::json(c.fp); });
  j["fn"] = per_class([](const ClassReport& c) { return nlohmann::json(c.fn); });
  j["mpq"] = optional_json(mpq);
  j["binary_pq"] = optional_json(binary_pq);
  j["r2"] = per_class([](const ClassReport& c) { return optional_json(c.r2); });
  j["r2_degenerate"] =
      per_class([](const ClassReport& c) { return nlohmann::json(!c.r2.has_value()); });
  j["multi_r2"] = optional_json(multi_r2);
  auto totals = [&](bool gt_side) {
    return per_class([gt_side](const ClassReport& c) {
      return nlohmann::json(gt_side ? c.gt_total : c.pred_total);
    });
  };
  j["counts"] = {{"gt", {{"per_patch", gt_counts}, {"total", totals(true)}}},
                 {"pred", {{"per_patch", pred_counts}, {"total", totals(false)}}}};
  return j;
}

std::string MetricsReport::to_csv() const {
  std::ostringstream out;
  out << "class,pq,dq,sq,tp,fp,fn,r2,gt_count,pred_count\n";
  for (const ClassReport& c : classes) {
    out << c.cls << ',' << optional_csv(c.pq) << ',' << optional_csv(c.dq) << ','
        << optional_csv(c.sq) << ',' << c.tp << ',' << c.fp << ',' << c.fn << ','
        << optional_csv(c.r2) << ',' << c.gt_total << ',' << c.pred_total << '\n';
  }
  return out.str();
}

std::string counts_csv(std::span<const std::vector<std::size_t>> counts,
                       int num_classes) {
  std::ostringstream out;
  out << "patch_index";
  for (int t = 1; t <= num_classes; ++t) out << ",class_" << t;
  out << '\n';
  std::vector<std::size_t> total(static_cast<std::size_t>(num_classes), 0);
  for (std::size_t i = 0; i < counts.size(); ++i) {
    out << i;
    for (std::size_t t = 0; t < total.size(); ++t) {
      out << ',' << counts[i][t];
      total[t] += counts[i][t];
    }
    out << '\n';
  }
  out << "TOTAL";
  for (std::size_t v : total) out << ',' << v;
  out << '\n';
  return out.str();
}

}  // namespace nucleiquant
