#include <doctest.h>

#include <algorithm>
#include <map>
#include <numeric>
#include <optional>
#include <vector>
#include <nlohmann/json.hpp>

#include "nucleiquant/dataset.hpp"
#include "nucleiquant/error.hpp"
#include "nucleiquant/metrics.hpp"
#include "nucleiquant/rng.hpp"
#include "nucleiquant/synthetic.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"

namespace nq = nucleiquant;
using fixtures::paint;
using fixtures::permute_ids;
using fixtures::worked_pq_case;

namespace {

nq::ErrorKind kind_of(auto&& fn) {
  try {
    fn();
  } catch (const nq::Error& e) {
    return e.kind();
  }
  FAIL("no error thrown");
  return nq::ErrorKind::kParse;
}

void check_against_oracle(const nq::MetricsReport& r, const oracle::Reference& ref) {
  for (std::size_t t = 0; t < ref.pooled.size(); ++t) {
    const auto& c = r.classes[t];
    CHECK(c.tp == ref.pooled[t].tp);
    CHECK(c.fp == ref.pooled[t].fp);
    CHECK(c.fn == ref.pooled[t].fn);
    CHECK(std::abs(c.iou_sum - ref.pooled[t].iou_sum) <= 1e-12);
    CHECK(c.pq.has_value() == ref.pq[t].has_value());
    if (c.pq && ref.pq[t]) {
      CHECK(std::abs(*c.pq - *ref.pq[t]) <= 1e-12);
      CHECK(std::abs(*c.dq - *ref.dq[t]) <= 1e-12);
      CHECK(std::abs(*c.sq - *ref.sq[t]) <= 1e-12);
    }
    CHECK(c.r2.has_value() == ref.r2[t].has_value());
    if (c.r2 && ref.r2[t]) CHECK(std::abs(*c.r2 - *ref.r2[t]) <= 1e-12);
  }
  CHECK(r.mpq.has_value() == ref.mpq.has_value());
  if (r.mpq && ref.mpq) CHECK(std::abs(*r.mpq - *ref.mpq) <= 1e-12);
  CHECK(r.multi_r2.has_value() == ref.multi_r2.has_value());
  if (r.multi_r2 && ref.multi_r2) CHECK(std::abs(*r.multi_r2 - *ref.multi_r2) <= 1e-12);
}

}  // namespace

TEST_SUITE("metrics") {

TEST_CASE("iou") {
  std::vector<std::size_t> a(100), b(100);
  std::iota(a.begin(), a.end(), 0);
  std::iota(b.begin(), b.end(), 20);  // 80 shared, 20 outside a
  CHECK(nq::iou(a, a) == 1.0);
  CHECK(nq::iou(a, b) == 80.0 / 120.0);
  const std::vector<std::size_t> far{500, 501};
  CHECK(nq::iou(a, far) == 0.0);
  CHECK(nq::iou({}, far) == 0.0);
  CHECK(kind_of([] { nq::iou({}, {}); }) == nq::ErrorKind::kEmptyPair);
}

TEST_CASE("PQ worked values") {
  const auto [gt, pred] = worked_pq_case();
  const nq::MatchResult m = nq::match_instances(gt, pred, 6);
  REQUIRE(m.at(1).tp.size() == 1);
  CHECK(m.at(1).tp[0].iou == 0.8);
  CHECK(m.at(1).fp == std::vector<std::uint32_t>{7});
  CHECK(m.at(1).fn == std::vector<std::uint32_t>{2});
  const nq::PqValue v = nq::pq_per_class(m, 1);
  CHECK(v.dq == 0.5);
  CHECK(v.sq == 0.8);
  CHECK(v.pq == 0.4);
  CHECK(v.pq == v.dq * v.sq);
  CHECK(kind_of([&] { nq::pq_per_class(m, 2); }) == nq::ErrorKind::kUndefinedClass);

  nq::PqStats s;
  s.tp = 1;
  s.iou_sum = 0.6;
  CHECK(nq::pq_from_stats(s).pq == 0.6);
  s = {};
  s.fn = 3;
  CHECK(nq::pq_from_stats(s).pq == 0.0);
  CHECK(nq::pq_from_stats(s).sq == 0.0);
}

TEST_CASE("matching basics") {
  const nq::LabelMap gt = nq::rasterize(
      {{5, 5, 3, 1}, {15, 15, 2.5, 2}, {5, 15, 2, 2}}, 20, 20);
  const nq::MatchResult self = nq::match_instances(gt, gt, 6);
  CHECK(self.at(1).tp.size() == 1);
  CHECK(self.at(2).tp.size() == 2);
  for (const auto& c : self.classes) {
    CHECK(c.fp.empty());
    CHECK(c.fn.empty());
    for (const auto& p : c.tp) CHECK(p.iou == 1.0);
  }
  const nq::MatchResult none = nq::match_instances(gt, nq::LabelMap(20, 20), 6);
  CHECK(none.at(1).fn.size() == 1);
  CHECK(none.at(2).fn.size() == 2);
  CHECK(none.at(2).tp.empty());
  CHECK(none.at(2).fp.empty());
  CHECK(kind_of([&] { nq::match_instances(gt, nq::LabelMap(20, 21), 6); }) ==
        nq::ErrorKind::kShapeMismatch);
}

TEST_CASE("exactly half overlap does not match") {
  nq::LabelMap gt(1, 8), pred(1, 8);
  paint(gt, 0, 4, 1, 1);
  paint(pred, 1, 4, 1, 1);  // inter 3, union 5: match
  CHECK(nq::match_instances(gt, pred, 1).at(1).tp.size() == 1);
  nq::LabelMap half(1, 8);
  paint(half, 2, 4, 1, 1);  // inter 2, union 6
  CHECK(nq::match_instances(gt, half, 1).at(1).tp.empty());
  nq::LabelMap exact(1, 8);
  paint(exact, 0, 2, 1, 1);  // inter 2, union 4: IoU exactly 0.5
  CHECK(nq::match_instances(gt, exact, 1).at(1).tp.empty());
}

TEST_CASE("classes only match within themselves") {
  nq::LabelMap gt(1, 6), pred(1, 6);
  paint(gt, 0, 4, 1, 1);
  paint(pred, 0, 4, 1, 2);
  const auto m = nq::match_instances(gt, pred, 2);
  CHECK(m.at(1).fn.size() == 1);
  CHECK(m.at(2).fp.size() == 1);
}

TEST_CASE("mPQ") {
  auto [gt1, pred1] = worked_pq_case(1);
  nq::LabelMap gt2(10, 10), pred2(10, 10);
  paint(gt2, 0, 10, 1, 2);
  paint(pred2, 0, 8, 1, 2);
  const std::vector<nq::MatchResult> ms{nq::match_instances(gt1, pred1, 6),
                                        nq::match_instances(gt2, pred2, 6)};
  CHECK(nq::mpq(ms, 6) == doctest::Approx(0.6).epsilon(1e-15));
  const std::vector<nq::MatchResult> single{nq::match_instances(gt1, pred1, 6)};
  CHECK(nq::mpq(single, 6) == 0.4);
  const std::vector<nq::MatchResult> perfect{nq::match_instances(gt1, gt1, 6)};
  CHECK(nq::mpq(perfect, 6) == 1.0);
  const std::vector<nq::MatchResult> empty{
      nq::match_instances(nq::LabelMap(3, 3), nq::LabelMap(3, 3), 6)};
  CHECK(kind_of([&] { nq::mpq(empty, 6); }) == nq::ErrorKind::kNoInstancesAnywhere);
}

TEST_CASE("R2") {
  const std::vector<double> gt{1, 2, 3};
  CHECK(nq::r2_per_class(gt, std::vector<double>{3, 2, 1}) == -3.0);
  CHECK(nq::r2_per_class(gt, gt) == 1.0);
  CHECK(nq::r2_per_class(gt, std::vector<double>{2, 2, 2}) == 0.0);
  CHECK(kind_of([] { nq::r2_per_class(std::vector<double>{4, 4}, std::vector<double>{1, 2}); }) ==
        nq::ErrorKind::kDegenerateTss);
  CHECK(kind_of([&] { nq::r2_per_class(gt, std::vector<double>{1, 2}); }) ==
        nq::ErrorKind::kShapeMismatch);
  CHECK(kind_of([] { nq::r2_per_class(std::vector<double>{1}, std::vector<double>{1}); }) ==
        nq::ErrorKind::kShapeMismatch);

  using O = std::optional<double>;
  CHECK(nq::multi_r2(std::vector<O>{1.0, 1.0, 1.0}) == 1.0);
  CHECK(nq::multi_r2(std::vector<O>{1.0, 0.5}) == 0.75);
  CHECK(nq::multi_r2(std::vector<O>{0.2, std::nullopt, -0.6}) == doctest::Approx(-0.2).epsilon(1e-15));
  CHECK(kind_of([] { nq::multi_r2(std::vector<O>{std::nullopt, std::nullopt}); }) ==
        nq::ErrorKind::kAllDegenerate);
}

TEST_CASE("matching equals the exhaustive-pair oracle") {
  for (std::uint64_t seed = 0; seed < 250; ++seed) {
    CAPTURE(seed);
    const auto fx = nq::random_fixture_pair(32, 32, 2, seed);
    const nq::MatchResult m = nq::match_instances(fx.gt, fx.pred, 2);
    const auto ref = oracle::brute_match(fx.gt, fx.pred, 2);
    for (int t = 1; t <= 2; ++t) {
      const auto& c = m.at(t);
      const auto& o = ref[static_cast<std::size_t>(t - 1)];
      CHECK(o.unique);
      REQUIRE(c.tp.size() == o.pairs.size());
      for (std::size_t k = 0; k < o.pairs.size(); ++k) {
        const auto it = std::find_if(c.tp.begin(), c.tp.end(),
                                     [&](const nq::MatchedPair& p) { return p.gt_id == o.pairs[k].gt; });
        REQUIRE(it != c.tp.end());
        CHECK(it->pred_id == o.pairs[k].pred);
        CHECK(it->intersection == o.pairs[k].inter);
        CHECK(it->union_size == o.pairs[k].uni);
      }
      CHECK(c.fp.size() == o.fp);
      CHECK(c.fn.size() == o.fn);
    }
  }
}

TEST_CASE("evaluate equals the brute-force reference") {
  // Pooled over datasets of several patches, both aggregation-independent
  // fields and dataset PQ.
  for (std::uint64_t set = 0; set < 25; ++set) {
    std::vector<nq::LabelMap> gt, pred;
    for (std::uint64_t i = 0; i < 10; ++i) {
      const auto fx = nq::random_fixture_pair(32, 32, 2, 1000 + set * 10 + i);
      gt.push_back(fx.gt);
      pred.push_back(fx.pred);
    }
    nq::EvaluateOptions opts;
    opts.threads = 3;
    check_against_oracle(nq::evaluate(gt, pred, 2, opts), oracle::brute_evaluate(gt, pred, 2));
  }
}

TEST_CASE("per-image aggregation") {
  const auto [gt1, pred1] = worked_pq_case(1);
  const std::vector<nq::LabelMap> gt{gt1, gt1}, pred{pred1, gt1};
  nq::EvaluateOptions o;
  o.aggregation = nq::Aggregation::kPerImage;
  const auto r = nq::evaluate(gt, pred, 6, o);
  CHECK(*r.classes[0].pq == doctest::Approx((0.4 + 1.0) / 2));
  CHECK(*r.mpq == doctest::Approx(0.7));
  const auto pooled = nq::evaluate(gt, pred, 6);
  // Pooled: tp 3, fp 1, fn 1, iou sum 2.8.
  CHECK(*pooled.classes[0].pq == doctest::Approx(3.0 / 4.0 * 2.8 / 3.0));
}

TEST_CASE("perfect prediction") {
  const nq::SyntheticSet set = nq::make_synthetic_set({16, 32, 32, 6, 8, 3});
  const auto r = nq::evaluate(set.labels, set.labels, 6);
  for (const auto& c : r.classes) {
    if (c.gt_total == 0) {
      CHECK_FALSE(c.pq.has_value());
      continue;
    }
    CHECK(*c.pq == 1.0);
    CHECK(*c.dq == 1.0);
    CHECK(*c.sq == 1.0);
    if (c.r2) CHECK(*c.r2 == 1.0);
  }
  CHECK(*r.mpq == 1.0);
  CHECK(*r.multi_r2 == 1.0);
  CHECK(*r.binary_pq == 1.0);
}

TEST_CASE("all-background prediction") {
  const nq::SyntheticSet set = nq::make_synthetic_set({6, 32, 32, 3, 6, 9});
  const std::vector<nq::LabelMap> empty(6, nq::LabelMap(32, 32));
  const auto r = nq::evaluate(set.labels, empty, 3);
  for (const auto& c : r.classes) {
    if (c.gt_total > 0) CHECK(*c.pq == 0.0);
    CHECK(c.pred_total == 0);
  }
  CHECK(*r.mpq == 0.0);
}

TEST_CASE("invariance under relabeling and augmentation") {
  nq::Rng rng(77);
  for (std::uint64_t set = 0; set < 12; ++set) {
    std::vector<nq::LabelMap> gt, pred;
    for (std::uint64_t i = 0; i < 6; ++i) {
      const auto fx = nq::random_fixture_pair(32, 32, 4, 500 + set * 6 + i);
      gt.push_back(fx.gt);
      pred.push_back(fx.pred);
    }
    for (auto agg : {nq::Aggregation::kDataset, nq::Aggregation::kPerImage}) {
      nq::EvaluateOptions o;
      o.aggregation = agg;
      const auto base = nq::evaluate(gt, pred, 4, o).to_json().dump();
      std::vector<nq::LabelMap> gp, pp;
      for (std::size_t i = 0; i < gt.size(); ++i) {
        gp.push_back(permute_ids(gt[i], rng));
        pp.push_back(permute_ids(pred[i], rng));
      }
      CHECK(nq::evaluate(gp, pp, 4, o).to_json().dump() == base);
      for (nq::AugmentOp op : nq::kAllAugmentOps) {
        std::vector<nq::LabelMap> ga, pa;
        for (std::size_t i = 0; i < gt.size(); ++i) {
          ga.push_back(nq::augment(gt[i], op));
          pa.push_back(nq::augment(pred[i], op));
        }
        CHECK(nq::evaluate(ga, pa, 4, o).to_json().dump() == base);
      }
    }
  }
}

TEST_CASE("adding a false positive never raises PQ") {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const auto fx = nq::random_fixture_pair(32, 32, 2, seed);
    const auto m = nq::match_instances(fx.gt, fx.pred, 2);
    for (int t = 1; t <= 2; ++t) {
      nq::PqStats s;
      s.add(m.at(t));
      if (s.tp + s.fp + s.fn == 0) continue;
      nq::PqStats more = s;
      ++more.fp;
      CHECK(nq::pq_from_stats(more).pq <= nq::pq_from_stats(s).pq);
    }
  }
}

TEST_CASE("evaluate input checks") {
  const std::vector<nq::LabelMap> two(2, nq::LabelMap(4, 4)), three(3, nq::LabelMap(4, 4));
  CHECK(kind_of([&] { nq::evaluate(two, three, 6); }) == nq::ErrorKind::kShapeMismatch);
  const auto r = nq::evaluate(two, two, 6);
  CHECK_FALSE(r.mpq.has_value());
  CHECK_FALSE(r.multi_r2.has_value());
}

TEST_CASE("report serialization") {
  const auto [gt1, pred1] = worked_pq_case(2);
  const std::vector<nq::LabelMap> gt{gt1, nq::LabelMap(10, 10)}, pred{pred1, nq::LabelMap(10, 10)};
  const auto r = nq::evaluate(gt, pred, 3);
  const auto j = r.to_json();
  for (const char* key : {"num_classes", "num_patches", "aggregation", "pq", "dq", "sq", "tp",
                          "fp", "fn", "mpq", "binary_pq", "r2", "r2_degenerate", "multi_r2",
                          "counts"}) {
    CAPTURE(key);
    CHECK(j.contains(key));
  }
  CHECK(j["pq"].size() == 3);
  CHECK(j["pq"][0].is_null());
  CHECK(j["pq"][1] == 0.4);
  CHECK(j["mpq"] == 0.4);
  CHECK(j["aggregation"] == "dataset");
  CHECK(j["counts"]["gt"]["total"][1] == 2);
  CHECK(j["counts"]["pred"]["per_patch"][0][1] == 2);

  const std::string csv = r.to_csv();
  CHECK(csv.rfind("class,pq,dq,sq,tp,fp,fn,r2,gt_count,pred_count\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 4);
  CHECK(csv.find("\n2,0.4,0.5,0.8,1,1,1,") != std::string::npos);
}

TEST_CASE("counts csv") {
  const std::vector<std::vector<std::size_t>> counts{{1, 0}, {0, 2}, {3, 1}};
  CHECK(nq::counts_csv(counts, 2) ==
        "patch_index,class_1,class_2\n0,1,0\n1,0,2\n2,3,1\nTOTAL,4,3\n");
}

}  // TEST_SUITE
