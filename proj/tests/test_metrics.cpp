#include <gtest/gtest.h>

#include <algorithm>
#include <fstream>
#include <random>

#include "fdm/metrics.hpp"
#include "oracles.hpp"

using namespace fdm;

namespace {

DetBox det(const std::string& img, int cls, BoxXyxy b, double score) {
  return DetBox{img, cls, b, score};
}
GtBox gt(const std::string& img, int cls, BoxXyxy b) { return GtBox{img, cls, b}; }

}  // namespace

TEST(Iou, HandValues) {
  BoxXyxy a{0, 0, 2, 2};
  EXPECT_DOUBLE_EQ(iou(a, a), 1.0);
  EXPECT_DOUBLE_EQ(iou(a, {5, 5, 7, 7}), 0.0);
  EXPECT_DOUBLE_EQ(iou(a, {1, 1, 3, 3}), 1.0 / 7.0);
  EXPECT_DOUBLE_EQ(iou(a, {2, 0, 4, 2}), 0.0);  // touching edges: zero-width intersection
  EXPECT_DOUBLE_EQ(iou({0, 0, 4, 4}, {1, 1, 2, 2}), 1.0 / 16.0);  // containment
}

TEST(MatchGreedy, SingleUseAndScorePriority) {
  std::vector<GtBox> gts = {gt("i", 0, {0, 0, 10, 10})};
  std::vector<DetBox> dets = {det("i", 0, {0, 0, 10, 9}, 0.7), det("i", 0, {0, 0, 10, 10}, 0.9)};
  CellMatch m = match_greedy(dets, gts, 0.5, 0, "i");
  ASSERT_EQ(m.scored.size(), 2u);
  EXPECT_EQ(m.gts, 1);
  EXPECT_DOUBLE_EQ(m.scored[0].first, 0.9);
  EXPECT_TRUE(m.scored[0].second);   // winner by score
  EXPECT_FALSE(m.scored[1].second);  // GT already taken
}

TEST(MatchGreedy, RespectsClassAndImageBoundaries) {
  std::vector<GtBox> gts = {gt("a", 0, {0, 0, 10, 10}), gt("b", 1, {0, 0, 10, 10})};
  std::vector<DetBox> dets = {det("a", 1, {0, 0, 10, 10}, 0.9),   // wrong class
                              det("b", 1, {0, 0, 10, 10}, 0.8)};  // right cell
  CellMatch wrong = match_greedy(dets, gts, 0.5, 0, "a");
  EXPECT_TRUE(wrong.scored.empty());  // no class-0 dets in image a
  EXPECT_EQ(wrong.gts, 1);
  CellMatch right = match_greedy(dets, gts, 0.5, 1, "b");
  ASSERT_EQ(right.scored.size(), 1u);
  EXPECT_TRUE(right.scored[0].second);
}

TEST(MatchGreedy, ThresholdGatesAcceptance) {
  std::vector<GtBox> gts = {gt("i", 0, {0, 0, 10, 10})};
  std::vector<DetBox> dets = {det("i", 0, {0, 0, 10, 6}, 0.9)};  // IoU 0.6
  EXPECT_TRUE(match_greedy(dets, gts, 0.5, 0, "i").scored[0].second);
  EXPECT_FALSE(match_greedy(dets, gts, 0.7, 0, "i").scored[0].second);
}

TEST(PrCurve, HandValues) {
  auto c1 = pr_curve({1}, 1);
  ASSERT_EQ(c1.size(), 1u);
  EXPECT_DOUBLE_EQ(c1[0].precision, 1.0);
  EXPECT_DOUBLE_EQ(c1[0].recall, 1.0);

  auto c2 = pr_curve({1, 0}, 2);
  ASSERT_EQ(c2.size(), 2u);
  EXPECT_DOUBLE_EQ(c2[0].precision, 1.0);
  EXPECT_DOUBLE_EQ(c2[0].recall, 0.5);
  EXPECT_DOUBLE_EQ(c2[1].precision, 0.5);
  EXPECT_DOUBLE_EQ(c2[1].recall, 0.5);

  EXPECT_TRUE(pr_curve({}, 3).empty());
}

TEST(PrCurve, RecallIsMonotone) {
  Rng rng(404);
  for (int t = 0; t < 50; ++t) {
    std::vector<char> flags;
    const int n = 1 + static_cast<int>(rng.next_u64() % 10);
    for (int i = 0; i < n; ++i) flags.push_back(rng.next_u64() % 2 ? 1 : 0);
    auto curve = pr_curve(flags, 4);
    for (size_t i = 1; i < curve.size(); ++i)
      EXPECT_GE(curve[i].recall, curve[i - 1].recall);
  }
}

TEST(Ap, HandValues) {
  EXPECT_DOUBLE_EQ(ap({}), 0.0);
  // perfect ranking finds everything at precision 1
  EXPECT_DOUBLE_EQ(ap(pr_curve({1, 1}, 2)), 1.0);
  // a leading false positive halves the envelope at full recall
  EXPECT_DOUBLE_EQ(ap(pr_curve({0, 1}, 1)), 0.5);
  // envelope lifts early precision to the later maximum:
  // flags TP FP TP, gt 2 -> points (1,.5) (.5,.5) (2/3,1); envelope (1, 2/3, 2/3)
  EXPECT_NEAR(ap(pr_curve({1, 0, 1}, 2)), 0.5 * 1.0 + 0.5 * (2.0 / 3.0), 1e-15);
}

TEST(Ap, MatchesQuadraticAndRiemannOracles) {
  Rng rng(777);
  for (int t = 0; t < 300; ++t) {
    const int n = 1 + static_cast<int>(rng.next_u64() % 7);
    const int64_t gts = 1 + static_cast<int64_t>(rng.next_u64() % 4);
    std::vector<char> flags;
    int64_t tp_budget = gts;
    for (int i = 0; i < n; ++i) {
      const bool tp = tp_budget > 0 && rng.next_u64() % 2;
      if (tp) --tp_budget;
      flags.push_back(tp ? 1 : 0);
    }
    const double got = ap(pr_curve(flags, gts));
    EXPECT_NEAR(got, oracle::ap_rect(flags, gts), 1e-12);
    EXPECT_NEAR(got, oracle::ap_riemann(flags, gts), 1e-9);
    EXPECT_GE(got, 0.0);
    EXPECT_LE(got, 1.0 + 1e-12);
  }
}

TEST(MapAt, PerfectDetectorScoresOne) {
  std::vector<GtBox> gts = {gt("a", 0, {0, 0, 5, 5}), gt("a", 1, {10, 10, 20, 20}),
                            gt("b", 0, {3, 3, 9, 9})};
  std::vector<DetBox> dets;
  for (const auto& g : gts) dets.push_back(det(g.image_id, g.class_id, g.bbox, 1.0));
  EXPECT_DOUBLE_EQ(map_at(dets, gts, 0.5), 1.0);
  EXPECT_DOUBLE_EQ(map_range(dets, gts), 1.0);
}

TEST(MapAt, MeansOverGroundTruthClasses) {
  std::vector<GtBox> gts = {gt("a", 0, {0, 0, 5, 5}), gt("a", 1, {10, 10, 20, 20})};
  std::vector<DetBox> dets = {det("a", 0, {0, 0, 5, 5}, 1.0)};  // class 1 missed entirely
  EXPECT_DOUBLE_EQ(map_at(dets, gts, 0.5), 0.5);
}

TEST(MapAt, EmptyGroundTruthIsAnError) {
  std::vector<DetBox> dets = {det("a", 0, {0, 0, 5, 5}, 1.0)};
  EXPECT_THROW(map_at(dets, {}, 0.5), MetricsError);
  EXPECT_THROW(evaluate(dets, {}, {0.5}), MetricsError);
}

TEST(MapAt, IncludeEmptyClassesDilutes) {
  std::vector<GtBox> gts = {gt("a", 0, {0, 0, 5, 5})};
  std::vector<DetBox> dets = {det("a", 0, {0, 0, 5, 5}, 1.0),
                              det("a", 7, {0, 0, 5, 5}, 0.9)};  // class with no GT
  EXPECT_DOUBLE_EQ(map_at(dets, gts, 0.5), 1.0);
  EXPECT_DOUBLE_EQ(map_at(dets, gts, 0.5, /*include_empty=*/true), 0.5);
}

TEST(MapAt, InvariantUnderMonotoneScoreRescale) {
  Rng rng(31);
  for (int t = 0; t < 40; ++t) {
    oracle::Instance inst = oracle::random_instance(5000 + t);
    if (inst.gts.empty()) continue;
    const double before = map_at(inst.dets, inst.gts, 0.5);
    for (auto& d : inst.dets) d.score = 0.25 + d.score / 2.0;  // strictly monotone, stays in [0,1]
    EXPECT_NEAR(map_at(inst.dets, inst.gts, 0.5), before, 1e-12);
  }
}

TEST(MapAt, DuplicateLowerScoredTpNeverHelps) {
  for (int t = 0; t < 60; ++t) {
    oracle::Instance inst = oracle::random_instance(9000 + t);
    if (inst.gts.empty()) continue;
    const double before = map_at(inst.dets, inst.gts, 0.5);
    // clone the top-scored detection with a strictly lower score
    auto top = std::max_element(inst.dets.begin(), inst.dets.end(),
                                [](const DetBox& a, const DetBox& b) { return a.score < b.score; });
    DetBox dup = *top;
    dup.score *= 0.5;
    inst.dets.push_back(dup);
    EXPECT_LE(map_at(inst.dets, inst.gts, 0.5), before + 1e-12);
  }
}

TEST(MapRange, NeverExceedsMap50) {
  for (int t = 0; t < 60; ++t) {
    oracle::Instance inst = oracle::random_instance(40000 + t);
    if (inst.gts.empty()) continue;
    EXPECT_LE(map_range(inst.dets, inst.gts), map_at(inst.dets, inst.gts, 0.5) + 1e-12) << t;
  }
}

TEST(MapAt, OrderIndependentForUniqueScores) {
  std::mt19937 shuffler(99);
  for (int t = 0; t < 30; ++t) {
    oracle::Instance inst = oracle::random_instance(70000 + t);
    if (inst.gts.empty()) continue;
    const double want = map_at(inst.dets, inst.gts, 0.5);
    std::shuffle(inst.dets.begin(), inst.dets.end(), shuffler);
    std::shuffle(inst.gts.begin(), inst.gts.end(), shuffler);
    EXPECT_NEAR(map_at(inst.dets, inst.gts, 0.5), want, 1e-12);
  }
}

// The flagship fuzz: greedy matching, AP and mAP against the quadratic
// oracles on hundreds of random instances.
TEST(Fuzz, MatchesBruteForceOracles) {
  int evaluated = 0;
  for (int t = 0; t < 500; ++t) {
    oracle::Instance inst = oracle::random_instance(123456 + t);
    for (const std::string img : {"img_a", "img_b"}) {
      for (int cls : {0, 1}) {
        CellMatch got = match_greedy(inst.dets, inst.gts, 0.5, cls, img);
        CellMatch want = oracle::match_cell(inst.dets, inst.gts, 0.5, cls, img);
        ASSERT_EQ(got.gts, want.gts);
        ASSERT_EQ(got.scored.size(), want.scored.size());
        for (size_t i = 0; i < got.scored.size(); ++i) {
          EXPECT_DOUBLE_EQ(got.scored[i].first, want.scored[i].first) << t;
          EXPECT_EQ(got.scored[i].second, want.scored[i].second) << t;
        }
        // single use: TPs in a cell can never outnumber its ground truths
        int64_t tps = 0;
        for (const auto& [s, f] : got.scored) tps += f ? 1 : 0;
        EXPECT_LE(tps, got.gts);
      }
    }
    if (!inst.gts.empty()) {
      ++evaluated;
      EXPECT_NEAR(map_at(inst.dets, inst.gts, 0.5), oracle::map_at(inst.dets, inst.gts, 0.5),
                  1e-12)
          << t;
      EXPECT_NEAR(map_at(inst.dets, inst.gts, 0.75), oracle::map_at(inst.dets, inst.gts, 0.75),
                  1e-12)
          << t;
    }
  }
  EXPECT_GT(evaluated, 300);  // the generator must actually exercise evaluation
}

TEST(Nms, HandValues) {
  std::vector<DetBox> two = {det("i", 0, {0, 0, 10, 10}, 0.9), det("i", 0, {0, 0, 10, 10}, 0.8)};
  auto kept = nms(two, 0.5);
  ASSERT_EQ(kept.size(), 1u);
  EXPECT_DOUBLE_EQ(kept[0].score, 0.9);

  std::vector<DetBox> apart = {det("i", 0, {0, 0, 5, 5}, 0.9), det("i", 0, {20, 20, 25, 25}, 0.8)};
  EXPECT_EQ(nms(apart, 0.5).size(), 2u);

  // strict inequality: IoU exactly at the threshold survives
  std::vector<DetBox> exact = {det("i", 0, {0, 0, 2, 2}, 0.9), det("i", 0, {1, 0, 3, 2}, 0.8)};
  ASSERT_DOUBLE_EQ(iou(exact[0].bbox, exact[1].bbox), 1.0 / 3.0);
  EXPECT_EQ(nms(exact, 1.0 / 3.0).size(), 2u);
  EXPECT_EQ(nms(exact, 1.0 / 3.0 - 1e-9).size(), 1u);

  // per-class off: the lower-scored box of the other class is suppressed
  std::vector<DetBox> classes = {det("i", 0, {0, 0, 10, 10}, 0.9),
                                 det("i", 1, {0, 0, 10, 10}, 0.8)};
  EXPECT_EQ(nms(classes, 0.5, /*per_class=*/true).size(), 2u);
  EXPECT_EQ(nms(classes, 0.5, /*per_class=*/false).size(), 1u);

  // different images never suppress each other
  std::vector<DetBox> imgs = {det("a", 0, {0, 0, 10, 10}, 0.9), det("b", 0, {0, 0, 10, 10}, 0.8)};
  EXPECT_EQ(nms(imgs, 0.5).size(), 2u);
}

TEST(Nms, MatchesQuadraticOracleOnClusters) {
  for (int t = 0; t < 200; ++t) {
    Rng rng(31337 + t);
    std::vector<DetBox> dets;
    const int clusters = 1 + static_cast<int>(rng.next_u64() % 3);
    for (int c = 0; c < clusters; ++c) {
      BoxXyxy base = oracle::random_box(rng);
      const int members = 1 + static_cast<int>(rng.next_u64() % 4);
      for (int k = 0; k < members; ++k) {
        const double jx = (rng.next_unit() - 0.5) * 3.0, jy = (rng.next_unit() - 0.5) * 3.0;
        DetBox d;
        d.image_id = rng.next_u64() % 2 ? "img_a" : "img_b";
        d.class_id = static_cast<int>(rng.next_u64() % 2);
        d.bbox = {base.x1 + jx, base.y1 + jy, base.x2 + jx, base.y2 + jy};
        d.score = rng.next_unit();
        dets.push_back(std::move(d));
      }
    }
    for (bool per_class : {true, false}) {
      auto got = nms(dets, 0.45, per_class);
      auto want = oracle::nms(dets, 0.45, per_class);
      ASSERT_EQ(got.size(), want.size()) << t;
      for (size_t i = 0; i < got.size(); ++i) {
        EXPECT_EQ(got[i].image_id, want[i].image_id);
        EXPECT_DOUBLE_EQ(got[i].score, want[i].score);
      }
    }
  }
}

TEST(Evaluate, FillsCountsAndOperatingPoint) {
  std::vector<GtBox> gts = {gt("a", 0, {0, 0, 10, 10}), gt("a", 0, {20, 20, 30, 30}),
                            gt("a", 1, {40, 40, 50, 50})};
  std::vector<DetBox> dets = {det("a", 0, {0, 0, 10, 10}, 0.9),    // TP
                              det("a", 0, {100, 100, 110, 110}, 0.8),  // FP
                              det("a", 1, {40, 40, 50, 50}, 0.7)};     // TP
  EvalResult r = evaluate(dets, gts, {0.5});
  EXPECT_EQ(r.counts.at(0).tp, 1);
  EXPECT_EQ(r.counts.at(0).fp, 1);
  EXPECT_EQ(r.counts.at(0).fn, 1);
  EXPECT_EQ(r.counts.at(1).tp, 1);
  EXPECT_EQ(r.counts.at(1).fn, 0);
  EXPECT_DOUBLE_EQ(r.precision, 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(r.recall, 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(r.map_50, r.map_per_threshold[0]);
  EXPECT_NEAR(r.map_50, map_at(dets, gts, 0.5), 1e-12);
}

TEST(Evaluate, RangeModeAgreesWithMapRange) {
  oracle::Instance inst = oracle::random_instance(424242);
  ASSERT_FALSE(inst.gts.empty());
  EvalResult r = evaluate(inst.dets, inst.gts, iou_range_50_95());
  EXPECT_FALSE(std::isnan(r.map_50_95));
  EXPECT_NEAR(r.map_50_95, map_range(inst.dets, inst.gts), 1e-12);
  EXPECT_NEAR(r.map_50, map_at(inst.dets, inst.gts, 0.5), 1e-12);
  for (const auto& [cls, aps] : r.ap_per_class) {
    ASSERT_EQ(aps.size(), 10u);
    for (double a : aps) {
      EXPECT_GE(a, 0.0);
      EXPECT_LE(a, 1.0 + 1e-12);
    }
  }
}

// ---- json-lines ------------------------------------------------------------

namespace {

std::string write_temp(const std::string& name, const std::string& content) {
  const std::string path = ::testing::TempDir() + "/" + name;
  std::ofstream f(path);
  f << content;
  return path;
}

}  // namespace

TEST(JsonLines, RoundTripsWellFormedFiles) {
  const std::string det_path = write_temp("dets.jsonl",
      R"({"image_id": "a", "class_id": 0, "bbox": [0, 0, 10, 10], "score": 0.9})" "\n"
      "\n"  // blank lines are allowed
      R"({"image_id": "b", "class_id": 1, "bbox": [5, 5, 8, 9.5], "score": 0.25})" "\n");
  auto dets = load_detections(det_path);
  ASSERT_EQ(dets.size(), 2u);
  EXPECT_EQ(dets[0].image_id, "a");
  EXPECT_DOUBLE_EQ(dets[1].bbox.y2, 9.5);
  EXPECT_DOUBLE_EQ(dets[1].score, 0.25);

  const std::string gt_path = write_temp("gts.jsonl",
      R"({"image_id": "a", "class_id": 0, "bbox": [0, 0, 10, 10]})" "\n");
  auto gts = load_ground_truth(gt_path);
  ASSERT_EQ(gts.size(), 1u);
  EXPECT_EQ(gts[0].class_id, 0);
}

TEST(JsonLines, ErrorsCarryLineNumbers) {
  const std::string path = write_temp("bad3.jsonl",
      R"({"image_id": "a", "class_id": 0, "bbox": [0, 0, 10, 10], "score": 0.9})" "\n"
      R"({"image_id": "a", "class_id": 0, "bbox": [0, 0, 10, 10], "score": 0.8})" "\n"
      "{ not json\n");
  try {
    load_detections(path);
    FAIL() << "expected MetricsError";
  } catch (const MetricsError& e) {
    EXPECT_NE(std::string(e.what()).find(":3:"), std::string::npos) << e.what();
  }
}

TEST(JsonLines, RejectsSchemaViolations) {
  auto expect_fail = [](const std::string& name, const std::string& line) {
    const std::string path = write_temp(name, line + "\n");
    EXPECT_THROW(load_detections(path), MetricsError) << line;
  };
  expect_fail("missing_score.jsonl", R"({"image_id": "a", "class_id": 0, "bbox": [0,0,1,1]})");
  expect_fail("extra_field.jsonl",
              R"({"image_id": "a", "class_id": 0, "bbox": [0,0,1,1], "score": 0.5, "tag": "x"})");
  expect_fail("bad_bbox_order.jsonl",
              R"({"image_id": "a", "class_id": 0, "bbox": [5,0,1,1], "score": 0.5})");
  expect_fail("bbox_three.jsonl", R"({"image_id": "a", "class_id": 0, "bbox": [0,0,1], "score": 0.5})");
  expect_fail("score_over.jsonl", R"({"image_id": "a", "class_id": 0, "bbox": [0,0,1,1], "score": 1.5})");
  expect_fail("int_image.jsonl", R"({"image_id": 3, "class_id": 0, "bbox": [0,0,1,1], "score": 0.5})");
  expect_fail("float_class.jsonl",
              R"({"image_id": "a", "class_id": 0.5, "bbox": [0,0,1,1], "score": 0.5})");
  expect_fail("array_line.jsonl", R"([1, 2, 3])");

  // ground truth must not carry scores
  const std::string gt_path = write_temp("gt_scored.jsonl",
      R"({"image_id": "a", "class_id": 0, "bbox": [0,0,1,1], "score": 0.5})" "\n");
  EXPECT_THROW(load_ground_truth(gt_path), MetricsError);

  EXPECT_THROW(load_detections(::testing::TempDir() + "/absent.jsonl"), MetricsError);
}

// The committed pair is small enough to evaluate by hand:
//   class 0 (image a): flags TP, FP, TP over 2 GTs -> AP 5/6; the second hit
//   overlaps at IoU 2/3, so it dies above the 0.65 threshold.
//   class 1 (image b): flags TP, FP over 2 GTs -> AP 1/2 at every threshold.
// mAP@0.5 = (5/6 + 1/2) / 2 = 2/3, and over the ranged thresholds
// (4 * 2/3 + 6 * 1/2) / 10 = 17/30.
TEST(JsonLines, FixturePairMatchesHandComputedValues) {
  const std::string dir = FDM_TEST_DATA_DIR;
  auto dets = load_detections(dir + "/eval_dets.jsonl");
  auto gts = load_ground_truth(dir + "/eval_gts.jsonl");
  EXPECT_NEAR(map_at(dets, gts, 0.5), oracle::map_at(dets, gts, 0.5), 1e-12);
  EXPECT_NEAR(map_at(dets, gts, 0.5), 2.0 / 3.0, 1e-12);
  EXPECT_NEAR(map_range(dets, gts), 17.0 / 30.0, 1e-12);
}
