#ifndef FDM_METRICS_HPP
#define FDM_METRICS_HPP

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

// Detection evaluation: IoU, greedy matching, precision/recall curves,
// all-point AP, mAP at fixed and ranged thresholds, NMS, and a strict
// JSON-lines reader for detection/ground-truth files.

namespace fdm {

class MetricsError : public std::runtime_error {
 public:
  explicit MetricsError(const std::string& msg) : std::runtime_error(msg) {}
};

struct BoxXyxy {
  double x1 = 0, y1 = 0, x2 = 0, y2 = 0;
};

struct DetBox {
  std::string image_id;
  int class_id = 0;
  BoxXyxy bbox;
  double score = 0;
};

struct GtBox {
  std::string image_id;
  int class_id = 0;
  BoxXyxy bbox;
};

inline double iou(const BoxXyxy& a, const BoxXyxy& b) {
  const double ix = std::max(0.0, std::min(a.x2, b.x2) - std::max(a.x1, b.x1));
  const double iy = std::max(0.0, std::min(a.y2, b.y2) - std::max(a.y1, b.y1));
  const double inter = ix * iy;
  const double area_a = std::max(0.0, a.x2 - a.x1) * std::max(0.0, a.y2 - a.y1);
  const double area_b = std::max(0.0, b.x2 - b.x1) * std::max(0.0, b.y2 - b.y1);
  const double uni = area_a + area_b - inter;
  return uni > 0 ? inter / uni : 0.0;
}

// ---- matching ---------------------------------------------------------------

// Detections of one (class, image) cell in score-descending order with their
// TP flags, plus the cell's ground-truth count.
struct CellMatch {
  std::vector<std::pair<double, bool>> scored;  // (score, is_tp)
  int64_t gts = 0;
};

namespace detail {

// indices of dets sorted by score descending, ties by input order
inline std::vector<size_t> score_order(const std::vector<DetBox>& dets) {
  std::vector<size_t> order(dets.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](size_t a, size_t b) { return dets[a].score > dets[b].score; });
  return order;
}

}  // namespace detail

// Greedy per-cell matching: walk detections by descending score; each takes
// the highest-IoU still-unmatched ground truth of its cell if that IoU
// reaches the threshold.
inline CellMatch match_greedy(const std::vector<DetBox>& dets, const std::vector<GtBox>& gts,
                              double iou_thr, int class_id, const std::string& image_id) {
  std::vector<const GtBox*> cell_gts;
  for (const auto& g : gts)
    if (g.class_id == class_id && g.image_id == image_id) cell_gts.push_back(&g);
  std::vector<bool> taken(cell_gts.size(), false);

  CellMatch out;
  out.gts = static_cast<int64_t>(cell_gts.size());
  for (size_t idx : detail::score_order(dets)) {
    const DetBox& d = dets[idx];
    if (d.class_id != class_id || d.image_id != image_id) continue;
    double best = -1.0;
    size_t best_gt = cell_gts.size();
    for (size_t gi = 0; gi < cell_gts.size(); ++gi) {
      if (taken[gi]) continue;
      const double v = iou(d.bbox, cell_gts[gi]->bbox);
      if (v > best) {
        best = v;
        best_gt = gi;
      }
    }
    const bool tp = best_gt < cell_gts.size() && best >= iou_thr;
    if (tp) taken[best_gt] = true;
    out.scored.emplace_back(d.score, tp);
  }
  return out;
}

// ---- precision / recall / AP ---------------------------------------------------

struct PrPoint {
  double precision = 0, recall = 0;
};

// Cumulative precision/recall over flags already in score order.
inline std::vector<PrPoint> pr_curve(const std::vector<char>& flags, int64_t total_gt) {
  if (total_gt < 0) throw MetricsError("pr_curve: negative ground-truth count");
  std::vector<PrPoint> curve;
  curve.reserve(flags.size());
  double tp = 0, fp = 0;
  for (char f : flags) {
    if (f)
      tp += 1;
    else
      fp += 1;
    curve.push_back({tp / (tp + fp), total_gt > 0 ? tp / static_cast<double>(total_gt) : 0.0});
  }
  return curve;
}

// All-point interpolation: precision is replaced by its running maximum from
// the right, then the envelope is integrated exactly over recall increments.
inline double ap(const std::vector<PrPoint>& curve) {
  if (curve.empty()) return 0.0;
  std::vector<double> envelope(curve.size());
  double running = 0;
  for (size_t i = curve.size(); i-- > 0;) {
    running = std::max(running, curve[i].precision);
    envelope[i] = running;
  }
  double area = 0, prev_recall = 0;
  for (size_t i = 0; i < curve.size(); ++i) {
    area += (curve[i].recall - prev_recall) * envelope[i];
    prev_recall = curve[i].recall;
  }
  return area;
}

namespace detail {

// One class across all images: global score order (ties by input order),
// greedy matching with per-image single-use ground truths.
inline double ap_of_class(const std::vector<DetBox>& dets, const std::vector<GtBox>& gts,
                          double iou_thr, int class_id, int64_t* tp_out = nullptr,
                          int64_t* fp_out = nullptr, int64_t* gt_out = nullptr) {
  std::map<std::string, std::vector<const GtBox*>> gt_by_image;
  int64_t total_gt = 0;
  for (const auto& g : gts)
    if (g.class_id == class_id) {
      gt_by_image[g.image_id].push_back(&g);
      ++total_gt;
    }
  std::map<std::string, std::vector<bool>> taken;
  for (auto& [img, v] : gt_by_image) taken[img].assign(v.size(), false);

  std::vector<char> flags;
  for (size_t idx : score_order(dets)) {
    const DetBox& d = dets[idx];
    if (d.class_id != class_id) continue;
    bool tp = false;
    auto it = gt_by_image.find(d.image_id);
    if (it != gt_by_image.end()) {
      double best = -1.0;
      size_t best_gt = it->second.size();
      auto& used = taken[d.image_id];
      for (size_t gi = 0; gi < it->second.size(); ++gi) {
        if (used[gi]) continue;
        const double v = iou(d.bbox, it->second[gi]->bbox);
        if (v > best) {
          best = v;
          best_gt = gi;
        }
      }
      if (best_gt < it->second.size() && best >= iou_thr) {
        tp = true;
        used[best_gt] = true;
      }
    }
    flags.push_back(tp ? 1 : 0);
  }
  if (tp_out) {
    int64_t tp_n = 0;
    for (char f : flags) tp_n += f;
    *tp_out = tp_n;
    *fp_out = static_cast<int64_t>(flags.size()) - tp_n;
    *gt_out = total_gt;
  }
  if (total_gt == 0) return 0.0;  // detections but nothing to find
  return ap(pr_curve(flags, total_gt));
}

}  // namespace detail

// Mean AP over classes present in the ground truth; with include_empty,
// classes that only appear in detections contribute AP 0 to the mean.
inline double map_at(const std::vector<DetBox>& dets, const std::vector<GtBox>& gts,
                     double iou_thr, bool include_empty = false) {
  if (gts.empty()) throw MetricsError("map_at: no ground truth boxes; metric undefined");
  std::set<int> classes;
  for (const auto& g : gts) classes.insert(g.class_id);
  if (include_empty)
    for (const auto& d : dets) classes.insert(d.class_id);
  double sum = 0;
  for (int c : classes) sum += detail::ap_of_class(dets, gts, iou_thr, c);
  return sum / static_cast<double>(classes.size());
}

inline std::vector<double> iou_range_50_95() {
  std::vector<double> t;
  for (int i = 0; i < 10; ++i) t.push_back(0.50 + 0.05 * i);
  return t;
}

inline double map_range(const std::vector<DetBox>& dets, const std::vector<GtBox>& gts,
                        bool include_empty = false) {
  double sum = 0;
  for (double t : iou_range_50_95()) sum += map_at(dets, gts, t, include_empty);
  return sum / 10.0;
}

// ---- full evaluation -------------------------------------------------------------

struct ClassCounts {
  int64_t tp = 0, fp = 0, fn = 0;
};

struct EvalResult {
  std::vector<double> thresholds;
  std::map<int, std::vector<double>> ap_per_class;  // class -> AP at each threshold
  std::vector<double> map_per_threshold;
  double map_50 = std::numeric_limits<double>::quiet_NaN();     // when 0.5 is evaluated
  double map_50_95 = std::numeric_limits<double>::quiet_NaN();  // when the full range is
  double precision = 0, recall = 0;  // operating point: all detections, first threshold
  std::map<int, ClassCounts> counts;  // at the first threshold
};

inline EvalResult evaluate(const std::vector<DetBox>& dets, const std::vector<GtBox>& gts,
                           const std::vector<double>& thresholds, bool include_empty = false) {
  if (gts.empty()) throw MetricsError("evaluate: no ground truth boxes; metric undefined");
  if (thresholds.empty()) throw MetricsError("evaluate: no thresholds given");
  std::set<int> classes;
  for (const auto& g : gts) classes.insert(g.class_id);
  if (include_empty)
    for (const auto& d : dets) classes.insert(d.class_id);

  EvalResult res;
  res.thresholds = thresholds;
  res.map_per_threshold.assign(thresholds.size(), 0.0);
  int64_t tp_total = 0, fp_total = 0, gt_total = 0;
  for (int c : classes) {
    auto& aps = res.ap_per_class[c];
    for (size_t ti = 0; ti < thresholds.size(); ++ti) {
      int64_t tp = 0, fp = 0, gt = 0;
      const double a = detail::ap_of_class(dets, gts, thresholds[ti], c, &tp, &fp, &gt);
      aps.push_back(a);
      res.map_per_threshold[ti] += a / static_cast<double>(classes.size());
      if (ti == 0) {
        res.counts[c] = {tp, fp, gt - tp};
        tp_total += tp;
        fp_total += fp;
        gt_total += gt;
      }
    }
  }
  res.precision = tp_total + fp_total > 0
                      ? static_cast<double>(tp_total) / static_cast<double>(tp_total + fp_total)
                      : 0.0;
  res.recall = gt_total > 0 ? static_cast<double>(tp_total) / static_cast<double>(gt_total) : 0.0;
  for (size_t ti = 0; ti < thresholds.size(); ++ti)
    if (std::abs(thresholds[ti] - 0.5) < 1e-9) res.map_50 = res.map_per_threshold[ti];
  if (thresholds.size() == 10) {
    double sum = 0;
    for (double m : res.map_per_threshold) sum += m;
    res.map_50_95 = sum / 10.0;
  }
  return res;
}

// ---- nms ----------------------------------------------------------------------

// Greedy suppression in score order. Boxes only compete within the same
// image, and within the same class when per_class is set. Survivors come
// back score-descending.
inline std::vector<DetBox> nms(const std::vector<DetBox>& dets, double iou_thr,
                               bool per_class = true) {
  std::vector<DetBox> kept;
  for (size_t idx : detail::score_order(dets)) {
    const DetBox& d = dets[idx];
    bool suppressed = false;
    for (const auto& k : kept) {
      if (k.image_id != d.image_id) continue;
      if (per_class && k.class_id != d.class_id) continue;
      if (iou(k.bbox, d.bbox) > iou_thr) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) kept.push_back(d);
  }
  return kept;
}

// ---- json-lines io ------------------------------------------------------------------

namespace detail {

inline void fail_line(const std::string& origin, size_t line_no, const std::string& msg) {
  throw MetricsError(origin + ":" + std::to_string(line_no) + ": " + msg);
}

inline BoxXyxy parse_bbox(const nlohmann::json& j, const std::string& origin, size_t line_no) {
  if (!j.is_array() || j.size() != 4) fail_line(origin, line_no, "bbox must be [x1,y1,x2,y2]");
  double v[4];
  for (size_t i = 0; i < 4; ++i) {
    if (!j[i].is_number()) fail_line(origin, line_no, "bbox values must be numbers");
    v[i] = j[i].get<double>();
    if (!std::isfinite(v[i])) fail_line(origin, line_no, "bbox values must be finite");
  }
  if (v[2] <= v[0] || v[3] <= v[1])
    fail_line(origin, line_no, "bbox must satisfy x2 > x1 and y2 > y1");
  return {v[0], v[1], v[2], v[3]};
}

inline nlohmann::json parse_line_object(const std::string& line, const std::string& origin,
                                        size_t line_no,
                                        const std::vector<std::string>& required) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    fail_line(origin, line_no, std::string("invalid json: ") + e.what());
  }
  if (!j.is_object()) fail_line(origin, line_no, "each line must be a json object");
  for (const auto& k : required)
    if (!j.contains(k)) fail_line(origin, line_no, "missing field '" + k + "'");
  for (const auto& [k, _] : j.items()) {
    bool known = false;
    for (const auto& r : required) known |= (k == r);
    if (!known) fail_line(origin, line_no, "unexpected field '" + k + "'");
  }
  if (!j.at("image_id").is_string()) fail_line(origin, line_no, "image_id must be a string");
  if (!j.at("class_id").is_number_integer())
    fail_line(origin, line_no, "class_id must be an integer");
  return j;
}

}  // namespace detail

inline std::vector<DetBox> parse_detections(std::istream& in, const std::string& origin) {
  std::vector<DetBox> out;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j =
        detail::parse_line_object(line, origin, line_no, {"image_id", "class_id", "bbox", "score"});
    DetBox d;
    d.image_id = j.at("image_id").get<std::string>();
    d.class_id = j.at("class_id").get<int>();
    d.bbox = detail::parse_bbox(j.at("bbox"), origin, line_no);
    if (!j.at("score").is_number()) detail::fail_line(origin, line_no, "score must be a number");
    d.score = j.at("score").get<double>();
    if (!std::isfinite(d.score) || d.score < 0.0 || d.score > 1.0)
      detail::fail_line(origin, line_no, "score must be in [0,1]");
    out.push_back(std::move(d));
  }
  return out;
}

inline std::vector<GtBox> parse_ground_truth(std::istream& in, const std::string& origin) {
  std::vector<GtBox> out;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j =
        detail::parse_line_object(line, origin, line_no, {"image_id", "class_id", "bbox"});
    GtBox g;
    g.image_id = j.at("image_id").get<std::string>();
    g.class_id = j.at("class_id").get<int>();
    g.bbox = detail::parse_bbox(j.at("bbox"), origin, line_no);
    out.push_back(std::move(g));
  }
  return out;
}

inline std::vector<DetBox> load_detections(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw MetricsError("cannot open detections file: " + path);
  return parse_detections(f, path);
}

inline std::vector<GtBox> load_ground_truth(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw MetricsError("cannot open ground-truth file: " + path);
  return parse_ground_truth(f, path);
}

}  // namespace fdm

#endif  // FDM_METRICS_HPP
