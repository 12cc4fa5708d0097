#ifndef FDM_TESTS_ORACLES_HPP
#define FDM_TESTS_ORACLES_HPP

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "fdm/metrics.hpp"
#include "fdm/tensor.hpp"

// Brute-force reference implementations for the evaluation metrics, written
// against precomputed IoU matrices and quadratic scans so they share no code
// with the library paths they check.

namespace oracle {

using fdm::BoxXyxy;
using fdm::DetBox;
using fdm::GtBox;

inline std::vector<size_t> by_score(const std::vector<DetBox>& dets) {
  std::vector<size_t> idx(dets.size());
  for (size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::sort(idx.begin(), idx.end(), [&](size_t a, size_t b) {
    if (dets[a].score != dets[b].score) return dets[a].score > dets[b].score;
    return a < b;  // stable tie-break by input order
  });
  return idx;
}

// Greedy matching for one (class, image) cell over an explicit IoU matrix.
inline fdm::CellMatch match_cell(const std::vector<DetBox>& dets, const std::vector<GtBox>& gts,
                                 double thr, int class_id, const std::string& image_id) {
  std::vector<size_t> cell_dets, cell_gts;
  for (size_t i = 0; i < dets.size(); ++i)
    if (dets[i].class_id == class_id && dets[i].image_id == image_id) cell_dets.push_back(i);
  for (size_t i = 0; i < gts.size(); ++i)
    if (gts[i].class_id == class_id && gts[i].image_id == image_id) cell_gts.push_back(i);

  std::vector<std::vector<double>> m(cell_dets.size(), std::vector<double>(cell_gts.size()));
  for (size_t di = 0; di < cell_dets.size(); ++di)
    for (size_t gi = 0; gi < cell_gts.size(); ++gi)
      m[di][gi] = fdm::iou(dets[cell_dets[di]].bbox, gts[cell_gts[gi]].bbox);

  std::sort(cell_dets.begin(), cell_dets.end());  // input order
  std::vector<size_t> order;                      // positions into cell_dets, by score
  for (size_t p = 0; p < cell_dets.size(); ++p) order.push_back(p);
  std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    if (dets[cell_dets[a]].score != dets[cell_dets[b]].score)
      return dets[cell_dets[a]].score > dets[cell_dets[b]].score;
    return cell_dets[a] < cell_dets[b];
  });

  fdm::CellMatch out;
  out.gts = static_cast<int64_t>(cell_gts.size());
  std::vector<bool> used(cell_gts.size(), false);
  for (size_t p : order) {
    double best = -1;
    size_t arg = cell_gts.size();
    for (size_t gi = 0; gi < cell_gts.size(); ++gi)
      if (!used[gi] && m[p][gi] > best) {
        best = m[p][gi];
        arg = gi;
      }
    bool tp = arg < cell_gts.size() && best >= thr;
    if (tp) used[arg] = true;
    out.scored.emplace_back(dets[cell_dets[p]].score, tp);
  }
  return out;
}

// All-point AP via a quadratic right-max scan over the raw cumulative curve.
inline double ap_rect(const std::vector<char>& flags, int64_t total_gt) {
  if (flags.empty() || total_gt <= 0) return 0.0;
  const size_t n = flags.size();
  std::vector<double> prec(n), rec(n);
  double tp = 0;
  for (size_t i = 0; i < n; ++i) {
    tp += flags[i] ? 1 : 0;
    prec[i] = tp / static_cast<double>(i + 1);
    rec[i] = tp / static_cast<double>(total_gt);
  }
  double area = 0;
  for (size_t i = 0; i < n; ++i) {
    double env = 0;
    for (size_t j = i; j < n; ++j) env = std::max(env, prec[j]);
    area += (rec[i] - (i ? rec[i - 1] : 0.0)) * env;
  }
  return area;
}

// Midpoint Riemann sum over [0,1] with a cell count divisible by every
// ground-truth total the fuzzer can produce (1..4), so no cell ever straddles
// a recall breakpoint and the sum equals the exact step integral.
inline double ap_riemann(const std::vector<char>& flags, int64_t total_gt) {
  if (flags.empty() || total_gt <= 0) return 0.0;
  const size_t n = flags.size();
  std::vector<double> prec(n), rec(n);
  double tp = 0;
  for (size_t i = 0; i < n; ++i) {
    tp += flags[i] ? 1 : 0;
    prec[i] = tp / static_cast<double>(i + 1);
    rec[i] = tp / static_cast<double>(total_gt);
  }
  const int cells = 9996;  // divisible by 1, 2, 3 and 4
  double sum = 0;
  for (int k = 0; k < cells; ++k) {
    const double r = (k + 0.5) / cells;
    double p = 0;
    for (size_t i = 0; i < n; ++i)
      if (rec[i] >= r) p = std::max(p, prec[i]);
    sum += p;
  }
  return sum / cells;
}

// One class across images: flags in global score order, then rectangle AP.
// The merged flag sequence and ground-truth total are exposed so other
// integrators (the Riemann cross-check) can run over the same inputs.
inline double ap_of_class(const std::vector<DetBox>& dets, const std::vector<GtBox>& gts,
                          double thr, int class_id, std::vector<char>* flags_out = nullptr,
                          int64_t* gt_out = nullptr) {
  std::set<std::string> images;
  for (const auto& d : dets)
    if (d.class_id == class_id) images.insert(d.image_id);
  for (const auto& g : gts)
    if (g.class_id == class_id) images.insert(g.image_id);

  // per-image matches, then merge every (score, flag) in global score order
  std::vector<std::pair<double, size_t>> keyed;  // (score, original det index)
  std::map<size_t, bool> flag_of;
  int64_t total_gt = 0;
  for (const auto& img : images) {
    fdm::CellMatch cm = match_cell(dets, gts, thr, class_id, img);
    total_gt += cm.gts;
    // recover original indices by re-walking the cell in the same order
    std::vector<size_t> cell;
    for (size_t i = 0; i < dets.size(); ++i)
      if (dets[i].class_id == class_id && dets[i].image_id == img) cell.push_back(i);
    std::sort(cell.begin(), cell.end(), [&](size_t a, size_t b) {
      if (dets[a].score != dets[b].score) return dets[a].score > dets[b].score;
      return a < b;
    });
    for (size_t p = 0; p < cell.size(); ++p) {
      keyed.emplace_back(dets[cell[p]].score, cell[p]);
      flag_of[cell[p]] = cm.scored[p].second;
    }
  }
  std::sort(keyed.begin(), keyed.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  std::vector<char> flags;
  for (const auto& [score, idx] : keyed) flags.push_back(flag_of[idx] ? 1 : 0);
  if (flags_out) *flags_out = flags;
  if (gt_out) *gt_out = total_gt;
  if (total_gt == 0) return 0.0;
  return ap_rect(flags, total_gt);
}

inline double map_at(const std::vector<DetBox>& dets, const std::vector<GtBox>& gts, double thr) {
  std::set<int> classes;
  for (const auto& g : gts) classes.insert(g.class_id);
  double sum = 0;
  for (int c : classes) sum += ap_of_class(dets, gts, thr, c);
  return sum / static_cast<double>(classes.size());
}

// Quadratic reference NMS over a precomputed IoU matrix.
inline std::vector<DetBox> nms(const std::vector<DetBox>& dets, double thr, bool per_class) {
  std::vector<std::vector<double>> m(dets.size(), std::vector<double>(dets.size()));
  for (size_t i = 0; i < dets.size(); ++i)
    for (size_t j = 0; j < dets.size(); ++j) m[i][j] = fdm::iou(dets[i].bbox, dets[j].bbox);
  std::vector<size_t> order = by_score(dets);
  std::vector<size_t> kept;
  for (size_t i : order) {
    bool dead = false;
    for (size_t k : kept) {
      if (dets[k].image_id != dets[i].image_id) continue;
      if (per_class && dets[k].class_id != dets[i].class_id) continue;
      if (m[k][i] > thr) dead = true;
    }
    if (!dead) kept.push_back(i);
  }
  std::vector<DetBox> out;
  for (size_t i : kept) out.push_back(dets[i]);
  return out;
}

// ---- fuzz instance generation ---------------------------------------------------

struct Instance {
  std::vector<DetBox> dets;
  std::vector<GtBox> gts;
};

inline BoxXyxy random_box(fdm::Rng& rng) {
  const double x1 = rng.next_unit() * 20.0, y1 = rng.next_unit() * 20.0;
  return {x1, y1, x1 + 1.0 + rng.next_unit() * 10.0, y1 + 1.0 + rng.next_unit() * 10.0};
}

// Up to 5 detections / 4 ground truths / 2 classes / 2 images. Half the
// detections are jittered copies of ground-truth boxes so matches at common
// thresholds actually occur.
inline Instance random_instance(uint64_t seed) {
  fdm::Rng rng(seed);
  Instance inst;
  const int n_gt = static_cast<int>(rng.next_u64() % 5);     // 0..4
  const int n_det = 1 + static_cast<int>(rng.next_u64() % 5);  // 1..5
  auto image = [&]() { return rng.next_u64() % 2 ? "img_a" : "img_b"; };
  auto cls = [&]() { return static_cast<int>(rng.next_u64() % 2); };
  for (int i = 0; i < n_gt; ++i) inst.gts.push_back({image(), cls(), random_box(rng)});
  for (int i = 0; i < n_det; ++i) {
    DetBox d;
    if (!inst.gts.empty() && rng.next_unit() < 0.5) {
      const GtBox& g = inst.gts[rng.next_u64() % inst.gts.size()];
      d.image_id = g.image_id;
      d.class_id = g.class_id;
      const double jx = (rng.next_unit() - 0.5) * 4.0, jy = (rng.next_unit() - 0.5) * 4.0;
      d.bbox = {g.bbox.x1 + jx, g.bbox.y1 + jy, g.bbox.x2 + jx, g.bbox.y2 + jy};
    } else {
      d.image_id = image();
      d.class_id = cls();
      d.bbox = random_box(rng);
    }
    d.score = rng.next_unit();
    inst.dets.push_back(std::move(d));
  }
  return inst;
}

}  // namespace oracle

#endif  // FDM_TESTS_ORACLES_HPP
