#ifndef FDM_COST_HPP
#define FDM_COST_HPP

#include <cinttypes>
#include <cstdio>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "fdm/graph.hpp"

// Closed-form cost accounting over a graph spec. Parameter counts cover every
// learnable scalar of the unfused blocks (conv weights, biases, norm scales
// and shifts); batchnorm running statistics are state, not parameters, and
// are excluded. MACs count multiply-accumulates of convolutions at batch 1;
// normalization, activations, pooling, softmax, grid sampling and the small
// attention matmuls contribute no MACs in this ledger.

namespace fdm {

struct CostRow {
  std::string id;
  std::string kind;
  uint64_t params = 0;
  uint64_t macs = 0;
};

struct CostReport {
  std::string name;
  int64_t imgsz = 0;
  int64_t flops_factor = 2;  // FLOPs per MAC
  std::vector<CostRow> rows;
  uint64_t total_params = 0;
  uint64_t total_macs = 0;

  double gflops() const {
    return static_cast<double>(flops_factor) * static_cast<double>(total_macs) / 1e9;
  }
};

namespace detail {

inline uint64_t conv_params(uint64_t ci, uint64_t co, uint64_t k, bool bias) {
  return ci * co * k * k + (bias ? co : 0);
}

// conv + batchnorm scale/shift
inline uint64_t cbs_params(uint64_t ci, uint64_t co, uint64_t k) {
  return ci * co * k * k + 2 * co;
}

inline uint64_t conv_macs(uint64_t ci, uint64_t co, uint64_t k, uint64_t ho, uint64_t wo) {
  return co * ho * wo * k * k * ci;
}

inline uint64_t bottleneck_params(uint64_t c) { return 2 * cbs_params(c, c, 3); }

inline uint64_t fastblock_params(uint64_t c) {
  const uint64_t cp = c / 4;
  return cp * cp * 9           // partial 3x3
         + cbs_params(c, 2 * c, 1)  // expand
         + conv_params(2 * c, c, 1, false);  // project
}

}  // namespace detail

// Per-node params and MACs for one node, given its input shape.
inline CostRow node_cost(const GraphSpec& g, const NodeSpec& n, const Shape& in) {
  using namespace detail;
  CostRow row{n.id, n.kind, 0, 0};
  const uint64_t ci = static_cast<uint64_t>(in.c);
  const uint64_t h = static_cast<uint64_t>(in.h), w = static_cast<uint64_t>(in.w);

  if (n.kind == "conv_bn_silu") {
    const uint64_t co = static_cast<uint64_t>(n.attr("out_channels"));
    const uint64_t k = static_cast<uint64_t>(n.attr("kernel"));
    const uint64_t st = static_cast<uint64_t>(n.attr("stride"));
    const uint64_t ho = (h + 2 * (k / 2) - k) / st + 1;
    const uint64_t wo = (w + 2 * (k / 2) - k) / st + 1;
    row.params = cbs_params(ci, co, k);
    row.macs = conv_macs(ci, co, k, ho, wo);
  } else if (n.kind == "c2f" || n.kind == "fast_c2f") {
    const uint64_t co = static_cast<uint64_t>(n.attr("out_channels"));
    const uint64_t reps = static_cast<uint64_t>(n.attr("n"));
    const uint64_t hid = co / 2;
    row.params = cbs_params(ci, co, 1) + cbs_params((2 + reps) * hid, co, 1);
    row.macs = conv_macs(ci, co, 1, h, w) + conv_macs((2 + reps) * hid, co, 1, h, w);
    if (n.kind == "c2f") {
      row.params += reps * bottleneck_params(hid);
      row.macs += reps * 2 * conv_macs(hid, hid, 3, h, w);
    } else {
      const uint64_t cp = hid / 4;
      row.params += reps * fastblock_params(hid);
      row.macs += reps * (conv_macs(cp, cp, 3, h, w)        // partial conv
                          + conv_macs(hid, 2 * hid, 1, h, w)  // expand
                          + conv_macs(2 * hid, hid, 1, h, w));  // project
    }
  } else if (n.kind == "sppf") {
    const uint64_t co = static_cast<uint64_t>(n.attr("out_channels"));
    const uint64_t hid = ci / 2;
    row.params = cbs_params(ci, hid, 1) + cbs_params(4 * hid, co, 1);
    row.macs = conv_macs(ci, hid, 1, h, w) + conv_macs(4 * hid, co, 1, h, w);
  } else if (n.kind == "dysample") {
    const uint64_t sc = static_cast<uint64_t>(n.attr("scale"));
    const uint64_t gr = static_cast<uint64_t>(n.attr("groups"));
    const uint64_t off = 2 * gr * sc * sc;
    row.params = conv_params(ci, off, 1, true);
    row.macs = conv_macs(ci, off, 1, h, w);
  } else if (n.kind == "ema" || n.kind == "ema_head" || n.kind == "detect_head") {
    uint64_t ci_head = ci;
    if (n.kind != "detect_head") {
      const uint64_t gr =
          static_cast<uint64_t>(n.attr(n.kind == "ema" ? "groups" : "ema_groups"));
      const uint64_t cg = ci / gr;
      // 1x1 over pooled row+column profiles, 3x3 over the folded map, both
      // biased, plus the per-channel groupnorm affine
      row.params = conv_params(cg, cg, 1, true) + conv_params(cg, cg, 3, true) + 2 * cg;
      row.macs = gr * cg * cg * (h + w)      // profile conv
                 + gr * conv_macs(cg, cg, 3, h, w);  // folded 3x3
    }
    if (n.kind != "ema") {
      const uint64_t c2 = static_cast<uint64_t>(n.attr("box_width"));
      const uint64_t c3 = static_cast<uint64_t>(n.attr("cls_width"));
      const uint64_t nb = 4 * static_cast<uint64_t>(g.meta.reg_max);
      const uint64_t nc = static_cast<uint64_t>(g.meta.nc);
      row.params += ci_head * c2 * 9 + 2 * c2 + c2 * c2 * 9 + 2 * c2 + conv_params(c2, nb, 1, true);
      row.params += ci_head * c3 * 9 + 2 * c3 + c3 * c3 * 9 + 2 * c3 + conv_params(c3, nc, 1, true);
      row.macs += conv_macs(ci_head, c2, 3, h, w) + conv_macs(c2, c2, 3, h, w) +
                  conv_macs(c2, nb, 1, h, w);
      row.macs += conv_macs(ci_head, c3, 3, h, w) + conv_macs(c3, c3, 3, h, w) +
                  conv_macs(c3, nc, 1, h, w);
    }
  }
  // input, upsample_nearest, concat: zero params, zero MACs
  return row;
}

inline CostReport cost_report(const GraphSpec& g, int64_t imgsz, int64_t flops_factor = 2) {
  auto shapes = infer_shapes(g, imgsz);
  CostReport rep;
  rep.name = g.meta.name;
  rep.imgsz = imgsz;
  rep.flops_factor = flops_factor;
  for (const auto& n : g.nodes) {
    const Shape in = n.inputs.empty() ? shapes.at(n.id) : shapes.at(n.inputs[0]);
    CostRow row = node_cost(g, n, in);
    rep.total_params += row.params;
    rep.total_macs += row.macs;
    rep.rows.push_back(std::move(row));
  }
  return rep;
}

// MACs of the partial 3x3 inside one fast block vs the same 3x3 applied to
// all channels: (c/4)^2 / c^2. Returned as an exact integer pair.
struct MacRatio {
  uint64_t partial = 0;
  uint64_t full = 0;
};

inline MacRatio pconv_mac_ratio(uint64_t channels, uint64_t h, uint64_t w) {
  const uint64_t cp = channels / 4;
  return {detail::conv_macs(cp, cp, 3, h, w), detail::conv_macs(channels, channels, 3, h, w)};
}

// ---- comparison -------------------------------------------------------------

struct KindDelta {
  uint64_t base_params = 0, other_params = 0;
  uint64_t base_macs = 0, other_macs = 0;
};

struct CostDiff {
  std::string base_name, other_name;
  uint64_t base_params = 0, other_params = 0;
  uint64_t base_macs = 0, other_macs = 0;
  std::map<std::string, KindDelta> by_kind;

  int64_t param_delta() const {
    return static_cast<int64_t>(other_params) - static_cast<int64_t>(base_params);
  }
  double param_reduction_percent() const {
    if (base_params == 0) return 0.0;
    return 100.0 * (static_cast<double>(base_params) - static_cast<double>(other_params)) /
           static_cast<double>(base_params);
  }
};

inline CostDiff cost_diff(const CostReport& base, const CostReport& other) {
  CostDiff d;
  d.base_name = base.name;
  d.other_name = other.name;
  d.base_params = base.total_params;
  d.other_params = other.total_params;
  d.base_macs = base.total_macs;
  d.other_macs = other.total_macs;
  for (const auto& r : base.rows) {
    d.by_kind[r.kind].base_params += r.params;
    d.by_kind[r.kind].base_macs += r.macs;
  }
  for (const auto& r : other.rows) {
    d.by_kind[r.kind].other_params += r.params;
    d.by_kind[r.kind].other_macs += r.macs;
  }
  return d;
}

// ---- rendering --------------------------------------------------------------

inline std::string format_millions(uint64_t v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.3f", static_cast<double>(v) / 1e6);
  return buf;
}

inline std::string render_text(const CostReport& rep) {
  std::string out;
  char line[256];
  std::snprintf(line, sizeof(line), "%-10s %-16s %14s %16s\n", "node", "kind", "params", "macs");
  out += line;
  for (const auto& r : rep.rows) {
    if (r.params == 0 && r.macs == 0) continue;
    std::snprintf(line, sizeof(line), "%-10s %-16s %14" PRIu64 " %16" PRIu64 "\n", r.id.c_str(),
                  r.kind.c_str(), r.params, r.macs);
    out += line;
  }
  std::snprintf(line, sizeof(line),
                "total: %" PRIu64 " params (%sM), %" PRIu64 " macs, %.3f gflops @%" PRId64
                " (factor %" PRId64 ")\n",
                rep.total_params, format_millions(rep.total_params).c_str(), rep.total_macs,
                rep.gflops(), rep.imgsz, rep.flops_factor);
  out += line;
  return out;
}

inline nlohmann::json render_json(const CostReport& rep) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : rep.rows)
    rows.push_back({{"id", r.id}, {"kind", r.kind}, {"params", r.params}, {"macs", r.macs}});
  return nlohmann::json{{"name", rep.name},
                        {"imgsz", rep.imgsz},
                        {"flops_factor", rep.flops_factor},
                        {"rows", rows},
                        {"total_params", rep.total_params},
                        {"total_macs", rep.total_macs},
                        {"gflops", rep.gflops()}};
}

inline std::string render_text(const CostDiff& d) {
  std::string out;
  char line[256];
  std::snprintf(line, sizeof(line), "%-16s %14s %14s %14s %18s\n", "kind", d.base_name.c_str(),
                d.other_name.c_str(), "param delta", "mac delta");
  out += line;
  for (const auto& [kind, kd] : d.by_kind) {
    if (kd.base_params == 0 && kd.other_params == 0 && kd.base_macs == 0 && kd.other_macs == 0)
      continue;
    std::snprintf(line, sizeof(line), "%-16s %14" PRIu64 " %14" PRIu64 " %+14" PRId64
                  " %+18" PRId64 "\n",
                  kind.c_str(), kd.base_params, kd.other_params,
                  static_cast<int64_t>(kd.other_params) - static_cast<int64_t>(kd.base_params),
                  static_cast<int64_t>(kd.other_macs) - static_cast<int64_t>(kd.base_macs));
    out += line;
  }
  std::snprintf(line, sizeof(line),
                "params: %" PRIu64 " -> %" PRIu64 " (%+" PRId64 ", reduction %.1f%%)\n",
                d.base_params, d.other_params, d.param_delta(), d.param_reduction_percent());
  out += line;
  std::snprintf(line, sizeof(line), "macs:   %" PRIu64 " -> %" PRIu64 "\n", d.base_macs,
                d.other_macs);
  out += line;
  return out;
}

inline nlohmann::json render_json(const CostDiff& d) {
  nlohmann::json kinds = nlohmann::json::object();
  for (const auto& [kind, kd] : d.by_kind)
    kinds[kind] = {{"base_params", kd.base_params},
                   {"other_params", kd.other_params},
                   {"base_macs", kd.base_macs},
                   {"other_macs", kd.other_macs}};
  return nlohmann::json{{"base", d.base_name},
                        {"other", d.other_name},
                        {"base_params", d.base_params},
                        {"other_params", d.other_params},
                        {"param_delta", d.param_delta()},
                        {"param_reduction_percent", d.param_reduction_percent()},
                        {"base_macs", d.base_macs},
                        {"other_macs", d.other_macs},
                        {"by_kind", kinds}};
}

}  // namespace fdm

#endif  // FDM_COST_HPP
