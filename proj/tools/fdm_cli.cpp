// fdm: architecture inspection, cost ledgers, forward execution, gradient
// checks, and detection-metric evaluation over the committed graph presets.
//
// Exit codes: 0 success, 1 failed expectation or gradient check, 2 usage or
// input errors.

#include <cinttypes>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "fdm/block_grad.hpp"
#include "fdm/cost.hpp"
#include "fdm/graph.hpp"
#include "fdm/io.hpp"
#include "fdm/metrics.hpp"

namespace {

struct GraphOpts {
  int model_id = 0;
  std::string graph_path;
  int64_t nc = 10;
  int64_t imgsz = 640;
  uint64_t seed = 42;
  std::string format = "text";
};

void add_graph_opts(CLI::App* cmd, GraphOpts& o, bool with_graph_source = true) {
  if (with_graph_source) {
    auto* mid = cmd->add_option("--model-id", o.model_id, "preset id (1..6)")
                    ->check(CLI::Range(1, 6));
    auto* gp = cmd->add_option("--graph", o.graph_path, "graph json file");
    mid->excludes(gp);
    gp->excludes(mid);
    cmd->add_option("--nc", o.nc, "number of classes for presets")->capture_default_str();
  }
  cmd->add_option("--imgsz", o.imgsz, "square input size")->capture_default_str();
  cmd->add_option("--seed", o.seed, "weight init seed")->capture_default_str();
  cmd->add_option("--format", o.format, "text|json")
      ->check(CLI::IsMember({"text", "json"}))
      ->capture_default_str();
}

fdm::GraphSpec resolve_graph(const GraphOpts& o) {
  if (o.imgsz <= 0 || o.imgsz % 32 != 0)
    throw fdm::GraphError("--imgsz must be a positive multiple of 32, got " +
                          std::to_string(o.imgsz));
  if (!o.graph_path.empty()) return fdm::load_graph(o.graph_path);
  if (o.model_id == 0) throw fdm::GraphError("pass --model-id 1..6 or --graph FILE");
  return fdm::build_preset(o.model_id, o.nc, o.imgsz);
}

int cmd_describe(const GraphOpts& o) {
  fdm::GraphSpec g = resolve_graph(o);
  fdm::ShapeReport rep = fdm::shape_infer(g, fdm::Shape{1, 3, o.imgsz, o.imgsz});
  if (o.format == "json") {
    nlohmann::json shapes = nlohmann::json::object();
    for (const auto& [id, s] : rep.shapes)
      shapes[id] = std::vector<int64_t>{s.n, s.c, s.h, s.w};
    nlohmann::json strides = nlohmann::json::array();
    for (const auto& [id, st] : rep.output_strides) strides.push_back({{"id", id}, {"stride", st}});
    // the ShapeReport itself, nothing else: callers diff these across runs
    nlohmann::json out{{"shapes", shapes}, {"output_strides", strides}};
    std::printf("%s\n", out.dump(2).c_str());
    return 0;
  }
  std::printf("%-10s %-16s %-20s %-28s %s\n", "node", "kind", "shape", "attrs", "stride");
  for (const auto& n : g.nodes) {
    const fdm::Shape& s = rep.shapes.at(n.id);
    nlohmann::json attrs = n.attrs;
    std::string stride;
    for (const auto& [id, st] : rep.output_strides)
      if (id == n.id) stride = std::to_string(st);
    std::printf("%-10s %-16s %-20s %-28s %s\n", n.id.c_str(), n.kind.c_str(), s.str().c_str(),
                attrs.dump().c_str(), stride.c_str());
  }
  return 0;
}

int cmd_cost(const GraphOpts& o, int64_t flops_factor, bool has_expect_params,
             uint64_t expect_params, bool has_expect_gflops, double expect_gflops,
             double tolerance) {
  fdm::GraphSpec g = resolve_graph(o);
  fdm::CostReport rep = fdm::cost_report(g, o.imgsz, flops_factor);
  if (o.format == "json")
    std::printf("%s\n", fdm::render_json(rep).dump(2).c_str());
  else
    std::printf("%s", fdm::render_text(rep).c_str());

  int rc = 0;
  if (has_expect_params) {
    const double got = static_cast<double>(rep.total_params);
    const double want = static_cast<double>(expect_params);
    const double allowed = want * tolerance / 100.0;
    const bool ok = std::abs(got - want) <= allowed;
    std::printf("expect-params %" PRIu64 " tolerance %.3f%%: %s (got %" PRIu64 ", off by %+.4f%%)\n",
                expect_params, tolerance, ok ? "pass" : "FAIL", rep.total_params,
                want > 0 ? 100.0 * (got - want) / want : 0.0);
    if (!ok) rc = 1;
  }
  if (has_expect_gflops) {
    const double got = rep.gflops();
    const double allowed = expect_gflops * tolerance / 100.0;
    const bool ok = std::abs(got - expect_gflops) <= allowed;
    std::printf("expect-gflops %.3f tolerance %.3f%%: %s (got %.3f)\n", expect_gflops, tolerance,
                ok ? "pass" : "FAIL", got);
    if (!ok) rc = 1;
  }
  return rc;
}

int cmd_compare(const GraphOpts& o, int against, int64_t flops_factor) {
  GraphOpts other = o;
  other.model_id = against;
  other.graph_path.clear();
  fdm::CostReport base = fdm::cost_report(resolve_graph(o), o.imgsz, flops_factor);
  fdm::CostReport next = fdm::cost_report(resolve_graph(other), o.imgsz, flops_factor);
  fdm::CostDiff d = fdm::cost_diff(base, next);
  if (o.format == "json")
    std::printf("%s\n", fdm::render_json(d).dump(2).c_str());
  else
    std::printf("%s", fdm::render_text(d).c_str());
  return 0;
}

int cmd_forward(const GraphOpts& o, const std::string& input_path, bool random_input,
                const std::string& out_dir) {
  namespace fs = std::filesystem;
  fdm::GraphSpec g = resolve_graph(o);

  fdm::TensorF image;
  nlohmann::json input_desc;
  if (random_input) {
    image = fdm::random_uniform<float>(fdm::Shape{1, 3, o.imgsz, o.imgsz},
                                       o.seed ^ 0x9e3779b97f4a7c15ULL, 0.0f, 1.0f);
    input_desc = {{"kind", "random"}, {"imgsz", o.imgsz}};
  } else {
    image = fdm::fdmt_read_tensor<float>(input_path);
    input_desc = {{"kind", "file"}, {"path", input_path}};
  }
  const fdm::Shape in_shape = image.shape();
  if (in_shape.c != 3 || in_shape.h != in_shape.w)
    throw fdm::IoError("forward input must be (n,3,s,s), got " + in_shape.str());
  if (in_shape.h % 32 != 0)
    throw fdm::IoError("forward input size must divide by 32, got " + in_shape.str());
  input_desc["checksum"] = fdm::checksum(image);

  fdm::Model<float> model(g, o.seed);
  auto outs = model.forward(image);

  fs::create_directories(out_dir);
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& [id, t] : outs) {
    const std::string file = id + ".fdmt";
    fdm::fdmt_write((fs::path(out_dir) / file).string(), t);
    const fdm::Shape& s = t.shape();
    entries.push_back({{"id", id},
                       {"stride", g.node(id).attr("stride")},
                       {"file", file},
                       {"dims", std::vector<int64_t>{s.n, s.c, s.h, s.w}},
                       {"checksum", fdm::checksum(t)}});
  }
  nlohmann::json manifest{{"graph", g.meta.name},
                          {"seed", o.seed},
                          {"input", input_desc},
                          {"outputs", entries}};
  {
    std::ofstream mf(fs::path(out_dir) / "manifest.json");
    if (!mf) throw fdm::IoError("cannot write manifest in " + out_dir);
    mf << manifest.dump(2) << "\n";
  }
  std::printf("wrote %zu head tensors + manifest.json to %s\n", outs.size(), out_dir.c_str());
  return 0;
}

int cmd_gradcheck(const std::string& op, const std::string& format) {
  std::vector<std::string> ops;
  if (op == "all")
    ops = fdm::gradcheck_op_names();
  else
    ops = {op};
  const double tol = 1e-5;
  const std::vector<uint64_t> seeds = {1, 2, 3};

  bool failed = false;
  nlohmann::json rows = nlohmann::json::array();
  if (format == "text")
    std::printf("%-22s %14s %14s %8s\n", "op", "max_rel_error", "max_abs_error", "status");
  for (const auto& name : ops) {
    double worst_rel = 0, worst_abs = 0;
    int64_t points = 0;
    for (uint64_t s : seeds) {
      fdm::GradCheckReport rep = fdm::run_gradcheck(name, s);
      worst_rel = std::max(worst_rel, rep.max_rel_error);
      worst_abs = std::max(worst_abs, rep.max_abs_error);
      points += rep.points_checked;
    }
    const bool ok = worst_rel <= tol;
    failed |= !ok;
    if (format == "json")
      rows.push_back({{"op", name},
                      {"max_rel_error", worst_rel},
                      {"max_abs_error", worst_abs},
                      {"points", points},
                      {"pass", ok}});
    else
      std::printf("%-22s %14.3e %14.3e %8s\n", name.c_str(), worst_rel, worst_abs,
                  ok ? "pass" : "FAIL");
  }
  if (format == "json")
    std::printf("%s\n", nlohmann::json{{"tolerance", tol}, {"rows", rows}}.dump(2).c_str());
  return failed ? 1 : 0;
}

int cmd_eval(const std::string& det_path, const std::string& gt_path, double iou_thr, bool range,
             bool include_empty, const std::string& format) {
  auto dets = fdm::load_detections(det_path);
  auto gts = fdm::load_ground_truth(gt_path);
  if (gts.empty()) throw fdm::MetricsError(gt_path + ": ground truth is empty; metric undefined");

  std::vector<double> thresholds = range ? fdm::iou_range_50_95() : std::vector<double>{iou_thr};
  fdm::EvalResult res = fdm::evaluate(dets, gts, thresholds, include_empty);

  if (format == "json") {
    nlohmann::json per_class = nlohmann::json::object();
    for (const auto& [cls, aps] : res.ap_per_class)
      per_class[std::to_string(cls)] = aps;
    nlohmann::json counts = nlohmann::json::object();
    for (const auto& [cls, c] : res.counts)
      counts[std::to_string(cls)] = {{"tp", c.tp}, {"fp", c.fp}, {"fn", c.fn}};
    nlohmann::json out{{"thresholds", res.thresholds},
                       {"ap_per_class", per_class},
                       {"map_per_threshold", res.map_per_threshold},
                       {"precision", res.precision},
                       {"recall", res.recall},
                       {"counts", counts}};
    if (!std::isnan(res.map_50)) out["map_50"] = res.map_50;
    if (!std::isnan(res.map_50_95)) out["map_50_95"] = res.map_50_95;
    std::printf("%s\n", out.dump(2).c_str());
    return 0;
  }

  std::printf("%-8s %12s %8s %8s %8s\n", "class", range ? "ap@0.50" : "ap", "tp", "fp", "fn");
  for (const auto& [cls, aps] : res.ap_per_class) {
    const fdm::ClassCounts& c = res.counts.at(cls);
    std::printf("%-8d %12.4f %8" PRId64 " %8" PRId64 " %8" PRId64 "\n", cls, aps.front(), c.tp,
                c.fp, c.fn);
  }
  std::printf("precision %.4f recall %.4f\n", res.precision, res.recall);
  if (range) {
    std::printf("map@0.50      %.4f\n", res.map_50);
    std::printf("map@0.50:0.95 %.4f\n", res.map_50_95);
  } else {
    std::printf("map@%.2f %.4f\n", thresholds[0], res.map_per_threshold[0]);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"graph presets, cost ledgers, forward runs, gradient checks, detection metrics"};
  app.require_subcommand(1);

  GraphOpts describe_o, params_o, flops_o, compare_o, forward_o;
  std::string eval_format = "text", gradcheck_format = "text";

  auto* describe = app.add_subcommand("describe", "per-node shapes and strides");
  add_graph_opts(describe, describe_o);

  int64_t params_factor = 2;
  uint64_t expect_params = 0;
  double params_tolerance = 0.0, expect_gflops = 0.0;
  auto* params = app.add_subcommand("params", "parameter/MAC ledger");
  add_graph_opts(params, params_o);
  params->add_option("--flops-factor", params_factor, "FLOPs per MAC")->capture_default_str();
  auto* params_expect = params->add_option("--expect-params", expect_params,
                                           "fail (exit 1) unless total matches");
  params->add_option("--tolerance", params_tolerance, "percent tolerance for expectations")
      ->capture_default_str();

  int64_t flops_factor = 2;
  uint64_t flops_expect_params = 0;
  double flops_tolerance = 0.0, flops_expect_gflops = 0.0;
  auto* flops = app.add_subcommand("flops", "same ledger, GFLOPs focus");
  add_graph_opts(flops, flops_o);
  flops->add_option("--flops-factor", flops_factor, "FLOPs per MAC")->capture_default_str();
  auto* flops_expect_p = flops->add_option("--expect-params", flops_expect_params,
                                           "fail (exit 1) unless total matches");
  auto* flops_expect_g = flops->add_option("--expect-gflops", flops_expect_gflops,
                                           "fail (exit 1) unless GFLOPs matches");
  flops->add_option("--tolerance", flops_tolerance, "percent tolerance for expectations")
      ->capture_default_str();

  int against = 0;
  auto* compare = app.add_subcommand("compare", "cost diff between two presets");
  add_graph_opts(compare, compare_o);
  compare->add_option("--against", against, "preset id to diff against")
      ->required()
      ->check(CLI::Range(1, 6));

  std::string forward_input, forward_out;
  bool forward_random = false;
  auto* forward = app.add_subcommand("forward", "run a preset, write head tensors + manifest");
  add_graph_opts(forward, forward_o);
  auto* fwd_in = forward->add_option("--input", forward_input, "input tensor file");
  auto* fwd_rand = forward->add_flag("--random", forward_random, "seeded random input");
  fwd_in->excludes(fwd_rand);
  fwd_rand->excludes(fwd_in);
  forward->add_option("--out", forward_out, "output directory")->required();

  std::string gradcheck_op = "all";
  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient suite");
  gradcheck->add_option("--op", gradcheck_op, "op name or 'all'");
  gradcheck->add_option("--format", gradcheck_format, "text|json")
      ->check(CLI::IsMember({"text", "json"}));

  std::string eval_det, eval_gt;
  double eval_iou = 0.5;
  bool eval_range = false, eval_include_empty = false;
  auto* eval = app.add_subcommand("eval", "detection metrics from json-lines files");
  eval->add_option("--det", eval_det, "detections file")->required();
  eval->add_option("--gt", eval_gt, "ground-truth file")->required();
  auto* eval_iou_opt = eval->add_option("--iou", eval_iou, "matching threshold")
                           ->capture_default_str();
  auto* eval_range_opt =
      eval->add_flag("--range", eval_range, "evaluate thresholds 0.50:0.05:0.95");
  eval_range_opt->excludes(eval_iou_opt);
  eval->add_flag("--include-empty-classes", eval_include_empty,
                 "classes with detections but no ground truth count as AP 0");
  eval->add_option("--format", eval_format, "text|json")->check(CLI::IsMember({"text", "json"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (app.got_subcommand(describe)) return cmd_describe(describe_o);
    if (app.got_subcommand(params))
      return cmd_cost(params_o, params_factor, params_expect->count() > 0, expect_params, false,
                      0.0, params_tolerance);
    if (app.got_subcommand(flops))
      return cmd_cost(flops_o, flops_factor, flops_expect_p->count() > 0, flops_expect_params,
                      flops_expect_g->count() > 0, flops_expect_gflops, flops_tolerance);
    if (app.got_subcommand(compare)) return cmd_compare(compare_o, against, 2);
    if (app.got_subcommand(forward)) {
      if (forward_input.empty() && !forward_random)
        throw fdm::IoError("forward needs --input FILE or --random");
      return cmd_forward(forward_o, forward_input, forward_random, forward_out);
    }
    if (app.got_subcommand(gradcheck)) {
      bool known = gradcheck_op == "all";
      for (const auto& n : fdm::gradcheck_op_names()) known |= (n == gradcheck_op);
      if (!known) {
        std::fprintf(stderr, "error: unknown gradcheck op '%s'\n", gradcheck_op.c_str());
        return 2;
      }
      return cmd_gradcheck(gradcheck_op, gradcheck_format);
    }
    if (app.got_subcommand(eval))
      return cmd_eval(eval_det, eval_gt, eval_iou, eval_range, eval_include_empty, eval_format);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 2;
}
