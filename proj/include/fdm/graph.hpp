#ifndef FDM_GRAPH_HPP
#define FDM_GRAPH_HPP

#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "fdm/blocks.hpp"
#include "fdm/io.hpp"

// Model-as-data: a detection network is a JSON-serializable list of typed
// nodes in topological order. Everything downstream (shape inference, cost
// accounting, materialization into runnable blocks) consumes the same spec.

namespace fdm {

class GraphError : public std::runtime_error {
 public:
  explicit GraphError(const std::string& msg) : std::runtime_error(msg) {}
};

struct NodeSpec {
  std::string id;
  std::string kind;
  std::vector<std::string> inputs;
  std::map<std::string, int64_t> attrs;

  int64_t attr(const std::string& key) const {
    auto it = attrs.find(key);
    if (it == attrs.end())
      throw GraphError("node '" + id + "' (" + kind + ") missing attr '" + key + "'");
    return it->second;
  }
};

struct GraphMeta {
  std::string name;
  int64_t nc = 10;
  int64_t reg_max = 16;
  double width_multiple = 0.5;
  double depth_multiple = 0.33;
};

struct GraphSpec {
  GraphMeta meta;
  std::vector<NodeSpec> nodes;
  std::vector<std::string> outputs;

  const NodeSpec& node(const std::string& id) const {
    for (const auto& n : nodes)
      if (n.id == id) return n;
    throw GraphError("no node with id '" + id + "'");
  }
};

// ---- json ------------------------------------------------------------------

inline void to_json(nlohmann::json& j, const NodeSpec& n) {
  j = nlohmann::json{{"id", n.id}, {"kind", n.kind}, {"inputs", n.inputs}, {"attrs", n.attrs}};
}

inline void from_json(const nlohmann::json& j, NodeSpec& n) {
  j.at("id").get_to(n.id);
  j.at("kind").get_to(n.kind);
  j.at("inputs").get_to(n.inputs);
  n.attrs = j.value("attrs", std::map<std::string, int64_t>{});
}

inline void to_json(nlohmann::json& j, const GraphMeta& m) {
  j = nlohmann::json{{"name", m.name},
                     {"nc", m.nc},
                     {"reg_max", m.reg_max},
                     {"width_multiple", m.width_multiple},
                     {"depth_multiple", m.depth_multiple}};
}

inline void from_json(const nlohmann::json& j, GraphMeta& m) {
  j.at("name").get_to(m.name);
  j.at("nc").get_to(m.nc);
  j.at("reg_max").get_to(m.reg_max);
  m.width_multiple = j.value("width_multiple", 0.5);
  m.depth_multiple = j.value("depth_multiple", 0.33);
}

inline void to_json(nlohmann::json& j, const GraphSpec& g) {
  j = nlohmann::json{{"meta", g.meta}, {"nodes", g.nodes}, {"outputs", g.outputs}};
}

inline void from_json(const nlohmann::json& j, GraphSpec& g) {
  j.at("meta").get_to(g.meta);
  j.at("nodes").get_to(g.nodes);
  j.at("outputs").get_to(g.outputs);
}

inline GraphSpec load_graph(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw GraphError("cannot open graph file: " + path);
  nlohmann::json j;
  try {
    f >> j;
  } catch (const nlohmann::json::exception& e) {
    throw GraphError(path + ": invalid json: " + e.what());
  }
  try {
    return j.get<GraphSpec>();
  } catch (const nlohmann::json::exception& e) {
    throw GraphError(path + ": bad graph structure: " + e.what());
  }
}

inline void save_graph(const std::string& path, const GraphSpec& g) {
  std::ofstream f(path);
  if (!f) throw GraphError("cannot open for writing: " + path);
  nlohmann::json j = g;
  f << j.dump(2) << "\n";
}

// ---- validation -------------------------------------------------------------

namespace detail {

struct KindRule {
  int min_inputs, max_inputs;
  std::vector<const char*> attrs;
};

inline const std::map<std::string, KindRule>& kind_rules() {
  static const std::map<std::string, KindRule> rules = {
      {"input", {0, 0, {"channels"}}},
      {"conv_bn_silu", {1, 1, {"out_channels", "kernel", "stride"}}},
      {"c2f", {1, 1, {"out_channels", "n", "shortcut"}}},
      {"fast_c2f", {1, 1, {"out_channels", "n"}}},
      {"sppf", {1, 1, {"out_channels"}}},
      {"upsample_nearest", {1, 1, {"scale"}}},
      {"dysample", {1, 1, {"scale", "groups"}}},
      {"ema", {1, 1, {"groups"}}},
      {"concat", {2, 8, {}}},
      {"detect_head", {1, 1, {"stride", "box_width", "cls_width"}}},
      {"ema_head", {1, 1, {"stride", "box_width", "cls_width", "ema_groups"}}},
  };
  return rules;
}

}  // namespace detail

// Structural checks: unique ids, known kinds, exact attribute sets, inputs
// referring only to earlier nodes, exactly one input node, reachable declared
// outputs.
inline void validate(const GraphSpec& g) {
  if (g.nodes.empty()) throw GraphError("graph has no nodes");
  if (g.meta.nc < 1) throw GraphError("meta.nc must be positive");
  if (g.meta.reg_max < 1) throw GraphError("meta.reg_max must be positive");
  int input_nodes = 0;
  for (const auto& n : g.nodes) input_nodes += n.kind == "input" ? 1 : 0;
  if (input_nodes != 1)
    throw GraphError("graph must have exactly one input node, found " +
                     std::to_string(input_nodes));
  std::set<std::string> seen;
  for (const auto& n : g.nodes) {
    if (n.id.empty()) throw GraphError("node with empty id");
    if (!seen.insert(n.id).second) throw GraphError("duplicate node id '" + n.id + "'");
    auto it = detail::kind_rules().find(n.kind);
    if (it == detail::kind_rules().end())
      throw GraphError("node '" + n.id + "' has unknown kind '" + n.kind + "'");
    const auto& rule = it->second;
    if (static_cast<int>(n.inputs.size()) < rule.min_inputs ||
        static_cast<int>(n.inputs.size()) > rule.max_inputs)
      throw GraphError("node '" + n.id + "' (" + n.kind + ") takes " +
                       std::to_string(rule.min_inputs) +
                       (rule.max_inputs != rule.min_inputs ? ".." + std::to_string(rule.max_inputs)
                                                           : "") +
                       " inputs, got " + std::to_string(n.inputs.size()));
    for (const auto& in : n.inputs)
      if (!seen.count(in) || in == n.id)
        throw GraphError("node '" + n.id + "' references '" + in +
                         "' which is not an earlier node");
    for (const char* a : rule.attrs)
      if (!n.attrs.count(a))
        throw GraphError("node '" + n.id + "' (" + n.kind + ") missing attr '" + a + "'");
    for (const auto& [k, v] : n.attrs) {
      bool known = false;
      for (const char* a : rule.attrs) known |= (k == a);
      if (!known)
        throw GraphError("node '" + n.id + "' (" + n.kind + ") has unknown attr '" + k + "'");
      if (v < 0) throw GraphError("node '" + n.id + "' attr '" + k + "' is negative");
    }
  }
  if (g.outputs.empty()) throw GraphError("graph declares no outputs");
  for (const auto& o : g.outputs)
    if (!seen.count(o)) throw GraphError("declared output '" + o + "' is not a node");
}

// ---- shape inference -----------------------------------------------------------

// Channel/spatial propagation without running anything. Errors carry the node
// id and the offending shapes.
inline std::map<std::string, Shape> infer_shapes(const GraphSpec& g, int64_t imgsz,
                                                 int64_t batch = 1) {
  validate(g);
  if (imgsz < 1) throw GraphError("image size must be positive");
  std::map<std::string, Shape> shapes;
  for (const auto& n : g.nodes) {
    auto in_shape = [&](size_t i) -> const Shape& { return shapes.at(n.inputs[i]); };
    if (n.kind == "input") {
      shapes[n.id] = Shape{batch, n.attr("channels"), imgsz, imgsz};
    } else if (n.kind == "conv_bn_silu") {
      const Shape& s = in_shape(0);
      const int64_t k = n.attr("kernel"), st = n.attr("stride");
      const int64_t ho = (s.h + 2 * (k / 2) - k) / st + 1;
      const int64_t wo = (s.w + 2 * (k / 2) - k) / st + 1;
      if (ho < 1 || wo < 1)
        throw GraphError("node '" + n.id + "': input " + s.str() + " too small for kernel " +
                         std::to_string(k) + " stride " + std::to_string(st));
      shapes[n.id] = Shape{s.n, n.attr("out_channels"), ho, wo};
    } else if (n.kind == "c2f" || n.kind == "fast_c2f" || n.kind == "sppf") {
      const Shape& s = in_shape(0);
      const int64_t co = n.attr("out_channels");
      if (co % 2 != 0)
        throw GraphError("node '" + n.id + "': out_channels must be even, got " +
                         std::to_string(co));
      if (n.kind == "fast_c2f" && (co / 2) % 4 != 0)
        throw GraphError("node '" + n.id + "': hidden width " + std::to_string(co / 2) +
                         " must divide by 4");
      if (n.kind == "sppf" && s.c % 2 != 0)
        throw GraphError("node '" + n.id + "': input channels must be even, got " + s.str());
      shapes[n.id] = Shape{s.n, co, s.h, s.w};
    } else if (n.kind == "upsample_nearest" || n.kind == "dysample") {
      const Shape& s = in_shape(0);
      const int64_t sc = n.attr("scale");
      if (sc < 1) throw GraphError("node '" + n.id + "': scale must be >= 1");
      if (n.kind == "dysample" && s.c % n.attr("groups") != 0)
        throw GraphError("node '" + n.id + "': channels " + std::to_string(s.c) +
                         " not divisible by groups " + std::to_string(n.attr("groups")));
      shapes[n.id] = Shape{s.n, s.c, s.h * sc, s.w * sc};
    } else if (n.kind == "ema") {
      const Shape& s = in_shape(0);
      if (s.c % n.attr("groups") != 0)
        throw GraphError("node '" + n.id + "': channels " + std::to_string(s.c) +
                         " not divisible by groups " + std::to_string(n.attr("groups")));
      shapes[n.id] = s;
    } else if (n.kind == "concat") {
      Shape acc = in_shape(0);
      for (size_t i = 1; i < n.inputs.size(); ++i) {
        const Shape& s = in_shape(i);
        if (s.n != acc.n || s.h != acc.h || s.w != acc.w)
          throw GraphError("node '" + n.id + "': cannot concat " + acc.str() + " with " +
                           s.str() + " (input '" + n.inputs[i] + "')");
        acc.c += s.c;
      }
      shapes[n.id] = acc;
    } else if (n.kind == "detect_head" || n.kind == "ema_head") {
      const Shape& s = in_shape(0);
      if (n.kind == "ema_head" && s.c % n.attr("ema_groups") != 0)
        throw GraphError("node '" + n.id + "': channels " + std::to_string(s.c) +
                         " not divisible by ema_groups " + std::to_string(n.attr("ema_groups")));
      shapes[n.id] = Shape{s.n, 4 * g.meta.reg_max + g.meta.nc, s.h, s.w};
    } else {
      throw GraphError("node '" + n.id + "': unhandled kind '" + n.kind + "'");
    }
  }
  return shapes;
}

// Head strides in graph order.
inline std::vector<int64_t> head_strides(const GraphSpec& g) {
  std::vector<int64_t> strides;
  for (const auto& id : g.outputs) {
    const NodeSpec& n = g.node(id);
    if (n.kind != "detect_head" && n.kind != "ema_head")
      throw GraphError("output '" + id + "' is not a head node");
    strides.push_back(n.attr("stride"));
  }
  return strides;
}

// Shapes for every node plus the measured input-to-output stride per declared
// output, cross-checked against each head's declared stride attribute.
struct ShapeReport {
  std::map<std::string, Shape> shapes;
  std::vector<std::pair<std::string, int64_t>> output_strides;  // (node id, stride)
};

inline ShapeReport shape_infer(const GraphSpec& g, const Shape& input) {
  validate(g);
  const NodeSpec* in_node = nullptr;
  for (const auto& n : g.nodes)
    if (n.kind == "input") in_node = &n;
  if (input.c != in_node->attr("channels"))
    throw GraphError("input shape " + input.str() + " does not carry the " +
                     std::to_string(in_node->attr("channels")) + " channels node '" +
                     in_node->id + "' declares");
  if (input.h != input.w)
    throw GraphError("input must be square, got " + input.str());
  ShapeReport rep;
  rep.shapes = infer_shapes(g, input.h, input.n);
  for (const auto& id : g.outputs) {
    const Shape& s = rep.shapes.at(id);
    if (input.h % s.h != 0)
      throw GraphError("output '" + id + "' spatial size " + std::to_string(s.h) +
                       " does not divide input " + std::to_string(input.h));
    const int64_t stride = input.h / s.h;
    const int64_t declared = g.node(id).attr("stride");
    if (stride != declared)
      throw GraphError("output '" + id + "' declares stride " + std::to_string(declared) +
                       " but measures " + std::to_string(stride));
    rep.output_strides.emplace_back(id, stride);
  }
  return rep;
}

// ---- presets ---------------------------------------------------------------------

// The six graph presets form a ladder: each applies one architectural move to
// the previous one.
//   1: baseline four-stage detector, heads at strides {8, 16, 32}
//   2: adds the stride-4 pyramid level and its head
//   3: removes the stride-32 level from 2
//   4: swaps neck aggregation blocks for partial-conv fast blocks
//   5: swaps nearest-neighbor upsampling for learned point sampling
//   6: inserts grouped spatial attention before each head
inline GraphSpec build_preset(int model_id, int64_t nc = 10, int64_t input_size = 640) {
  if (model_id < 1 || model_id > 6)
    throw GraphError("model id must be 1..6, got " + std::to_string(model_id));
  if (input_size < 32 || input_size % 32 != 0)
    throw GraphError("input size must be a positive multiple of 32, got " +
                     std::to_string(input_size));
  GraphSpec g;
  g.meta.name = "model" + std::to_string(model_id);
  g.meta.nc = nc;
  g.meta.reg_max = 16;
  g.meta.width_multiple = 0.5;
  g.meta.depth_multiple = 0.33;

  auto node = [&](std::string id, std::string kind, std::vector<std::string> inputs,
                  std::map<std::string, int64_t> attrs) {
    g.nodes.push_back(NodeSpec{std::move(id), std::move(kind), std::move(inputs), std::move(attrs)});
  };
  auto conv = [&](const std::string& id, const std::string& in, int64_t co, int64_t stride) {
    node(id, "conv_bn_silu", {in}, {{"out_channels", co}, {"kernel", 3}, {"stride", stride}});
  };
  auto c2f = [&](const std::string& id, const std::string& in, int64_t co, int64_t n,
                 bool shortcut) {
    node(id, "c2f", {in}, {{"out_channels", co}, {"n", n}, {"shortcut", shortcut ? 1 : 0}});
  };

  // shared backbone
  node("image", "input", {}, {{"channels", 3}});
  conv("b0", "image", 32, 2);
  conv("b1", "b0", 64, 2);
  c2f("b2", "b1", 64, 1, true);
  conv("b3", "b2", 128, 2);
  c2f("b4", "b3", 128, 2, true);
  conv("b5", "b4", 256, 2);
  c2f("b6", "b5", 256, 2, true);
  conv("b7", "b6", 512, 2);
  c2f("b8", "b7", 512, 1, true);
  node("b9", "sppf", {"b8"}, {{"out_channels", 512}});

  const bool p2 = model_id >= 2;       // stride-4 level present
  const bool no_p5 = model_id >= 3;    // stride-32 level removed
  const bool fast = model_id >= 4;     // fast aggregation blocks in the neck
  const bool dys = model_id >= 5;      // learned upsampling
  const bool att = model_id >= 6;      // attention heads

  auto up = [&](const std::string& id, const std::string& in) {
    if (dys)
      node(id, "dysample", {in}, {{"scale", 2}, {"groups", 4}});
    else
      node(id, "upsample_nearest", {in}, {{"scale", 2}});
  };
  auto agg = [&](const std::string& id, const std::string& in, int64_t co) {
    if (fast)
      node(id, "fast_c2f", {in}, {{"out_channels", co}, {"n", 1}});
    else
      c2f(id, in, co, 1, false);
  };

  std::vector<std::pair<std::string, int64_t>> head_inputs;  // (node id, stride)

  if (!p2) {
    // top-down to stride 8, bottom-up back to 32
    up("n10", "b9");
    node("n11", "concat", {"n10", "b6"}, {});
    agg("n12", "n11", 256);
    up("n13", "n12");
    node("n14", "concat", {"n13", "b4"}, {});
    agg("n15", "n14", 128);
    conv("n16", "n15", 128, 2);
    node("n17", "concat", {"n16", "n12"}, {});
    agg("n18", "n17", 256);
    conv("n19", "n18", 256, 2);
    node("n20", "concat", {"n19", "b9"}, {});
    agg("n21", "n20", 512);
    head_inputs = {{"n15", 8}, {"n18", 16}, {"n21", 32}};
  } else {
    // top-down all the way to stride 4
    up("n10", "b9");
    node("n11", "concat", {"n10", "b6"}, {});
    agg("n12", "n11", 256);
    up("n13", "n12");
    node("n14", "concat", {"n13", "b4"}, {});
    agg("n15", "n14", 128);
    up("n16", "n15");
    node("n17", "concat", {"n16", "b2"}, {});
    agg("n18", "n17", 64);
    conv("n19", "n18", 64, 2);
    node("n20", "concat", {"n19", "n15"}, {});
    agg("n21", "n20", 128);
    conv("n22", "n21", 128, 2);
    node("n23", "concat", {"n22", "n12"}, {});
    agg("n24", "n23", 256);
    head_inputs = {{"n18", 4}, {"n21", 8}, {"n24", 16}};
    if (!no_p5) {
      conv("n25", "n24", 256, 2);
      node("n26", "concat", {"n25", "b9"}, {});
      agg("n27", "n26", 512);
      head_inputs.push_back({"n27", 32});
    }
  }

  // branch widths shared across levels, derived from the finest level
  auto shape_of = [&](const std::string& id) {
    for (const auto& n : g.nodes)
      if (n.id == id) return n.attr("out_channels");
    throw GraphError("preset wiring bug: no node " + id);
  };
  const int64_t ch0 = shape_of(head_inputs[0].first);
  const int64_t c2 = HeadLevel<float>::box_width(static_cast<int>(ch0), 16);
  const int64_t c3 = HeadLevel<float>::cls_width(static_cast<int>(ch0), static_cast<int>(nc));
  for (const auto& [in_id, stride] : head_inputs) {
    std::string id = "head_s" + std::to_string(stride);
    if (att)
      node(id, "ema_head", {in_id},
           {{"stride", stride}, {"box_width", c2}, {"cls_width", c3}, {"ema_groups", 32}});
    else
      node(id, "detect_head", {in_id}, {{"stride", stride}, {"box_width", c2}, {"cls_width", c3}});
    g.outputs.push_back(id);
  }

  validate(g);
  return g;
}

// ---- materialization -----------------------------------------------------------

// A placeholder for parameter-free nodes.
struct Passthrough {};

template <typename T>
using NodeBlock = std::variant<Passthrough, ConvBnSilu<T>, C2f<T>, FastC2f<T>, Sppf<T>,
                               Dysample<T>, Ema<T>, HeadLevel<T>>;

// A runnable model: graph spec plus one constructed block per node.
template <typename T>
class Model {
 public:
  Model(GraphSpec spec, uint64_t seed) : spec_(std::move(spec)), seed_(seed) {
    auto shapes = infer_shapes(spec_, 64);  // channels are size-independent
    for (const auto& n : spec_.nodes) {
      const int64_t ci = n.inputs.empty() ? 0 : shapes.at(n.inputs[0]).c;
      blocks_.emplace(n.id, make_block(n, ci));
    }
    refs_ = collect_params();
    init_params(refs_, seed_);
  }

  // refs_ points into blocks_; map moves keep node addresses, copies would not
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;
  Model(Model&&) noexcept = default;
  Model& operator=(Model&&) noexcept = default;

  const GraphSpec& spec() const { return spec_; }
  uint64_t seed() const { return seed_; }

  int64_t param_count() const { return learnable_count(refs_); }

  // Ordered (head id, tensor) pairs, one per declared output.
  std::vector<std::pair<std::string, Tensor<T>>> forward(const Tensor<T>& image) const {
    const NodeSpec& in_node = spec_.nodes.front();
    if (image.shape().c != in_node.attr("channels"))
      throw ShapeError("forward: expected " + std::to_string(in_node.attr("channels")) +
                       " input channels, got " + image.shape().str());
    // last consumer index per node, so activations free as soon as possible
    std::map<std::string, size_t> last_use;
    for (size_t i = 0; i < spec_.nodes.size(); ++i)
      for (const auto& in : spec_.nodes[i].inputs) last_use[in] = i;
    for (const auto& o : spec_.outputs) last_use[o] = spec_.nodes.size();

    std::map<std::string, Tensor<T>> values;
    for (size_t i = 0; i < spec_.nodes.size(); ++i) {
      const NodeSpec& n = spec_.nodes[i];
      values.emplace(n.id, eval_node(n, values, image));
      for (const auto& in : n.inputs)
        if (last_use[in] <= i) values.erase(in);
    }
    std::vector<std::pair<std::string, Tensor<T>>> out;
    for (const auto& o : spec_.outputs) out.emplace_back(o, std::move(values.at(o)));
    return out;
  }

  // name -> checksum over every learnable and running-stat entry
  std::map<std::string, uint64_t> param_checksums() const {
    std::map<std::string, uint64_t> sums;
    for (const auto& r : refs_) {
      if (r.tensor) {
        sums[r.name] = checksum(*r.tensor);
      } else {
        Tensor<T> tmp(Shape{1, 1, 1, static_cast<int64_t>(r.vec->size())});
        std::copy(r.vec->begin(), r.vec->end(), tmp.data());
        sums[r.name] = checksum(tmp);
      }
    }
    return sums;
  }

  void save_weights(const std::string& dir) const {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    nlohmann::json manifest;
    manifest["graph"] = spec_.meta.name;
    manifest["seed"] = seed_;
    manifest["dtype"] = Tensor<T>::dtype() == DType::F32 ? "f32" : "f64";
    nlohmann::json entries = nlohmann::json::array();
    for (const auto& r : refs_) {
      std::string file = r.name + ".fdmt";
      std::string path = (fs::path(dir) / file).string();
      nlohmann::json e;
      e["name"] = r.name;
      e["file"] = file;
      if (r.tensor) {
        fdmt_write(path, *r.tensor);
        const Shape& s = r.tensor->shape();
        e["dims"] = std::vector<int64_t>{s.n, s.c, s.h, s.w};
        e["checksum"] = checksum(*r.tensor);
      } else {
        std::ofstream f(path, std::ios::binary);
        if (!f) throw IoError("cannot open for writing: " + path);
        std::vector<uint32_t> dims = {static_cast<uint32_t>(r.vec->size())};
        std::string bytes =
            fdmt_encode(Tensor<T>::dtype(), dims, r.vec->data(), r.vec->size() * sizeof(T));
        f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        Tensor<T> tmp(Shape{1, 1, 1, static_cast<int64_t>(r.vec->size())});
        std::copy(r.vec->begin(), r.vec->end(), tmp.data());
        e["dims"] = std::vector<int64_t>{static_cast<int64_t>(r.vec->size())};
        e["checksum"] = checksum(tmp);
      }
      entries.push_back(e);
    }
    manifest["tensors"] = entries;
    std::ofstream mf(fs::path(dir) / "manifest.json");
    mf << manifest.dump(2) << "\n";
  }

  void load_weights(const std::string& dir) {
    namespace fs = std::filesystem;
    std::ifstream mf(fs::path(dir) / "manifest.json");
    if (!mf) throw IoError("no manifest.json in " + dir);
    nlohmann::json manifest;
    mf >> manifest;
    std::map<std::string, std::string> files;
    for (const auto& e : manifest.at("tensors"))
      files[e.at("name").get<std::string>()] = e.at("file").get<std::string>();
    for (auto& r : refs_) {
      auto it = files.find(r.name);
      if (it == files.end()) throw IoError("manifest in " + dir + " lacks tensor " + r.name);
      FdmtBuffer buf = fdmt_read((fs::path(dir) / it->second).string());
      if (buf.numel() != r.numel())
        throw IoError("tensor " + r.name + " in " + dir + " has " + std::to_string(buf.numel()) +
                      " values, expected " + std::to_string(r.numel()));
      T* dst = r.tensor ? r.tensor->data() : r.vec->data();
      for (int64_t i = 0; i < r.numel(); ++i) dst[i] = static_cast<T>(buf.values[static_cast<size_t>(i)]);
    }
  }

 private:
  GraphSpec spec_;
  uint64_t seed_;
  std::map<std::string, NodeBlock<T>> blocks_;
  std::vector<ParamRef<T>> refs_;

  NodeBlock<T> make_block(const NodeSpec& n, int64_t ci) const {
    const int64_t nc = spec_.meta.nc, reg_max = spec_.meta.reg_max;
    if (n.kind == "conv_bn_silu")
      return ConvBnSilu<T>(static_cast<int>(ci), static_cast<int>(n.attr("out_channels")),
                           static_cast<int>(n.attr("kernel")), static_cast<int>(n.attr("stride")));
    if (n.kind == "c2f")
      return C2f<T>(static_cast<int>(ci), static_cast<int>(n.attr("out_channels")),
                    static_cast<int>(n.attr("n")), n.attr("shortcut") != 0);
    if (n.kind == "fast_c2f")
      return FastC2f<T>(static_cast<int>(ci), static_cast<int>(n.attr("out_channels")),
                        static_cast<int>(n.attr("n")));
    if (n.kind == "sppf")
      return Sppf<T>(static_cast<int>(ci), static_cast<int>(n.attr("out_channels")));
    if (n.kind == "dysample")
      return Dysample<T>(static_cast<int>(ci), static_cast<int>(n.attr("scale")),
                         static_cast<int>(n.attr("groups")));
    if (n.kind == "ema") return Ema<T>(static_cast<int>(ci), static_cast<int>(n.attr("groups")));
    if (n.kind == "detect_head")
      return HeadLevel<T>(static_cast<int>(ci), static_cast<int>(n.attr("box_width")),
                          static_cast<int>(n.attr("cls_width")), static_cast<int>(nc),
                          static_cast<int>(reg_max));
    if (n.kind == "ema_head")
      return HeadLevel<T>(static_cast<int>(ci), static_cast<int>(n.attr("box_width")),
                          static_cast<int>(n.attr("cls_width")), static_cast<int>(nc),
                          static_cast<int>(reg_max), static_cast<int>(n.attr("ema_groups")));
    return Passthrough{};
  }

  std::vector<ParamRef<T>> collect_params() {
    std::vector<ParamRef<T>> refs;
    for (const auto& n : spec_.nodes) {
      NodeBlock<T>& b = blocks_.at(n.id);
      std::visit(
          [&](auto& blk) {
            using B = std::decay_t<decltype(blk)>;
            if constexpr (!std::is_same_v<B, Passthrough>) blk.collect(n.id, refs);
          },
          b);
    }
    return refs;
  }

  Tensor<T> eval_node(const NodeSpec& n, const std::map<std::string, Tensor<T>>& values,
                      const Tensor<T>& image) const {
    if (n.kind == "input") return image;
    if (n.kind == "upsample_nearest")
      return upsample_nearest(values.at(n.inputs[0]), static_cast<int>(n.attr("scale")));
    if (n.kind == "concat") {
      std::vector<const Tensor<T>*> parts;
      for (const auto& in : n.inputs) parts.push_back(&values.at(in));
      return concat(parts, 1);
    }
    const NodeBlock<T>& b = blocks_.at(n.id);
    const Tensor<T>& x = values.at(n.inputs[0]);
    return std::visit(
        [&](const auto& blk) -> Tensor<T> {
          using B = std::decay_t<decltype(blk)>;
          if constexpr (std::is_same_v<B, Passthrough>) {
            throw GraphError("node '" + n.id + "': no runnable block for kind " + n.kind);
          } else {
            return blk.forward(x);
          }
        },
        b);
  }
};

using ModelF = Model<float>;

}  // namespace fdm

#endif  // FDM_GRAPH_HPP
