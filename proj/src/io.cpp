#include "nlcapi/io.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "nlcapi/errors.hpp"

namespace nlcapi {

namespace {

const Json& field(const Json& j, const char* key, const std::string& what) {
  if (!j.is_object() || !j.contains(key)) throw SchemaError(what + ": missing field '" + key + "'");
  return j.at(key);
}

double number(const Json& j, const std::string& what) {
  if (!j.is_number()) throw SchemaError(what + ": expected a number");
  return j.get<double>();
}

int integer(const Json& j, const std::string& what) {
  if (!j.is_number_integer()) throw SchemaError(what + ": expected an integer");
  return j.get<int>();
}

void check_version(const Json& j, const std::string& what) {
  if (j.contains("schema_version") && j.at("schema_version") != kSchemaVersion) {
    throw SchemaError(what + ": unsupported schema_version " + j.at("schema_version").dump());
  }
}

}  // namespace

Json vec_to_json(const Vec& v) {
  Json a = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

Vec vec_from_json(const Json& j, const std::string& what) {
  if (!j.is_array()) throw SchemaError(what + ": expected an array of numbers");
  Vec v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v[static_cast<Eigen::Index>(i)] = number(j[i], what);
  return v;
}

Json mat_to_json(const Mat& m) {
  Json a = Json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) a.push_back(vec_to_json(m.row(r).transpose()));
  return a;
}

Mat mat_from_json(const Json& j, const std::string& what) {
  if (!j.is_array() || j.empty()) throw SchemaError(what + ": expected a non-empty array of rows");
  const std::size_t cols = j[0].is_array() ? j[0].size() : 0;
  Mat m(static_cast<Eigen::Index>(j.size()), static_cast<Eigen::Index>(cols));
  for (std::size_t r = 0; r < j.size(); ++r) {
    const Vec row = vec_from_json(j[r], what);
    if (static_cast<std::size_t>(row.size()) != cols) throw SchemaError(what + ": ragged rows");
    m.row(static_cast<Eigen::Index>(r)) = row.transpose();
  }
  return m;
}

Json polytope_to_json(const Polytope& p) {
  Json hs = Json::array(), eq = Json::array();
  for (const auto& h : p.halfspaces()) hs.push_back({{"normal", vec_to_json(h.normal)}, {"offset", h.offset}});
  for (const auto& h : p.equalities()) eq.push_back({{"normal", vec_to_json(h.normal)}, {"offset", h.offset}});
  Json j{{"dim", p.dim()}, {"halfspaces", hs}};
  if (!eq.empty()) j["equalities"] = eq;
  return j;
}

Polytope polytope_from_json(const Json& j, int dim, const std::string& what) {
  Polytope p(dim);
  if (j.is_object() && j.contains("dim") && integer(j.at("dim"), what) != dim) {
    throw SchemaError(what + ": polytope dimension mismatch");
  }
  const Json& hs = j.is_array() ? j : field(j, "halfspaces", what);
  if (!hs.is_array()) throw SchemaError(what + ": halfspaces must be an array");
  for (const auto& h : hs) {
    Vec a = vec_from_json(field(h, "normal", what), what);
    if (a.size() != dim) throw SchemaError(what + ": halfspace normal has wrong length");
    p.add(Halfspace{std::move(a), number(field(h, "offset", what), what)});
  }
  if (j.is_object() && j.contains("equalities")) {
    for (const auto& h : j.at("equalities")) {
      Vec a = vec_from_json(field(h, "normal", what), what);
      if (a.size() != dim) throw SchemaError(what + ": equality normal has wrong length");
      p.add(Hyperplane{std::move(a), number(field(h, "offset", what), what)});
    }
  }
  return p;
}

Json network_to_json(const PwaNetwork& net, const Json& metadata) {
  Json layers = Json::array();
  for (const auto& l : net.layers()) {
    layers.push_back({{"weights", mat_to_json(l.weights)}, {"bias", vec_to_json(l.bias)}});
  }
  Json j{{"schema_version", kSchemaVersion}, {"input_dim", net.input_dim()}, {"layers", layers}};
  if (net.activation().kind == Activation::Kind::ReLU) {
    j["activation"] = "relu";
  } else {
    j["activation"] = "leaky_relu";
    j["slope"] = net.activation().slope;
  }
  j["metadata"] = metadata;
  return j;
}

PwaNetwork network_from_json(const Json& j) {
  const std::string what = "weights";
  check_version(j, what);
  const int input_dim = integer(field(j, "input_dim", what), what);
  Activation act = Activation::relu();
  if (j.contains("activation")) {
    const Json& a = j.at("activation");
    if (!a.is_string()) throw SchemaError(what + ": activation must be a string");
    if (a == "leaky_relu") {
      act = Activation::leaky_relu(number(field(j, "slope", what), what));
    } else if (a != "relu") {
      throw SchemaError(what + ": unknown activation '" + a.get<std::string>() + "'");
    }
  }
  const Json& layers = field(j, "layers", what);
  if (!layers.is_array() || layers.empty()) throw SchemaError(what + ": layers must be a non-empty array");
  std::vector<DenseLayer> out;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const std::string lw = what + ": layer " + std::to_string(l);
    out.push_back({mat_from_json(field(layers[l], "weights", lw), lw), vec_from_json(field(layers[l], "bias", lw), lw)});
  }
  if (out.front().weights.cols() != input_dim) throw SchemaError(what + ": input_dim does not match first layer");
  try {
    return PwaNetwork(std::move(out), act);
  } catch (const InputError& e) {
    throw SchemaError(what + ": " + e.what());
  }
}

std::vector<PwaConstraint> ConstraintSet::all() const {
  std::vector<PwaConstraint> out = constraints;
  if (convex_A) out.push_back(polytope_constraint(*convex_A, *convex_b, "convex_polytope"));
  return out;
}

ConstraintSet constraints_from_json(const Json& j, int n) {
  const std::string what = "constraints";
  check_version(j, what);
  if (!j.is_object()) throw SchemaError(what + ": expected an object");
  ConstraintSet cs;
  if (j.contains("boxes")) {
    for (const auto& b : j.at("boxes")) {
      const int i = integer(field(b, "coord", what), what);
      if (i < 0 || i >= n) throw SchemaError(what + ": box coord " + std::to_string(i) + " out of range");
      const bool up = b.contains("upper"), low = b.contains("lower");
      if (up == low) throw SchemaError(what + ": each box entry needs exactly one of upper/lower");
      std::vector<std::optional<double>> lo(n), hi(n);
      (up ? hi : lo)[i] = number(b.at(up ? "upper" : "lower"), what);
      cs.constraints.push_back(box_constraints(lo, hi).front());
    }
  }
  if (j.contains("pwa")) {
    int k = 0;
    for (const auto& e : j.at("pwa")) {
      PwaConstraint c;
      c.name = e.contains("name") ? e.at("name").get<std::string>() : "pwa" + std::to_string(k);
      const Json pieces = e.contains("pieces") ? e.at("pieces") : Json::array({e});
      for (const auto& p : pieces) {
        Vec C = vec_from_json(field(p, "C", what), what);
        if (C.size() != n) throw SchemaError(what + ": pwa piece C has wrong length");
        Polytope region = p.contains("halfspaces") ? polytope_from_json(p.at("halfspaces"), n, what) : Polytope(n);
        c.pieces.push_back({std::move(region), AffinePiece{std::move(C), number(field(p, "d", what), what)}});
      }
      try {
        c.validate(n);
      } catch (const InputError& err) {
        throw SchemaError(what + ": " + err.what());
      }
      cs.constraints.push_back(std::move(c));
      ++k;
    }
  }
  if (j.contains("convex_polytope")) {
    const Json& cp = j.at("convex_polytope");
    Mat A = mat_from_json(field(cp, "A", what), what);
    Vec b = vec_from_json(field(cp, "b", what), what);
    if (A.cols() != n || A.rows() != b.size()) throw SchemaError(what + ": convex_polytope shapes disagree");
    cs.convex_A = std::move(A);
    cs.convex_b = std::move(b);
  }
  return cs;
}

Json constraints_to_json(const ConstraintSet& cs) {
  Json pwa = Json::array();
  for (const auto& c : cs.constraints) {
    Json pieces = Json::array();
    for (const auto& p : c.pieces) {
      pieces.push_back({{"halfspaces", polytope_to_json(p.region)["halfspaces"]},
                        {"C", vec_to_json(p.piece.C)},
                        {"d", p.piece.d}});
    }
    pwa.push_back({{"name", c.name}, {"pieces", pieces}});
  }
  Json j{{"schema_version", kSchemaVersion}, {"pwa", pwa}};
  if (cs.convex_A) j["convex_polytope"] = {{"A", mat_to_json(*cs.convex_A)}, {"b", vec_to_json(*cs.convex_b)}};
  return j;
}

Json tree_to_json(const PartitionTree& tree) {
  Json nodes = Json::array();
  for (const auto& nd : tree.nodes()) {
    Json o{{"layer", nd.layer},
           {"parent", nd.parent},
           {"children", nd.children},
           {"pattern", nd.pattern.bits},
           {"region", polytope_to_json(nd.region)["halfspaces"]},
           {"v_lower", nd.v_lower},
           {"v_upper", nd.v_upper}};
    if (nd.is_leaf()) o["piece"] = {{"C", vec_to_json(nd.piece.C)}, {"d", nd.piece.d}};
    nodes.push_back(std::move(o));
  }
  const auto& st = tree.stats();
  return Json{{"schema_version", kSchemaVersion},
              {"dim", tree.domain().dim()},
              {"depth", tree.depth()},
              {"annotated", tree.annotated()},
              {"domain", polytope_to_json(tree.domain())},
              {"stats",
               {{"node_count", st.node_count},
                {"leaf_count", st.leaf_count},
                {"build_seconds", st.build_seconds},
                {"annotate_seconds", st.annotate_seconds}}},
              {"nodes", nodes}};
}

PartitionTree tree_from_json(const Json& j) {
  const std::string what = "tree";
  check_version(j, what);
  const int dim = integer(field(j, "dim", what), what);
  Polytope domain = polytope_from_json(field(j, "domain", what), dim, what);
  const Json& nodes = field(j, "nodes", what);
  if (!nodes.is_array() || nodes.empty()) throw SchemaError(what + ": nodes must be a non-empty array");
  std::vector<PartitionNode> out;
  for (const auto& o : nodes) {
    PartitionNode nd;
    nd.layer = integer(field(o, "layer", what), what);
    nd.parent = integer(field(o, "parent", what), what);
    nd.children = field(o, "children", what).get<std::vector<int>>();
    nd.pattern.bits = field(o, "pattern", what).get<std::vector<std::vector<std::uint8_t>>>();
    nd.region = polytope_from_json(field(o, "region", what), dim, what);
    nd.v_lower = number(field(o, "v_lower", what), what);
    nd.v_upper = number(field(o, "v_upper", what), what);
    if (nd.children.empty()) {
      const Json& p = field(o, "piece", what);
      nd.piece = AffinePiece{vec_from_json(field(p, "C", what), what), number(field(p, "d", what), what)};
    }
    out.push_back(std::move(nd));
  }
  for (const auto& nd : out) {
    for (int c : nd.children) {
      if (c <= 0 || c >= static_cast<int>(out.size())) throw SchemaError(what + ": child index out of range");
    }
  }
  TreeStats st;
  if (j.contains("stats")) {
    const Json& s = j.at("stats");
    st.node_count = s.value("node_count", 0);
    st.leaf_count = s.value("leaf_count", 0);
    st.build_seconds = s.value("build_seconds", 0.0);
    st.annotate_seconds = s.value("annotate_seconds", 0.0);
  }
  return PartitionTree(std::move(domain), integer(field(j, "depth", what), what), std::move(out), st,
                       j.value("annotated", false));
}

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FileError("cannot read '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FileError("cannot write '" + path + "'");
  out << text;
  if (!out) throw FileError("write to '" + path + "' failed");
}

Json read_json(const std::string& path) {
  const std::string text = read_text(path);
  try {
    return Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw SchemaError("'" + path + "' is not valid JSON: " + e.what());
  }
}

std::uint64_t fnv1a64(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

Json artifact_header(std::uint64_t seed, const std::vector<std::string>& input_paths) {
  Json inputs = Json::object();
  for (const auto& p : input_paths) inputs[p] = "fnv1a64:" + hex64(fnv1a64(read_text(p)));
  return Json{{"tool", "nlcapi"}, {"version", kToolVersion}, {"seed", seed}, {"inputs", inputs}};
}

}  // namespace nlcapi
