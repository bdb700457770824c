#include <cstdio>
#include <random>

#include "doctest.h"
#include "nlcapi/errors.hpp"
#include "nlcapi/io.hpp"
#include "test_util.hpp"

using namespace nlcapi;

TEST_CASE("network json round trip is exact") {
  const PwaNetwork net = testutil::random_net({3, 5, 4, 1}, 17);
  const Json j = network_to_json(net, {{"note", "x"}});
  CHECK(j["schema_version"] == 1);
  CHECK(j["activation"] == "relu");
  const PwaNetwork back = network_from_json(Json::parse(j.dump()));
  for (std::size_t l = 0; l < net.layers().size(); ++l) {
    CHECK((back.layers()[l].weights - net.layers()[l].weights).cwiseAbs().maxCoeff() == 0.0);
    CHECK((back.layers()[l].bias - net.layers()[l].bias).cwiseAbs().maxCoeff() == 0.0);
  }

  const PwaNetwork leaky({{Mat::Ones(2, 1), Vec::Zero(2)}, {Mat::Ones(1, 2), Vec::Zero(1)}},
                         Activation::leaky_relu(0.1));
  const PwaNetwork lb = network_from_json(network_to_json(leaky));
  CHECK(lb.activation().slope == 0.1);
}

TEST_CASE("network schema errors") {
  Json j = network_to_json(testutil::random_net({2, 3, 1}, 1));
  Json bad = j;
  bad.erase("layers");
  CHECK_THROWS_AS(network_from_json(bad), SchemaError);
  bad = j;
  bad["input_dim"] = 3;
  CHECK_THROWS_AS(network_from_json(bad), SchemaError);
  bad = j;
  bad["activation"] = "tanh";
  CHECK_THROWS_AS(network_from_json(bad), SchemaError);
  bad = j;
  bad["layers"][0]["weights"][1] = Json::array({1.0});
  CHECK_THROWS_AS(network_from_json(bad), SchemaError);
  bad = j;
  bad["schema_version"] = 2;
  CHECK_THROWS_AS(network_from_json(bad), SchemaError);
  bad = j;
  bad["layers"][1]["weights"] = Json::array({Json::array({1.0, 2.0})});
  CHECK_THROWS_AS(network_from_json(bad), SchemaError);
}

TEST_CASE("constraint documents") {
  const Json j = Json::parse(R"({
    "boxes": [{"coord": 0, "upper": 0.4}, {"coord": 0, "lower": -0.7}],
    "pwa": [{"C": [0, 1], "d": -0.5},
            {"name": "vee", "pieces": [
               {"halfspaces": [{"normal": [-1, 0], "offset": 0}], "C": [1, 0], "d": -1},
               {"halfspaces": [{"normal": [1, 0], "offset": 0}], "C": [-1, 0], "d": -1}]}],
    "convex_polytope": {"A": [[0, 1], [0, -1]], "b": [2, 2]}
  })");
  const ConstraintSet cs = constraints_from_json(j, 2);
  REQUIRE(cs.constraints.size() == 4);
  const Vec x = (Vec(2) << 0.1, 0.2).finished();
  CHECK(cs.constraints[0](x) == doctest::Approx(-0.3));
  CHECK(cs.constraints[1](x) == doctest::Approx(-0.8));
  CHECK(cs.constraints[2](x) == doctest::Approx(-0.3));
  CHECK(cs.constraints[3].name == "vee");
  CHECK(cs.constraints[3](x) == doctest::Approx(-0.9));
  CHECK(cs.all().size() == 5);
  CHECK(cs.all().back()(x) == doctest::Approx(-1.8));

  const ConstraintSet again = constraints_from_json(Json::parse(constraints_to_json(cs).dump()), 2);
  REQUIRE(again.constraints.size() == 4);
  CHECK(again.constraints[3](x) == cs.constraints[3](x));

  CHECK_THROWS_AS(constraints_from_json(Json::parse(R"({"boxes": [{"coord": 5, "upper": 1}]})"), 2), SchemaError);
  CHECK_THROWS_AS(constraints_from_json(Json::parse(R"({"boxes": [{"coord": 0}]})"), 2), SchemaError);
  CHECK_THROWS_AS(constraints_from_json(Json::parse(R"({"pwa": [{"C": [1], "d": 0}]})"), 2), SchemaError);
  CHECK_THROWS_AS(constraints_from_json(Json::parse(R"({"convex_polytope": {"A": [[1, 0]], "b": [1, 2]}})"), 2),
                  SchemaError);
}

TEST_CASE("tree json round trip") {
  const PwaNetwork net = testutil::random_net({2, 5, 3, 1}, 4);
  PartitionTree t = build_partition_tree(net, Polytope::box(Vec::Constant(2, -1), Vec::Constant(2, 1)));
  annotate_lower_bounds(t, net);
  const PartitionTree back = tree_from_json(Json::parse(tree_to_json(t).dump()));
  CHECK(back.leaves() == t.leaves());
  CHECK(back.annotated());
  CHECK(back.depth() == t.depth());
  std::mt19937_64 rng(2);
  for (int i = 0; i < 200; ++i) {
    const Vec x = testutil::uniform_in_box(Vec::Constant(2, -1), Vec::Constant(2, 1), rng);
    const auto& a = t.locate(x);
    const auto& b = back.locate(x);
    CHECK(a.piece(x) == b.piece(x));
    CHECK(a.v_lower == b.v_lower);
  }
  Json bad = tree_to_json(t);
  bad["nodes"][0]["children"] = Json::array({999});
  CHECK_THROWS_AS(tree_from_json(bad), SchemaError);
}

TEST_CASE("files and hashes") {
  CHECK(fnv1a64("") == 0xcbf29ce484222325ULL);
  CHECK(fnv1a64("a") == 0xaf63dc4c8601ec8cULL);
  CHECK(hex64(0xabcULL) == "0000000000000abc");
  CHECK_THROWS_AS(read_json("/nonexistent/weights.json"), FileError);

  const std::string path = "test_io_tmp.json";
  write_text(path, "{not json");
  CHECK_THROWS_AS(read_json(path), SchemaError);
  write_text(path, "{}");
  const Json h = artifact_header(42, {path});
  CHECK(h["seed"] == 42);
  CHECK(h["inputs"][path] == "fnv1a64:" + hex64(fnv1a64("{}")));
  std::remove(path.c_str());
}
