#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "nlcapi/capi.hpp"
#include "nlcapi/partition.hpp"
#include "nlcapi/pwanet.hpp"

namespace nlcapi {

using Json = nlohmann::json;

inline constexpr int kSchemaVersion = 1;
inline constexpr const char* kToolVersion = "0.1.0";

Json vec_to_json(const Vec& v);
Vec vec_from_json(const Json& j, const std::string& what);
Json mat_to_json(const Mat& m);
Mat mat_from_json(const Json& j, const std::string& what);

Json polytope_to_json(const Polytope& p);
Polytope polytope_from_json(const Json& j, int dim, const std::string& what);

/// {"schema_version", "input_dim", "activation", "layers": [{"weights", "bias"}], "metadata"}
Json network_to_json(const PwaNetwork& net, const Json& metadata = Json::object());
PwaNetwork network_from_json(const Json& j);

struct ConstraintSet {
  std::vector<PwaConstraint> constraints;  // boxes, then pwa entries
  std::optional<Mat> convex_A;
  std::optional<Vec> convex_b;

  /// Constraints plus the convex polytope as one max-of-affine constraint.
  std::vector<PwaConstraint> all() const;
};

/// {"boxes": [{"coord", "upper"|"lower"}], "pwa": [{"name", "pieces": [{"halfspaces", "C", "d"}]}],
///  "convex_polytope": {"A", "b"}}. A pwa entry may also be a single piece.
ConstraintSet constraints_from_json(const Json& j, int state_dim);
Json constraints_to_json(const ConstraintSet& cs);

Json tree_to_json(const PartitionTree& tree);
PartitionTree tree_from_json(const Json& j);

/// Throws FileError when the file cannot be read and SchemaError on bad JSON.
Json read_json(const std::string& path);
void write_text(const std::string& path, const std::string& text);
std::string read_text(const std::string& path);

/// 64-bit FNV-1a of the bytes.
std::uint64_t fnv1a64(const std::string& bytes);
std::string hex64(std::uint64_t h);

/// Provenance block embedded in every artifact.
Json artifact_header(std::uint64_t seed, const std::vector<std::string>& input_paths);

}  // namespace nlcapi
