#pragma once

#include "unimatch/matching.hpp"
#include "unimatch/network.hpp"
#include "unimatch/training.hpp"

#include <json.hpp>

#include <optional>
#include <string>
#include <vector>

namespace unimatch::io {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  training::TrainState state;
  /// Free-form run settings stored alongside the weights.
  nlohmann::json run_config;
};

/// Binary layout: magic, version, payload length, payload, FNV-1a checksum.
/// The payload holds the model description, every tensor with its shape and
/// optimizer moments, the iteration counter, the RNG state and the epoch order.
std::string serialize_checkpoint(const training::TrainState& state, const nlohmann::json& run_config = {});
Checkpoint deserialize_checkpoint(const std::string& bytes);

/// Writes through a temporary file and renames it into place.
void save_checkpoint(const training::TrainState& state, const std::string& path, const nlohmann::json& run_config = {});
Checkpoint load_checkpoint(const std::string& path);

/// ASCII PLY with one vertex line per point.
void write_ply(const Eigen::Matrix3Xd& points, const std::string& path);
Eigen::Matrix3Xd read_ply(const std::string& path);

struct GeometryExport {
  std::vector<std::string> files;
  nlohmann::json summary;
};

/// Writes <dir>/universe_<category>.ply, one deformed cloud per instance in
/// <dir>/deformed/<id>.ply and <dir>/geometry_summary.json with offset norms.
GeometryExport export_geometry(network::Model& model, training::Batch instances, const std::string& dir,
                               const training::ForwardOptions& opts = {});

struct MatchingFile {
  int universe_size = 0;
  matching::MultiMatching multi;
  std::optional<matching::PairwiseSet> pairwise;
};

nlohmann::json matchings_to_json(const matching::MultiMatching& multi, int universe_size, bool include_pairwise);
MatchingFile matchings_from_json(const nlohmann::json& j);

void export_matchings(const matching::MultiMatching& multi, int universe_size, const std::string& path,
                      bool include_pairwise = false);
MatchingFile load_matchings(const std::string& path);

}  // namespace unimatch::io
