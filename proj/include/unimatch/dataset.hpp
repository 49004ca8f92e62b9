#pragma once

#include "unimatch/geometry.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace unimatch::data {

enum class Split { Train, Test };

const char* to_string(Split split) noexcept;

/// One image's keypoints. Visibility is implied by presence: occluded
/// keypoints are simply absent.
struct KeypointInstance {
  std::string id;
  std::string category;
  Split split = Split::Train;
  Eigen::Matrix2Xd keypoints;
  /// Ground-truth universe index per keypoint, absent at inference.
  std::optional<std::vector<int>> labels;

  int size() const { return static_cast<int>(keypoints.cols()); }
};

struct CategorySpec {
  std::string name;
  int universe_size = 0;
};

struct DatasetManifest {
  std::vector<CategorySpec> categories;
  std::vector<KeypointInstance> instances;

  /// Throws a data error when the name is not listed.
  int category_index(const std::string& name) const;
  std::size_t count(Split split) const;
  /// Checks every invariant; messages name the offending instance.
  void validate() const;
};

/// Reads the line-oriented dataset format (see docs/dataset_format.md).
/// Errors carry "<source>:<line>:".
DatasetManifest parse_dataset(std::istream& in, const std::string& source = "<input>");
DatasetManifest load_dataset(const std::string& path);

void write_dataset(const DatasetManifest& manifest, std::ostream& out);
void save_dataset(const DatasetManifest& manifest, const std::string& path);

struct SyntheticConfig {
  int categories = 1;
  /// Universe size per category; a single entry applies to every category.
  std::vector<int> universe_sizes{10};
  /// Instances per category.
  int instances = 200;
  /// Fraction of each category's instances tagged as test (the last ones).
  double test_fraction = 0.2;
  /// Scale of the per-instance quadratic displacement field.
  double deformation = 0.1;
  /// Keypoint noise standard deviation in normalized units (fraction of the
  /// keypoint bounding-box half-extent).
  double noise = 0.005;
  double occlusion = 0.1;
  geometry::CameraSampling cameras{};
  std::uint64_t seed = 0;

  int universe_size(int category) const;
  void validate() const;
};

struct GroundTruth {
  /// Base shape per category (3×d).
  std::vector<Eigen::Matrix3Xd> base_shapes;
  /// Deformed shape per instance (3×d, all universe points), manifest order.
  std::vector<Eigen::Matrix3Xd> instance_shapes;
  std::vector<geometry::Camera> cameras;
};

struct SyntheticDataset {
  DatasetManifest manifest;
  GroundTruth truth;
};

/// Deterministic per seed: base shapes in the unit cube, quadratic
/// deformation, weak-perspective cameras, pixel noise, random occlusion
/// (at least 4 keypoints stay visible) and shuffled keypoint order.
SyntheticDataset generate_synthetic(const SyntheticConfig& config);

}  // namespace unimatch::data
