#pragma once

#include "unimatch/autodiff.hpp"

#include <Eigen/Dense>

#include <cstdint>

namespace unimatch::geometry {

/// Category-level 3D points, one point per column.
struct UniversePoints {
  Eigen::Matrix3Xd u;
  int category = 0;

  Eigen::Index size() const { return u.cols(); }
  /// 4×d homogeneous form with a trailing row of ones.
  Eigen::MatrixXd homogeneous() const;
};

struct Camera {
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();
  Eigen::Matrix3d intrinsics = Eigen::Matrix3d::Identity();
  /// Per-point scales (diagonal of Λ). A single entry is broadcast to all points.
  Eigen::VectorXd scales = Eigen::VectorXd::Ones(1);

  /// 3×4 projection K·Π₀·g.
  Eigen::Matrix<double, 3, 4> projection() const;
};

enum class ProjectionModel {
  /// Per-point λ taken from the camera; the homogeneous third row is replaced by 1.
  WeakPerspective,
  /// λ_i = 1 / depth_i; points must have positive depth.
  Perspective,
};

struct ProjectedPoints {
  Eigen::Matrix2Xd v;

  Eigen::Index size() const { return v.cols(); }
  /// 3×m homogeneous form with a trailing row of ones.
  Eigen::MatrixXd homogeneous() const;
};

ProjectedPoints project(const UniversePoints& points, const Camera& cam,
                        ProjectionModel model = ProjectionModel::WeakPerspective);

/// ‖V·U⁺·U − V‖²_F for homogeneous U (4×d) and V (3×d).
ad::Tensor reconstruction_residual(const ad::Tensor& u_h, const ad::Tensor& v_h, double condition_cap = 1e8);
/// Same quantity on plain matrices.
double reconstruction_residual(const Eigen::MatrixXd& u_h, const Eigen::MatrixXd& v_h, double condition_cap = 1e8);

struct CameraSampling {
  /// Translation drawn uniformly from [-box, box]³.
  double translation_box = 1.0;
  double scale_min = 0.5;
  double scale_max = 2.0;
  /// Maximum rotation angle from the canonical view in radians; π or more
  /// samples rotations uniformly over SO(3).
  double max_rotation_angle = 3.141592653589793;
};

/// Weak-perspective camera with K = I, deterministic per seed.
Camera sample_weak_perspective_camera(std::uint64_t seed, const CameraSampling& opts = {});

struct NormalizationTransform {
  Eigen::Vector2d center = Eigen::Vector2d::Zero();
  double scale = 1.0;

  Eigen::Matrix2Xd apply(const Eigen::Matrix2Xd& v) const;
  Eigen::Matrix2Xd invert(const Eigen::Matrix2Xd& v) const;
};

struct NormalizedPoints {
  ProjectedPoints points;
  NormalizationTransform transform;
};

/// Maps keypoints into [-1,1]² using the bounding-box center and the larger
/// half-extent. A zero-extent set maps to the origin with scale 1.
NormalizedPoints normalize_keypoints(const ProjectedPoints& v);

}  // namespace unimatch::geometry
