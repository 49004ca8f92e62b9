#include "unimatch/geometry.hpp"

#include "unimatch/errors.hpp"

#include <cmath>
#include <random>

namespace unimatch::geometry {

Eigen::MatrixXd UniversePoints::homogeneous() const {
  Eigen::MatrixXd h(4, u.cols());
  h.topRows(3) = u;
  h.row(3).setOnes();
  return h;
}

Eigen::MatrixXd ProjectedPoints::homogeneous() const {
  Eigen::MatrixXd h(3, v.cols());
  h.topRows(2) = v;
  h.row(2).setOnes();
  return h;
}

Eigen::Matrix<double, 3, 4> Camera::projection() const {
  Eigen::Matrix<double, 3, 4> g;
  g.leftCols<3>() = rotation;
  g.col(3) = translation;
  return intrinsics * g;
}

ProjectedPoints project(const UniversePoints& points, const Camera& cam, ProjectionModel model) {
  const Eigen::Index d = points.size();
  if (cam.scales.size() != 1 && cam.scales.size() != d)
    throw Error(ErrorKind::Shape, "camera scale count does not match point count");
  Eigen::Matrix3Xd cam_pts = (cam.rotation * points.u).colwise() + cam.translation;

  ProjectedPoints out;
  out.v.resize(2, d);
  for (Eigen::Index i = 0; i < d; ++i) {
    const double lambda = cam.scales.size() == 1 ? cam.scales(0) : cam.scales(i);
    Eigen::Vector3d p = cam_pts.col(i);
    if (model == ProjectionModel::Perspective) {
      if (!(p.z() > 0.0))
        throw Error(ErrorKind::Projection, "point " + std::to_string(i) + " has non-positive depth");
      p /= p.z();
    } else {
      p.head<2>() *= lambda;
      p.z() = 1.0;
    }
    const Eigen::Vector3d img = cam.intrinsics * p;
    out.v.col(i) = img.head<2>() / img.z();
  }
  return out;
}

ad::Tensor reconstruction_residual(const ad::Tensor& u_h, const ad::Tensor& v_h, double condition_cap) {
  if (v_h.rows() != 3 || u_h.cols() != v_h.cols())
    throw Error(ErrorKind::Shape, "reconstruction_residual: V must be 3×d matching U's columns");
  const ad::Tensor pinv = ad::right_pseudo_inverse(u_h, condition_cap);
  const ad::Tensor reproj = ad::matmul(ad::matmul(v_h, pinv), u_h);
  return ad::frobenius_sq(ad::subtract(reproj, v_h));
}

double reconstruction_residual(const Eigen::MatrixXd& u_h, const Eigen::MatrixXd& v_h, double condition_cap) {
  ad::Tape tape;
  return reconstruction_residual(tape.constant(u_h), tape.constant(v_h), condition_cap).scalar();
}

Camera sample_weak_perspective_camera(std::uint64_t seed, const CameraSampling& opts) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);

  // Normalized Gaussian quaternions are uniform on SO(3); restrict the angle by rejection.
  Eigen::Quaterniond q;
  for (;;) {
    q = Eigen::Quaterniond(gauss(rng), gauss(rng), gauss(rng), gauss(rng));
    q.normalize();
    if (q.w() < 0.0) q.coeffs() *= -1.0;
    const double angle = 2.0 * std::acos(std::min(1.0, q.w()));
    if (opts.max_rotation_angle >= M_PI || angle <= opts.max_rotation_angle) break;
  }

  Camera cam;
  cam.rotation = q.toRotationMatrix();
  cam.translation = Eigen::Vector3d(unit(rng), unit(rng), unit(rng)) * opts.translation_box;
  std::uniform_real_distribution<double> scale(opts.scale_min, opts.scale_max);
  cam.scales = Eigen::VectorXd::Constant(1, scale(rng));
  cam.intrinsics.setIdentity();
  return cam;
}

Eigen::Matrix2Xd NormalizationTransform::apply(const Eigen::Matrix2Xd& v) const {
  return (v.colwise() - center) / scale;
}

Eigen::Matrix2Xd NormalizationTransform::invert(const Eigen::Matrix2Xd& v) const {
  return (v * scale).colwise() + center;
}

NormalizedPoints normalize_keypoints(const ProjectedPoints& v) {
  NormalizedPoints out;
  if (v.size() == 0) {
    out.points = v;
    return out;
  }
  const Eigen::Vector2d lo = v.v.rowwise().minCoeff();
  const Eigen::Vector2d hi = v.v.rowwise().maxCoeff();
  out.transform.center = 0.5 * (lo + hi);
  const double half = 0.5 * (hi - lo).maxCoeff();
  out.transform.scale = half > 0.0 ? half : 1.0;
  out.points.v = out.transform.apply(v.v);
  return out;
}

}  // namespace unimatch::geometry
