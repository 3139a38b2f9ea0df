#pragma once

#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace pcdiff {

template <class Scalar>
using PointMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, 3>;

/// Point set in world units, one point per row. Colors are optional
/// (zero rows) and RGB in [0, 1] when present.
template <class Scalar>
struct PointCloudT {
  PointMatrix<Scalar> positions;
  PointMatrix<Scalar> colors;

  Eigen::Index size() const { return positions.rows(); }
  bool has_colors() const { return colors.rows() == positions.rows() && colors.rows() > 0; }
};

using PointCloud = PointCloudT<double>;

/// Pinhole camera: world -> camera rotation R (orthonormal), translation t in
/// the camera frame, focal lengths and principal point in pixels. +z is the
/// viewing direction; pixel (0, 0) is the top-left corner, u grows rightward
/// (columns), v downward (rows). Orthonormality of R is checked on every
/// construction.
template <class Scalar>
class CameraViewT {
 public:
  CameraViewT(const Eigen::Matrix<Scalar, 3, 3>& rotation,
              const Eigen::Matrix<Scalar, 3, 1>& translation, Scalar fx, Scalar fy,
              Scalar cx, Scalar cy, int width, int height)
      : rotation_(rotation),
        translation_(translation),
        fx_(fx),
        fy_(fy),
        cx_(cx),
        cy_(cy),
        width_(width),
        height_(height) {
    const Scalar err =
        (rotation.transpose() * rotation - Eigen::Matrix<Scalar, 3, 3>::Identity())
            .cwiseAbs()
            .maxCoeff();
    if (!(err <= Scalar(1e-9)))
      throw std::invalid_argument("CameraView: rotation not orthonormal (|R^T R - I| = " +
                                  std::to_string(static_cast<double>(err)) + ")");
    if (!(fx > Scalar(0)) || !(fy > Scalar(0)))
      throw std::invalid_argument("CameraView: focal lengths must be positive");
    if (width < 1 || height < 1)
      throw std::invalid_argument("CameraView: image size must be at least 1x1");
  }

  const Eigen::Matrix<Scalar, 3, 3>& rotation() const { return rotation_; }
  const Eigen::Matrix<Scalar, 3, 1>& translation() const { return translation_; }
  Scalar fx() const { return fx_; }
  Scalar fy() const { return fy_; }
  Scalar cx() const { return cx_; }
  Scalar cy() const { return cy_; }
  int width() const { return width_; }
  int height() const { return height_; }

  Eigen::Matrix<Scalar, 3, 1> to_camera(const Eigen::Matrix<Scalar, 3, 1>& p) const {
    return rotation_ * p + translation_;
  }

  /// Camera center in world coordinates, -R^T t.
  Eigen::Matrix<Scalar, 3, 1> position() const {
    return -(rotation_.transpose() * translation_);
  }

 private:
  Eigen::Matrix<Scalar, 3, 3> rotation_;
  Eigen::Matrix<Scalar, 3, 1> translation_;
  Scalar fx_, fy_, cx_, cy_;
  int width_, height_;
};

using CameraView = CameraViewT<double>;

/// H x W x C image, row-major pixel order, channel-minor. Stored as an
/// (H*W) x C matrix so pixel (r, c) is row r*W + c.
template <class Scalar>
struct ImageGridT {
  int height = 0;
  int width = 0;
  Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> data;

  ImageGridT() = default;
  ImageGridT(int h, int w, int channels)
      : height(h), width(w), data(Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic,
                                                Eigen::RowMajor>::Zero(
                                  static_cast<Eigen::Index>(h) * w, channels)) {}

  int channels() const { return static_cast<int>(data.cols()); }
  Scalar& at(int r, int c, int ch) { return data(static_cast<Eigen::Index>(r) * width + c, ch); }
  Scalar at(int r, int c, int ch) const {
    return data(static_cast<Eigen::Index>(r) * width + c, ch);
  }
};

using ImageGrid = ImageGridT<double>;

/// H x W boolean mask; dimensions must match any paired ImageGrid.
struct BinaryMask {
  Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> bits;

  BinaryMask() = default;
  BinaryMask(int h, int w)
      : bits(Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>::Constant(
            h, w, false)) {}

  int height() const { return static_cast<int>(bits.rows()); }
  int width() const { return static_cast<int>(bits.cols()); }
  Eigen::Index count() const { return bits.count(); }
};

/// Projection of a world point into the image: pixel coordinates and
/// camera-frame depth.
template <class Scalar>
struct PixelProjectionT {
  Scalar u, v, depth;
};

using PixelProjection = PixelProjectionT<double>;

inline constexpr double kDepthEpsilon = 1e-6;

/// Pinhole projection. Points at or behind the camera plane (depth below
/// kDepthEpsilon) yield an empty result rather than a failure.
template <class Scalar>
std::optional<PixelProjectionT<Scalar>> project_point(
    const CameraViewT<Scalar>& camera, const Eigen::Matrix<Scalar, 3, 1>& p) {
  const Eigen::Matrix<Scalar, 3, 1> q = camera.to_camera(p);
  if (!(q.z() > Scalar(kDepthEpsilon))) return std::nullopt;
  return PixelProjectionT<Scalar>{camera.fx() * q.x() / q.z() + camera.cx(),
                                  camera.fy() * q.y() / q.z() + camera.cy(), q.z()};
}

template <class Scalar>
struct NormalizeResultT {
  PointCloudT<Scalar> cloud;
  Scalar scale;                       // multiplier applied to centered points
  Eigen::Matrix<Scalar, 3, 1> center; // bounding-box center that was subtracted
  bool degenerate = false;            // all input points identical
};

using NormalizeResult = NormalizeResultT<double>;

/// Center the cloud at its bounding-box center and scale isotropically so the
/// longest bounding-box side is 1. Degenerate clouds (a single repeated point)
/// keep scale 1 and are flagged. Idempotent on already-normalized input.
template <class Scalar>
NormalizeResultT<Scalar> normalize_cloud(const PointCloudT<Scalar>& cloud) {
  if (cloud.size() < 1) throw std::invalid_argument("normalize_cloud: empty cloud");
  const Eigen::Matrix<Scalar, 1, 3> lo = cloud.positions.colwise().minCoeff();
  const Eigen::Matrix<Scalar, 1, 3> hi = cloud.positions.colwise().maxCoeff();
  NormalizeResultT<Scalar> out;
  out.center = ((lo + hi) / Scalar(2)).transpose();
  const Scalar longest = (hi - lo).maxCoeff();
  out.degenerate = !(longest > Scalar(0));
  out.scale = out.degenerate ? Scalar(1) : Scalar(1) / longest;
  out.cloud.positions =
      (cloud.positions.rowwise() - out.center.transpose()) * out.scale;
  out.cloud.colors = cloud.colors;
  return out;
}

/// Camera serialization, {"rotation": [9 row-major], "translation": [3],
/// "fx","fy","cx","cy","width","height"}.
std::string camera_to_json(const CameraView& camera);
CameraView camera_from_json(const std::string& text);

/// Camera at `eye` looking at `target` with `up` roughly up, +z forward.
CameraView look_at_camera(const Eigen::Vector3d& eye, const Eigen::Vector3d& target,
                          const Eigen::Vector3d& up, double fx, double fy, double cx,
                          double cy, int width, int height);

}  // namespace pcdiff
