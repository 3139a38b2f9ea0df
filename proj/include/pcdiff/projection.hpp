#pragma once

#include <Eigen/Core>

#include "pcdiff/geometry.hpp"

namespace pcdiff {

/// Z-buffered point rasterization output: per pixel, the index of the nearest
/// covering point (-1 if none) and its camera depth. One point per pixel;
/// equal depths break toward the lowest point index.
struct RasterResult {
  Eigen::Array<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> point_index;
  Eigen::Array<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> depth;

  int height() const { return static_cast<int>(point_index.rows()); }
  int width() const { return static_cast<int>(point_index.cols()); }
};

/// Splat each point as a disk of radius `radius_ndc` (normalized device
/// coordinates over the shorter image side, so radius_px = radius_ndc *
/// min(W, H) / 2). A pixel is covered when its center (integer coordinates)
/// lies within the disk around the projected point.
RasterResult rasterize(const PointCloud& cloud, const CameraView& camera,
                       double radius_ndc);

/// Per-pixel displacement (d_row, d_col) from the pixel to its nearest mask
/// pixel; exactly (0, 0) inside the mask. Equidistant ties break toward the
/// smaller row, then the smaller column.
struct MaskDistanceField {
  Eigen::Array<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> d_row;
  Eigen::Array<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> d_col;

  int height() const { return static_cast<int>(d_row.rows()); }
  int width() const { return static_cast<int>(d_row.cols()); }
};

/// Exact Euclidean distance transform with nearest-pixel tracking, computed
/// by a per-row 1D pass followed by a per-column lower-envelope pass over
/// parabolas. Envelope boundaries are compared as exact integer rationals so
/// the tie-break rule above holds bit-exactly. Throws on an empty mask.
MaskDistanceField mask_distance_field(const BinaryMask& mask);

/// Point positions augmented with projected per-point features. Feature rows
/// are [image channels, mask bit, mask-distance vector] for points visible in
/// the rasterization, all zeros otherwise; F = C + 3.
struct ConditionedCloud {
  Eigen::Matrix<double, Eigen::Dynamic, 3> positions;
  Eigen::MatrixXd features;  // N x F

  Eigen::Index size() const { return positions.rows(); }
};

struct ConditionOptions {
  double radius_ndc = 0.0075;
  bool zero_mask_distance = false;  // ablation: zero the 2D distance features
};

/// Occlusion-aware projection conditioning: rasterize the cloud from the
/// input view, then give every z-buffer-visible point the features of the
/// covered pixel nearest its projected center. Occluded and off-screen points
/// get zero rows.
ConditionedCloud condition(const PointCloud& cloud, const CameraView& camera,
                           const ImageGrid& features, const BinaryMask& mask,
                           const MaskDistanceField& field,
                           const ConditionOptions& options = {});
ConditionedCloud condition(const PointCloud& cloud, const CameraView& camera,
                           const ImageGrid& features, const BinaryMask& mask,
                           const ConditionOptions& options = {});

/// Ablation: project every point whose center lands in bounds onto its
/// nearest pixel, ignoring depth. Points behind the camera or out of bounds
/// get zero rows.
ConditionedCloud condition_naive(const PointCloud& cloud, const CameraView& camera,
                                 const ImageGrid& features, const BinaryMask& mask,
                                 const MaskDistanceField& field,
                                 const ConditionOptions& options = {});
ConditionedCloud condition_naive(const PointCloud& cloud, const CameraView& camera,
                                 const ImageGrid& features, const BinaryMask& mask,
                                 const ConditionOptions& options = {});

}  // namespace pcdiff
