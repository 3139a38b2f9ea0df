#pragma once

#include <Eigen/Core>

#include <vector>

#include "pcdiff/geometry.hpp"

namespace pcdiff {

/// Uniform spatial grid over the indexed points' bounding box. Queries return
/// the exact nearest neighbor (expanding ring search until provably closed);
/// equidistant ties break toward the lowest point id.
class NnIndex {
 public:
  NnIndex(const Eigen::Matrix<double, Eigen::Dynamic, 3>& points, double cell_size);

  struct Hit {
    int index;
    double distance;
  };
  Hit query(const Eigen::Vector3d& q) const;

  Eigen::Index size() const { return points_.rows(); }

 private:
  int cell_of(const Eigen::Vector3d& p, int axis) const;
  int flat(int ix, int iy, int iz) const { return (ix * dims_[1] + iy) * dims_[2] + iz; }

  Eigen::Matrix<double, Eigen::Dynamic, 3> points_;
  Eigen::Vector3d origin_;
  double cell_size_;
  std::array<int, 3> dims_;
  std::vector<int> cell_start_;  // CSR offsets, dims product + 1
  std::vector<int> cell_ids_;    // point ids grouped by cell, ascending within
};

struct FScoreResult {
  double precision;
  double recall;
  double f;
};

/// F-score at distance threshold tau: precision is the fraction of predicted
/// points whose nearest ground-truth point lies within tau, recall the
/// symmetric fraction, f their harmonic mean (0 when both are 0). Both clouds
/// are expected in the shared normalized frame.
FScoreResult fscore(const PointCloud& pred, const PointCloud& gt, double tau);

/// Symmetric mean squared nearest-neighbor distance.
double chamfer(const PointCloud& a, const PointCloud& b);

}  // namespace pcdiff
