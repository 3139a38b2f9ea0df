#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "pcdiff/rng.hpp"

namespace pcdiff {

using Mat = Eigen::MatrixXd;  // rows = entities (points or voxels), cols = channels

/// Stable name -> (offset, rows, cols) map over one flat parameter vector.
/// Registration order defines the serialization order; the same config always
/// produces the same map.
class ParamLayout {
 public:
  struct Entry {
    std::string name;
    std::size_t offset;
    Eigen::Index rows, cols;
  };

  std::size_t add(const std::string& name, Eigen::Index rows, Eigen::Index cols) {
    entries_.push_back({name, total_, rows, cols});
    total_ += static_cast<std::size_t>(rows * cols);
    return entries_.size() - 1;
  }

  Eigen::Map<Mat> view(double* buffer, std::size_t id) const {
    const Entry& e = entries_[id];
    return {buffer + e.offset, e.rows, e.cols};
  }
  Eigen::Map<const Mat> view(const double* buffer, std::size_t id) const {
    const Entry& e = entries_[id];
    return {buffer + e.offset, e.rows, e.cols};
  }

  std::size_t total() const { return total_; }
  const std::vector<Entry>& entries() const { return entries_; }

 private:
  std::vector<Entry> entries_;
  std::size_t total_ = 0;
};

/// Sinusoidal timestep embedding: values[2k] = sin(t / 10000^(2k/dim)),
/// values[2k+1] = cos of the same argument. dim must be even.
Eigen::VectorXd time_embedding(int t, int dim);

// ---- layer primitives (forward caches are explicit, backward accumulates
// ---- into a flat gradient buffer with the same layout as the parameters)

Mat silu(const Mat& x);
Mat silu_grad(const Mat& x, const Mat& dy);  // dy * silu'(x)

struct GroupNormCache {
  Mat xhat;
  Eigen::VectorXd inv_std;  // per group
  int groups = 1;
};

Mat group_norm_fwd(const Mat& x, const Eigen::Ref<const Mat>& gamma,
                   const Eigen::Ref<const Mat>& beta, int groups, GroupNormCache* cache);
Mat group_norm_bwd(const Mat& dy, const GroupNormCache& cache,
                   const Eigen::Ref<const Mat>& gamma, Eigen::Ref<Mat> dgamma,
                   Eigen::Ref<Mat> dbeta);

/// 3D convolution over a grid stored as (res^3) x channels with voxel
/// (x, y, z) at row (x * res + y) * res + z. Kernel 3, padding 1, stride 1
/// or 2 (stride 2 requires even res). Weights are C_out x 27*C_in with the
/// kernel offset major and input channel minor.
Mat conv3d_fwd(const Mat& grid, int res, const Eigen::Ref<const Mat>& weight,
               const Eigen::Ref<const Mat>& bias, int stride);
Mat conv3d_bwd(const Mat& d_out, const Mat& grid, int res,
               const Eigen::Ref<const Mat>& weight, Eigen::Ref<Mat> d_weight,
               Eigen::Ref<Mat> d_bias, int stride);

Mat upsample2_fwd(const Mat& grid, int res);            // res -> 2*res
Mat upsample2_bwd(const Mat& d_out, int res);           // back to res

struct VoxelizeCache {
  std::vector<int> cell;        // per point
  std::vector<double> inv_count;  // per cell, 0 for empty cells
};

/// Scatter-average point features into a res^3 grid. Point positions are
/// clamped into the unit cube [-0.5, 0.5]^3 first; empty cells stay zero.
Mat voxelize(const Eigen::Ref<const Mat>& points, const Eigen::Ref<const Mat>& feats,
             int res, VoxelizeCache* cache = nullptr);
Mat voxelize_bwd(const Mat& d_grid, const VoxelizeCache& cache, Eigen::Index n_points);

struct DevoxCache {
  Eigen::Matrix<int, Eigen::Dynamic, 8> corners;
  Eigen::Matrix<double, Eigen::Dynamic, 8> weights;
};

/// Trilinear interpolation of grid features back to (clamped) point
/// locations; cell centers sit at ((i + 0.5) / res - 0.5).
Mat devoxelize(const Eigen::Ref<const Mat>& grid, int res,
               const Eigen::Ref<const Mat>& points, DevoxCache* cache = nullptr);
Mat devoxelize_bwd(const Mat& d_out, const DevoxCache& cache, int res);

}  // namespace pcdiff
