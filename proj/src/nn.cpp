#include "pcdiff/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace pcdiff {

Eigen::VectorXd time_embedding(int t, int dim) {
  if (dim < 2 || dim % 2 != 0)
    throw std::invalid_argument("time_embedding: dim must be even and >= 2");
  Eigen::VectorXd values(dim);
  for (int k = 0; 2 * k < dim; ++k) {
    const double freq = std::pow(10000.0, -2.0 * k / dim);
    values(2 * k) = std::sin(t * freq);
    values(2 * k + 1) = std::cos(t * freq);
  }
  return values;
}

Mat silu(const Mat& x) {
  return x.array() / (1.0 + (-x.array()).exp());
}

Mat silu_grad(const Mat& x, const Mat& dy) {
  const auto sig = 1.0 / (1.0 + (-x.array()).exp());
  return dy.array() * sig * (1.0 + x.array() * (1.0 - sig));
}

namespace {
constexpr double kNormEps = 1e-5;
}

Mat group_norm_fwd(const Mat& x, const Eigen::Ref<const Mat>& gamma,
                   const Eigen::Ref<const Mat>& beta, int groups, GroupNormCache* cache) {
  const Eigen::Index channels = x.cols();
  if (groups < 1 || channels % groups != 0)
    throw std::invalid_argument("group_norm: groups must divide channels");
  const Eigen::Index group_ch = channels / groups;
  Mat xhat(x.rows(), x.cols());
  Eigen::VectorXd inv_std(groups);
  for (int g = 0; g < groups; ++g) {
    const auto block = x.middleCols(g * group_ch, group_ch);
    const double mean = block.mean();
    const double var = (block.array() - mean).square().mean();
    const double is = 1.0 / std::sqrt(var + kNormEps);
    xhat.middleCols(g * group_ch, group_ch) = (block.array() - mean) * is;
    inv_std(g) = is;
  }
  Mat y = xhat.array().rowwise() * gamma.row(0).array();
  y.array().rowwise() += beta.row(0).array();
  if (cache) {
    cache->xhat = xhat;
    cache->inv_std = inv_std;
    cache->groups = groups;
  }
  return y;
}

Mat group_norm_bwd(const Mat& dy, const GroupNormCache& cache,
                   const Eigen::Ref<const Mat>& gamma, Eigen::Ref<Mat> dgamma,
                   Eigen::Ref<Mat> dbeta) {
  const Eigen::Index channels = dy.cols();
  const int groups = cache.groups;
  const Eigen::Index group_ch = channels / groups;
  dgamma.row(0) += (dy.array() * cache.xhat.array()).colwise().sum().matrix();
  dbeta.row(0) += dy.colwise().sum();

  Mat dx(dy.rows(), dy.cols());
  for (int g = 0; g < groups; ++g) {
    const auto xhat = cache.xhat.middleCols(g * group_ch, group_ch);
    const Mat dxhat = dy.middleCols(g * group_ch, group_ch).array().rowwise() *
                      gamma.row(0).segment(g * group_ch, group_ch).array();
    const double m = static_cast<double>(dxhat.size());
    const double sum_d = dxhat.sum();
    const double sum_dx = (dxhat.array() * xhat.array()).sum();
    dx.middleCols(g * group_ch, group_ch) =
        cache.inv_std(g) *
        (dxhat.array() - sum_d / m - xhat.array() * (sum_dx / m)).matrix();
  }
  return dx;
}

namespace {

// Gather the 27-neighborhood im2col matrix: rows = output voxels, columns =
// kernel offset major, input channel minor. Zero padding of width 1.
Mat im2col3d(const Mat& grid, int res, int stride) {
  const Eigen::Index cin = grid.cols();
  const int out_res = stride == 1 ? res : res / 2;
  Mat col = Mat::Zero(static_cast<Eigen::Index>(out_res) * out_res * out_res, 27 * cin);
  Eigen::Index row = 0;
  for (int ox = 0; ox < out_res; ++ox) {
    for (int oy = 0; oy < out_res; ++oy) {
      for (int oz = 0; oz < out_res; ++oz, ++row) {
        int k = 0;
        for (int kx = 0; kx < 3; ++kx) {
          const int ix = ox * stride + kx - 1;
          for (int ky = 0; ky < 3; ++ky) {
            const int iy = oy * stride + ky - 1;
            for (int kz = 0; kz < 3; ++kz, ++k) {
              const int iz = oz * stride + kz - 1;
              if (ix < 0 || ix >= res || iy < 0 || iy >= res || iz < 0 || iz >= res)
                continue;
              col.block(row, k * cin, 1, cin) =
                  grid.row((static_cast<Eigen::Index>(ix) * res + iy) * res + iz);
            }
          }
        }
      }
    }
  }
  return col;
}

void col2im3d(const Mat& dcol, int res, int stride, Mat& dgrid) {
  const Eigen::Index cin = dgrid.cols();
  const int out_res = stride == 1 ? res : res / 2;
  Eigen::Index row = 0;
  for (int ox = 0; ox < out_res; ++ox) {
    for (int oy = 0; oy < out_res; ++oy) {
      for (int oz = 0; oz < out_res; ++oz, ++row) {
        int k = 0;
        for (int kx = 0; kx < 3; ++kx) {
          const int ix = ox * stride + kx - 1;
          for (int ky = 0; ky < 3; ++ky) {
            const int iy = oy * stride + ky - 1;
            for (int kz = 0; kz < 3; ++kz, ++k) {
              const int iz = oz * stride + kz - 1;
              if (ix < 0 || ix >= res || iy < 0 || iy >= res || iz < 0 || iz >= res)
                continue;
              dgrid.row((static_cast<Eigen::Index>(ix) * res + iy) * res + iz) +=
                  dcol.block(row, k * cin, 1, cin);
            }
          }
        }
      }
    }
  }
}

void check_conv_args(const Mat& grid, int res, int stride) {
  if (res < 1 || grid.rows() != static_cast<Eigen::Index>(res) * res * res)
    throw std::invalid_argument("conv3d: grid rows do not match resolution");
  if (stride != 1 && stride != 2)
    throw std::invalid_argument("conv3d: stride must be 1 or 2");
  if (stride == 2 && res % 2 != 0)
    throw std::invalid_argument("conv3d: stride-2 needs even resolution");
}

}  // namespace

Mat conv3d_fwd(const Mat& grid, int res, const Eigen::Ref<const Mat>& weight,
               const Eigen::Ref<const Mat>& bias, int stride) {
  check_conv_args(grid, res, stride);
  if (weight.cols() != 27 * grid.cols())
    throw std::invalid_argument("conv3d: weight shape mismatch");
  Mat out = im2col3d(grid, res, stride) * weight.transpose();
  out.array().rowwise() += bias.row(0).array();
  return out;
}

Mat conv3d_bwd(const Mat& d_out, const Mat& grid, int res,
               const Eigen::Ref<const Mat>& weight, Eigen::Ref<Mat> d_weight,
               Eigen::Ref<Mat> d_bias, int stride) {
  check_conv_args(grid, res, stride);
  const Mat col = im2col3d(grid, res, stride);
  d_weight += d_out.transpose() * col;
  d_bias.row(0) += d_out.colwise().sum();
  const Mat dcol = d_out * weight;
  Mat dgrid = Mat::Zero(grid.rows(), grid.cols());
  col2im3d(dcol, res, stride, dgrid);
  return dgrid;
}

Mat upsample2_fwd(const Mat& grid, int res) {
  const int out_res = res * 2;
  Mat out(static_cast<Eigen::Index>(out_res) * out_res * out_res, grid.cols());
  Eigen::Index row = 0;
  for (int x = 0; x < out_res; ++x)
    for (int y = 0; y < out_res; ++y)
      for (int z = 0; z < out_res; ++z, ++row)
        out.row(row) =
            grid.row((static_cast<Eigen::Index>(x / 2) * res + y / 2) * res + z / 2);
  return out;
}

Mat upsample2_bwd(const Mat& d_out, int res) {
  const int out_res = res * 2;
  Mat d_grid = Mat::Zero(static_cast<Eigen::Index>(res) * res * res, d_out.cols());
  Eigen::Index row = 0;
  for (int x = 0; x < out_res; ++x)
    for (int y = 0; y < out_res; ++y)
      for (int z = 0; z < out_res; ++z, ++row)
        d_grid.row((static_cast<Eigen::Index>(x / 2) * res + y / 2) * res + z / 2) +=
            d_out.row(row);
  return d_grid;
}

namespace {

inline double clamp_unit(double v) { return std::min(0.5, std::max(-0.5, v)); }

}  // namespace

Mat voxelize(const Eigen::Ref<const Mat>& points, const Eigen::Ref<const Mat>& feats,
             int res, VoxelizeCache* cache) {
  if (res < 2) throw std::invalid_argument("voxelize: resolution must be >= 2");
  if (points.rows() != feats.rows())
    throw std::invalid_argument("voxelize: points/features row mismatch");
  const Eigen::Index n = points.rows();
  const Eigen::Index cells = static_cast<Eigen::Index>(res) * res * res;
  Mat grid = Mat::Zero(cells, feats.cols());
  std::vector<int> cell(static_cast<std::size_t>(n));
  std::vector<double> count(static_cast<std::size_t>(cells), 0.0);
  for (Eigen::Index i = 0; i < n; ++i) {
    int idx[3];
    for (int a = 0; a < 3; ++a) {
      const double g = (clamp_unit(points(i, a)) + 0.5) * res;
      idx[a] = std::min(res - 1, std::max(0, static_cast<int>(std::floor(g))));
    }
    const int c = (idx[0] * res + idx[1]) * res + idx[2];
    cell[i] = c;
    count[c] += 1.0;
    grid.row(c) += feats.row(i);
  }
  std::vector<double> inv(static_cast<std::size_t>(cells), 0.0);
  for (Eigen::Index c = 0; c < cells; ++c) {
    if (count[c] > 0.0) {
      inv[c] = 1.0 / count[c];
      grid.row(c) *= inv[c];
    }
  }
  if (cache) {
    cache->cell = std::move(cell);
    cache->inv_count = std::move(inv);
  }
  return grid;
}

Mat voxelize_bwd(const Mat& d_grid, const VoxelizeCache& cache, Eigen::Index n_points) {
  Mat d_feats = Mat::Zero(n_points, d_grid.cols());
  for (Eigen::Index i = 0; i < n_points; ++i) {
    const int c = cache.cell[i];
    d_feats.row(i) = d_grid.row(c) * cache.inv_count[c];
  }
  return d_feats;
}

Mat devoxelize(const Eigen::Ref<const Mat>& grid, int res,
               const Eigen::Ref<const Mat>& points, DevoxCache* cache) {
  if (res < 2) throw std::invalid_argument("devoxelize: resolution must be >= 2");
  if (grid.rows() != static_cast<Eigen::Index>(res) * res * res)
    throw std::invalid_argument("devoxelize: grid rows do not match resolution");
  const Eigen::Index n = points.rows();
  Mat out = Mat::Zero(n, grid.cols());
  Eigen::Matrix<int, Eigen::Dynamic, 8> corners(n, 8);
  Eigen::Matrix<double, Eigen::Dynamic, 8> weights(n, 8);
  for (Eigen::Index i = 0; i < n; ++i) {
    int i0[3];
    double frac[3];
    for (int a = 0; a < 3; ++a) {
      // cell centers at (i + 0.5) / res - 0.5
      double g = (clamp_unit(points(i, a)) + 0.5) * res - 0.5;
      g = std::min(static_cast<double>(res - 1), std::max(0.0, g));
      i0[a] = std::min(res - 2, static_cast<int>(std::floor(g)));
      frac[a] = g - i0[a];
    }
    int k = 0;
    for (int dx = 0; dx < 2; ++dx)
      for (int dy = 0; dy < 2; ++dy)
        for (int dz = 0; dz < 2; ++dz, ++k) {
          const double w = (dx ? frac[0] : 1.0 - frac[0]) * (dy ? frac[1] : 1.0 - frac[1]) *
                           (dz ? frac[2] : 1.0 - frac[2]);
          const int cell = ((i0[0] + dx) * res + i0[1] + dy) * res + i0[2] + dz;
          corners(i, k) = cell;
          weights(i, k) = w;
          if (w != 0.0) out.row(i) += w * grid.row(cell);
        }
  }
  if (cache) {
    cache->corners = std::move(corners);
    cache->weights = std::move(weights);
  }
  return out;
}

Mat devoxelize_bwd(const Mat& d_out, const DevoxCache& cache, int res) {
  Mat d_grid = Mat::Zero(static_cast<Eigen::Index>(res) * res * res, d_out.cols());
  for (Eigen::Index i = 0; i < d_out.rows(); ++i)
    for (int k = 0; k < 8; ++k) {
      const double w = cache.weights(i, k);
      if (w != 0.0) d_grid.row(cache.corners(i, k)) += w * d_out.row(i);
    }
  return d_grid;
}

}  // namespace pcdiff
