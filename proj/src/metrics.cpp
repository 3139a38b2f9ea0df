#include "pcdiff/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace pcdiff {

NnIndex::NnIndex(const Eigen::Matrix<double, Eigen::Dynamic, 3>& points, double cell_size)
    : points_(points) {
  if (points.rows() < 1) throw std::invalid_argument("NnIndex: need at least one point");
  if (!(cell_size > 0.0)) throw std::invalid_argument("NnIndex: cell size must be > 0");
  cell_size_ = cell_size;
  origin_ = points.colwise().minCoeff().transpose();
  const Eigen::Vector3d extent =
      points.colwise().maxCoeff().transpose() - origin_;
  for (int a = 0; a < 3; ++a) {
    dims_[a] = std::max(1, static_cast<int>(std::floor(extent[a] / cell_size_)) + 1);
    // cap the grid so pathological cell sizes cannot blow up memory
    dims_[a] = std::min(dims_[a], 256);
  }

  const int cells = dims_[0] * dims_[1] * dims_[2];
  cell_start_.assign(cells + 1, 0);
  std::vector<int> cell_index(points.rows());
  for (Eigen::Index i = 0; i < points.rows(); ++i) {
    const Eigen::Vector3d p = points.row(i).transpose();
    cell_index[i] = flat(cell_of(p, 0), cell_of(p, 1), cell_of(p, 2));
    ++cell_start_[cell_index[i] + 1];
  }
  std::partial_sum(cell_start_.begin(), cell_start_.end(), cell_start_.begin());
  cell_ids_.resize(points.rows());
  std::vector<int> cursor(cell_start_.begin(), cell_start_.end() - 1);
  for (Eigen::Index i = 0; i < points.rows(); ++i)
    cell_ids_[cursor[cell_index[i]]++] = static_cast<int>(i);
  // ascending ids within each cell fall out of the stable fill above
}

int NnIndex::cell_of(const Eigen::Vector3d& p, int axis) const {
  const int c = static_cast<int>(std::floor((p[axis] - origin_[axis]) / cell_size_));
  return std::clamp(c, 0, dims_[axis] - 1);
}

NnIndex::Hit NnIndex::query(const Eigen::Vector3d& q) const {
  const int cx = cell_of(q, 0), cy = cell_of(q, 1), cz = cell_of(q, 2);
  int best_id = -1;
  double best_d2 = std::numeric_limits<double>::infinity();

  const auto scan_cell = [&](int ix, int iy, int iz) {
    const int cell = flat(ix, iy, iz);
    for (int k = cell_start_[cell]; k < cell_start_[cell + 1]; ++k) {
      const int id = cell_ids_[k];
      const double d2 = (points_.row(id).transpose() - q).squaredNorm();
      if (d2 < best_d2 || (d2 == best_d2 && id < best_id)) {
        best_d2 = d2;
        best_id = id;
      }
    }
  };

  const int max_ring = std::max({dims_[0], dims_[1], dims_[2]});
  for (int ring = 0; ring <= max_ring; ++ring) {
    if (best_id >= 0 && ring > 0) {
      // Cheapest distance from q to any cell outside the already-scanned
      // box; once it exceeds the best distance no unscanned point can win
      // or tie with a lower id at strictly smaller distance. Equal distance
      // at the boundary is still scanned (<=), preserving the id tie rule.
      double margin = std::numeric_limits<double>::infinity();
      bool open = false;
      for (int a = 0; a < 3; ++a) {
        const int c = a == 0 ? cx : (a == 1 ? cy : cz);
        const double lo_edge = origin_[a] + (c - (ring - 1)) * cell_size_;
        const double hi_edge = origin_[a] + (c + ring) * cell_size_;
        if (c - (ring - 1) > 0) {
          margin = std::min(margin, q[a] - lo_edge);
          open = true;
        }
        if (c + ring < dims_[a]) {
          margin = std::min(margin, hi_edge - q[a]);
          open = true;
        }
      }
      if (!open) break;  // scanned the whole grid
      if (margin * margin > best_d2) break;
    }
    // cells on the Chebyshev shell of radius `ring`
    for (int ix = std::max(0, cx - ring); ix <= std::min(dims_[0] - 1, cx + ring); ++ix) {
      for (int iy = std::max(0, cy - ring); iy <= std::min(dims_[1] - 1, cy + ring);
           ++iy) {
        const bool face_x = std::abs(ix - cx) == ring;
        const bool face_y = std::abs(iy - cy) == ring;
        if (face_x || face_y) {
          for (int iz = std::max(0, cz - ring); iz <= std::min(dims_[2] - 1, cz + ring);
               ++iz)
            scan_cell(ix, iy, iz);
        } else {
          for (const int iz : {cz - ring, cz + ring})
            if (iz >= 0 && iz < dims_[2]) scan_cell(ix, iy, iz);
        }
      }
    }
  }
  return {best_id, std::sqrt(best_d2)};
}

FScoreResult fscore(const PointCloud& pred, const PointCloud& gt, double tau) {
  if (pred.size() < 1 || gt.size() < 1)
    throw std::invalid_argument("fscore: empty cloud");
  if (!(tau > 0.0)) throw std::invalid_argument("fscore: tau must be > 0");

  const auto fraction_within = [tau](const PointCloud& from, const PointCloud& to) {
    const NnIndex index(to.positions, tau);
    Eigen::Index hits = 0;
    for (Eigen::Index i = 0; i < from.size(); ++i) {
      if (index.query(from.positions.row(i).transpose()).distance <= tau) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(from.size());
  };

  FScoreResult out;
  out.precision = fraction_within(pred, gt);
  out.recall = fraction_within(gt, pred);
  out.f = (out.precision + out.recall) > 0.0
              ? 2.0 * out.precision * out.recall / (out.precision + out.recall)
              : 0.0;
  return out;
}

double chamfer(const PointCloud& a, const PointCloud& b) {
  if (a.size() < 1 || b.size() < 1) throw std::invalid_argument("chamfer: empty cloud");
  const auto mean_sq_nn = [](const PointCloud& from, const PointCloud& to) {
    const Eigen::Vector3d lo = to.positions.colwise().minCoeff().transpose();
    const Eigen::Vector3d hi = to.positions.colwise().maxCoeff().transpose();
    const double extent = std::max((hi - lo).maxCoeff(), 1e-9);
    const double cell =
        extent / std::max(1.0, std::cbrt(static_cast<double>(to.size())));
    const NnIndex index(to.positions, cell);
    double sum = 0.0;
    for (Eigen::Index i = 0; i < from.size(); ++i) {
      const double d = index.query(from.positions.row(i).transpose()).distance;
      sum += d * d;
    }
    return sum / static_cast<double>(from.size());
  };
  return mean_sq_nn(a, b) + mean_sq_nn(b, a);
}

}  // namespace pcdiff
