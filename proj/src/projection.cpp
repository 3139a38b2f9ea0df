#include "pcdiff/projection.hpp"

#include <algorithm>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <vector>

namespace pcdiff {

RasterResult rasterize(const PointCloud& cloud, const CameraView& camera,
                       double radius_ndc) {
  if (!(radius_ndc > 0.0)) throw std::invalid_argument("rasterize: radius must be > 0");
  const int height = camera.height();
  const int width = camera.width();
  RasterResult out;
  out.point_index.setConstant(height, width, -1);
  out.depth.setConstant(height, width, std::numeric_limits<double>::infinity());

  const double radius_px = radius_ndc * std::min(width, height) / 2.0;
  const double radius_sq = radius_px * radius_px;
  const Eigen::Index n = cloud.size();
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto proj = project_point<double>(camera, cloud.positions.row(i).transpose());
    if (!proj) continue;
    const int r0 = std::max(0, static_cast<int>(std::ceil(proj->v - radius_px)));
    const int r1 = std::min(height - 1, static_cast<int>(std::floor(proj->v + radius_px)));
    const int c0 = std::max(0, static_cast<int>(std::ceil(proj->u - radius_px)));
    const int c1 = std::min(width - 1, static_cast<int>(std::floor(proj->u + radius_px)));
    for (int r = r0; r <= r1; ++r) {
      const double dv = r - proj->v;
      for (int c = c0; c <= c1; ++c) {
        const double du = c - proj->u;
        if (du * du + dv * dv > radius_sq) continue;
        const double d = out.depth(r, c);
        // nearest depth wins; equal depths keep the lower index
        if (proj->depth < d ||
            (proj->depth == d && static_cast<int>(i) < out.point_index(r, c))) {
          out.depth(r, c) = proj->depth;
          out.point_index(r, c) = static_cast<int>(i);
        }
      }
    }
  }
  return out;
}

namespace {

// 1D nearest-set-index pass along one row: for each column, the nearest set
// column (ties toward the smaller column), or -1 if the row is empty.
void nearest_in_row(const BinaryMask& mask, int row, std::vector<int>& nearest) {
  const int width = mask.width();
  nearest.assign(width, -1);
  int last = -1;
  for (int c = 0; c < width; ++c) {
    if (mask.bits(row, c)) last = c;
    nearest[c] = last;
  }
  int next = -1;
  for (int c = width - 1; c >= 0; --c) {
    if (mask.bits(row, c)) next = c;
    if (next < 0) continue;
    if (nearest[c] < 0 || next - c < c - nearest[c]) nearest[c] = next;
    // tie (next - c == c - nearest[c]) keeps the smaller column already stored
  }
}

}  // namespace

MaskDistanceField mask_distance_field(const BinaryMask& mask) {
  const int height = mask.height();
  const int width = mask.width();
  if (mask.count() == 0)
    throw std::invalid_argument("mask_distance_field: empty mask has no nearest pixel");

  MaskDistanceField out;
  out.d_row.setZero(height, width);
  out.d_col.setZero(height, width);

  // Pass 1: per-row nearest set column and its squared distance.
  Eigen::ArrayXXi col_of(height, width);
  Eigen::Array<std::int64_t, Eigen::Dynamic, Eigen::Dynamic> dist2_row(height, width);
  std::vector<int> nearest;
  for (int r = 0; r < height; ++r) {
    nearest_in_row(mask, r, nearest);
    for (int c = 0; c < width; ++c) {
      col_of(r, c) = nearest[c];
      dist2_row(r, c) = nearest[c] < 0
                            ? std::numeric_limits<std::int64_t>::max()
                            : static_cast<std::int64_t>(c - nearest[c]) * (c - nearest[c]);
    }
  }

  // Pass 2: per column, lower envelope of parabolas f_i(r) = (r - i)^2 + g_i
  // over rows i with a set pixel. Boundaries are kept as exact rationals
  // (num / den) so queries landing exactly on a boundary resolve to the
  // earlier parabola, i.e. the smaller row.
  std::vector<int> v(height);              // rows of envelope parabolas
  std::vector<std::int64_t> zn(height + 1);  // boundary numerators
  std::vector<std::int64_t> zd(height + 1);  // boundary denominators (> 0)
  for (int c = 0; c < width; ++c) {
    int k = -1;
    for (int i = 0; i < height; ++i) {
      const std::int64_t gi = dist2_row(i, c);
      if (gi == std::numeric_limits<std::int64_t>::max()) continue;
      // intersection of parabola v[k] and i: s = (gi - gv + i^2 - v^2) / (2(i - v))
      while (k >= 0) {
        const int j = v[k];
        const std::int64_t num = gi - dist2_row(j, c) +
                                 static_cast<std::int64_t>(i) * i -
                                 static_cast<std::int64_t>(j) * j;
        const std::int64_t den = 2 * static_cast<std::int64_t>(i - j);
        if (k == 0 || num * zd[k] > zn[k] * den) {
          ++k;
          v[k] = i;
          zn[k] = num;
          zd[k] = den;
          break;
        }
        --k;  // s <= z[k]: v[k] never wins, drop it
      }
      if (k < 0) {
        // first parabola of this column; z[0] is conceptually -infinity and
        // never compared against
        k = 0;
        v[0] = i;
      }
    }
    int seg = 0;
    for (int r = 0; r < height; ++r) {
      // advance while the next boundary is strictly below r; at an exact
      // boundary the earlier (smaller-row) parabola keeps the pixel
      while (seg < k && zn[seg + 1] < static_cast<std::int64_t>(r) * zd[seg + 1]) ++seg;
      const int best_row = v[seg];
      const int best_col = col_of(best_row, c);
      out.d_row(r, c) = best_row - r;
      out.d_col(r, c) = best_col - c;
    }
  }
  return out;
}

namespace {

constexpr int kMaskFeatureCount = 3;  // mask bit + 2D distance vector

void write_feature_row(Eigen::MatrixXd& features, Eigen::Index point, const ImageGrid& image,
                       const BinaryMask& mask, const MaskDistanceField& field, int r, int c,
                       bool zero_mask_distance) {
  const int channels = image.channels();
  for (int ch = 0; ch < channels; ++ch) features(point, ch) = image.at(r, c, ch);
  features(point, channels) = mask.bits(r, c) ? 1.0 : 0.0;
  if (!zero_mask_distance) {
    features(point, channels + 1) = field.d_row(r, c);
    features(point, channels + 2) = field.d_col(r, c);
  }
}

void check_dimensions(const CameraView& camera, const ImageGrid& features,
                      const BinaryMask& mask, const MaskDistanceField& field) {
  if (features.height != camera.height() || features.width != camera.width() ||
      mask.height() != camera.height() || mask.width() != camera.width() ||
      field.height() != camera.height() || field.width() != camera.width())
    throw std::invalid_argument("condition: image/mask/camera dimension mismatch");
}

}  // namespace

ConditionedCloud condition(const PointCloud& cloud, const CameraView& camera,
                           const ImageGrid& features, const BinaryMask& mask,
                           const MaskDistanceField& field, const ConditionOptions& options) {
  check_dimensions(camera, features, mask, field);
  const Eigen::Index n = cloud.size();
  ConditionedCloud out;
  out.positions = cloud.positions;
  out.features = Eigen::MatrixXd::Zero(n, features.channels() + kMaskFeatureCount);

  const RasterResult raster = rasterize(cloud, camera, options.radius_ndc);

  // For each visible point, the covered pixel closest to its projected
  // center provides the features (deterministic: distance, then row, then
  // column). One grid sweep keeps this O(N + H*W).
  std::vector<double> best_score(static_cast<std::size_t>(n),
                                 std::numeric_limits<double>::infinity());
  std::vector<int> best_pixel(static_cast<std::size_t>(n), -1);
  std::vector<double> proj_u(static_cast<std::size_t>(n)), proj_v(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto proj = project_point<double>(camera, cloud.positions.row(i).transpose());
    if (proj) {
      proj_u[i] = proj->u;
      proj_v[i] = proj->v;
    }
  }
  const int height = raster.height();
  const int width = raster.width();
  for (int r = 0; r < height; ++r) {
    for (int c = 0; c < width; ++c) {
      const int i = raster.point_index(r, c);
      if (i < 0) continue;
      const double du = c - proj_u[i];
      const double dv = r - proj_v[i];
      const double score = du * du + dv * dv;
      if (score < best_score[i]) {
        best_score[i] = score;
        best_pixel[i] = r * width + c;
      }
      // row-major sweep: on equal score the earlier (smaller row, column)
      // pixel is already stored
    }
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    if (best_pixel[i] < 0) continue;
    write_feature_row(out.features, i, features, mask, field, best_pixel[i] / width,
                      best_pixel[i] % width, options.zero_mask_distance);
  }
  return out;
}

ConditionedCloud condition(const PointCloud& cloud, const CameraView& camera,
                           const ImageGrid& features, const BinaryMask& mask,
                           const ConditionOptions& options) {
  return condition(cloud, camera, features, mask, mask_distance_field(mask), options);
}

ConditionedCloud condition_naive(const PointCloud& cloud, const CameraView& camera,
                                 const ImageGrid& features, const BinaryMask& mask,
                                 const MaskDistanceField& field,
                                 const ConditionOptions& options) {
  check_dimensions(camera, features, mask, field);
  const Eigen::Index n = cloud.size();
  ConditionedCloud out;
  out.positions = cloud.positions;
  out.features = Eigen::MatrixXd::Zero(n, features.channels() + kMaskFeatureCount);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto proj = project_point<double>(camera, cloud.positions.row(i).transpose());
    if (!proj) continue;
    const int r = static_cast<int>(std::llround(proj->v));
    const int c = static_cast<int>(std::llround(proj->u));
    if (r < 0 || r >= camera.height() || c < 0 || c >= camera.width()) continue;
    write_feature_row(out.features, i, features, mask, field, r, c,
                      options.zero_mask_distance);
  }
  return out;
}

ConditionedCloud condition_naive(const PointCloud& cloud, const CameraView& camera,
                                 const ImageGrid& features, const BinaryMask& mask,
                                 const ConditionOptions& options) {
  return condition_naive(cloud, camera, features, mask, mask_distance_field(mask), options);
}

}  // namespace pcdiff
