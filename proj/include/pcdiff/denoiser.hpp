#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "pcdiff/geometry.hpp"
#include "pcdiff/nn.hpp"
#include "pcdiff/projection.hpp"
#include "pcdiff/schedule.hpp"

namespace pcdiff {

enum class ConditioningMode { kProjection, kNaive, kProjectionNoMdf, kGlobal };

std::string conditioning_mode_name(ConditioningMode mode);
ConditioningMode conditioning_mode_from_name(const std::string& name);

/// Architecture of the two-branch point-voxel noise predictor: a per-point
/// MLP plus a voxel U-Net (`unet_depth` strided-conv stages down, matching
/// upsample stages with skip connections back up), fused by summation into a
/// zero-initialized output head. The timestep embedding is concatenated at
/// the input of every stage.
struct PointVoxelConfig {
  ConditioningMode mode = ConditioningMode::kProjection;
  int voxel_resolution = 16;
  int unet_depth = 4;
  std::vector<int> stage_channels = {16, 32, 64, 128};
  std::vector<int> point_mlp_widths = {64, 128};
  int time_dim = 64;
  int image_channels = 3;
  int global_dim = 64;     // pooled-vector width in global mode
  int out_channels = 3;    // 3 for noise prediction and for RGB colorizing
  // Mask-distance features arrive in pixels; this converts them to NDC-like
  // units before the stem (2 / image size for the default 137 px images).
  double mdf_feature_scale = 2.0 / 137.0;

  /// Conditioning width per point: image channels + mask bit + distance
  /// vector for projection modes, the pooled width for global mode.
  int feature_dim() const {
    return mode == ConditioningMode::kGlobal ? global_dim : image_channels + 3;
  }

  void validate() const;
};

/// FNV-1a hash of the canonical config serialization; checkpoints refuse to
/// load under a different hash.
std::uint64_t config_hash(const PointVoxelConfig& config);

struct DenoiserWorkspace;

/// The noise predictor. Holds the parameter layout for a fixed config;
/// parameters themselves live in a flat vector so training can treat them
/// uniformly. Forward/backward are hand-written reverse-mode over the fixed
/// architecture.
class Denoiser {
 public:
  explicit Denoiser(const PointVoxelConfig& config);

  const PointVoxelConfig& config() const { return config_; }
  const ParamLayout& layout() const { return layout_; }
  std::size_t param_count() const { return layout_.total(); }

  /// Fan-in-scaled uniform init; output head zero-initialized so the initial
  /// prediction is exactly zero.
  Eigen::VectorXd init_params(Rng& rng) const;

  /// positions: N x 3, features: N x feature_dim(). Returns N x out_channels.
  Mat forward(const Eigen::Ref<const Mat>& positions,
              const Eigen::Ref<const Mat>& features, int t,
              const Eigen::Ref<const Eigen::VectorXd>& params,
              DenoiserWorkspace& ws) const;

  /// Accumulates parameter gradients into `grad` (same layout as params) and
  /// returns the gradient with respect to the feature rows (used by global
  /// conditioning; projection features are constants).
  Mat backward(const Eigen::Ref<const Mat>& d_out, const DenoiserWorkspace& ws,
               const Eigen::Ref<const Eigen::VectorXd>& params,
               Eigen::Ref<Eigen::VectorXd> grad) const;

  /// Global-conditioning image summary: one learned linear layer over the
  /// spatial mean of the feature image.
  Eigen::VectorXd global_pooled(const Eigen::Ref<const Eigen::VectorXd>& params,
                                const ImageGrid& image) const;
  /// Backward of global_pooled into the pooling layer parameters.
  void global_pooled_bwd(const Eigen::Ref<const Eigen::VectorXd>& d_pooled,
                         const ImageGrid& image, Eigen::Ref<Eigen::VectorXd> grad) const;

 private:
  PointVoxelConfig config_;
  ParamLayout layout_;

  // entry ids, in registration order
  std::vector<std::size_t> point_w_, point_b_;
  std::vector<std::size_t> down_w_, down_b_, down_gamma_, down_beta_;
  std::vector<std::size_t> up_w_, up_b_, up_gamma_, up_beta_;
  std::size_t align_w_ = 0, align_b_ = 0;
  std::size_t head_w_ = 0, head_b_ = 0;
  std::size_t pool_w_ = 0, pool_b_ = 0;  // global mode only
  std::vector<int> down_groups_, up_groups_;

  int stem_dim() const { return 3 + config_.feature_dim() + config_.time_dim; }
  int vox_in_dim() const { return 3 + config_.feature_dim(); }
};

/// Per-evaluation caches for backward. Reused across calls to avoid
/// reallocation; one per thread when batching.
struct DenoiserWorkspace {
  Mat x_in;  // N x (3 + F + time_dim)
  Eigen::VectorXd temb;
  std::vector<Mat> point_in, point_pre;
  Mat vox_feats;
  VoxelizeCache vox_cache;
  std::vector<Mat> down_in, down_conv, down_gn;  // conv input, pre-GN, pre-SiLU
  std::vector<GroupNormCache> down_gn_cache;
  std::vector<Mat> skips;  // pre-stage grids, index 0 = voxelized input
  std::vector<Mat> up_in, up_conv, up_gn;
  std::vector<GroupNormCache> up_gn_cache;
  DevoxCache devox_cache;
  Mat devox_out, fused_pre;
  Eigen::Index n_points = 0;
};

/// eps prediction for a conditioned cloud (projection modes).
Mat denoise(const Denoiser& net, const Eigen::Ref<const Eigen::VectorXd>& params,
            const ConditionedCloud& cloud, int t);

/// Baseline: every point receives the same pooled image vector.
Mat denoise_global(const Denoiser& net, const Eigen::Ref<const Eigen::VectorXd>& params,
                   const Eigen::Ref<const Mat>& positions,
                   const Eigen::Ref<const Eigen::VectorXd>& pooled, int t);

/// Isotropic Gaussian data distribution used as a closed-form test oracle.
struct AnalyticGaussianTarget {
  Eigen::Vector3d mu = Eigen::Vector3d::Zero();
  double sigma = 0.0;
};

/// Optimal eps prediction when q(x0) = N(mu, sigma^2 I): the forward marginal
/// is x_t ~ N(sqrt(abar) mu, (abar sigma^2 + 1 - abar) I), so
/// eps = sqrt(1 - abar) (x - sqrt(abar) mu) / (abar sigma^2 + 1 - abar),
/// i.e. -sqrt(1 - abar) times the score of the marginal.
Mat analytic_eps(const Eigen::Ref<const Mat>& x_t, int t,
                 const AnalyticGaussianTarget& target, const NoiseSchedule& sched);

/// Versioned binary checkpoint: magic, version, config hash, count, then
/// parameters as little-endian 32-bit floats in layout order. Loading checks
/// the hash of the expected config.
void save_checkpoint(const std::filesystem::path& path, const PointVoxelConfig& config,
                     const Eigen::Ref<const Eigen::VectorXd>& params);
Eigen::VectorXd load_checkpoint(const std::filesystem::path& path,
                                const PointVoxelConfig& expected);

}  // namespace pcdiff
