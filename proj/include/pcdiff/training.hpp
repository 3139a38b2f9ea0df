#pragma once

#include <filesystem>
#include <functional>
#include <thread>
#include <vector>

#include <Eigen/Core>

#include "pcdiff/dataio.hpp"
#include "pcdiff/denoiser.hpp"
#include "pcdiff/geometry.hpp"
#include "pcdiff/projection.hpp"
#include "pcdiff/schedule.hpp"

namespace pcdiff {

struct TrainConfig {
  int batch_size = 16;
  int total_steps = 5000;  // desk scale; 100000 at full scale
  double lr_start = 2e-4;
  double lr_end = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double weight_decay = 0.01;
  std::uint64_t seed = 0;
  bool desk_scale = true;
  int checkpoint_every = 1000;  // 0 disables periodic checkpoints

  void validate() const;
};

/// Linear learning-rate decay; step is 0-based so step total_steps/2 gives
/// exactly (lr_start + lr_end) / 2.
double lr_at(const TrainConfig& config, int step);

/// One training example held in memory. Images are kept quantized (8-bit) and
/// materialized on demand; the mask distance field is precomputed once.
struct LoadedRecord {
  std::string id;
  std::string family;
  Eigen::Matrix<double, Eigen::Dynamic, 3> positions;
  Eigen::Matrix<double, Eigen::Dynamic, 3> colors;
  CameraView camera;
  std::vector<std::uint8_t> rgb;  // H*W*3 row-major
  BinaryMask mask;
  MaskDistanceField field;

  ImageGrid image() const;
};

struct LoadedDataset {
  std::vector<LoadedRecord> records;
  Eigen::Index points = 0;
  int image_size = 0;

  std::size_t size() const { return records.size(); }
};

LoadedDataset load_dataset(const std::filesystem::path& manifest_path);

/// Dataset split: records [0, size - eval_count) train, the tail evaluates.
/// Families are interleaved at generation time, so the tail stays balanced.
LoadedDataset train_split(const LoadedDataset& data, std::size_t eval_count);
LoadedDataset eval_split(const LoadedDataset& data, std::size_t eval_count);

/// Noise-prediction loss: x_t = forward_diffuse(x0, t, eps); condition from
/// the camera view by the model's conditioning mode; mean squared error
/// between eps and the prediction over all 3N coordinates.
double training_loss(const Denoiser& net, const Eigen::Ref<const Eigen::VectorXd>& params,
                     const PointCloud& x0, const ImageGrid& image, const BinaryMask& mask,
                     const MaskDistanceField& field, const CameraView& camera, int t,
                     const NoiseSample& eps, const NoiseSchedule& sched,
                     double radius_ndc);

/// Same loss, accumulating parameter gradients into `grad`.
double training_loss_grad(const Denoiser& net,
                          const Eigen::Ref<const Eigen::VectorXd>& params,
                          const PointCloud& x0, const ImageGrid& image,
                          const BinaryMask& mask, const MaskDistanceField& field,
                          const CameraView& camera, int t, const NoiseSample& eps,
                          const NoiseSchedule& sched, double radius_ndc,
                          Eigen::Ref<Eigen::VectorXd> grad);

/// Single-step coloring loss (no diffusion): condition the ground-truth shape
/// and regress per-point colors with MSE.
double color_loss_grad(const Denoiser& net, const Eigen::Ref<const Eigen::VectorXd>& params,
                       const PointCloud& shape, const ImageGrid& image,
                       const BinaryMask& mask, const MaskDistanceField& field,
                       const CameraView& camera, double radius_ndc,
                       Eigen::Ref<Eigen::VectorXd> grad);

struct TraceRow {
  int step;
  double loss;
  double lr;
};

/// Full optimizer state; checkpoints store parameters in 32-bit floats, this
/// is the exact-resume companion.
struct TrainState {
  int step = 0;
  Eigen::VectorXd params, m, v;
};

struct TrainOptions {
  double radius_ndc = 0.0075;
  int threads = 1;
  enum class Target { kNoise, kColor } target = Target::kNoise;
  // called after every optimizer step that hits checkpoint_every (and at the
  // end); receives the current state
  std::function<void(const TrainState&)> checkpoint_sink;
};

/// Thrown when the loss goes non-finite; carries the diagnostics the CLI
/// prints before exiting with the numerical-failure code.
struct TrainDivergedError : std::runtime_error {
  TrainDivergedError(int step_, std::vector<int> ts_, std::vector<std::size_t> ids_);
  int step;
  std::vector<int> ts;
  std::vector<std::size_t> ids;
};

TrainState init_train_state(const Denoiser& net, std::uint64_t seed);

/// AdamW training loop with decoupled weight decay. Per-step randomness is
/// keyed by (seed, step, item), so runs are reproducible for any thread count
/// and resuming from a saved state is bit-identical to an uninterrupted run.
TrainState train(const Denoiser& net, const NoiseSchedule& sched,
                 const LoadedDataset& data, const TrainConfig& config,
                 const TrainOptions& options, std::vector<TraceRow>* trace,
                 TrainState state);

void save_train_state(const std::filesystem::path& path, const PointVoxelConfig& config,
                      const TrainState& state);
TrainState load_train_state(const std::filesystem::path& path,
                            const PointVoxelConfig& expected);

void write_loss_csv(const std::filesystem::path& path, const std::vector<TraceRow>& trace);

struct SampleStats {
  int conditioning_calls = 0;
};

/// Conditional reverse-sampling loop: x_T ~ N(0, I), then T reverse steps,
/// re-conditioning on the partially-denoised cloud before every step.
PointCloud sample(const Denoiser& net, const Eigen::Ref<const Eigen::VectorXd>& params,
                  const ImageGrid& image, const BinaryMask& mask,
                  const MaskDistanceField& field, const CameraView& camera,
                  Eigen::Index n_points, std::uint64_t seed, const NoiseSchedule& sched,
                  double radius_ndc, SampleStats* stats = nullptr);

/// One forward pass of the coloring network over a completed reconstruction;
/// returns the shape with colors clamped to [0, 1].
PointCloud colorize(const Denoiser& color_net,
                    const Eigen::Ref<const Eigen::VectorXd>& color_params,
                    const PointCloud& shape, const ImageGrid& image,
                    const BinaryMask& mask, const MaskDistanceField& field,
                    const CameraView& camera, double radius_ndc);

/// Deterministic helper: runs fn(0..n-1) on up to `threads` workers; callers
/// must make iterations independent.
void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn);

}  // namespace pcdiff
