#include "pcdiff/training.hpp"

#include <atomic>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace pcdiff {

namespace fs = std::filesystem;

void TrainConfig::validate() const {
  if (batch_size < 1) throw std::invalid_argument("train: batch_size must be >= 1");
  if (total_steps < 1) throw std::invalid_argument("train: total_steps must be >= 1");
  if (!(lr_start >= lr_end) || !(lr_end >= 0.0))
    throw std::invalid_argument("train: need lr_start >= lr_end >= 0");
}

double lr_at(const TrainConfig& config, int step) {
  return config.lr_start +
         (config.lr_end - config.lr_start) * static_cast<double>(step) /
             static_cast<double>(config.total_steps);
}

ImageGrid LoadedRecord::image() const {
  ImageGrid grid(camera.height(), camera.width(), 3);
  const int w = camera.width();
  for (int r = 0; r < camera.height(); ++r)
    for (int c = 0; c < w; ++c)
      for (int ch = 0; ch < 3; ++ch)
        grid.at(r, c, ch) = rgb[(static_cast<std::size_t>(r) * w + c) * 3 + ch] / 255.0;
  return grid;
}

LoadedDataset load_dataset(const fs::path& manifest_path) {
  const DatasetManifest manifest = manifest_read(manifest_path);
  const fs::path dir = manifest_path.parent_path();
  LoadedDataset data;
  data.points = manifest.points;
  data.image_size = manifest.image_size;
  data.records.reserve(manifest.records.size());
  for (const auto& rec : manifest.records) {
    const PointCloud cloud = ply_read(dir / rec.cloud_path);
    const ImageGrid image = ppm_read(dir / rec.image_path);
    BinaryMask mask = pgm_read(dir / rec.mask_path);
    std::ifstream cam_in(dir / rec.camera_path);
    if (!cam_in) throw std::runtime_error("missing camera file for record " + rec.id);
    std::ostringstream cam_buf;
    cam_buf << cam_in.rdbuf();
    CameraView camera = camera_from_json(cam_buf.str());
    if (image.height != camera.height() || image.width != camera.width() ||
        mask.height() != camera.height() || mask.width() != camera.width())
      throw std::runtime_error("record " + rec.id + " has inconsistent dimensions");

    LoadedRecord loaded{rec.id,
                        rec.family,
                        cloud.positions,
                        cloud.colors,
                        camera,
                        {},
                        std::move(mask),
                        {}};
    loaded.rgb.resize(static_cast<std::size_t>(image.height) * image.width * 3);
    for (int r = 0; r < image.height; ++r)
      for (int c = 0; c < image.width; ++c)
        for (int ch = 0; ch < 3; ++ch)
          loaded.rgb[(static_cast<std::size_t>(r) * image.width + c) * 3 + ch] =
              static_cast<std::uint8_t>(std::lround(image.at(r, c, ch) * 255.0));
    loaded.field = mask_distance_field(loaded.mask);
    data.records.push_back(std::move(loaded));
  }
  return data;
}

LoadedDataset train_split(const LoadedDataset& data, std::size_t eval_count) {
  if (eval_count >= data.size())
    throw std::invalid_argument("train_split: eval_count leaves no training data");
  LoadedDataset out{{data.records.begin(), data.records.end() - eval_count},
                    data.points,
                    data.image_size};
  return out;
}

LoadedDataset eval_split(const LoadedDataset& data, std::size_t eval_count) {
  if (eval_count > data.size())
    throw std::invalid_argument("eval_split: eval_count exceeds dataset");
  LoadedDataset out{{data.records.end() - eval_count, data.records.end()},
                    data.points,
                    data.image_size};
  return out;
}

namespace {

ConditionedCloud condition_for_mode(const Denoiser& net,
                                    const Eigen::Ref<const Eigen::VectorXd>& params,
                                    const PointCloud& cloud, const ImageGrid& image,
                                    const BinaryMask& mask, const MaskDistanceField& field,
                                    const CameraView& camera, double radius_ndc) {
  switch (net.config().mode) {
    case ConditioningMode::kProjection:
      return condition(cloud, camera, image, mask, field, {radius_ndc, false});
    case ConditioningMode::kProjectionNoMdf:
      return condition(cloud, camera, image, mask, field, {radius_ndc, true});
    case ConditioningMode::kNaive:
      return condition_naive(cloud, camera, image, mask, field, {radius_ndc, false});
    case ConditioningMode::kGlobal: {
      ConditionedCloud cc;
      cc.positions = cloud.positions;
      cc.features = Mat(cloud.size(), net.config().global_dim);
      cc.features.rowwise() = net.global_pooled(params, image).transpose();
      return cc;
    }
  }
  throw std::logic_error("unreachable conditioning mode");
}

struct ItemLoss {
  double loss;
};

double loss_impl(const Denoiser& net, const Eigen::Ref<const Eigen::VectorXd>& params,
                 const PointCloud& x0, const ImageGrid& image, const BinaryMask& mask,
                 const MaskDistanceField& field, const CameraView& camera, int t,
                 const NoiseSample* eps, const NoiseSchedule* sched, double radius_ndc,
                 bool color_target, double* grad_data) {
  PointCloud x_t;
  Mat target;
  if (color_target) {
    x_t.positions = x0.positions;
    if (!x0.has_colors()) throw std::invalid_argument("color loss: cloud has no colors");
    target = x0.colors;
  } else {
    x_t.positions = forward_diffuse(x0.positions, t, *eps, *sched);
    target = *eps;
  }
  const ConditionedCloud cc =
      condition_for_mode(net, params, x_t, image, mask, field, camera, radius_ndc);
  DenoiserWorkspace ws;
  const int t_embed = color_target ? 0 : t;
  const Mat out = net.forward(cc.positions, cc.features, t_embed, params, ws);
  const double denom = static_cast<double>(out.size());
  const Mat diff = out - target;
  const double loss = diff.squaredNorm() / denom;
  if (grad_data) {
    Eigen::Map<Eigen::VectorXd> grad(grad_data,
                                     static_cast<Eigen::Index>(net.param_count()));
    const Mat d_out = (2.0 / denom) * diff;
    const Mat d_features = net.backward(d_out, ws, params, grad);
    if (net.config().mode == ConditioningMode::kGlobal) {
      // every point shares the pooled vector, so its gradient is the column
      // sum over points
      const Eigen::VectorXd d_pooled = d_features.colwise().sum().transpose();
      net.global_pooled_bwd(d_pooled, image, grad);
    }
  }
  return loss;
}

}  // namespace

double training_loss(const Denoiser& net, const Eigen::Ref<const Eigen::VectorXd>& params,
                     const PointCloud& x0, const ImageGrid& image, const BinaryMask& mask,
                     const MaskDistanceField& field, const CameraView& camera, int t,
                     const NoiseSample& eps, const NoiseSchedule& sched,
                     double radius_ndc) {
  return loss_impl(net, params, x0, image, mask, field, camera, t, &eps, &sched,
                   radius_ndc, false, nullptr);
}

double training_loss_grad(const Denoiser& net,
                          const Eigen::Ref<const Eigen::VectorXd>& params,
                          const PointCloud& x0, const ImageGrid& image,
                          const BinaryMask& mask, const MaskDistanceField& field,
                          const CameraView& camera, int t, const NoiseSample& eps,
                          const NoiseSchedule& sched, double radius_ndc,
                          Eigen::Ref<Eigen::VectorXd> grad) {
  return loss_impl(net, params, x0, image, mask, field, camera, t, &eps, &sched,
                   radius_ndc, false, grad.data());
}

double color_loss_grad(const Denoiser& net, const Eigen::Ref<const Eigen::VectorXd>& params,
                       const PointCloud& shape, const ImageGrid& image,
                       const BinaryMask& mask, const MaskDistanceField& field,
                       const CameraView& camera, double radius_ndc,
                       Eigen::Ref<Eigen::VectorXd> grad) {
  return loss_impl(net, params, shape, image, mask, field, camera, 0, nullptr, nullptr,
                   radius_ndc, true, grad.data());
}

TrainDivergedError::TrainDivergedError(int step_, std::vector<int> ts_,
                                       std::vector<std::size_t> ids_)
    : std::runtime_error("training loss became non-finite at step " +
                         std::to_string(step_)),
      step(step_),
      ts(std::move(ts_)),
      ids(std::move(ids_)) {}

TrainState init_train_state(const Denoiser& net, std::uint64_t seed) {
  Rng rng(mix_ids(seed, 0x494e4954ull));  // params stream
  TrainState state;
  state.params = net.init_params(rng);
  state.m = Eigen::VectorXd::Zero(state.params.size());
  state.v = Eigen::VectorXd::Zero(state.params.size());
  return state;
}

void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn) {
  const int workers = std::max(1, std::min<int>(threads, static_cast<int>(n)));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next.fetch_add(1); i < n; i = next.fetch_add(1)) fn(i);
    });
  }
  for (auto& th : pool) th.join();
}

TrainState train(const Denoiser& net, const NoiseSchedule& sched,
                 const LoadedDataset& data, const TrainConfig& config,
                 const TrainOptions& options, std::vector<TraceRow>* trace,
                 TrainState state) {
  config.validate();
  if (data.records.empty()) throw std::invalid_argument("train: empty dataset");
  if (state.params.size() != static_cast<Eigen::Index>(net.param_count()))
    throw std::invalid_argument("train: state does not match model");

  const Rng root(config.seed);
  const bool color = options.target == TrainOptions::Target::kColor;
  const int batch = config.batch_size;
  const Eigen::Index n_params = state.params.size();

  std::vector<Eigen::VectorXd> item_grads(batch, Eigen::VectorXd(n_params));
  std::vector<double> item_losses(batch);
  std::vector<std::size_t> item_ids(batch);
  std::vector<int> item_ts(batch);

  for (int step = state.step; step < config.total_steps; ++step) {
    // draws are keyed by (seed, step, item): thread-count independent and
    // resumable without replaying the stream
    for (int j = 0; j < batch; ++j) {
      Rng item_rng = root.fork(mix_ids(static_cast<std::uint64_t>(step), j));
      item_ids[j] = item_rng.below(data.records.size());
      item_ts[j] = 1 + static_cast<int>(item_rng.below(sched.steps()));
    }
    parallel_for(batch, options.threads, [&](std::size_t j) {
      Rng item_rng = root.fork(mix_ids(static_cast<std::uint64_t>(step), j));
      item_rng.below(data.records.size());
      item_rng.below(sched.steps());
      const LoadedRecord& rec = data.records[item_ids[j]];
      PointCloud cloud;
      cloud.positions = rec.positions;
      cloud.colors = rec.colors;
      const ImageGrid image = rec.image();
      item_grads[j].setZero();
      if (color) {
        item_losses[j] =
            color_loss_grad(net, state.params, cloud, image, rec.mask, rec.field,
                            rec.camera, options.radius_ndc, item_grads[j]);
      } else {
        const NoiseSample eps = standard_normal_rows(rec.positions.rows(), item_rng);
        item_losses[j] = training_loss_grad(net, state.params, cloud, image, rec.mask,
                                            rec.field, rec.camera, item_ts[j], eps,
                                            sched, options.radius_ndc, item_grads[j]);
      }
    });

    double loss = 0.0;
    Eigen::VectorXd grad = Eigen::VectorXd::Zero(n_params);
    for (int j = 0; j < batch; ++j) {  // fixed reduction order
      loss += item_losses[j];
      grad += item_grads[j];
    }
    loss /= batch;
    grad /= batch;

    if (!std::isfinite(loss))
      throw TrainDivergedError(step, item_ts, item_ids);

    const double lr = lr_at(config, step);
    const double bias1 = 1.0 - std::pow(config.beta1, step + 1);
    const double bias2 = 1.0 - std::pow(config.beta2, step + 1);
    state.m = config.beta1 * state.m + (1.0 - config.beta1) * grad;
    state.v = config.beta2 * state.v.array() +
              (1.0 - config.beta2) * grad.array().square();
    state.params.array() -=
        lr * ((state.m.array() / bias1) / ((state.v.array() / bias2).sqrt() + 1e-8) +
              config.weight_decay * state.params.array());
    state.step = step + 1;

    if (trace) trace->push_back({step, loss, lr});
    if (options.checkpoint_sink && config.checkpoint_every > 0 &&
        (state.step % config.checkpoint_every == 0 || state.step == config.total_steps))
      options.checkpoint_sink(state);
  }
  if (options.checkpoint_sink && config.checkpoint_every <= 0)
    options.checkpoint_sink(state);
  return state;
}

namespace {

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void put_f64(std::string& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  put_u64(out, bits);
}
std::uint64_t get_u64(const std::string& in, std::size_t pos) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i)
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  return v;
}
double get_f64(const std::string& in, std::size_t pos) {
  const std::uint64_t bits = get_u64(in, pos);
  double v;
  std::memcpy(&v, &bits, 8);
  return v;
}

constexpr char kStateMagic[9] = "PCDFSTAT";

}  // namespace

void save_train_state(const fs::path& path, const PointVoxelConfig& config,
                      const TrainState& state) {
  std::string out(kStateMagic, 8);
  put_u32(out, 1);
  put_u64(out, config_hash(config));
  put_u64(out, static_cast<std::uint64_t>(state.step));
  put_u64(out, static_cast<std::uint64_t>(state.params.size()));
  for (Eigen::Index i = 0; i < state.params.size(); ++i) put_f64(out, state.params(i));
  for (Eigen::Index i = 0; i < state.m.size(); ++i) put_f64(out, state.m(i));
  for (Eigen::Index i = 0; i < state.v.size(); ++i) put_f64(out, state.v(i));
  atomic_write(path, out);
}

TrainState load_train_state(const fs::path& path, const PointVoxelConfig& expected) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open train state: " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  const std::string bytes = buf.str();
  if (bytes.size() < 36 || bytes.compare(0, 8, kStateMagic, 8) != 0)
    throw std::runtime_error("not a train state file: " + path.string());
  if (get_u64(bytes, 12) != config_hash(expected))
    throw std::runtime_error("train state config hash mismatch: " + path.string());
  TrainState state;
  state.step = static_cast<int>(get_u64(bytes, 20));
  const std::uint64_t count = get_u64(bytes, 28);
  if (bytes.size() < 36 + 24 * count)
    throw std::runtime_error("truncated train state: " + path.string());
  state.params.resize(static_cast<Eigen::Index>(count));
  state.m.resize(static_cast<Eigen::Index>(count));
  state.v.resize(static_cast<Eigen::Index>(count));
  std::size_t pos = 36;
  for (std::uint64_t i = 0; i < count; ++i, pos += 8)
    state.params(static_cast<Eigen::Index>(i)) = get_f64(bytes, pos);
  for (std::uint64_t i = 0; i < count; ++i, pos += 8)
    state.m(static_cast<Eigen::Index>(i)) = get_f64(bytes, pos);
  for (std::uint64_t i = 0; i < count; ++i, pos += 8)
    state.v(static_cast<Eigen::Index>(i)) = get_f64(bytes, pos);
  return state;
}

void write_loss_csv(const fs::path& path, const std::vector<TraceRow>& trace) {
  std::string out = "step,loss,lr\n";
  char buf[96];
  for (const auto& row : trace) {
    std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g\n", row.step, row.loss, row.lr);
    out += buf;
  }
  atomic_write(path, out);
}

PointCloud sample(const Denoiser& net, const Eigen::Ref<const Eigen::VectorXd>& params,
                  const ImageGrid& image, const BinaryMask& mask,
                  const MaskDistanceField& field, const CameraView& camera,
                  Eigen::Index n_points, std::uint64_t seed, const NoiseSchedule& sched,
                  double radius_ndc, SampleStats* stats) {
  const Rng root(seed);
  Rng init_rng = root.fork(0xfeedull);
  PointCloud cloud;
  cloud.positions = standard_normal_rows(n_points, init_rng);
  DenoiserWorkspace ws;
  for (int t = sched.steps(); t >= 1; --t) {
    const ConditionedCloud cc =
        condition_for_mode(net, params, cloud, image, mask, field, camera, radius_ndc);
    if (stats) ++stats->conditioning_calls;
    const Mat eps_hat = net.forward(cc.positions, cc.features, t, params, ws);
    NoiseSample z = NoiseSample::Zero(n_points, 3);
    if (t > 1) {
      Rng step_rng = root.fork(static_cast<std::uint64_t>(t));
      z = standard_normal_rows(n_points, step_rng);
    }
    cloud.positions = reverse_step(cloud.positions, eps_hat, t, z, sched);
  }
  return cloud;
}

PointCloud colorize(const Denoiser& color_net,
                    const Eigen::Ref<const Eigen::VectorXd>& color_params,
                    const PointCloud& shape, const ImageGrid& image,
                    const BinaryMask& mask, const MaskDistanceField& field,
                    const CameraView& camera, double radius_ndc) {
  const ConditionedCloud cc = condition_for_mode(color_net, color_params, shape, image,
                                                 mask, field, camera, radius_ndc);
  DenoiserWorkspace ws;
  const Mat raw = color_net.forward(cc.positions, cc.features, 0, color_params, ws);
  PointCloud out;
  out.positions = shape.positions;
  out.colors = raw.cwiseMax(0.0).cwiseMin(1.0);
  return out;
}

}  // namespace pcdiff
