#include "pcdiff/denoiser.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "pcdiff/dataio.hpp"

namespace pcdiff {

using nlohmann::json;

std::string conditioning_mode_name(ConditioningMode mode) {
  switch (mode) {
    case ConditioningMode::kProjection: return "projection";
    case ConditioningMode::kNaive: return "naive";
    case ConditioningMode::kProjectionNoMdf: return "projection-no-mdf";
    case ConditioningMode::kGlobal: return "global";
  }
  throw std::invalid_argument("unknown conditioning mode");
}

ConditioningMode conditioning_mode_from_name(const std::string& name) {
  if (name == "projection") return ConditioningMode::kProjection;
  if (name == "naive") return ConditioningMode::kNaive;
  if (name == "projection-no-mdf") return ConditioningMode::kProjectionNoMdf;
  if (name == "global") return ConditioningMode::kGlobal;
  throw std::invalid_argument("unknown conditioning mode: " + name);
}

void PointVoxelConfig::validate() const {
  if (voxel_resolution < 2)
    throw std::invalid_argument("config: voxel_resolution must be >= 2");
  if (unet_depth < 1) throw std::invalid_argument("config: unet_depth must be >= 1");
  if (voxel_resolution % (1 << unet_depth) != 0)
    throw std::invalid_argument(
        "config: voxel_resolution must be divisible by 2^unet_depth");
  if (static_cast<int>(stage_channels.size()) != unet_depth)
    throw std::invalid_argument("config: stage_channels must have unet_depth entries");
  for (int c : stage_channels)
    if (c < 1) throw std::invalid_argument("config: stage channels must be >= 1");
  if (point_mlp_widths.empty())
    throw std::invalid_argument("config: point_mlp_widths must be nonempty");
  for (int w : point_mlp_widths)
    if (w < 1) throw std::invalid_argument("config: point widths must be >= 1");
  if (time_dim < 2 || time_dim % 2 != 0)
    throw std::invalid_argument("config: time_dim must be even and >= 2");
  if (image_channels < 1) throw std::invalid_argument("config: image_channels >= 1");
  if (global_dim < 1) throw std::invalid_argument("config: global_dim >= 1");
  if (out_channels < 1) throw std::invalid_argument("config: out_channels >= 1");
}

namespace {

json config_to_json(const PointVoxelConfig& c) {
  json doc;
  doc["mode"] = conditioning_mode_name(c.mode);
  doc["voxel_resolution"] = c.voxel_resolution;
  doc["unet_depth"] = c.unet_depth;
  doc["stage_channels"] = c.stage_channels;
  doc["point_mlp_widths"] = c.point_mlp_widths;
  doc["time_dim"] = c.time_dim;
  doc["image_channels"] = c.image_channels;
  doc["global_dim"] = c.global_dim;
  doc["out_channels"] = c.out_channels;
  doc["mdf_feature_scale"] = c.mdf_feature_scale;
  return doc;
}

std::uint64_t fnv1a(const std::string& bytes) {
  std::uint64_t hash = 0xcbf29ce484222325ull;
  for (const unsigned char b : bytes) {
    hash ^= b;
    hash *= 0x100000001b3ull;
  }
  return hash;
}

int norm_groups(int channels) {
  for (int g = std::min(8, channels); g > 1; --g)
    if (channels % g == 0) return g;
  return 1;
}

}  // namespace

std::uint64_t config_hash(const PointVoxelConfig& config) {
  return fnv1a(config_to_json(config).dump());
}

Denoiser::Denoiser(const PointVoxelConfig& config) : config_(config) {
  config_.validate();
  const int feat = config_.feature_dim();
  const int td = config_.time_dim;
  const int depth = config_.unet_depth;

  if (config_.mode == ConditioningMode::kGlobal) {
    pool_w_ = layout_.add("pool.w", config_.global_dim, config_.image_channels);
    pool_b_ = layout_.add("pool.b", 1, config_.global_dim);
  }

  int in_dim = stem_dim();
  for (std::size_t k = 0; k < config_.point_mlp_widths.size(); ++k) {
    const int width = config_.point_mlp_widths[k];
    const std::string base = "point." + std::to_string(k);
    point_w_.push_back(layout_.add(base + ".w", width, in_dim));
    point_b_.push_back(layout_.add(base + ".b", 1, width));
    in_dim = width + td;  // later layers see [h, temb]
  }

  int ch = vox_in_dim();
  for (int i = 0; i < depth; ++i) {
    const int out_ch = config_.stage_channels[i];
    const std::string base = "vox.down." + std::to_string(i);
    down_w_.push_back(layout_.add(base + ".w", out_ch, 27 * (ch + td)));
    down_b_.push_back(layout_.add(base + ".b", 1, out_ch));
    down_gamma_.push_back(layout_.add(base + ".gamma", 1, out_ch));
    down_beta_.push_back(layout_.add(base + ".beta", 1, out_ch));
    down_groups_.push_back(norm_groups(out_ch));
    ch = out_ch;
  }
  // up stage i consumes [upsampled (stage_channels[i]), skip, temb]; stages
  // run from the bottom (i = depth-1) to the top (i = 0)
  up_w_.resize(depth);
  up_b_.resize(depth);
  up_gamma_.resize(depth);
  up_beta_.resize(depth);
  up_groups_.resize(depth);
  for (int i = depth - 1; i >= 0; --i) {
    const int skip_ch = i == 0 ? vox_in_dim() : config_.stage_channels[i - 1];
    const int in_ch = config_.stage_channels[i] + skip_ch + td;
    const int out_ch = i == 0 ? config_.stage_channels[0] : config_.stage_channels[i - 1];
    const std::string base = "vox.up." + std::to_string(i);
    up_w_[i] = layout_.add(base + ".w", out_ch, 27 * in_ch);
    up_b_[i] = layout_.add(base + ".b", 1, out_ch);
    up_gamma_[i] = layout_.add(base + ".gamma", 1, out_ch);
    up_beta_[i] = layout_.add(base + ".beta", 1, out_ch);
    up_groups_[i] = norm_groups(out_ch);
  }

  const int fuse_dim = config_.point_mlp_widths.back();
  align_w_ = layout_.add("fuse.align.w", fuse_dim, config_.stage_channels[0]);
  align_b_ = layout_.add("fuse.align.b", 1, fuse_dim);
  head_w_ = layout_.add("head.w", config_.out_channels, fuse_dim);
  head_b_ = layout_.add("head.b", 1, config_.out_channels);
}

Eigen::VectorXd Denoiser::init_params(Rng& rng) const {
  Eigen::VectorXd params(layout_.total());
  for (const auto& entry : layout_.entries()) {
    double* data = params.data() + entry.offset;
    const std::size_t count = static_cast<std::size_t>(entry.rows * entry.cols);
    const bool is_head = entry.name.rfind("head.", 0) == 0;
    if (entry.name.ends_with(".gamma")) {
      std::fill(data, data + count, 1.0);
    } else if (is_head || entry.name.ends_with(".b") || entry.name.ends_with(".beta")) {
      std::fill(data, data + count, 0.0);
    } else {
      const double limit = 1.0 / std::sqrt(static_cast<double>(entry.cols));
      for (std::size_t i = 0; i < count; ++i)
        data[i] = (2.0 * rng.uniform() - 1.0) * limit;
    }
  }
  return params;
}

namespace {

Mat with_temb(const Eigen::Ref<const Mat>& x, const Eigen::VectorXd& temb) {
  Mat out(x.rows(), x.cols() + temb.size());
  out.leftCols(x.cols()) = x;
  out.rightCols(temb.size()).rowwise() = temb.transpose();
  return out;
}

}  // namespace

Mat Denoiser::forward(const Eigen::Ref<const Mat>& positions,
                      const Eigen::Ref<const Mat>& features, int t,
                      const Eigen::Ref<const Eigen::VectorXd>& params,
                      DenoiserWorkspace& ws) const {
  const Eigen::Index n = positions.rows();
  if (features.rows() != n || features.cols() != config_.feature_dim())
    throw std::invalid_argument("denoiser: feature shape mismatch");
  if (params.size() != static_cast<Eigen::Index>(layout_.total()))
    throw std::invalid_argument("denoiser: parameter vector size mismatch");
  const int depth = config_.unet_depth;
  ws.n_points = n;
  ws.temb = time_embedding(t, config_.time_dim);

  Mat feats = features;
  if (config_.mode != ConditioningMode::kGlobal) {
    feats.col(config_.image_channels + 1) *= config_.mdf_feature_scale;
    feats.col(config_.image_channels + 2) *= config_.mdf_feature_scale;
  }

  ws.x_in.resize(n, stem_dim());
  ws.x_in.leftCols(3) = positions;
  ws.x_in.middleCols(3, feats.cols()) = feats;
  ws.x_in.rightCols(config_.time_dim).rowwise() = ws.temb.transpose();

  // point branch
  const std::size_t layers = point_w_.size();
  ws.point_in.assign(layers, Mat());
  ws.point_pre.assign(layers, Mat());
  Mat h;
  for (std::size_t k = 0; k < layers; ++k) {
    ws.point_in[k] = k == 0 ? ws.x_in : with_temb(h, ws.temb);
    ws.point_pre[k] = ws.point_in[k] * layout_.view(params.data(), point_w_[k]).transpose();
    ws.point_pre[k].array().rowwise() +=
        layout_.view(params.data(), point_b_[k]).row(0).array();
    h = silu(ws.point_pre[k]);
  }

  // voxel branch
  ws.vox_feats.resize(n, vox_in_dim());
  ws.vox_feats.leftCols(3) = positions;
  ws.vox_feats.rightCols(feats.cols()) = feats;
  ws.skips.assign(depth, Mat());
  ws.down_in.assign(depth, Mat());
  ws.down_conv.assign(depth, Mat());
  ws.down_gn.assign(depth, Mat());
  ws.down_gn_cache.assign(depth, GroupNormCache());
  ws.up_in.assign(depth, Mat());
  ws.up_conv.assign(depth, Mat());
  ws.up_gn.assign(depth, Mat());
  ws.up_gn_cache.assign(depth, GroupNormCache());

  Mat grid = voxelize(positions, ws.vox_feats, config_.voxel_resolution, &ws.vox_cache);
  int res = config_.voxel_resolution;
  for (int i = 0; i < depth; ++i) {
    ws.skips[i] = grid;
    ws.down_in[i] = with_temb(grid, ws.temb);
    ws.down_conv[i] = conv3d_fwd(ws.down_in[i], res, layout_.view(params.data(), down_w_[i]),
                                 layout_.view(params.data(), down_b_[i]), 2);
    res /= 2;
    ws.down_gn[i] =
        group_norm_fwd(ws.down_conv[i], layout_.view(params.data(), down_gamma_[i]),
                       layout_.view(params.data(), down_beta_[i]), down_groups_[i],
                       &ws.down_gn_cache[i]);
    grid = silu(ws.down_gn[i]);
  }
  for (int i = depth - 1; i >= 0; --i) {
    Mat up = upsample2_fwd(grid, res);
    res *= 2;
    ws.up_in[i].resize(up.rows(), up.cols() + ws.skips[i].cols() + config_.time_dim);
    ws.up_in[i].leftCols(up.cols()) = up;
    ws.up_in[i].middleCols(up.cols(), ws.skips[i].cols()) = ws.skips[i];
    ws.up_in[i].rightCols(config_.time_dim).rowwise() = ws.temb.transpose();
    ws.up_conv[i] = conv3d_fwd(ws.up_in[i], res, layout_.view(params.data(), up_w_[i]),
                               layout_.view(params.data(), up_b_[i]), 1);
    ws.up_gn[i] = group_norm_fwd(ws.up_conv[i], layout_.view(params.data(), up_gamma_[i]),
                                 layout_.view(params.data(), up_beta_[i]), up_groups_[i],
                                 &ws.up_gn_cache[i]);
    grid = silu(ws.up_gn[i]);
  }

  ws.devox_out =
      devoxelize(grid, config_.voxel_resolution, positions, &ws.devox_cache);
  Mat aligned = ws.devox_out * layout_.view(params.data(), align_w_).transpose();
  aligned.array().rowwise() += layout_.view(params.data(), align_b_).row(0).array();

  ws.fused_pre = h + aligned;
  Mat out = silu(ws.fused_pre) * layout_.view(params.data(), head_w_).transpose();
  out.array().rowwise() += layout_.view(params.data(), head_b_).row(0).array();
  return out;
}

Mat Denoiser::backward(const Eigen::Ref<const Mat>& d_out, const DenoiserWorkspace& ws,
                       const Eigen::Ref<const Eigen::VectorXd>& params,
                       Eigen::Ref<Eigen::VectorXd> grad) const {
  const int depth = config_.unet_depth;
  const int td = config_.time_dim;
  const auto gview = [&](std::size_t id) { return layout_.view(grad.data(), id); };

  // head and fusion
  const Mat fused = silu(ws.fused_pre);
  gview(head_w_) += d_out.transpose() * fused;
  gview(head_b_).row(0) += d_out.colwise().sum();
  const Mat d_fused_pre =
      silu_grad(ws.fused_pre, d_out * layout_.view(params.data(), head_w_));

  gview(align_w_) += d_fused_pre.transpose() * ws.devox_out;
  gview(align_b_).row(0) += d_fused_pre.colwise().sum();
  const Mat d_devox = d_fused_pre * layout_.view(params.data(), align_w_);

  // voxel branch
  Mat d_grid = devoxelize_bwd(d_devox, ws.devox_cache, config_.voxel_resolution);
  std::vector<Mat> d_skip(depth);
  int res = config_.voxel_resolution;
  for (int i = 0; i < depth; ++i) {
    const Mat d_gn_out = silu_grad(ws.up_gn[i], d_grid);
    Mat d_conv = group_norm_bwd(d_gn_out, ws.up_gn_cache[i],
                                layout_.view(params.data(), up_gamma_[i]), gview(up_gamma_[i]),
                                gview(up_beta_[i]));
    const Mat d_in = conv3d_bwd(d_conv, ws.up_in[i], res, layout_.view(params.data(), up_w_[i]),
                                gview(up_w_[i]), gview(up_b_[i]), 1);
    const Eigen::Index up_ch = config_.stage_channels[i];
    const Eigen::Index skip_ch = ws.skips[i].cols();
    d_skip[i] = d_in.middleCols(up_ch, skip_ch);
    d_grid = upsample2_bwd(d_in.leftCols(up_ch), res / 2);
    res /= 2;
  }
  // d_grid now holds the gradient at the bottom of the U; walk the down
  // stages back up to the voxelized input
  for (int i = depth - 1; i >= 0; --i) {
    const Mat d_gn_out = silu_grad(ws.down_gn[i], d_grid);
    Mat d_conv = group_norm_bwd(d_gn_out, ws.down_gn_cache[i],
                                layout_.view(params.data(), down_gamma_[i]),
                                gview(down_gamma_[i]), gview(down_beta_[i]));
    const Mat d_in =
        conv3d_bwd(d_conv, ws.down_in[i], res * 2, layout_.view(params.data(), down_w_[i]),
                   gview(down_w_[i]), gview(down_b_[i]), 2);
    res *= 2;
    d_grid = d_in.leftCols(d_in.cols() - td) + d_skip[i];
  }
  const Mat d_vox_feats = voxelize_bwd(d_grid, ws.vox_cache, ws.n_points);

  // point branch
  Mat d_h = d_fused_pre;
  Mat d_x_in;
  for (int k = static_cast<int>(point_w_.size()) - 1; k >= 0; --k) {
    const Mat d_pre = silu_grad(ws.point_pre[k], d_h);
    gview(point_w_[k]) += d_pre.transpose() * ws.point_in[k];
    gview(point_b_[k]).row(0) += d_pre.colwise().sum();
    const Mat d_in = d_pre * layout_.view(params.data(), point_w_[k]);
    if (k == 0) {
      d_x_in = d_in;
    } else {
      d_h = d_in.leftCols(d_in.cols() - td);
    }
  }

  // gradient with respect to the original feature rows (undo the mask
  // distance scaling for projection modes)
  const int f = config_.feature_dim();
  Mat d_features = d_x_in.middleCols(3, f) + d_vox_feats.rightCols(f);
  if (config_.mode != ConditioningMode::kGlobal) {
    d_features.col(config_.image_channels + 1) *= config_.mdf_feature_scale;
    d_features.col(config_.image_channels + 2) *= config_.mdf_feature_scale;
  }
  return d_features;
}

Eigen::VectorXd Denoiser::global_pooled(const Eigen::Ref<const Eigen::VectorXd>& params,
                                        const ImageGrid& image) const {
  if (config_.mode != ConditioningMode::kGlobal)
    throw std::logic_error("global_pooled: model is not in global mode");
  if (image.channels() != config_.image_channels)
    throw std::invalid_argument("global_pooled: image channel mismatch");
  const Eigen::VectorXd mean = image.data.colwise().mean().transpose();
  return layout_.view(params.data(), pool_w_) * mean +
         layout_.view(params.data(), pool_b_).row(0).transpose();
}

void Denoiser::global_pooled_bwd(const Eigen::Ref<const Eigen::VectorXd>& d_pooled,
                                 const ImageGrid& image,
                                 Eigen::Ref<Eigen::VectorXd> grad) const {
  const Eigen::VectorXd mean = image.data.colwise().mean().transpose();
  layout_.view(grad.data(), pool_w_) += d_pooled * mean.transpose();
  layout_.view(grad.data(), pool_b_).row(0) += d_pooled.transpose();
}

Mat denoise(const Denoiser& net, const Eigen::Ref<const Eigen::VectorXd>& params,
            const ConditionedCloud& cloud, int t) {
  DenoiserWorkspace ws;
  return net.forward(cloud.positions, cloud.features, t, params, ws);
}

Mat denoise_global(const Denoiser& net, const Eigen::Ref<const Eigen::VectorXd>& params,
                   const Eigen::Ref<const Mat>& positions,
                   const Eigen::Ref<const Eigen::VectorXd>& pooled, int t) {
  DenoiserWorkspace ws;
  Mat features(positions.rows(), pooled.size());
  features.rowwise() = pooled.transpose();
  return net.forward(positions, features, t, params, ws);
}

Mat analytic_eps(const Eigen::Ref<const Mat>& x_t, int t,
                 const AnalyticGaussianTarget& target, const NoiseSchedule& sched) {
  const double abar = sched.alpha_bar(t);
  const double denom = abar * target.sigma * target.sigma + 1.0 - abar;
  const double scale = std::sqrt(1.0 - abar) / denom;
  return scale * (x_t.rowwise() - std::sqrt(abar) * target.mu.transpose());
}

namespace {

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
std::uint32_t get_u32(const std::string& in, std::size_t pos) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i)
    v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  return v;
}
std::uint64_t get_u64(const std::string& in, std::size_t pos) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i)
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  return v;
}

constexpr char kCheckpointMagic[9] = "PCDFCKPT";
constexpr std::uint32_t kCheckpointVersion = 1;

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const PointVoxelConfig& config,
                     const Eigen::Ref<const Eigen::VectorXd>& params) {
  std::string out(kCheckpointMagic, 8);
  put_u32(out, kCheckpointVersion);
  put_u64(out, config_hash(config));
  put_u64(out, static_cast<std::uint64_t>(params.size()));
  for (Eigen::Index i = 0; i < params.size(); ++i) {
    const float f = static_cast<float>(params(i));
    std::uint32_t bits;
    std::memcpy(&bits, &f, 4);
    put_u32(out, bits);
  }
  atomic_write(path, out);
}

Eigen::VectorXd load_checkpoint(const std::filesystem::path& path,
                                const PointVoxelConfig& expected) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  const std::string bytes = buf.str();
  if (bytes.size() < 28 || bytes.compare(0, 8, kCheckpointMagic, 8) != 0)
    throw std::runtime_error("not a checkpoint file: " + path.string());
  if (get_u32(bytes, 8) != kCheckpointVersion)
    throw std::runtime_error("unsupported checkpoint version in " + path.string());
  if (get_u64(bytes, 12) != config_hash(expected))
    throw std::runtime_error("checkpoint config hash mismatch: " + path.string());
  const std::uint64_t count = get_u64(bytes, 20);
  const Denoiser net(expected);
  if (count != net.param_count())
    throw std::runtime_error("checkpoint parameter count mismatch: " + path.string());
  if (bytes.size() < 28 + 4 * count)
    throw std::runtime_error("truncated checkpoint payload: " + path.string());
  Eigen::VectorXd params(static_cast<Eigen::Index>(count));
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::uint32_t bits = get_u32(bytes, 28 + 4 * i);
    float f;
    std::memcpy(&f, &bits, 4);
    params(static_cast<Eigen::Index>(i)) = static_cast<double>(f);
  }
  return params;
}

}  // namespace pcdiff
