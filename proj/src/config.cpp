#include "pcdiff/config.hpp"

#include <fstream>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

namespace pcdiff {

using nlohmann::json;

NoiseSchedule ScheduleConfig::build() const {
  ReverseVariance variance;
  if (reverse_variance == "beta") {
    variance = ReverseVariance::kBeta;
  } else if (reverse_variance == "beta-tilde") {
    variance = ReverseVariance::kBetaTilde;
  } else {
    throw std::invalid_argument("schedule: unknown reverse_variance '" +
                                reverse_variance + "'");
  }
  return build_schedule(steps, beta_start, beta_end, warmup_fraction, variance);
}

int ExperimentConfig::effective_threads() const {
  if (threads > 0) return threads;
  return std::max(1u, std::thread::hardware_concurrency());
}

namespace {

// Assign `out` from doc[key] when present, erasing the key so leftovers can
// be reported as unknown.
template <class T>
void take(json& doc, const char* key, T& out) {
  const auto it = doc.find(key);
  if (it == doc.end()) return;
  try {
    out = it->get<T>();
  } catch (const json::exception&) {
    throw std::invalid_argument(std::string("config: bad value for '") + key + "'");
  }
  doc.erase(it);
}

void expect_empty(const json& doc, const char* section) {
  if (doc.empty()) return;
  throw std::invalid_argument(std::string("config: unknown key '") +
                              doc.items().begin().key() + "' in " + section);
}

json section(json& doc, const char* key) {
  const auto it = doc.find(key);
  if (it == doc.end()) return json::object();
  if (!it->is_object())
    throw std::invalid_argument(std::string("config: '") + key + "' must be an object");
  json out = *it;
  doc.erase(it);
  return out;
}

}  // namespace

ExperimentConfig experiment_config_from_json(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("config parse error: ") + e.what());
  }
  if (!doc.is_object()) throw std::invalid_argument("config: top level must be an object");

  ExperimentConfig cfg;

  json sched = section(doc, "schedule");
  take(sched, "steps", cfg.schedule.steps);
  take(sched, "beta_start", cfg.schedule.beta_start);
  take(sched, "beta_end", cfg.schedule.beta_end);
  take(sched, "warmup_fraction", cfg.schedule.warmup_fraction);
  take(sched, "reverse_variance", cfg.schedule.reverse_variance);
  expect_empty(sched, "schedule");

  json model = section(doc, "model");
  std::string mode = conditioning_mode_name(cfg.model.mode);
  take(model, "mode", mode);
  cfg.model.mode = conditioning_mode_from_name(mode);
  take(model, "voxel_resolution", cfg.model.voxel_resolution);
  take(model, "unet_depth", cfg.model.unet_depth);
  take(model, "stage_channels", cfg.model.stage_channels);
  take(model, "point_mlp_widths", cfg.model.point_mlp_widths);
  take(model, "time_dim", cfg.model.time_dim);
  take(model, "image_channels", cfg.model.image_channels);
  take(model, "global_dim", cfg.model.global_dim);
  take(model, "out_channels", cfg.model.out_channels);
  take(model, "mdf_feature_scale", cfg.model.mdf_feature_scale);
  expect_empty(model, "model");

  json train = section(doc, "train");
  take(train, "batch_size", cfg.train.batch_size);
  take(train, "total_steps", cfg.train.total_steps);
  take(train, "lr_start", cfg.train.lr_start);
  take(train, "lr_end", cfg.train.lr_end);
  take(train, "beta1", cfg.train.beta1);
  take(train, "beta2", cfg.train.beta2);
  take(train, "weight_decay", cfg.train.weight_decay);
  take(train, "seed", cfg.train.seed);
  take(train, "desk_scale", cfg.train.desk_scale);
  take(train, "checkpoint_every", cfg.train.checkpoint_every);
  expect_empty(train, "train");

  json data = section(doc, "data");
  take(data, "families", cfg.data.families);
  take(data, "instances_per_family", cfg.data.instances_per_family);
  take(data, "points", cfg.data.points);
  take(data, "image_size", cfg.data.image_size);
  take(data, "dense_factor", cfg.data.dense_factor);
  take(data, "render_radius_ndc", cfg.data.render_radius_ndc);
  take(data, "focal_px", cfg.data.focal_px);
  take(data, "camera_distance", cfg.data.camera_distance);
  take(data, "elevation_min_deg", cfg.data.elevation_min_deg);
  take(data, "elevation_max_deg", cfg.data.elevation_max_deg);
  take(data, "albedo", cfg.data.albedo);
  take(data, "seed", cfg.data.seed);
  expect_empty(data, "data");

  json filtering = section(doc, "filtering");
  take(filtering, "strategy", cfg.filtering.strategy);
  take(filtering, "k", cfg.filtering.k);
  take(filtering, "radius_ndc", cfg.filtering.radius_ndc);
  expect_empty(filtering, "filtering");

  take(doc, "conditioning_radius_ndc", cfg.conditioning_radius_ndc);
  take(doc, "eval_tau", cfg.eval_tau);
  take(doc, "threads", cfg.threads);
  take(doc, "seed", cfg.seed);
  expect_empty(doc, "top level");

  cfg.model.validate();
  cfg.train.validate();
  for (const auto& family : cfg.data.families) family_from_name(family);
  if (cfg.data.albedo != "by-family" && cfg.data.albedo != "random")
    throw std::invalid_argument("config: data.albedo must be by-family or random");
  return cfg;
}

std::string experiment_config_to_json(const ExperimentConfig& cfg) {
  json doc;
  doc["schedule"] = {{"steps", cfg.schedule.steps},
                     {"beta_start", cfg.schedule.beta_start},
                     {"beta_end", cfg.schedule.beta_end},
                     {"warmup_fraction", cfg.schedule.warmup_fraction},
                     {"reverse_variance", cfg.schedule.reverse_variance}};
  doc["model"] = {{"mode", conditioning_mode_name(cfg.model.mode)},
                  {"voxel_resolution", cfg.model.voxel_resolution},
                  {"unet_depth", cfg.model.unet_depth},
                  {"stage_channels", cfg.model.stage_channels},
                  {"point_mlp_widths", cfg.model.point_mlp_widths},
                  {"time_dim", cfg.model.time_dim},
                  {"image_channels", cfg.model.image_channels},
                  {"global_dim", cfg.model.global_dim},
                  {"out_channels", cfg.model.out_channels},
                  {"mdf_feature_scale", cfg.model.mdf_feature_scale}};
  doc["train"] = {{"batch_size", cfg.train.batch_size},
                  {"total_steps", cfg.train.total_steps},
                  {"lr_start", cfg.train.lr_start},
                  {"lr_end", cfg.train.lr_end},
                  {"beta1", cfg.train.beta1},
                  {"beta2", cfg.train.beta2},
                  {"weight_decay", cfg.train.weight_decay},
                  {"seed", cfg.train.seed},
                  {"desk_scale", cfg.train.desk_scale},
                  {"checkpoint_every", cfg.train.checkpoint_every}};
  doc["data"] = {{"families", cfg.data.families},
                 {"instances_per_family", cfg.data.instances_per_family},
                 {"points", cfg.data.points},
                 {"image_size", cfg.data.image_size},
                 {"dense_factor", cfg.data.dense_factor},
                 {"render_radius_ndc", cfg.data.render_radius_ndc},
                 {"focal_px", cfg.data.focal_px},
                 {"camera_distance", cfg.data.camera_distance},
                 {"elevation_min_deg", cfg.data.elevation_min_deg},
                 {"elevation_max_deg", cfg.data.elevation_max_deg},
                 {"albedo", cfg.data.albedo},
                 {"seed", cfg.data.seed}};
  doc["filtering"] = {{"strategy", cfg.filtering.strategy},
                      {"k", cfg.filtering.k},
                      {"radius_ndc", cfg.filtering.radius_ndc}};
  doc["conditioning_radius_ndc"] = cfg.conditioning_radius_ndc;
  doc["eval_tau"] = cfg.eval_tau;
  doc["threads"] = cfg.threads;
  doc["seed"] = cfg.seed;
  return doc.dump(2) + "\n";
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config: " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return experiment_config_from_json(buf.str());
}

std::uint64_t experiment_config_hash(const ExperimentConfig& config) {
  const std::string canonical = experiment_config_to_json(config);
  std::uint64_t hash = 0xcbf29ce484222325ull;
  for (const unsigned char b : canonical) {
    hash ^= b;
    hash *= 0x100000001b3ull;
  }
  return hash;
}

}  // namespace pcdiff
