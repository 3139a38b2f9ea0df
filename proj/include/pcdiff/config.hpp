#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pcdiff/dataio.hpp"
#include "pcdiff/denoiser.hpp"
#include "pcdiff/schedule.hpp"
#include "pcdiff/training.hpp"

namespace pcdiff {

struct ScheduleConfig {
  int steps = 1000;
  double beta_start = 1e-5;
  double beta_end = 8e-3;
  double warmup_fraction = 0.1;
  std::string reverse_variance = "beta";  // or "beta-tilde"

  NoiseSchedule build() const;
};

struct DataConfig {
  std::vector<std::string> families = {"box", "cylinder", "composite"};
  int instances_per_family = 200;
  Eigen::Index points = 512;
  int image_size = 137;
  int dense_factor = 32;
  double render_radius_ndc = 0.012;
  double focal_px = 120.0;
  double camera_distance = 1.8;
  double elevation_min_deg = 10.0;
  double elevation_max_deg = 50.0;
  std::string albedo = "by-family";  // or "random"
  std::uint64_t seed = 0;
};

struct FilterConfig {
  std::string strategy = "fm";  // fm | fa | oracle
  int k = 5;
  double radius_ndc = 0.0075;
};

/// One canonical document of hyperparameters. Any key omitted from the JSON
/// takes the default above; unknown keys are rejected.
struct ExperimentConfig {
  ScheduleConfig schedule;
  PointVoxelConfig model;
  TrainConfig train;
  DataConfig data;
  FilterConfig filtering;
  double conditioning_radius_ndc = 0.0075;
  double eval_tau = 0.01;
  int threads = 0;  // 0 = hardware concurrency
  std::uint64_t seed = 0;

  int effective_threads() const;
};

ExperimentConfig experiment_config_from_json(const std::string& text);
std::string experiment_config_to_json(const ExperimentConfig& config);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

/// FNV-1a over the canonical serialization of the defaults-resolved config.
std::uint64_t experiment_config_hash(const ExperimentConfig& config);

}  // namespace pcdiff
