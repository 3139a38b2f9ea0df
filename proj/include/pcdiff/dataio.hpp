#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "pcdiff/geometry.hpp"
#include "pcdiff/rng.hpp"

namespace pcdiff {

/// ASCII PLY, one vertex per line: x y z [red green blue]. Positions are
/// written with full double precision (exact round-trip); colors quantize to
/// 8 bits.
void ply_write(const std::filesystem::path& path, const PointCloud& cloud);
PointCloud ply_read(const std::filesystem::path& path);

/// Binary 8-bit PPM (P6). Values clamp to [0, 1] on write and scale by 255.
void ppm_write(const std::filesystem::path& path, const ImageGrid& image);
ImageGrid ppm_read(const std::filesystem::path& path);

/// Binary 8-bit PGM (P5); masks store 255 for set bits, 0 otherwise. On read
/// any value above 127 counts as set.
void pgm_write(const std::filesystem::path& path, const BinaryMask& mask);
BinaryMask pgm_read(const std::filesystem::path& path);

enum class ShapeFamily { kSphere, kBox, kCylinder, kComposite };

std::string family_name(ShapeFamily family);
ShapeFamily family_from_name(const std::string& name);

/// Procedural shape: a posed primitive (or box+sphere composite) with a flat
/// albedo color. Sizes are in pre-normalization world units.
struct ToyShapeSpec {
  ShapeFamily family = ShapeFamily::kBox;
  Eigen::Vector3d box_half_extents{0.3, 0.3, 0.3};
  double sphere_radius = 0.4;
  double cylinder_radius = 0.3;
  double cylinder_height = 0.8;
  Eigen::Vector3d composite_sphere_offset{0.0, 0.0, 0.45};
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d albedo{0.7, 0.7, 0.7};
};

/// Random spec for a family with sizes in the declared ranges and a uniform
/// random rotation.
ToyShapeSpec random_shape_spec(ShapeFamily family, Rng& rng);

/// Albedo used when the dataset ties color to family.
Eigen::Vector3d family_albedo(ShapeFamily family);

/// Uniform area-weighted surface sample of the primitive, posed by the spec
/// rotation and normalized to the unit box.
PointCloud generate_shape(const ToyShapeSpec& spec, Eigen::Index n, std::uint64_t seed);

/// One dataset example: paths are relative to the manifest directory.
struct DatasetRecord {
  std::string id;
  std::string cloud_path;   // PLY, ground-truth points with colors
  std::string image_path;   // PPM
  std::string mask_path;    // PGM
  std::string camera_path;  // JSON
  std::string family;
};

struct RenderSettings {
  int image_size = 137;
  int dense_factor = 32;          // dense sample = factor * cloud points
  double radius_ndc = 0.012;      // render splat radius
  double background = 0.0;
  double shading_floor = 0.4;     // shade = floor + (1 - floor) * (1 - depth01)
};

/// Render a record for the spec: dense surface sample -> shaded image + exact
/// coverage mask from the shared rasterizer; the ground-truth cloud is the
/// first `points` rows of the dense sample so both live in the same
/// normalized frame. Writes cloud/image/mask/camera files atomically.
DatasetRecord render_record(const ToyShapeSpec& spec, const CameraView& camera,
                            const std::filesystem::path& dir, const std::string& id,
                            Eigen::Index points, std::uint64_t seed,
                            const RenderSettings& settings = {});

/// Shaded render of an arbitrary cloud (flat albedo from point colors, or
/// gray), same shading model as render_record.
ImageGrid render_shaded(const PointCloud& cloud, const CameraView& camera,
                        double radius_ndc, double background = 0.0,
                        double shading_floor = 0.4);

struct DatasetManifest {
  std::vector<DatasetRecord> records;
  Eigen::Index points = 512;
  int image_size = 137;
  std::string albedo_mode = "by-family";
  std::uint64_t seed = 0;
};

void manifest_write(const std::filesystem::path& path, const DatasetManifest& manifest);
DatasetManifest manifest_read(const std::filesystem::path& path);

/// Whole-file atomic text/binary write (temp file + rename).
void atomic_write(const std::filesystem::path& path, const std::string& bytes);

}  // namespace pcdiff
