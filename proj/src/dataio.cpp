#include "pcdiff/dataio.hpp"

#include <algorithm>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "pcdiff/projection.hpp"

namespace pcdiff {

namespace fs = std::filesystem;
using nlohmann::json;

void atomic_write(const fs::path& path, const std::string& bytes) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open for write: " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("short write: " + tmp.string());
  }
  fs::rename(tmp, path);
}

namespace {

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open: " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

int quantize_color(double v) {
  return static_cast<int>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

}  // namespace

void ply_write(const fs::path& path, const PointCloud& cloud) {
  if (cloud.size() < 1) throw std::invalid_argument("ply_write: empty cloud");
  const bool colors = cloud.has_colors();
  std::string out;
  out += "ply\nformat ascii 1.0\nelement vertex " + std::to_string(cloud.size()) + "\n";
  out += "property double x\nproperty double y\nproperty double z\n";
  if (colors)
    out += "property uchar red\nproperty uchar green\nproperty uchar blue\n";
  out += "end_header\n";
  for (Eigen::Index i = 0; i < cloud.size(); ++i) {
    out += format_double(cloud.positions(i, 0)) + " " +
           format_double(cloud.positions(i, 1)) + " " +
           format_double(cloud.positions(i, 2));
    if (colors)
      out += " " + std::to_string(quantize_color(cloud.colors(i, 0))) + " " +
             std::to_string(quantize_color(cloud.colors(i, 1))) + " " +
             std::to_string(quantize_color(cloud.colors(i, 2)));
    out += "\n";
  }
  atomic_write(path, out);
}

PointCloud ply_read(const fs::path& path) {
  std::istringstream in(read_file(path));
  std::string line;
  auto next_line = [&](const char* what) {
    if (!std::getline(in, line))
      throw std::runtime_error(std::string("PLY truncated header: ") + what + " in " +
                               path.string());
    if (!line.empty() && line.back() == '\r') line.pop_back();
  };
  next_line("magic");
  if (line != "ply") throw std::runtime_error("not a PLY file: " + path.string());
  next_line("format");
  if (line != "format ascii 1.0")
    throw std::runtime_error("unsupported PLY format: " + line);

  Eigen::Index vertices = -1;
  std::vector<std::string> props;
  while (true) {
    next_line("header");
    if (line == "end_header") break;
    std::istringstream fields(line);
    std::string word;
    fields >> word;
    if (word == "comment") continue;
    if (word == "element") {
      std::string name;
      fields >> name >> vertices;
      if (name != "vertex")
        throw std::runtime_error("unsupported PLY element: " + name);
    } else if (word == "property") {
      std::string type, name;
      fields >> type >> name;
      props.push_back(name);
    }
  }
  const bool colors = props.size() >= 6;
  if (vertices < 1) throw std::runtime_error("PLY missing vertices: " + path.string());
  if (!(props.size() == 3 || props.size() == 6) || props[0] != "x" || props[1] != "y" ||
      props[2] != "z")
    throw std::runtime_error("unsupported PLY vertex layout in " + path.string());

  PointCloud cloud;
  cloud.positions.resize(vertices, 3);
  if (colors) cloud.colors.resize(vertices, 3);
  for (Eigen::Index i = 0; i < vertices; ++i) {
    next_line("vertex");
    std::istringstream fields(line);
    double x, y, z;
    if (!(fields >> x >> y >> z))
      throw std::runtime_error("PLY truncated vertex payload: " + path.string());
    cloud.positions.row(i) << x, y, z;
    if (colors) {
      int r, g, b;
      if (!(fields >> r >> g >> b))
        throw std::runtime_error("PLY truncated color payload: " + path.string());
      const auto check = [&](int v) {
        if (v < 0 || v > 255)
          throw std::runtime_error("PLY color out of range: " + path.string());
        return v / 255.0;
      };
      cloud.colors.row(i) << check(r), check(g), check(b);
    }
  }
  return cloud;
}

namespace {

// Shared P5/P6 header parsing: magic, width, height, maxval, raw payload.
struct PnmHeader {
  int width, height, maxval;
  std::size_t payload_offset;
};

PnmHeader parse_pnm_header(const std::string& bytes, const char* magic,
                           const fs::path& path) {
  std::size_t pos = 0;
  const auto token = [&]() -> std::string {
    while (pos < bytes.size()) {
      if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
        ++pos;
      } else if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else {
        break;
      }
    }
    const std::size_t start = pos;
    while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos])))
      ++pos;
    if (start == pos) throw std::runtime_error("truncated PNM header: " + path.string());
    return bytes.substr(start, pos - start);
  };
  if (token() != magic)
    throw std::runtime_error(std::string("expected ") + magic + ": " + path.string());
  PnmHeader h;
  try {
    h.width = std::stoi(token());
    h.height = std::stoi(token());
    h.maxval = std::stoi(token());
  } catch (const std::exception&) {
    throw std::runtime_error("malformed PNM header: " + path.string());
  }
  if (h.width < 1 || h.height < 1 || h.maxval != 255)
    throw std::runtime_error("unsupported PNM geometry: " + path.string());
  h.payload_offset = pos + 1;  // single whitespace after maxval
  return h;
}

}  // namespace

void ppm_write(const fs::path& path, const ImageGrid& image) {
  if (image.channels() != 3)
    throw std::invalid_argument("ppm_write: image must have 3 channels");
  std::string out = "P6\n" + std::to_string(image.width) + " " +
                    std::to_string(image.height) + "\n255\n";
  out.reserve(out.size() + static_cast<std::size_t>(image.height) * image.width * 3);
  for (int r = 0; r < image.height; ++r)
    for (int c = 0; c < image.width; ++c)
      for (int ch = 0; ch < 3; ++ch)
        out.push_back(static_cast<char>(quantize_color(image.at(r, c, ch))));
  atomic_write(path, out);
}

ImageGrid ppm_read(const fs::path& path) {
  const std::string bytes = read_file(path);
  const PnmHeader h = parse_pnm_header(bytes, "P6", path);
  const std::size_t expected = static_cast<std::size_t>(h.width) * h.height * 3;
  if (bytes.size() < h.payload_offset + expected)
    throw std::runtime_error("truncated PPM payload: " + path.string());
  ImageGrid image(h.height, h.width, 3);
  std::size_t pos = h.payload_offset;
  for (int r = 0; r < h.height; ++r)
    for (int c = 0; c < h.width; ++c)
      for (int ch = 0; ch < 3; ++ch)
        image.at(r, c, ch) = static_cast<unsigned char>(bytes[pos++]) / 255.0;
  return image;
}

void pgm_write(const fs::path& path, const BinaryMask& mask) {
  std::string out = "P5\n" + std::to_string(mask.width()) + " " +
                    std::to_string(mask.height()) + "\n255\n";
  for (int r = 0; r < mask.height(); ++r)
    for (int c = 0; c < mask.width(); ++c)
      out.push_back(static_cast<char>(mask.bits(r, c) ? 255 : 0));
  atomic_write(path, out);
}

BinaryMask pgm_read(const fs::path& path) {
  const std::string bytes = read_file(path);
  const PnmHeader h = parse_pnm_header(bytes, "P5", path);
  const std::size_t expected = static_cast<std::size_t>(h.width) * h.height;
  if (bytes.size() < h.payload_offset + expected)
    throw std::runtime_error("truncated PGM payload: " + path.string());
  BinaryMask mask(h.height, h.width);
  std::size_t pos = h.payload_offset;
  for (int r = 0; r < h.height; ++r)
    for (int c = 0; c < h.width; ++c)
      mask.bits(r, c) = static_cast<unsigned char>(bytes[pos++]) > 127;
  return mask;
}

std::string family_name(ShapeFamily family) {
  switch (family) {
    case ShapeFamily::kSphere: return "sphere";
    case ShapeFamily::kBox: return "box";
    case ShapeFamily::kCylinder: return "cylinder";
    case ShapeFamily::kComposite: return "composite";
  }
  throw std::invalid_argument("unknown family");
}

ShapeFamily family_from_name(const std::string& name) {
  if (name == "sphere") return ShapeFamily::kSphere;
  if (name == "box") return ShapeFamily::kBox;
  if (name == "cylinder") return ShapeFamily::kCylinder;
  if (name == "composite") return ShapeFamily::kComposite;
  throw std::invalid_argument("unknown shape family: " + name);
}

Eigen::Vector3d family_albedo(ShapeFamily family) {
  switch (family) {
    case ShapeFamily::kSphere: return {0.85, 0.75, 0.25};
    case ShapeFamily::kBox: return {0.80, 0.25, 0.20};
    case ShapeFamily::kCylinder: return {0.20, 0.70, 0.30};
    case ShapeFamily::kComposite: return {0.25, 0.35, 0.85};
  }
  throw std::invalid_argument("unknown family");
}

namespace {

Eigen::Matrix3d random_rotation(Rng& rng) {
  // Gram-Schmidt on Gaussian vectors gives a uniform rotation
  Eigen::Vector3d a, b;
  do {
    for (int i = 0; i < 3; ++i) a[i] = rng.normal();
  } while (a.norm() < 1e-9);
  a.normalize();
  do {
    for (int i = 0; i < 3; ++i) b[i] = rng.normal();
    b -= a * a.dot(b);
  } while (b.norm() < 1e-9);
  b.normalize();
  Eigen::Matrix3d rot;
  rot.col(0) = a;
  rot.col(1) = b;
  rot.col(2) = a.cross(b);
  return rot;
}

double uniform_in(Rng& rng, double lo, double hi) { return lo + (hi - lo) * rng.uniform(); }

Eigen::Vector3d sample_sphere_surface(Rng& rng, double radius) {
  Eigen::Vector3d d;
  do {
    for (int i = 0; i < 3; ++i) d[i] = rng.normal();
  } while (d.norm() < 1e-9);
  return radius * d.normalized();
}

Eigen::Vector3d sample_box_surface(Rng& rng, const Eigen::Vector3d& he) {
  // face pair areas: x faces 4*hy*hz, y faces 4*hx*hz, z faces 4*hx*hy
  const double ax = he.y() * he.z(), ay = he.x() * he.z(), az = he.x() * he.y();
  const double pick = rng.uniform() * (ax + ay + az);
  int axis = pick < ax ? 0 : (pick < ax + ay ? 1 : 2);
  const double side = rng.uniform() < 0.5 ? -1.0 : 1.0;
  Eigen::Vector3d p;
  p[axis] = side * he[axis];
  const int u = (axis + 1) % 3, v = (axis + 2) % 3;
  p[u] = uniform_in(rng, -he[u], he[u]);
  p[v] = uniform_in(rng, -he[v], he[v]);
  return p;
}

Eigen::Vector3d sample_cylinder_surface(Rng& rng, double radius, double height) {
  const double side_area = 2.0 * M_PI * radius * height;
  const double cap_area = M_PI * radius * radius;
  const double pick = rng.uniform() * (side_area + 2.0 * cap_area);
  const double theta = 2.0 * M_PI * rng.uniform();
  if (pick < side_area) {
    return {radius * std::cos(theta), radius * std::sin(theta),
            uniform_in(rng, -height / 2.0, height / 2.0)};
  }
  const double r = radius * std::sqrt(rng.uniform());
  const double z = pick < side_area + cap_area ? -height / 2.0 : height / 2.0;
  return {r * std::cos(theta), r * std::sin(theta), z};
}

bool inside_sphere(const Eigen::Vector3d& p, const Eigen::Vector3d& center, double radius) {
  return (p - center).norm() < radius;
}

bool inside_box(const Eigen::Vector3d& p, const Eigen::Vector3d& he) {
  return std::abs(p.x()) < he.x() && std::abs(p.y()) < he.y() && std::abs(p.z()) < he.z();
}

}  // namespace

ToyShapeSpec random_shape_spec(ShapeFamily family, Rng& rng) {
  ToyShapeSpec spec;
  spec.family = family;
  spec.rotation = random_rotation(rng);
  spec.albedo = family_albedo(family);
  switch (family) {
    case ShapeFamily::kSphere:
      spec.sphere_radius = uniform_in(rng, 0.3, 0.5);
      break;
    case ShapeFamily::kBox:
      for (int i = 0; i < 3; ++i)
        spec.box_half_extents[i] = uniform_in(rng, 0.15, 0.5);
      break;
    case ShapeFamily::kCylinder:
      spec.cylinder_radius = uniform_in(rng, 0.15, 0.4);
      spec.cylinder_height = uniform_in(rng, 0.5, 1.0);
      break;
    case ShapeFamily::kComposite: {
      for (int i = 0; i < 3; ++i)
        spec.box_half_extents[i] = uniform_in(rng, 0.2, 0.4);
      spec.sphere_radius = uniform_in(rng, 0.2, 0.35);
      // sphere sits on a box face so the union is connected
      const int axis = static_cast<int>(rng.below(3));
      Eigen::Vector3d offset = Eigen::Vector3d::Zero();
      offset[axis] = spec.box_half_extents[axis] + 0.6 * spec.sphere_radius;
      spec.composite_sphere_offset = offset;
      break;
    }
  }
  return spec;
}

PointCloud generate_shape(const ToyShapeSpec& spec, Eigen::Index n, std::uint64_t seed) {
  if (n < 1) throw std::invalid_argument("generate_shape: need n >= 1");
  Rng rng(seed);
  PointCloud cloud;
  cloud.positions.resize(n, 3);

  for (Eigen::Index i = 0; i < n; ++i) {
    Eigen::Vector3d p;
    switch (spec.family) {
      case ShapeFamily::kSphere:
        p = sample_sphere_surface(rng, spec.sphere_radius);
        break;
      case ShapeFamily::kBox:
        p = sample_box_surface(rng, spec.box_half_extents);
        break;
      case ShapeFamily::kCylinder:
        p = sample_cylinder_surface(rng, spec.cylinder_radius, spec.cylinder_height);
        break;
      case ShapeFamily::kComposite: {
        const double box_area = 8.0 * (spec.box_half_extents.y() * spec.box_half_extents.z() +
                                       spec.box_half_extents.x() * spec.box_half_extents.z() +
                                       spec.box_half_extents.x() * spec.box_half_extents.y());
        const double sphere_area =
            4.0 * M_PI * spec.sphere_radius * spec.sphere_radius;
        // area-weighted union sample; points inside the other primitive are
        // rejected so only the visible surface remains
        while (true) {
          if (rng.uniform() * (box_area + sphere_area) < box_area) {
            p = sample_box_surface(rng, spec.box_half_extents);
            if (!inside_sphere(p, spec.composite_sphere_offset, spec.sphere_radius)) break;
          } else {
            p = spec.composite_sphere_offset +
                sample_sphere_surface(rng, spec.sphere_radius);
            if (!inside_box(p, spec.box_half_extents)) break;
          }
        }
        break;
      }
    }
    cloud.positions.row(i) = (spec.rotation * p).transpose();
  }
  return normalize_cloud(cloud).cloud;
}

ImageGrid render_shaded(const PointCloud& cloud, const CameraView& camera,
                        double radius_ndc, double background, double shading_floor) {
  const RasterResult raster = rasterize(cloud, camera, radius_ndc);
  double dmin = std::numeric_limits<double>::infinity();
  double dmax = -std::numeric_limits<double>::infinity();
  for (int r = 0; r < raster.height(); ++r)
    for (int c = 0; c < raster.width(); ++c)
      if (raster.point_index(r, c) >= 0) {
        dmin = std::min(dmin, raster.depth(r, c));
        dmax = std::max(dmax, raster.depth(r, c));
      }
  ImageGrid image(camera.height(), camera.width(), 3);
  for (int r = 0; r < raster.height(); ++r)
    for (int c = 0; c < raster.width(); ++c) {
      const int i = raster.point_index(r, c);
      if (i < 0) {
        for (int ch = 0; ch < 3; ++ch) image.at(r, c, ch) = background;
        continue;
      }
      const double depth01 =
          dmax > dmin ? (raster.depth(r, c) - dmin) / (dmax - dmin) : 0.0;
      const double shade = shading_floor + (1.0 - shading_floor) * (1.0 - depth01);
      for (int ch = 0; ch < 3; ++ch) {
        const double albedo = cloud.has_colors() ? cloud.colors(i, ch) : 0.7;
        image.at(r, c, ch) = std::clamp(albedo * shade, 0.0, 1.0);
      }
    }
  return image;
}

DatasetRecord render_record(const ToyShapeSpec& spec, const CameraView& camera,
                            const fs::path& dir, const std::string& id,
                            Eigen::Index points, std::uint64_t seed,
                            const RenderSettings& settings) {
  if (points < 1) throw std::invalid_argument("render_record: need points >= 1");
  const Eigen::Index dense_n = points * std::max(16, settings.dense_factor);
  PointCloud dense = generate_shape(spec, dense_n, seed);
  dense.colors = Eigen::Matrix<double, Eigen::Dynamic, 3>::Zero(dense_n, 3);
  dense.colors.rowwise() = spec.albedo.transpose();

  const ImageGrid image = render_shaded(dense, camera, settings.radius_ndc,
                                        settings.background, settings.shading_floor);
  const RasterResult raster = rasterize(dense, camera, settings.radius_ndc);
  BinaryMask mask(camera.height(), camera.width());
  for (int r = 0; r < mask.height(); ++r)
    for (int c = 0; c < mask.width(); ++c) mask.bits(r, c) = raster.point_index(r, c) >= 0;

  PointCloud gt;
  gt.positions = dense.positions.topRows(points);
  gt.colors = dense.colors.topRows(points);

  fs::create_directories(dir);
  DatasetRecord record;
  record.id = id;
  record.family = family_name(spec.family);
  record.cloud_path = id + ".ply";
  record.image_path = id + ".ppm";
  record.mask_path = id + ".pgm";
  record.camera_path = id + ".camera.json";
  ply_write(dir / record.cloud_path, gt);
  ppm_write(dir / record.image_path, image);
  pgm_write(dir / record.mask_path, mask);
  atomic_write(dir / record.camera_path, camera_to_json(camera));
  return record;
}

void manifest_write(const fs::path& path, const DatasetManifest& manifest) {
  json doc;
  doc["points"] = manifest.points;
  doc["image_size"] = manifest.image_size;
  doc["albedo_mode"] = manifest.albedo_mode;
  doc["seed"] = manifest.seed;
  json records = json::array();
  for (const auto& r : manifest.records) {
    records.push_back({{"id", r.id},
                       {"cloud", r.cloud_path},
                       {"image", r.image_path},
                       {"mask", r.mask_path},
                       {"camera", r.camera_path},
                       {"family", r.family}});
  }
  doc["records"] = records;
  atomic_write(path, doc.dump(2) + "\n");
}

DatasetManifest manifest_read(const fs::path& path) {
  json doc;
  try {
    doc = json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw std::runtime_error("manifest parse error in " + path.string() + ": " + e.what());
  }
  DatasetManifest manifest;
  try {
    manifest.points = doc.at("points").get<Eigen::Index>();
    manifest.image_size = doc.at("image_size").get<int>();
    manifest.albedo_mode = doc.at("albedo_mode").get<std::string>();
    manifest.seed = doc.at("seed").get<std::uint64_t>();
    for (const auto& r : doc.at("records")) {
      DatasetRecord record;
      record.id = r.at("id").get<std::string>();
      record.cloud_path = r.at("cloud").get<std::string>();
      record.image_path = r.at("image").get<std::string>();
      record.mask_path = r.at("mask").get<std::string>();
      record.camera_path = r.at("camera").get<std::string>();
      record.family = r.at("family").get<std::string>();
      manifest.records.push_back(std::move(record));
    }
  } catch (const json::exception& e) {
    throw std::runtime_error("manifest missing field in " + path.string() + ": " +
                             e.what());
  }
  return manifest;
}

}  // namespace pcdiff
