#include "pcdiff/geometry.hpp"

#include <nlohmann/json.hpp>

namespace pcdiff {

using nlohmann::json;

std::string camera_to_json(const CameraView& camera) {
  json doc;
  std::array<double, 9> rot;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) rot[r * 3 + c] = camera.rotation()(r, c);
  doc["rotation"] = rot;
  doc["translation"] = {camera.translation().x(), camera.translation().y(),
                        camera.translation().z()};
  doc["fx"] = camera.fx();
  doc["fy"] = camera.fy();
  doc["cx"] = camera.cx();
  doc["cy"] = camera.cy();
  doc["width"] = camera.width();
  doc["height"] = camera.height();
  return doc.dump(2) + "\n";
}

CameraView camera_from_json(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("camera JSON parse error: ") + e.what());
  }
  try {
    const auto rot = doc.at("rotation").get<std::array<double, 9>>();
    const auto tr = doc.at("translation").get<std::array<double, 3>>();
    Eigen::Matrix3d rotation;
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) rotation(r, c) = rot[r * 3 + c];
    return CameraView(rotation, Eigen::Vector3d(tr[0], tr[1], tr[2]),
                      doc.at("fx").get<double>(), doc.at("fy").get<double>(),
                      doc.at("cx").get<double>(), doc.at("cy").get<double>(),
                      doc.at("width").get<int>(), doc.at("height").get<int>());
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("camera JSON missing field: ") + e.what());
  }
}

CameraView look_at_camera(const Eigen::Vector3d& eye, const Eigen::Vector3d& target,
                          const Eigen::Vector3d& up, double fx, double fy, double cx,
                          double cy, int width, int height) {
  const Eigen::Vector3d forward = (target - eye).normalized();
  Eigen::Vector3d right = forward.cross(up);
  if (right.norm() < 1e-12) {
    // up parallel to the view direction; pick any perpendicular axis
    right = forward.cross(Eigen::Vector3d::UnitX());
    if (right.norm() < 1e-12) right = forward.cross(Eigen::Vector3d::UnitY());
  }
  right.normalize();
  const Eigen::Vector3d down = forward.cross(right);  // v grows downward
  Eigen::Matrix3d rotation;
  rotation.row(0) = right.transpose();
  rotation.row(1) = down.transpose();
  rotation.row(2) = forward.transpose();
  // Re-orthonormalize so the constructor check passes exactly.
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(rotation,
                                        Eigen::ComputeFullU | Eigen::ComputeFullV);
  rotation = svd.matrixU() * svd.matrixV().transpose();
  return CameraView(rotation, -(rotation * eye), fx, fy, cx, cy, width, height);
}

}  // namespace pcdiff
