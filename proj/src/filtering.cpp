#include "pcdiff/filtering.hpp"

#include <stdexcept>

#include <nlohmann/json.hpp>

#include "pcdiff/projection.hpp"

namespace pcdiff {

BinaryMask silhouette(const PointCloud& cloud, const CameraView& camera,
                      double radius_ndc) {
  const RasterResult raster = rasterize(cloud, camera, radius_ndc);
  BinaryMask mask(camera.height(), camera.width());
  for (int r = 0; r < mask.height(); ++r)
    for (int c = 0; c < mask.width(); ++c) mask.bits(r, c) = raster.point_index(r, c) >= 0;
  return mask;
}

double iou(const BinaryMask& a, const BinaryMask& b) {
  if (a.height() != b.height() || a.width() != b.width())
    throw std::invalid_argument("iou: mask dimension mismatch");
  const Eigen::Index inter = (a.bits && b.bits).count();
  const Eigen::Index uni = (a.bits || b.bits).count();
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

namespace {

std::size_t argmax_lowest(const std::vector<double>& scores) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < scores.size(); ++i)
    if (scores[i] > scores[best]) best = i;
  return best;
}

}  // namespace

std::size_t filter_fm(const CandidateSet& candidates, const BinaryMask& mask) {
  if (candidates.size() < 1) throw std::invalid_argument("filter_fm: empty candidate set");
  std::vector<double> scores;
  scores.reserve(candidates.size());
  for (const auto& sil : candidates.silhouettes) scores.push_back(iou(sil, mask));
  return argmax_lowest(scores);
}

std::size_t filter_fa(const CandidateSet& candidates) {
  const std::size_t k = candidates.size();
  if (k < 2) throw std::invalid_argument("filter_fa: needs at least two candidates");
  std::vector<double> scores(k, 0.0);
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = 0; j < k; ++j) {
      if (j == i) continue;
      scores[i] += iou(candidates.silhouettes[i], candidates.silhouettes[j]);
    }
    scores[i] /= static_cast<double>(k - 1);
  }
  return argmax_lowest(scores);
}

std::size_t filter_oracle(const CandidateSet& candidates, const PointCloud& gt,
                          double tau) {
  if (candidates.size() < 1)
    throw std::invalid_argument("filter_oracle: empty candidate set");
  std::vector<double> scores;
  scores.reserve(candidates.size());
  for (const auto& cloud : candidates.clouds) scores.push_back(fscore(cloud, gt, tau).f);
  return argmax_lowest(scores);
}

std::string filter_report_json(const FilterReport& report) {
  nlohmann::json doc;
  doc["strategy"] = report.strategy;
  doc["selected"] = report.selected;
  doc["scores"] = report.scores;
  return doc.dump(2) + "\n";
}

}  // namespace pcdiff
