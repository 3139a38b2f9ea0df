#pragma once

#include <string>
#include <vector>

#include "pcdiff/geometry.hpp"
#include "pcdiff/metrics.hpp"

namespace pcdiff {

/// Multiple sampled reconstructions for one input, with their rendered
/// silhouettes from the input view.
struct CandidateSet {
  std::vector<PointCloud> clouds;
  std::vector<BinaryMask> silhouettes;
  std::vector<std::uint64_t> seeds;

  std::size_t size() const { return clouds.size(); }
};

/// Coverage mask of the cloud rendered as small disks from the camera view.
BinaryMask silhouette(const PointCloud& cloud, const CameraView& camera,
                      double radius_ndc);

/// Intersection over union; 1 by convention when both masks are empty.
double iou(const BinaryMask& a, const BinaryMask& b);

/// Mask-supervised filtering: candidate with the highest silhouette IoU
/// against the object mask. Ties pick the lowest index.
std::size_t filter_fm(const CandidateSet& candidates, const BinaryMask& mask);

/// Mask-free filtering by mutual agreement: candidate whose silhouette has
/// the highest mean IoU with all other candidates' silhouettes. Needs K >= 2.
std::size_t filter_fa(const CandidateSet& candidates);

/// Upper bound: candidate with the best F-score against the ground truth.
std::size_t filter_oracle(const CandidateSet& candidates, const PointCloud& gt,
                          double tau);

struct FilterReport {
  std::string strategy;
  std::size_t selected = 0;
  std::vector<double> scores;  // per candidate, as used by the selector
};

std::string filter_report_json(const FilterReport& report);

}  // namespace pcdiff
