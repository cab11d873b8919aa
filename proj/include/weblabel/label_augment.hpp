#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "weblabel/cam_engine.hpp"
#include "weblabel/config.hpp"
#include "weblabel/manifest.hpp"
#include "weblabel/uncertainty_head.hpp"

namespace weblabel {

// One class proposed for an image: its surviving regions plus the head's
// score and predicted variance for that class on that image.
struct CandidateLabel {
  int class_index = 0;
  std::vector<Region> regions;
  double score = 0.0;
  double sigma2 = 0.0;
};

double mask_iou(const Region& a, const Region& b);
double bbox_iou(const Region& a, const Region& b);

// Greedy suppression across classes: regions sorted by score descending
// (ties by class index, then bbox), each kept only if its IoU with every
// already kept region stays at or below iou_threshold.
std::vector<Region> nms(const std::vector<Region>& regions,
                        double iou_threshold, bool use_bbox_iou = false);

// Keeps regions with area_fraction >= area_threshold.
std::vector<Region> filter_regions(const std::vector<Region>& regions,
                                   double area_threshold);

// Keeps candidates with sigma2 <= uncertainty_threshold.
std::vector<CandidateLabel> filter_by_uncertainty(
    const std::vector<CandidateLabel>& candidates,
    double uncertainty_threshold);

// Nearest-rank percentile of the values: the smallest value with at least
// percentile percent of the population at or below it.
double calibrate_uncertainty_threshold(std::vector<double> sigma2_values,
                                       double percentile);

struct AugmentReport {
  std::size_t samples = 0;
  std::size_t input_labels = 0;
  std::size_t output_labels = 0;
  double labels_added_pct = 0.0;
  double uncertainty_threshold = 0.0;
  bool threshold_calibrated = false;
  std::vector<std::size_t> added_per_class;

  std::string to_table(const std::vector<std::string>& classes) const;
};

struct AugmentResult {
  DatasetManifest manifest;
  AugmentReport report;
};

// Full decision layer over a curated manifest: per image, CAM regions for
// every class are thresholded, area-filtered, suppressed across classes,
// and vetoed by predicted uncertainty; surviving classes join the original
// labels. Original labels bypass every filter. Feature paths resolve
// relative to manifest_path and are rebased as if written to output_path.
AugmentResult augment_labels(const DatasetManifest& manifest,
                             const HeadParams& params,
                             const PipelineConfig& config,
                             const std::filesystem::path& manifest_path,
                             const std::filesystem::path& output_path,
                             int threads = 1);

}  // namespace weblabel
