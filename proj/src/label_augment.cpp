#include "weblabel/label_augment.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <set>
#include <sstream>

#include "weblabel/error.hpp"
#include "weblabel/parallel.hpp"

namespace weblabel {

namespace {

void check_same_grid(const Region& a, const Region& b) {
  if (a.mask.rows() != b.mask.rows() || a.mask.cols() != b.mask.cols())
    throw Error(errc::shape_mismatch, "region masks live on different grids");
}

bool nms_before(const Region& a, const Region& b) {
  if (a.score != b.score) return a.score > b.score;
  if (a.class_index != b.class_index) return a.class_index < b.class_index;
  return a.bbox < b.bbox;
}

// Everything augment_labels needs from one image, computed in parallel and
// merged in sample order.
struct ImageProposal {
  std::vector<CandidateLabel> candidates;  // post-NMS classes with regions
  Vector scores;
  Vector sigma2;
};

}  // namespace

double mask_iou(const Region& a, const Region& b) {
  check_same_grid(a, b);
  const auto a_on = a.mask > 0;
  const auto b_on = b.mask > 0;
  const double inter = static_cast<double>((a_on && b_on).count());
  const double uni = static_cast<double>((a_on || b_on).count());
  return uni == 0.0 ? 0.0 : inter / uni;
}

double bbox_iou(const Region& a, const Region& b) {
  const auto area = [](const std::array<int, 4>& box) {
    return static_cast<double>(box[2] - box[0] + 1) *
           static_cast<double>(box[3] - box[1] + 1);
  };
  const double iw = std::max(
      0, std::min(a.bbox[2], b.bbox[2]) - std::max(a.bbox[0], b.bbox[0]) + 1);
  const double ih = std::max(
      0, std::min(a.bbox[3], b.bbox[3]) - std::max(a.bbox[1], b.bbox[1]) + 1);
  const double inter = iw * ih;
  const double uni = area(a.bbox) + area(b.bbox) - inter;
  return uni == 0.0 ? 0.0 : inter / uni;
}

std::vector<Region> nms(const std::vector<Region>& regions,
                        double iou_threshold, bool use_bbox_iou) {
  std::vector<Region> sorted = regions;
  std::stable_sort(sorted.begin(), sorted.end(), nms_before);

  std::vector<Region> kept;
  for (const Region& candidate : sorted) {
    bool suppressed = false;
    for (const Region& winner : kept) {
      const double iou = use_bbox_iou ? bbox_iou(candidate, winner)
                                      : mask_iou(candidate, winner);
      if (iou > iou_threshold) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) kept.push_back(candidate);
  }
  return kept;
}

std::vector<Region> filter_regions(const std::vector<Region>& regions,
                                   double area_threshold) {
  std::vector<Region> kept;
  for (const Region& region : regions)
    if (region.area_fraction >= area_threshold) kept.push_back(region);
  return kept;
}

std::vector<CandidateLabel> filter_by_uncertainty(
    const std::vector<CandidateLabel>& candidates,
    double uncertainty_threshold) {
  std::vector<CandidateLabel> kept;
  for (const CandidateLabel& candidate : candidates)
    if (candidate.sigma2 <= uncertainty_threshold) kept.push_back(candidate);
  return kept;
}

double calibrate_uncertainty_threshold(std::vector<double> sigma2_values,
                                       double percentile) {
  if (sigma2_values.empty())
    throw Error(errc::empty_dataset, "no sigma2 values to calibrate from");
  if (percentile < 0.0 || percentile > 100.0)
    throw Error(errc::bad_config, "percentile outside [0,100]");
  std::sort(sigma2_values.begin(), sigma2_values.end());
  const double n = static_cast<double>(sigma2_values.size());
  const auto rank = static_cast<std::size_t>(
      std::max(1.0, std::ceil(percentile / 100.0 * n)));
  return sigma2_values[std::min(rank, sigma2_values.size()) - 1];
}

std::string AugmentReport::to_table(
    const std::vector<std::string>& classes) const {
  std::ostringstream out;
  out << "samples:               " << samples << '\n';
  out << "labels in:             " << input_labels << '\n';
  out << "labels out:            " << output_labels << '\n';
  out << std::fixed << std::setprecision(2);
  out << "labels added:          " << labels_added_pct << "%\n";
  out << "uncertainty threshold: " << std::setprecision(6)
      << uncertainty_threshold
      << (threshold_calibrated ? " (calibrated)" : " (fixed)") << '\n';
  for (std::size_t k = 0; k < added_per_class.size(); ++k) {
    if (added_per_class[k] == 0) continue;
    const std::string name =
        k < classes.size() ? classes[k] : std::to_string(k);
    out << "  +" << added_per_class[k] << "  " << name << '\n';
  }
  return out.str();
}

AugmentResult augment_labels(const DatasetManifest& manifest,
                             const HeadParams& params,
                             const PipelineConfig& config,
                             const std::filesystem::path& manifest_path,
                             const std::filesystem::path& output_path,
                             int threads) {
  validate(config);
  if (manifest.stage != Stage::curated)
    throw Error(errc::stage_mismatch,
                std::string("augmentation expects a curated manifest, got ") +
                    stage_name(manifest.stage));
  const int num_classes = manifest.num_classes();
  if (params.num_classes() != num_classes)
    throw Error(errc::shape_mismatch,
                "head has " + std::to_string(params.num_classes()) +
                    " classes, manifest has " + std::to_string(num_classes));
  const CamOptions options = cam_options(config);

  std::vector<ImageProposal> proposals(manifest.samples.size());
  parallel_for(manifest.samples.size(), threads, [&](std::size_t i) {
    const SampleRecord& sample = manifest.samples[i];
    FeatureMap map;
    try {
      map = load_feature_map(
          resolve_feature_path(manifest_path, sample.feature_path));
    } catch (const Error& e) {
      throw Error(e.code(), "sample " + sample.id + ": " + e.what());
    }

    ImageProposal& proposal = proposals[i];
    const HeadOutput head = predict(params, map);
    proposal.sigma2 = head.sigma2;
    proposal.scores = compute_scores(params, map);

    std::vector<Region> pool;
    for (int k = 0; k < num_classes; ++k) {
      const ClassActivationMap cam = compute_cam(params, map, k, options);
      for (Region& region : extract_regions(cam, config.prob_threshold))
        pool.push_back(std::move(region));
    }
    pool = filter_regions(pool, config.area_threshold);
    const std::vector<Region> kept = nms(pool, config.iou_threshold,
                                         config.use_bbox_iou);

    for (int k = 0; k < num_classes; ++k) {
      CandidateLabel candidate;
      candidate.class_index = k;
      for (const Region& region : kept)
        if (region.class_index == k) candidate.regions.push_back(region);
      if (candidate.regions.empty()) continue;
      candidate.score = proposal.scores[k];
      candidate.sigma2 = proposal.sigma2[k];
      proposal.candidates.push_back(std::move(candidate));
    }
  });

  double threshold = 0.0;
  bool calibrated = false;
  if (config.uncertainty_threshold) {
    threshold = *config.uncertainty_threshold;
  } else {
    // Calibrate on the input set itself: one sigma2 per original label.
    std::vector<double> own;
    own.reserve(manifest.samples.size());
    for (std::size_t i = 0; i < manifest.samples.size(); ++i)
      for (int label : manifest.samples[i].labels)
        own.push_back(proposals[i].sigma2[label]);
    threshold =
        calibrate_uncertainty_threshold(own, config.uncertainty_percentile);
    calibrated = true;
  }

  AugmentResult result;
  result.report.samples = manifest.samples.size();
  result.report.uncertainty_threshold = threshold;
  result.report.threshold_calibrated = calibrated;
  result.report.added_per_class.assign(static_cast<std::size_t>(num_classes),
                                       0);

  result.manifest.classes = manifest.classes;
  result.manifest.stage = Stage::augmented;
  result.manifest.provenance = manifest.provenance;
  auto& prov = result.manifest.provenance;
  prov["label_augment.prob_threshold"] = std::to_string(config.prob_threshold);
  prov["label_augment.iou_threshold"] = std::to_string(config.iou_threshold);
  prov["label_augment.area_threshold"] = std::to_string(config.area_threshold);
  prov["label_augment.uncertainty_threshold"] = std::to_string(threshold);
  prov["label_augment.uncertainty_calibrated"] = calibrated ? "true" : "false";
  if (calibrated)
    prov["label_augment.uncertainty_percentile"] =
        std::to_string(config.uncertainty_percentile);
  prov["label_augment.use_bbox_iou"] = config.use_bbox_iou ? "true" : "false";
  prov["label_augment.output_size"] = std::to_string(config.output_size);
  prov["label_augment.intermediate_resize"] =
      std::to_string(config.intermediate_resize);
  prov["label_augment.two_step_resize"] =
      config.two_step_resize ? "true" : "false";

  for (std::size_t i = 0; i < manifest.samples.size(); ++i) {
    const SampleRecord& sample = manifest.samples[i];
    const ImageProposal& proposal = proposals[i];
    const std::set<int> originals(sample.labels.begin(), sample.labels.end());

    SampleRecord out = sample;
    out.feature_path =
        rebase_feature_path(manifest_path, output_path, sample.feature_path);
    out.label_details.clear();

    std::set<int> labels = originals;
    for (const CandidateLabel& candidate : proposal.candidates) {
      if (originals.count(candidate.class_index)) continue;
      if (candidate.sigma2 > threshold) continue;
      labels.insert(candidate.class_index);
      ++result.report
            .added_per_class[static_cast<std::size_t>(candidate.class_index)];
    }

    out.labels.assign(labels.begin(), labels.end());
    for (int label : out.labels) {
      LabelDetail detail;
      detail.class_index = label;
      detail.provenance = originals.count(label) ? "original" : "augmented";
      detail.score = proposal.scores[label];
      detail.sigma2 = proposal.sigma2[label];
      for (const CandidateLabel& candidate : proposal.candidates)
        if (candidate.class_index == label)
          for (const Region& region : candidate.regions)
            detail.boxes.push_back(region.bbox);
      out.label_details.push_back(std::move(detail));
    }

    result.report.input_labels += sample.labels.size();
    result.report.output_labels += out.labels.size();
    result.manifest.samples.push_back(std::move(out));
  }

  result.report.labels_added_pct =
      result.report.input_labels == 0
          ? 0.0
          : 100.0 *
                static_cast<double>(result.report.output_labels -
                                    result.report.input_labels) /
                static_cast<double>(result.report.input_labels);
  return result;
}

}  // namespace weblabel
