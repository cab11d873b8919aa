#pragma once

#include <cstdint>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include "weblabel/config.hpp"
#include "weblabel/manifest.hpp"
#include "weblabel/types.hpp"

namespace weblabel {

// Trusted top-ranked exemplars of one class, as unit GAP vectors.
struct AnchorSet {
  int class_index = 0;
  Matrix vectors;  // one row per anchor, L2-normalized
  std::vector<std::string> ids;

  int count() const { return static_cast<int>(vectors.rows()); }
};

struct ClusterModel {
  int class_index = 0;
  Matrix centroids;  // one row per centroid, L2-normalized
  std::vector<int> assignment;  // centroid index per input vector
  std::vector<std::string> sample_ids;  // parallel to assignment, may be empty
  double inertia = 0.0;  // sum of squared distances to assigned centroids
  std::vector<double> inertia_trace;  // one entry per Lloyd iteration
};

// Cosine distance between unit vectors.
inline Scalar cosine_distance(const Vector& a, const Vector& b) {
  return Scalar(1) - a.dot(b);
}

Vector normalized_or_zero(const Vector& v);

// Picks the anchors_per_class lowest-rank samples. Ties in rank break by id.
// features holds one row per sample, aligned with samples.
AnchorSet select_anchors(const std::vector<SampleRecord>& samples,
                         const Matrix& features, int anchors_per_class);

// Spherical k-means with k-means++ seeding. Rows of vectors must be unit
// length. Runs Lloyd iterations to an assignment fixed point (at most 100),
// renormalizing centroids each step; empty clusters are re-seeded to the
// point farthest from its nearest centroid.
ClusterModel kmeans_cluster(const Matrix& vectors, int num_clusters,
                            std::uint64_t seed);

// Centroids within accept_threshold cosine distance of any anchor. Falls
// back to the single nearest centroid (lowest index on ties) so the result
// is never empty.
std::set<int> select_clusters(const ClusterModel& model,
                              const AnchorSet& anchors,
                              double accept_threshold);

struct CurationClassReport {
  int class_index = 0;
  std::string class_name;
  int samples_in = 0;
  int anchors = 0;
  int clusters_formed = 0;
  int clusters_kept = 0;
  int samples_kept = 0;
  int samples_dropped = 0;
  std::string warning;
};

struct CurationReport {
  std::vector<CurationClassReport> per_class;
  std::string to_table() const;
};

struct CurationResult {
  DatasetManifest manifest;
  CurationReport report;
};

// Runs the full per-class anchor/cluster/select pass over a raw manifest.
// Feature paths resolve relative to manifest_path's directory; the curated
// manifest is rebased as if written next to output_path.
CurationResult curate_dataset(const DatasetManifest& manifest,
                              const PipelineConfig& config,
                              const std::filesystem::path& manifest_path,
                              const std::filesystem::path& output_path,
                              int threads = 1);

}  // namespace weblabel
