#include "weblabel/noise_reduction.hpp"

#include <algorithm>
#include <iomanip>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "weblabel/error.hpp"
#include "weblabel/feature_map.hpp"
#include "weblabel/parallel.hpp"
#include "weblabel/rng.hpp"

namespace weblabel {

namespace {

constexpr int kMaxLloydIterations = 100;

// Squared Euclidean distance between unit vectors, from their dot product.
inline double sq_dist_from_dot(double dot) {
  return std::max(0.0, 2.0 - 2.0 * dot);
}

Matrix kmeanspp_seed(const Matrix& vectors, int k, Rng& rng) {
  const Eigen::Index n = vectors.rows();
  Matrix centroids(k, vectors.cols());
  std::vector<double> best_sq(n, std::numeric_limits<double>::infinity());
  std::vector<char> chosen(n, 0);

  Eigen::Index first = static_cast<Eigen::Index>(bounded(rng, n));
  centroids.row(0) = vectors.row(first);
  chosen[first] = 1;

  for (int c = 1; c < k; ++c) {
    double total = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const double d =
          sq_dist_from_dot(vectors.row(i).dot(centroids.row(c - 1)));
      best_sq[i] = std::min(best_sq[i], d);
      total += best_sq[i];
    }
    Eigen::Index pick = -1;
    if (total > 0.0) {
      double target = uniform01(rng) * total;
      for (Eigen::Index i = 0; i < n; ++i) {
        target -= best_sq[i];
        if (target <= 0.0) {
          pick = i;
          break;
        }
      }
      if (pick < 0) pick = n - 1;
    } else {
      // All points coincide with chosen centroids; take the first free one.
      for (Eigen::Index i = 0; i < n; ++i)
        if (!chosen[i]) {
          pick = i;
          break;
        }
      if (pick < 0) pick = static_cast<Eigen::Index>(bounded(rng, n));
    }
    centroids.row(c) = vectors.row(pick);
    chosen[pick] = 1;
  }
  return centroids;
}

}  // namespace

Vector normalized_or_zero(const Vector& v) {
  const double norm = v.norm();
  if (norm < 1e-12) return Vector::Zero(v.size());
  return v / norm;
}

AnchorSet select_anchors(const std::vector<SampleRecord>& samples,
                         const Matrix& features, int anchors_per_class) {
  if (samples.empty())
    throw Error(errc::empty_class, "no samples to pick anchors from");
  if (features.rows() != static_cast<Eigen::Index>(samples.size()))
    throw Error(errc::shape_mismatch,
                "feature rows do not match sample count");

  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (samples[a].rank != samples[b].rank)
      return samples[a].rank < samples[b].rank;
    return samples[a].id < samples[b].id;
  });

  const int count =
      std::min<int>(anchors_per_class, static_cast<int>(samples.size()));
  AnchorSet anchors;
  anchors.class_index = samples[order[0]].query_class;
  anchors.vectors.resize(count, features.cols());
  anchors.ids.reserve(count);
  for (int i = 0; i < count; ++i) {
    anchors.vectors.row(i) =
        normalized_or_zero(features.row(order[i]).transpose()).transpose();
    anchors.ids.push_back(samples[order[i]].id);
  }
  return anchors;
}

ClusterModel kmeans_cluster(const Matrix& vectors, int num_clusters,
                            std::uint64_t seed) {
  const Eigen::Index n = vectors.rows();
  if (num_clusters < 1)
    throw Error(errc::bad_config, "need at least one cluster");
  if (n < num_clusters)
    throw Error(errc::too_few_samples,
                std::to_string(n) + " vectors for " +
                    std::to_string(num_clusters) + " clusters");

  Rng rng(seed);
  ClusterModel model;
  model.centroids = kmeanspp_seed(vectors, num_clusters, rng);
  model.assignment.assign(n, -1);

  std::vector<int> previous(n, -1);
  for (int iter = 0; iter < kMaxLloydIterations; ++iter) {
    // Assignment: nearest centroid, lowest index on ties.
    const Matrix dots = vectors * model.centroids.transpose();  // n x k
    double inertia = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      Eigen::Index best = 0;
      double best_dot = dots(i, 0);
      for (Eigen::Index c = 1; c < num_clusters; ++c)
        if (dots(i, c) > best_dot) {
          best_dot = dots(i, c);
          best = c;
        }
      model.assignment[i] = static_cast<int>(best);
      inertia += sq_dist_from_dot(best_dot);
    }
    if (!model.inertia_trace.empty()) {
      const double prev = model.inertia_trace.back();
      if (inertia > prev + 1e-9 * (1.0 + prev))
        throw Error(errc::invariant_violation,
                    "k-means inertia increased from " + std::to_string(prev) +
                        " to " + std::to_string(inertia));
    }
    model.inertia_trace.push_back(inertia);
    model.inertia = inertia;

    if (model.assignment == previous) break;
    previous = model.assignment;

    // Update: spherical mean per cluster.
    Matrix sums = Matrix::Zero(num_clusters, vectors.cols());
    std::vector<int> counts(num_clusters, 0);
    for (Eigen::Index i = 0; i < n; ++i) {
      sums.row(model.assignment[i]) += vectors.row(i);
      ++counts[model.assignment[i]];
    }
    for (int c = 0; c < num_clusters; ++c) {
      if (counts[c] == 0) continue;
      model.centroids.row(c) =
          normalized_or_zero(sums.row(c).transpose()).transpose();
    }

    // Re-seed empty clusters to the point farthest from its nearest centroid.
    for (int c = 0; c < num_clusters; ++c) {
      if (counts[c] != 0) continue;
      const Matrix d = vectors * model.centroids.transpose();
      Eigen::Index farthest = 0;
      double farthest_dist = -1.0;
      for (Eigen::Index i = 0; i < n; ++i) {
        const double nearest = sq_dist_from_dot(d.row(i).maxCoeff());
        if (nearest > farthest_dist) {
          farthest_dist = nearest;
          farthest = i;
        }
      }
      model.centroids.row(c) = vectors.row(farthest);
    }
  }
  return model;
}

std::set<int> select_clusters(const ClusterModel& model,
                              const AnchorSet& anchors,
                              double accept_threshold) {
  std::set<int> selected;
  const Eigen::Index k = model.centroids.rows();
  if (k == 0 || anchors.count() == 0) return selected;

  int nearest = 0;
  double nearest_dist = std::numeric_limits<double>::infinity();
  for (Eigen::Index c = 0; c < k; ++c) {
    double min_dist = std::numeric_limits<double>::infinity();
    for (int a = 0; a < anchors.count(); ++a) {
      const double dist =
          1.0 - model.centroids.row(c).dot(anchors.vectors.row(a));
      min_dist = std::min(min_dist, dist);
    }
    if (min_dist <= accept_threshold) selected.insert(static_cast<int>(c));
    if (min_dist < nearest_dist) {
      nearest_dist = min_dist;
      nearest = static_cast<int>(c);
    }
  }
  if (selected.empty()) selected.insert(nearest);
  return selected;
}

std::string CurationReport::to_table() const {
  std::ostringstream out;
  out << std::left << std::setw(5) << "class" << std::setw(20) << "name"
      << std::right << std::setw(9) << "samples" << std::setw(9) << "anchors"
      << std::setw(10) << "clusters" << std::setw(9) << "kept_cl"
      << std::setw(9) << "kept" << std::setw(9) << "dropped"
      << "  warning\n";
  for (const auto& row : per_class) {
    out << std::left << std::setw(5) << row.class_index << std::setw(20)
        << row.class_name.substr(0, 19) << std::right << std::setw(9)
        << row.samples_in << std::setw(9) << row.anchors << std::setw(10)
        << row.clusters_formed << std::setw(9) << row.clusters_kept
        << std::setw(9) << row.samples_kept << std::setw(9)
        << row.samples_dropped << "  " << row.warning << "\n";
  }
  return out.str();
}

CurationResult curate_dataset(const DatasetManifest& manifest,
                              const PipelineConfig& config,
                              const std::filesystem::path& manifest_path,
                              const std::filesystem::path& output_path,
                              int threads) {
  if (manifest.stage != Stage::raw)
    throw Error(errc::stage_mismatch,
                "curation expects a raw manifest, got stage '" +
                    std::string(stage_name(manifest.stage)) + "'");
  validate(config);

  const int num_classes = manifest.num_classes();
  std::vector<std::vector<std::size_t>> by_class(num_classes);
  for (std::size_t i = 0; i < manifest.samples.size(); ++i)
    by_class[manifest.samples[i].query_class].push_back(i);

  struct ClassOutcome {
    std::unordered_set<std::string> keep;
    CurationClassReport report;
  };
  std::vector<ClassOutcome> outcomes(num_classes);

  parallel_for(num_classes, threads, [&](std::size_t k) {
    ClassOutcome& outcome = outcomes[k];
    CurationClassReport& report = outcome.report;
    report.class_index = static_cast<int>(k);
    report.class_name = manifest.classes[k];
    report.samples_in = static_cast<int>(by_class[k].size());
    if (by_class[k].empty()) {
      report.warning = "empty class, nothing to curate";
      return;
    }

    std::vector<SampleRecord> samples;
    samples.reserve(by_class[k].size());
    for (std::size_t idx : by_class[k]) samples.push_back(manifest.samples[idx]);

    Matrix features(samples.size(), 0);
    for (std::size_t i = 0; i < samples.size(); ++i) {
      FeatureMap map;
      try {
        map = load_feature_map(
            resolve_feature_path(manifest_path, samples[i].feature_path));
      } catch (const Error& e) {
        throw Error(e.code(),
                    "sample " + samples[i].id + ": " + e.what());
      }
      const Vector gap = normalized_or_zero(global_average_pool(map));
      if (features.cols() == 0)
        features.resize(samples.size(), gap.size());
      else if (features.cols() != gap.size())
        throw Error(errc::shape_mismatch,
                    "sample " + samples[i].id +
                        ": channel count differs from the rest of the class");
      features.row(i) = gap.transpose();
    }

    const AnchorSet anchors =
        select_anchors(samples, features, config.anchors_per_class);
    report.anchors = anchors.count();
    for (const auto& id : anchors.ids) outcome.keep.insert(id);

    std::vector<std::size_t> rest;
    std::unordered_set<std::string> anchor_ids(anchors.ids.begin(),
                                               anchors.ids.end());
    for (std::size_t i = 0; i < samples.size(); ++i)
      if (!anchor_ids.count(samples[i].id)) rest.push_back(i);

    if (!rest.empty()) {
      Matrix rest_features(rest.size(), features.cols());
      for (std::size_t i = 0; i < rest.size(); ++i)
        rest_features.row(i) = features.row(rest[i]);

      const int k_eff =
          std::min<int>(config.clusters_per_class, static_cast<int>(rest.size()));
      ClusterModel model = kmeans_cluster(rest_features, k_eff,
                                          derive_seed(config.seed, k));
      model.class_index = static_cast<int>(k);
      for (std::size_t i : rest) model.sample_ids.push_back(samples[i].id);

      const std::set<int> kept_clusters =
          select_clusters(model, anchors, config.cluster_accept_threshold);
      report.clusters_formed = k_eff;
      report.clusters_kept = static_cast<int>(kept_clusters.size());
      for (std::size_t i = 0; i < rest.size(); ++i)
        if (kept_clusters.count(model.assignment[i]))
          outcome.keep.insert(samples[rest[i]].id);
    }

    report.samples_kept = static_cast<int>(outcome.keep.size());
    report.samples_dropped = report.samples_in - report.samples_kept;
  });

  std::unordered_set<std::string> keep_all;
  CurationResult result;
  for (auto& outcome : outcomes) {
    keep_all.insert(outcome.keep.begin(), outcome.keep.end());
    result.report.per_class.push_back(outcome.report);
  }

  result.manifest.classes = manifest.classes;
  result.manifest.stage = Stage::curated;
  result.manifest.provenance = manifest.provenance;
  result.manifest.provenance["noise_reduction.anchors_per_class"] =
      std::to_string(config.anchors_per_class);
  result.manifest.provenance["noise_reduction.clusters_per_class"] =
      std::to_string(config.clusters_per_class);
  result.manifest.provenance["noise_reduction.cluster_accept_threshold"] =
      std::to_string(config.cluster_accept_threshold);
  result.manifest.provenance["noise_reduction.seed"] =
      std::to_string(config.seed);
  for (const auto& row : result.report.per_class)
    if (!row.warning.empty())
      result.manifest.provenance["warning.class_" +
                                 std::to_string(row.class_index)] = row.warning;

  for (const auto& sample : manifest.samples) {
    if (!keep_all.count(sample.id)) continue;
    SampleRecord kept = sample;
    kept.feature_path =
        rebase_feature_path(manifest_path, output_path, sample.feature_path);
    result.manifest.samples.push_back(std::move(kept));
  }
  return result;
}

}  // namespace weblabel
