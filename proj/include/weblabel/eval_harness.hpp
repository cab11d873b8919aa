#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "weblabel/config.hpp"
#include "weblabel/manifest.hpp"

namespace weblabel {

// What each generated image actually contains, keyed by sample id.
struct GroundTruth {
  std::vector<std::string> classes;
  std::map<std::string, std::vector<int>> labels;  // sorted true labels

  bool operator==(const GroundTruth&) const = default;
};

void save_ground_truth(const GroundTruth& truth,
                       const std::filesystem::path& path);
GroundTruth load_ground_truth(const std::filesystem::path& path);

struct SynthOutput {
  DatasetManifest manifest;
  GroundTruth truth;
};

// Noisy single-label retrieval results: per class, most samples carry their
// queried class's channel signature and the rest carry some other class's.
// Low ranks are reliable (in-class with probability 0.95). Feature files
// are written under out_dir/features; the manifest expects to live in
// out_dir itself.
SynthOutput generate_curation_set(const SyntheticSpec& spec,
                                  const std::filesystem::path& out_dir,
                                  int threads = 1);

// Single-label curated set with hidden extra labels: a multilabel_fraction
// of images embed a second class's signature in the opposite spatial half
// (separated by an empty column), and a noise_fraction carry an attenuated
// primary signal only. The manifest records one label; truth records all.
SynthOutput generate_multilabel_maps(const SyntheticSpec& spec,
                                     const std::filesystem::path& out_dir,
                                     int threads = 1);

struct Metrics {
  double curation_precision = 1.0;  // kept samples whose query class is true
  double kept_fraction = 1.0;       // manifest samples / truth samples
  double augment_precision = 1.0;   // added labels present in truth
  double augment_recall = 1.0;      // true extra labels recovered
  double labels_added_pct = 0.0;
  bool no_added_labels = false;  // precision reported as 1.0 by convention
  std::size_t samples = 0;
  std::size_t added_total = 0;
  std::size_t added_correct = 0;

  std::string to_table() const;
  std::string to_json_line() const;
};

// Oracle scoring of a pipeline output. The original label of each sample is
// its query_class; everything else in its label set counts as added.
Metrics score_run(const GroundTruth& truth, const DatasetManifest& manifest);

}  // namespace weblabel
