#pragma once

#include <array>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "weblabel/types.hpp"

namespace weblabel {

// Per-label bookkeeping attached by the augmentation stage.
struct LabelDetail {
  int class_index = 0;
  std::string provenance;  // "original" or "augmented"
  double score = 0.0;
  double sigma2 = 0.0;
  std::vector<std::array<int, 4>> boxes;  // inclusive x0,y0,x1,y1

  bool operator==(const LabelDetail&) const = default;
};

struct SampleRecord {
  std::string id;
  int query_class = 0;
  int rank = 0;
  std::string feature_path;
  std::vector<int> labels;  // sorted, unique
  std::vector<LabelDetail> label_details;

  bool operator==(const SampleRecord&) const = default;
};

struct DatasetManifest {
  std::vector<std::string> classes;
  Stage stage = Stage::raw;
  std::map<std::string, std::string> provenance;
  std::vector<SampleRecord> samples;

  int num_classes() const { return static_cast<int>(classes.size()); }

  bool operator==(const DatasetManifest&) const = default;
};

// One JSON header line followed by one JSON record per line.
DatasetManifest read_manifest(const std::filesystem::path& path);
void write_manifest(const DatasetManifest& manifest,
                    const std::filesystem::path& path);

struct ManifestHeader {
  std::vector<std::string> classes;
  Stage stage = Stage::raw;
  std::map<std::string, std::string> provenance;
};

// Streaming read; records are handed to the callback one at a time and
// never accumulated. Feature maps are not touched.
void for_each_sample(const std::filesystem::path& path,
                     const std::function<void(const ManifestHeader&)>& on_header,
                     const std::function<void(SampleRecord&&)>& on_record);

// Feature paths are stored relative to the manifest file's directory.
std::filesystem::path resolve_feature_path(
    const std::filesystem::path& manifest_path, const std::string& feature_path);

// Rewrites a record's feature path so it stays valid when the manifest moves
// from in_dir to out_dir. Falls back to an absolute path across roots.
std::string rebase_feature_path(const std::filesystem::path& in_manifest,
                                const std::filesystem::path& out_manifest,
                                const std::string& feature_path);

}  // namespace weblabel
