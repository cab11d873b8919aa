#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace weblabel {

// Knobs shared by the curation and augmentation stages.
struct PipelineConfig {
  int anchors_per_class = 5;
  int clusters_per_class = 8;
  double cluster_accept_threshold = 0.35;  // cosine distance to nearest anchor
  double prob_threshold = 0.7;
  double iou_threshold = 0.5;
  double area_threshold = 0.05;  // fraction of output image area
  // Fixed uncertainty cutoff; when unset the augmenter calibrates it at
  // uncertainty_percentile of the input set's own-label sigma2 values.
  std::optional<double> uncertainty_threshold;
  double uncertainty_percentile = 80.0;
  int intermediate_resize = 63;
  int output_size = 224;
  bool two_step_resize = true;
  bool use_bbox_iou = false;
  std::uint64_t seed = 42;

  bool operator==(const PipelineConfig&) const = default;
};

struct TrainConfig {
  double learning_rate = 0.05;
  int epochs = 100;
  int batch_size = 64;
  std::uint64_t seed = 42;
  double log_var_init = 0.0;
  double weight_init_scale = 1.0;

  bool operator==(const TrainConfig&) const = default;
};

// Parameters of the synthetic dataset generators.
struct SyntheticSpec {
  int num_classes = 10;
  int channels = 64;
  int samples_per_class = 200;
  double noise_fraction = 0.25;
  double blob_spread = 0.08;
  double multilabel_fraction = 0.27;
  int grid_height = 7;
  int grid_width = 7;
  std::uint64_t seed = 42;

  bool operator==(const SyntheticSpec&) const = default;
};

struct FullConfig {
  PipelineConfig pipeline;
  TrainConfig train;
  SyntheticSpec synth;

  bool operator==(const FullConfig&) const = default;
};

void validate(const PipelineConfig& config);
void validate(const TrainConfig& config);
void validate(const SyntheticSpec& spec);
void validate(const FullConfig& config);

std::string config_to_string(const FullConfig& config);
FullConfig config_from_string(const std::string& text);

FullConfig load_config(const std::filesystem::path& path);
void save_config(const FullConfig& config, const std::filesystem::path& path);

// Applies "section.field=value" onto a config. Unknown fields are rejected.
void apply_override(FullConfig& config, const std::string& key_value);

// Dotted key -> printable value for manifest provenance.
std::map<std::string, std::string> flatten_config(const FullConfig& config);

}  // namespace weblabel
