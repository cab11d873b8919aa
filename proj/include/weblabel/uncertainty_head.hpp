#pragma once

#include <filesystem>
#include <vector>

#include "weblabel/config.hpp"
#include "weblabel/feature_map.hpp"
#include "weblabel/manifest.hpp"
#include "weblabel/types.hpp"

namespace weblabel {

// Linear classification and uncertainty layers on top of GAP features. Row k
// of each weight matrix belongs to class k.
struct HeadParams {
  Matrix score_weights;  // K x C
  Vector score_bias;     // K
  Matrix unc_weights;    // K x C
  Vector unc_bias;       // K

  int num_classes() const { return static_cast<int>(score_weights.rows()); }
  int channels() const { return static_cast<int>(score_weights.cols()); }

  static HeadParams zeros(int num_classes, int channels);
};

struct HeadOutput {
  Vector logits;   // K, pre-sigmoid class scores
  Vector probs;    // sigmoid(logits)
  Vector log_var;  // s_k = log sigma_k^2, predicted per input
  Vector sigma2;   // exp(log_var)
};

HeadOutput forward(const HeadParams& params, const Vector& gap);

// Per-class uncertainty-weighted binary cross entropy:
//   L = sum_k 1/2 exp(-s_k) * BCE(logit_k, t_k) + 1/2 s_k
// The BCE is evaluated from logits so extreme predictions stay finite.
double loss(const HeadOutput& output, const Vector& targets);

// Analytic gradient of loss(forward(params, gap), targets) with respect to
// every parameter block, returned in a HeadParams of the same shapes.
HeadParams gradients(const HeadParams& params, const Vector& gap,
                     const Vector& targets);

struct TrainingSet {
  Matrix gap;      // N x C
  Matrix targets;  // N x K, each entry 0 or 1

  Eigen::Index size() const { return gap.rows(); }
};

// GAP features plus 0/1 targets for every sample in the manifest. Feature
// paths resolve relative to manifest_path's directory.
TrainingSet load_training_set(const DatasetManifest& manifest,
                              const std::filesystem::path& manifest_path);

struct TrainResult {
  HeadParams params;
  std::vector<double> epoch_loss;  // mean loss per epoch, before each update
};

// Mini-batch SGD over seeded shuffles.
TrainResult train(const TrainingSet& data, const TrainConfig& config);

HeadOutput predict(const HeadParams& params, const FeatureMap& map);

// Mean stable BCE of the score head over a training set, ignoring the
// uncertainty weighting. Used to judge fit quality.
double mean_bce(const HeadParams& params, const TrainingSet& data);

// VHP1: magic, u32 K, u32 C, then float32 score_weights (row-major),
// score_bias, unc_weights, unc_bias.
void save_head_params(const HeadParams& params,
                      const std::filesystem::path& path);
HeadParams load_head_params(const std::filesystem::path& path);

void write_loss_trace_csv(const std::vector<double>& epoch_loss,
                          const std::filesystem::path& path);

}  // namespace weblabel
