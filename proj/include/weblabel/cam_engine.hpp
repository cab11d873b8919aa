#pragma once

#include <array>
#include <filesystem>
#include <vector>

#include "weblabel/config.hpp"
#include "weblabel/feature_map.hpp"
#include "weblabel/types.hpp"
#include "weblabel/uncertainty_head.hpp"

namespace weblabel {

struct CamOptions {
  int output_size = 224;
  int intermediate_resize = 63;
  bool two_step_resize = true;
};

inline CamOptions cam_options(const PipelineConfig& config) {
  CamOptions options;
  options.output_size = config.output_size;
  options.intermediate_resize = config.intermediate_resize;
  options.two_step_resize = config.two_step_resize;
  return options;
}

// Spatial class evidence. raw holds sum_i w^k_i f_i(x,y) on the feature
// grid; prob is the upsampled per-pixel probability at output resolution.
struct ClassActivationMap {
  int class_index = 0;
  Matrix raw;   // H x W
  Matrix prob;  // S x S, values in (0,1)
  double score = 0.0;
};

// One connected component of prob > threshold.
struct Region {
  int class_index = 0;
  MaskGrid mask;               // S x S, 1 inside the component
  std::array<int, 4> bbox{};   // inclusive x0,y0,x1,y1
  double area_fraction = 0.0;  // mask pixels / grid pixels
  double score = 0.0;          // class score of the source CAM
};

// Class scores: S_k = sum_i w^k_i sum_xy f_i(x,y) + bias_k. Equals
// H*W*(w^k . GAP) + bias_k up to floating point order.
Vector compute_scores(const HeadParams& params, const FeatureMap& map);

// CAM of one class. prob = sigmoid(upsampled raw + bias_k/(H*W)); the bias
// is spread evenly over the grid so the pixel field sums to the score.
ClassActivationMap compute_cam(const HeadParams& params, const FeatureMap& map,
                               int class_index, const CamOptions& options);

// Corner-aligned bilinear interpolation. Same-size output is the identity;
// output corners equal input corners.
Matrix bilinear_resize(const Matrix& grid, int out_h, int out_w);

// Connected components of prob > prob_threshold under 4-connectivity, in
// scan order of their first pixel. Empty when nothing passes.
std::vector<Region> extract_regions(const ClassActivationMap& cam,
                                    double prob_threshold);

// Binary PGM dump of a grid of values in [0,1], for eyeballing CAMs.
void write_pgm(const Matrix& grid, const std::filesystem::path& path);

}  // namespace weblabel
