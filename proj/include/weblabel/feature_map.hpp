#pragma once

#include <filesystem>

#include "weblabel/types.hpp"

namespace weblabel {

// Dense H x W x C activation volume, one row per spatial position in
// [y][x] order, one column per channel. Values are held as doubles; the
// VFM1 file format stores them as little-endian float32.
struct FeatureMap {
  int height = 0;
  int width = 0;
  RowMajorMatrix values;  // (height*width) x channels

  int channels() const { return static_cast<int>(values.cols()); }
  std::int64_t pixel_count() const {
    return static_cast<std::int64_t>(height) * width;
  }

  Scalar at(int y, int x, int c) const {
    return values(static_cast<Eigen::Index>(y) * width + x, c);
  }
  Scalar& at(int y, int x, int c) {
    return values(static_cast<Eigen::Index>(y) * width + x, c);
  }

  static FeatureMap zeros(int height, int width, int channels);
};

FeatureMap load_feature_map(const std::filesystem::path& path);
void save_feature_map(const FeatureMap& map, const std::filesystem::path& path);

// Spatial mean per channel.
Vector global_average_pool(const FeatureMap& map);

}  // namespace weblabel
