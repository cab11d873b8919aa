#pragma once

#include <Eigen/Dense>

#include <string>

namespace weblabel {

using Scalar = double;
using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// Row-major so that .data() is the on-disk [y][x][i] order.
using RowMajorMatrix =
    Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using MaskGrid = Eigen::Array<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic>;

enum class Stage { raw, curated, augmented };

inline const char* stage_name(Stage stage) {
  switch (stage) {
    case Stage::raw: return "raw";
    case Stage::curated: return "curated";
    case Stage::augmented: return "augmented";
  }
  return "?";
}

inline bool stage_from_name(const std::string& name, Stage& out) {
  if (name == "raw") { out = Stage::raw; return true; }
  if (name == "curated") { out = Stage::curated; return true; }
  if (name == "augmented") { out = Stage::augmented; return true; }
  return false;
}

}  // namespace weblabel
