#include "weblabel/cam_engine.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <utility>
#include <vector>

#include "weblabel/error.hpp"
#include "weblabel/numeric.hpp"

namespace weblabel {

namespace {

void check_head_against_map(const HeadParams& params, const FeatureMap& map) {
  if (map.channels() != params.channels())
    throw Error(errc::shape_mismatch,
                "feature map has " + std::to_string(map.channels()) +
                    " channels, head expects " +
                    std::to_string(params.channels()));
}

struct AxisSample {
  int lo = 0;
  int hi = 0;
  double frac = 0.0;
};

std::vector<AxisSample> axis_samples(Eigen::Index in_n, int out_n) {
  std::vector<AxisSample> samples(static_cast<std::size_t>(out_n));
  for (int i = 0; i < out_n; ++i) {
    double src = 0.0;
    if (out_n > 1 && in_n > 1)
      src = static_cast<double>(i) * static_cast<double>(in_n - 1) /
            static_cast<double>(out_n - 1);
    const int lo = static_cast<int>(std::floor(src));
    AxisSample& s = samples[static_cast<std::size_t>(i)];
    s.lo = std::min<int>(lo, static_cast<int>(in_n) - 1);
    s.hi = std::min<int>(s.lo + 1, static_cast<int>(in_n) - 1);
    s.frac = src - static_cast<double>(s.lo);
  }
  return samples;
}

}  // namespace

Vector compute_scores(const HeadParams& params, const FeatureMap& map) {
  check_head_against_map(params, map);
  const Vector channel_sums = map.values.colwise().sum().transpose();
  return params.score_weights * channel_sums + params.score_bias;
}

Matrix bilinear_resize(const Matrix& grid, int out_h, int out_w) {
  if (grid.rows() < 1 || grid.cols() < 1 || out_h < 1 || out_w < 1)
    throw Error(errc::shape_mismatch, "resize needs non-empty grids");
  const auto rows = axis_samples(grid.rows(), out_h);
  const auto cols = axis_samples(grid.cols(), out_w);
  Matrix out(out_h, out_w);
  for (int y = 0; y < out_h; ++y) {
    const AxisSample& r = rows[static_cast<std::size_t>(y)];
    for (int x = 0; x < out_w; ++x) {
      const AxisSample& c = cols[static_cast<std::size_t>(x)];
      const double top = (1.0 - c.frac) * grid(r.lo, c.lo) +
                         c.frac * grid(r.lo, c.hi);
      const double bottom = (1.0 - c.frac) * grid(r.hi, c.lo) +
                            c.frac * grid(r.hi, c.hi);
      out(y, x) = (1.0 - r.frac) * top + r.frac * bottom;
    }
  }
  return out;
}

ClassActivationMap compute_cam(const HeadParams& params, const FeatureMap& map,
                               int class_index, const CamOptions& options) {
  check_head_against_map(params, map);
  if (class_index < 0 || class_index >= params.num_classes())
    throw Error(errc::shape_mismatch,
                "class index " + std::to_string(class_index) +
                    " outside head with " +
                    std::to_string(params.num_classes()) + " classes");
  if (options.output_size < 1 || options.intermediate_resize < 1)
    throw Error(errc::bad_config, "resize sizes must be positive");

  ClassActivationMap cam;
  cam.class_index = class_index;

  const Vector weights = params.score_weights.row(class_index).transpose();
  const Vector flat = map.values * weights;
  cam.raw = Eigen::Map<const RowMajorMatrix>(flat.data(), map.height,
                                             map.width);
  cam.score = weights.dot(map.values.colwise().sum().transpose()) +
              params.score_bias[class_index];

  Matrix up;
  if (options.two_step_resize)
    up = bilinear_resize(
        bilinear_resize(cam.raw, options.intermediate_resize,
                        options.intermediate_resize),
        options.output_size, options.output_size);
  else
    up = bilinear_resize(cam.raw, options.output_size, options.output_size);

  // Spread the bias evenly over the feature grid, then clamp away from the
  // exact endpoints so saturated logits still satisfy prob in (0,1).
  const double offset = params.score_bias[class_index] /
                        static_cast<double>(map.pixel_count());
  cam.prob = up.unaryExpr([offset](double v) {
    const double p = sigmoid(v + offset);
    return std::min(1.0 - 1e-12, std::max(1e-12, p));
  });
  return cam;
}

std::vector<Region> extract_regions(const ClassActivationMap& cam,
                                    double prob_threshold) {
  const Eigen::Index rows = cam.prob.rows();
  const Eigen::Index cols = cam.prob.cols();
  MaskGrid visited = MaskGrid::Zero(rows, cols);
  std::vector<Region> regions;
  std::vector<std::pair<int, int>> stack;

  for (Eigen::Index y = 0; y < rows; ++y) {
    for (Eigen::Index x = 0; x < cols; ++x) {
      if (visited(y, x) || cam.prob(y, x) <= prob_threshold) continue;
      Region region;
      region.class_index = cam.class_index;
      region.score = cam.score;
      region.mask = MaskGrid::Zero(rows, cols);
      int x0 = static_cast<int>(x), x1 = static_cast<int>(x);
      int y0 = static_cast<int>(y), y1 = static_cast<int>(y);
      std::int64_t pixels = 0;

      stack.clear();
      stack.emplace_back(static_cast<int>(y), static_cast<int>(x));
      visited(y, x) = 1;
      while (!stack.empty()) {
        const auto [py, px] = stack.back();
        stack.pop_back();
        region.mask(py, px) = 1;
        ++pixels;
        x0 = std::min(x0, px);
        x1 = std::max(x1, px);
        y0 = std::min(y0, py);
        y1 = std::max(y1, py);
        const int neighbors[4][2] = {
            {py - 1, px}, {py + 1, px}, {py, px - 1}, {py, px + 1}};
        for (const auto& n : neighbors) {
          if (n[0] < 0 || n[0] >= rows || n[1] < 0 || n[1] >= cols) continue;
          if (visited(n[0], n[1]) || cam.prob(n[0], n[1]) <= prob_threshold)
            continue;
          visited(n[0], n[1]) = 1;
          stack.emplace_back(n[0], n[1]);
        }
      }
      region.bbox = {x0, y0, x1, y1};
      region.area_fraction =
          static_cast<double>(pixels) / static_cast<double>(rows * cols);
      regions.push_back(std::move(region));
    }
  }
  return regions;
}

void write_pgm(const Matrix& grid, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out)
    throw Error(errc::io_failure, "cannot open " + path.string() + " for write");
  out << "P5\n" << grid.cols() << ' ' << grid.rows() << "\n255\n";
  for (Eigen::Index y = 0; y < grid.rows(); ++y)
    for (Eigen::Index x = 0; x < grid.cols(); ++x) {
      const double v = std::min(1.0, std::max(0.0, grid(y, x)));
      out.put(static_cast<char>(std::lround(v * 255.0)));
    }
  if (!out) throw Error(errc::io_failure, "short write to " + path.string());
}

}  // namespace weblabel
