#include <doctest.h>

#include <cmath>
#include <vector>

#include <weblabel/cam_engine.hpp>
#include <weblabel/error.hpp>
#include <weblabel/rng.hpp>

#include "test_util.hpp"

using namespace weblabel;
using testutil::TempDir;

namespace {

FeatureMap random_map(int h, int w, int c, std::uint64_t seed) {
  FeatureMap map = FeatureMap::zeros(h, w, c);
  Rng rng(seed);
  for (Eigen::Index i = 0; i < map.values.size(); ++i)
    map.values.data()[i] = uniform(rng, -2.0, 2.0);
  return map;
}

HeadParams random_head(int k, int c, std::uint64_t seed) {
  Rng rng(seed);
  HeadParams p = HeadParams::zeros(k, c);
  for (Eigen::Index i = 0; i < p.score_weights.size(); ++i)
    p.score_weights.data()[i] = uniform(rng, -1.0, 1.0);
  for (int i = 0; i < k; ++i) p.score_bias[i] = uniform(rng, -1.0, 1.0);
  return p;
}

ClassActivationMap prob_only(const Matrix& prob, double score = 1.0) {
  ClassActivationMap cam;
  cam.class_index = 0;
  cam.prob = prob;
  cam.score = score;
  return cam;
}

CamOptions small_options(int output_size) {
  CamOptions o;
  o.output_size = output_size;
  o.intermediate_resize = output_size;  // keep tests on the direct path
  o.two_step_resize = false;
  return o;
}

}  // namespace

TEST_SUITE("cam_engine") {

TEST_CASE("zero weights score exactly the bias") {
  HeadParams p = HeadParams::zeros(3, 5);
  p.score_bias << -1.0, 0.25, 7.0;
  const Vector s = compute_scores(p, random_map(4, 4, 5, 1));
  CHECK(s[0] == -1.0);
  CHECK(s[1] == 0.25);
  CHECK(s[2] == 7.0);
}

TEST_CASE("a 1x1 map collapses the double sum to a dot product") {
  const int C = 6;
  const HeadParams p = random_head(2, C, 2);
  const FeatureMap map = random_map(1, 1, C, 3);
  const Vector s = compute_scores(p, map);
  for (int k = 0; k < 2; ++k) {
    const double expected =
        p.score_weights.row(k).dot(map.values.row(0)) + p.score_bias[k];
    CHECK(s[k] == doctest::Approx(expected).epsilon(1e-12));
  }
}

TEST_CASE("scores match the GAP path") {
  const HeadParams p = random_head(4, 8, 4);
  const FeatureMap map = random_map(7, 7, 8, 5);
  const Vector s = compute_scores(p, map);
  const Vector gap = global_average_pool(map);
  for (int k = 0; k < 4; ++k) {
    const double expected =
        49.0 * p.score_weights.row(k).dot(gap) + p.score_bias[k];
    CHECK(s[k] == doctest::Approx(expected).epsilon(1e-8));
  }
}

TEST_CASE("scores reject mismatched channel counts") {
  try {
    compute_scores(random_head(2, 4, 6), random_map(2, 2, 5, 7));
    FAIL("expected ShapeMismatch");
  } catch (const Error& e) {
    CHECK(e.code() == errc::shape_mismatch);
  }
}

TEST_CASE("zero weights give an all-zero raw cam") {
  HeadParams p = HeadParams::zeros(2, 4);
  p.score_bias << 0.5, -0.5;
  const ClassActivationMap cam =
      compute_cam(p, random_map(5, 3, 4, 8), 0, small_options(10));
  CHECK(cam.raw.cwiseAbs().maxCoeff() == 0.0);
  CHECK(cam.raw.rows() == 5);
  CHECK(cam.raw.cols() == 3);
}

TEST_CASE("identity weights on one channel reproduce the feature slice") {
  HeadParams p = HeadParams::zeros(1, 1);
  p.score_weights(0, 0) = 1.0;
  const FeatureMap map = random_map(4, 6, 1, 9);
  const ClassActivationMap cam = compute_cam(p, map, 0, small_options(12));
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 6; ++x)
      CHECK(cam.raw(y, x) == doctest::Approx(map.at(y, x, 0)).epsilon(1e-12));
}

TEST_CASE("the raw cam sums to score minus bias") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const HeadParams p = random_head(3, 6, 100 + seed);
    const FeatureMap map = random_map(5, 7, 6, 200 + seed);
    for (int k = 0; k < 3; ++k) {
      const ClassActivationMap cam = compute_cam(p, map, k, small_options(8));
      const double lhs = cam.raw.sum();
      const double rhs = cam.score - p.score_bias[k];
      CHECK(std::abs(lhs - rhs) < 1e-6 * std::max(1.0, std::abs(cam.score)));
    }
  }
}

TEST_CASE("cam probabilities stay strictly inside (0,1)") {
  HeadParams p = random_head(1, 3, 10);
  p.score_weights *= 50.0;  // drive the sigmoid deep into saturation
  const ClassActivationMap cam =
      compute_cam(p, random_map(7, 7, 3, 11), 0, small_options(32));
  CHECK(cam.prob.minCoeff() > 0.0);
  CHECK(cam.prob.maxCoeff() < 1.0);
  CHECK(cam.prob.rows() == 32);
  CHECK(cam.prob.cols() == 32);
}

TEST_CASE("a constant map gives sigmoid of score spread over pixels") {
  // With a constant raw field r the upsample is exact, so every output
  // pixel is sigmoid(r + bias/(H*W)).
  HeadParams p = HeadParams::zeros(1, 2);
  p.score_weights << 0.5, -0.25;
  p.score_bias << 0.7;
  FeatureMap map = FeatureMap::zeros(3, 3, 2);
  map.values.col(0).setConstant(2.0);
  map.values.col(1).setConstant(1.0);

  CamOptions options = small_options(9);
  const ClassActivationMap cam = compute_cam(p, map, 0, options);
  const double raw = 0.5 * 2.0 - 0.25 * 1.0;
  const double expected = 1.0 / (1.0 + std::exp(-(raw + 0.7 / 9.0)));
  CHECK(cam.prob.minCoeff() == doctest::Approx(expected).epsilon(1e-9));
  CHECK(cam.prob.maxCoeff() == doctest::Approx(expected).epsilon(1e-9));
}

TEST_CASE("scaling class weights scales the raw cam and keeps the argmax") {
  const HeadParams p = random_head(1, 5, 12);
  const FeatureMap map = random_map(6, 6, 5, 13);
  HeadParams scaled = p;
  const double lambda = 3.5;
  scaled.score_weights *= lambda;

  const ClassActivationMap a = compute_cam(p, map, 0, small_options(6));
  const ClassActivationMap b = compute_cam(scaled, map, 0, small_options(6));
  CHECK((b.raw - lambda * a.raw).cwiseAbs().maxCoeff() < 1e-9);

  Eigen::Index ay, ax, by, bx;
  a.raw.maxCoeff(&ay, &ax);
  b.raw.maxCoeff(&by, &bx);
  CHECK(ay == by);
  CHECK(ax == bx);
}

TEST_CASE("resizing a constant grid changes nothing") {
  const Matrix grid = Matrix::Constant(4, 5, 3.25);
  const Matrix out = bilinear_resize(grid, 17, 23);
  CHECK(out.rows() == 17);
  CHECK(out.cols() == 23);
  CHECK((out.array() - 3.25).abs().maxCoeff() < 1e-12);
}

TEST_CASE("2x2 to 3x3 interpolates the midpoints") {
  Matrix grid(2, 2);
  grid << 0, 2, 2, 4;
  const Matrix out = bilinear_resize(grid, 3, 3);
  Matrix expected(3, 3);
  expected << 0, 1, 2, 1, 2, 3, 2, 3, 4;
  CHECK((out - expected).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(out(1, 1) == doctest::Approx(2.0));
}

TEST_CASE("corners survive any resize") {
  Rng rng(14);
  Matrix grid(5, 4);
  for (int y = 0; y < 5; ++y)
    for (int x = 0; x < 4; ++x) grid(y, x) = uniform(rng, -3.0, 3.0);
  const Matrix out = bilinear_resize(grid, 31, 17);
  CHECK(out(0, 0) == doctest::Approx(grid(0, 0)));
  CHECK(out(0, 16) == doctest::Approx(grid(0, 3)));
  CHECK(out(30, 0) == doctest::Approx(grid(4, 0)));
  CHECK(out(30, 16) == doctest::Approx(grid(4, 3)));
}

TEST_CASE("same-size resize is the identity") {
  Rng rng(15);
  Matrix grid(6, 7);
  for (int y = 0; y < 6; ++y)
    for (int x = 0; x < 7; ++x) grid(y, x) = uniform(rng, -1.0, 1.0);
  const Matrix out = bilinear_resize(grid, 6, 7);
  CHECK((out - grid).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("two-step upsampling tracks the direct path") {
  Rng rng(16);
  Matrix grid(7, 7);
  for (int y = 0; y < 7; ++y)
    for (int x = 0; x < 7; ++x) grid(y, x) = uniform(rng, -1.0, 1.0);

  const Matrix two_step =
      bilinear_resize(bilinear_resize(grid, 63, 63), 224, 224);
  const Matrix direct = bilinear_resize(grid, 224, 224);
  const double spread = grid.maxCoeff() - grid.minCoeff();
  CHECK((two_step - direct).cwiseAbs().maxCoeff() < 0.05 * spread);
}

TEST_CASE("resize keeps monotone ramps monotone") {
  Matrix ramp(1, 7);
  ramp << 0, 1, 2, 4, 4.5, 8, 16;
  const Matrix out = bilinear_resize(ramp, 1, 50);
  for (int x = 1; x < 50; ++x) CHECK(out(0, x) >= out(0, x - 1));

  // Degenerate single-row/column inputs broadcast their value.
  Matrix dot(1, 1);
  dot << 5.0;
  const Matrix blown = bilinear_resize(dot, 4, 4);
  CHECK((blown.array() - 5.0).abs().maxCoeff() == 0.0);
}

TEST_CASE("a uniformly hot grid is one full-frame region") {
  const ClassActivationMap cam = prob_only(Matrix::Constant(10, 10, 0.9), 2.5);
  const auto regions = extract_regions(cam, 0.5);
  REQUIRE(regions.size() == 1);
  CHECK(regions[0].area_fraction == doctest::Approx(1.0));
  CHECK(regions[0].bbox == std::array<int, 4>{0, 0, 9, 9});
  CHECK(regions[0].score == 2.5);
  CHECK(regions[0].class_index == 0);
}

TEST_CASE("a uniformly cold grid has no regions") {
  const ClassActivationMap cam = prob_only(Matrix::Constant(10, 10, 0.1));
  CHECK(extract_regions(cam, 0.5).empty());
}

TEST_CASE("threshold is strict: prob equal to T_p does not fire") {
  const ClassActivationMap cam = prob_only(Matrix::Constant(4, 4, 0.5));
  CHECK(extract_regions(cam, 0.5).empty());
}

TEST_CASE("two disjoint blobs come out as two regions") {
  Matrix prob = Matrix::Constant(20, 20, 0.0);
  prob.block(2, 3, 3, 3).setConstant(0.9);    // y 2..4, x 3..5
  prob.block(10, 14, 3, 3).setConstant(0.9);  // y 10..12, x 14..16
  const auto regions = extract_regions(prob_only(prob), 0.5);
  REQUIRE(regions.size() == 2);
  // Scan order: the blob whose first pixel comes first.
  CHECK(regions[0].bbox == std::array<int, 4>{3, 2, 5, 4});
  CHECK(regions[1].bbox == std::array<int, 4>{14, 10, 16, 12});
  for (const auto& r : regions) {
    CHECK(r.area_fraction == doctest::Approx(9.0 / 400.0));
    CHECK(r.mask.cast<int>().sum() == 9);
  }
}

TEST_CASE("diagonal contact does not merge regions") {
  Matrix prob = Matrix::Constant(6, 6, 0.0);
  prob(1, 1) = 0.9;
  prob(2, 2) = 0.9;  // touches only diagonally
  CHECK(extract_regions(prob_only(prob), 0.5).size() == 2);
}

TEST_CASE("region masks partition the thresholded set") {
  Rng rng(17);
  Matrix prob(15, 15);
  for (int y = 0; y < 15; ++y)
    for (int x = 0; x < 15; ++x) prob(y, x) = uniform01(rng);
  const auto regions = extract_regions(prob_only(prob), 0.5);

  MaskGrid unionized = MaskGrid::Zero(15, 15);
  int total = 0;
  for (const auto& r : regions) {
    for (int y = 0; y < 15; ++y)
      for (int x = 0; x < 15; ++x)
        if (r.mask(y, x)) {
          CHECK(unionized(y, x) == 0);  // pairwise disjoint
          unionized(y, x) = 1;
          ++total;
        }
  }
  int expected = 0;
  for (int y = 0; y < 15; ++y)
    for (int x = 0; x < 15; ++x) {
      if (prob(y, x) > 0.5) ++expected;
      CHECK(static_cast<bool>(unionized(y, x)) == (prob(y, x) > 0.5));
    }
  CHECK(total == expected);
}

TEST_CASE("region bboxes are tight") {
  Matrix prob = Matrix::Constant(8, 8, 0.0);
  prob(3, 2) = 0.9;
  prob(3, 3) = 0.9;
  prob(4, 3) = 0.9;  // L-shaped component
  const auto regions = extract_regions(prob_only(prob), 0.5);
  REQUIRE(regions.size() == 1);
  CHECK(regions[0].bbox == std::array<int, 4>{2, 3, 3, 4});
  CHECK(regions[0].mask.cast<int>().sum() == 3);
}

TEST_CASE("pgm dumps carry the header and scaled bytes") {
  TempDir dir;
  Matrix grid(2, 2);
  grid << 0.0, 1.0, 0.5, 2.0;  // 2.0 clamps to 1
  write_pgm(grid, dir.file("g.pgm"));
  const auto bytes = testutil::read_bytes(dir.file("g.pgm"));
  const std::string header(bytes.begin(), bytes.begin() + 9);
  CHECK(header == "P5\n2 2\n25");
  REQUIRE(bytes.size() == 11 + 4);
  CHECK(static_cast<unsigned char>(bytes[11]) == 0);
  CHECK(static_cast<unsigned char>(bytes[12]) == 255);
  CHECK(static_cast<unsigned char>(bytes[13]) == 128);  // lround(127.5)
  CHECK(static_cast<unsigned char>(bytes[14]) == 255);
}

}  // TEST_SUITE
