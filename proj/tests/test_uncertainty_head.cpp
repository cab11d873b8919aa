#include <doctest.h>

#include <cmath>
#include <vector>

#include <weblabel/error.hpp>
#include <weblabel/numeric.hpp>
#include <weblabel/rng.hpp>
#include <weblabel/uncertainty_head.hpp>

#include "test_util.hpp"

using namespace weblabel;
using testutil::TempDir;

namespace {

HeadParams random_params(int k, int c, std::uint64_t seed, double scale = 1.0) {
  Rng rng(seed);
  HeadParams p = HeadParams::zeros(k, c);
  auto fill = [&](auto& block) {
    for (Eigen::Index i = 0; i < block.size(); ++i)
      block.data()[i] = scale * uniform(rng, -1.0, 1.0);
  };
  fill(p.score_weights);
  fill(p.score_bias);
  fill(p.unc_weights);
  fill(p.unc_bias);
  return p;
}

Vector random_gap(int c, std::uint64_t seed) {
  Rng rng(seed);
  Vector gap(c);
  for (int i = 0; i < c; ++i) gap[i] = uniform(rng, -1.0, 1.0);
  return gap;
}

Vector random_targets(int k, std::uint64_t seed) {
  Rng rng(seed);
  Vector t(k);
  for (int i = 0; i < k; ++i) t[i] = bounded(rng, 2) ? 1.0 : 0.0;
  return t;
}

// Manual HeadOutput at chosen logits and log-variances.
HeadOutput output_at(const Vector& logits, const Vector& log_var) {
  HeadOutput out;
  out.logits = logits;
  out.probs = logits.unaryExpr([](double z) { return sigmoid(z); });
  out.log_var = log_var;
  out.sigma2 = log_var.array().exp().matrix();
  return out;
}

double loss_from_params(const HeadParams& p, const Vector& gap,
                        const Vector& targets) {
  return loss(forward(p, gap), targets);
}

// Central finite differences over every parameter block.
HeadParams fd_gradients(const HeadParams& p, const Vector& gap,
                        const Vector& targets, double h) {
  HeadParams g = HeadParams::zeros(p.num_classes(), p.channels());
  auto probe = [&](double* param, double* grad) {
    const double saved = *param;
    *param = saved + h;
    const double up = loss_from_params(p, gap, targets);
    *param = saved - h;
    const double down = loss_from_params(p, gap, targets);
    *param = saved;
    *grad = (up - down) / (2.0 * h);
  };
  HeadParams& mutable_p = const_cast<HeadParams&>(p);
  for (Eigen::Index i = 0; i < p.score_weights.size(); ++i)
    probe(mutable_p.score_weights.data() + i, g.score_weights.data() + i);
  for (Eigen::Index i = 0; i < p.score_bias.size(); ++i)
    probe(mutable_p.score_bias.data() + i, g.score_bias.data() + i);
  for (Eigen::Index i = 0; i < p.unc_weights.size(); ++i)
    probe(mutable_p.unc_weights.data() + i, g.unc_weights.data() + i);
  for (Eigen::Index i = 0; i < p.unc_bias.size(); ++i)
    probe(mutable_p.unc_bias.data() + i, g.unc_bias.data() + i);
  return g;
}

double max_rel_err(const HeadParams& a, const HeadParams& b) {
  double worst = 0.0;
  auto scan = [&](const auto& x, const auto& y) {
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      const double ax = x.data()[i], by = y.data()[i];
      const double denom = std::max({1.0, std::abs(ax), std::abs(by)});
      worst = std::max(worst, std::abs(ax - by) / denom);
    }
  };
  scan(a.score_weights, b.score_weights);
  scan(a.score_bias, b.score_bias);
  scan(a.unc_weights, b.unc_weights);
  scan(a.unc_bias, b.unc_bias);
  return worst;
}

}  // namespace

TEST_SUITE("uncertainty_head") {

TEST_CASE("zero parameters give 0.5 probabilities and unit variance") {
  const HeadParams p = HeadParams::zeros(3, 4);
  const HeadOutput out = forward(p, random_gap(4, 1));
  for (int k = 0; k < 3; ++k) {
    CHECK(out.logits[k] == 0.0);
    CHECK(out.probs[k] == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(out.sigma2[k] == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("scalar head: w=2, b=0, gap=[1.5] gives logit 3") {
  HeadParams p = HeadParams::zeros(1, 1);
  p.score_weights(0, 0) = 2.0;
  Vector gap(1);
  gap << 1.5;
  CHECK(forward(p, gap).logits[0] == doctest::Approx(3.0).epsilon(1e-12));
}

TEST_CASE("forward matches a naive per-element loop") {
  const int K = 4, C = 7;
  const HeadParams p = random_params(K, C, 5);
  const Vector gap = random_gap(C, 6);
  const HeadOutput out = forward(p, gap);
  for (int k = 0; k < K; ++k) {
    double logit = p.score_bias[k], lv = p.unc_bias[k];
    for (int c = 0; c < C; ++c) {
      logit += p.score_weights(k, c) * gap[c];
      lv += p.unc_weights(k, c) * gap[c];
    }
    CHECK(out.logits[k] == doctest::Approx(logit).epsilon(1e-10));
    CHECK(out.log_var[k] == doctest::Approx(lv).epsilon(1e-10));
    CHECK(out.probs[k] == doctest::Approx(sigmoid(out.logits[k])).epsilon(1e-12));
    CHECK(out.sigma2[k] ==
          doctest::Approx(std::exp(out.log_var[k])).epsilon(1e-12));
  }
}

TEST_CASE("forward rejects a wrong gap length") {
  try {
    forward(HeadParams::zeros(2, 5), random_gap(4, 7));
    FAIL("expected ShapeMismatch");
  } catch (const Error& e) {
    CHECK(e.code() == errc::shape_mismatch);
  }
}

TEST_CASE("with unit variance the loss is half the summed BCE") {
  const int K = 5;
  Rng rng(8);
  Vector logits(K), zeros = Vector::Zero(K);
  for (int k = 0; k < K; ++k) logits[k] = uniform(rng, -3.0, 3.0);
  const Vector targets = random_targets(K, 9);

  double bce_sum = 0.0;
  for (int k = 0; k < K; ++k)
    bce_sum += bce_with_logits(logits[k], targets[k]);
  CHECK(loss(output_at(logits, zeros), targets) ==
        doctest::Approx(0.5 * bce_sum).epsilon(1e-12));
}

TEST_CASE("per-class optimum sits at sigma2 == bce") {
  // With frozen logits giving BCE = c, L(s) = e^{-s} c / 2 + s / 2 has its
  // minimum at s = log c, value (1 + log c) / 2. A grid search over s must
  // land there.
  for (double c : {0.1, 1.0, 5.0}) {
    // t=1 with sigmoid(z) = e^{-c} makes the BCE exactly c.
    const double z = std::log(std::exp(-c) / (1.0 - std::exp(-c)));
    Vector logits(1), targets(1);
    logits << z;
    targets << 1.0;
    REQUIRE(bce_with_logits(z, 1.0) == doctest::Approx(c).epsilon(1e-10));

    double best_s = 0.0, best_loss = 1e300;
    for (double s = -8.0; s <= 8.0; s += 1e-4) {
      Vector lv(1);
      lv << s;
      const double value = loss(output_at(logits, lv), targets);
      if (value < best_loss) {
        best_loss = value;
        best_s = s;
      }
    }
    CHECK(std::exp(best_s) == doctest::Approx(c).epsilon(1e-3));
    CHECK(best_loss ==
          doctest::Approx(0.5 + 0.5 * std::log(c)).epsilon(1e-6));
  }
}

TEST_CASE("with zero BCE the loss keeps falling as s drops") {
  Vector logits(1), targets(1);
  logits << 40.0;  // sigmoid saturates, BCE ~ 4e-18
  targets << 1.0;
  double previous = 1e300;
  for (double s : {2.0, 0.0, -2.0, -5.0, -10.0, -20.0}) {
    Vector lv(1);
    lv << s;
    const double value = loss(output_at(logits, lv), targets);
    CHECK(value < previous);
    previous = value;
  }
}

TEST_CASE("loss rejects non-binary targets") {
  Vector logits = Vector::Zero(2), lv = Vector::Zero(2), targets(2);
  targets << 1.0, 0.5;
  CHECK_THROWS_AS(loss(output_at(logits, lv), targets), Error);
}

TEST_CASE("uncertainty blocks have zero gradient at the s-optimum") {
  // Freeze the logits, place s_k = log BCE_k via the uncertainty bias; the
  // gradient of the s-subproblem vanishes there. (The score blocks do not:
  // the attenuated data term still pulls on them.)
  const int K = 3, C = 4;
  HeadParams p = random_params(K, C, 10);
  p.unc_weights.setZero();
  const Vector gap = random_gap(C, 11);
  const Vector targets = random_targets(K, 12);

  const HeadOutput probe = forward(p, gap);
  for (int k = 0; k < K; ++k)
    p.unc_bias[k] = std::log(bce_with_logits(probe.logits[k], targets[k]));

  const HeadParams g = gradients(p, gap, targets);
  CHECK(g.unc_bias.cwiseAbs().maxCoeff() < 1e-12);
  CHECK(g.unc_weights.cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("confident correct predictions leave no uncertainty gradient") {
  // All targets hit with saturated logits and s at its per-class optimum:
  // nothing pushes the predicted variance anywhere.
  const int K = 2, C = 3;
  HeadParams p = HeadParams::zeros(K, C);
  p.score_bias << 25.0, -25.0;
  const Vector gap = random_gap(C, 13);
  Vector targets(K);
  targets << 1.0, 0.0;

  const HeadOutput probe = forward(p, gap);
  for (int k = 0; k < K; ++k)
    p.unc_bias[k] = std::log(bce_with_logits(probe.logits[k], targets[k]));

  const HeadParams g = gradients(p, gap, targets);
  CHECK(g.unc_bias.cwiseAbs().maxCoeff() < 1e-6);
  CHECK(g.unc_weights.cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("analytic gradients match central finite differences") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const int K = 3, C = 5;
    const HeadParams p = random_params(K, C, 20 + seed);
    const Vector gap = random_gap(C, 30 + seed);
    const Vector targets = random_targets(K, 40 + seed);
    const HeadParams analytic = gradients(p, gap, targets);
    const HeadParams fd = fd_gradients(p, gap, targets, 1e-5);
    CHECK(max_rel_err(analytic, fd) < 1e-5);
  }
}

TEST_CASE("loss is invariant under class permutation") {
  const int K = 4, C = 3;
  const HeadParams p = random_params(K, C, 50);
  const Vector gap = random_gap(C, 51);
  const Vector targets = random_targets(K, 52);

  const int perm[4] = {2, 0, 3, 1};
  HeadParams q = HeadParams::zeros(K, C);
  Vector permuted_targets(K);
  for (int k = 0; k < K; ++k) {
    q.score_weights.row(k) = p.score_weights.row(perm[k]);
    q.score_bias[k] = p.score_bias[perm[k]];
    q.unc_weights.row(k) = p.unc_weights.row(perm[k]);
    q.unc_bias[k] = p.unc_bias[perm[k]];
    permuted_targets[k] = targets[perm[k]];
  }
  CHECK(loss_from_params(q, gap, permuted_targets) ==
        doctest::Approx(loss_from_params(p, gap, targets)).epsilon(1e-12));
}

TEST_CASE("separable classes train to low BCE") {
  Rng rng(60);
  const int per_class = 60, C = 4;
  TrainingSet data;
  data.gap.resize(2 * per_class, C);
  data.targets = Matrix::Zero(2 * per_class, 2);
  for (int i = 0; i < 2 * per_class; ++i) {
    const int cls = i % 2;
    Vector v = Vector::Zero(C);
    v[cls] = 1.0 + 0.2 * gaussian(rng);
    v[2] = 0.1 * gaussian(rng);
    v[3] = 0.1 * gaussian(rng);
    data.gap.row(i) = v.transpose();
    data.targets(i, cls) = 1.0;
  }

  TrainConfig config;
  config.epochs = 200;
  const TrainResult result = train(data, config);
  CHECK(mean_bce(result.params, data) < 0.1);
  CHECK(result.epoch_loss.size() == 200);
}

TEST_CASE("a single sample descends monotonically at small lr") {
  TrainingSet data;
  data.gap.resize(1, 3);
  data.gap << 0.5, -0.25, 1.0;
  data.targets.resize(1, 1);
  data.targets << 1.0;

  TrainConfig config;
  config.learning_rate = 0.01;
  config.epochs = 10;
  config.batch_size = 1;
  const TrainResult result = train(data, config);
  REQUIRE(result.epoch_loss.size() == 10);
  for (int i = 1; i < 10; ++i)
    CHECK(result.epoch_loss[i] < result.epoch_loss[i - 1]);
}

TEST_CASE("training replays bit-identically under one seed") {
  Rng rng(70);
  TrainingSet data;
  data.gap.resize(30, 5);
  data.targets = Matrix::Zero(30, 3);
  for (int i = 0; i < 30; ++i) {
    for (int c = 0; c < 5; ++c) data.gap(i, c) = gaussian(rng);
    data.targets(i, i % 3) = 1.0;
  }
  TrainConfig config;
  config.epochs = 20;
  const TrainResult a = train(data, config);
  const TrainResult b = train(data, config);
  CHECK((a.params.score_weights.array() == b.params.score_weights.array()).all());
  CHECK((a.params.score_bias.array() == b.params.score_bias.array()).all());
  CHECK((a.params.unc_weights.array() == b.params.unc_weights.array()).all());
  CHECK((a.params.unc_bias.array() == b.params.unc_bias.array()).all());
  CHECK(a.epoch_loss == b.epoch_loss);
}

TEST_CASE("an empty training set is rejected") {
  TrainingSet data;
  data.gap.resize(0, 4);
  data.targets.resize(0, 2);
  try {
    train(data, TrainConfig{});
    FAIL("expected EmptyDataset");
  } catch (const Error& e) {
    CHECK(e.code() == errc::empty_dataset);
  }
}

TEST_CASE("load_training_set pools features and one-hots labels") {
  TempDir dir;
  DatasetManifest m;
  m.classes = {"a", "b"};
  m.stage = Stage::curated;
  for (int i = 0; i < 2; ++i) {
    FeatureMap map = FeatureMap::zeros(2, 2, 3);
    map.values.setConstant(i + 1.0);
    map.at(0, 0, 0) = 5.0;
    save_feature_map(map, dir.file("s" + std::to_string(i) + ".vfm1"));
    SampleRecord r;
    r.id = "s" + std::to_string(i);
    r.query_class = i;
    r.rank = 0;
    r.feature_path = r.id + ".vfm1";
    r.labels = {i};
    m.samples.push_back(r);
  }

  const TrainingSet data = load_training_set(m, dir.file("m.jsonl"));
  REQUIRE(data.size() == 2);
  CHECK(data.gap(0, 0) == doctest::Approx((5.0 + 3 * 1.0) / 4));
  CHECK(data.gap(0, 1) == doctest::Approx(1.0));
  CHECK(data.gap(1, 1) == doctest::Approx(2.0));
  CHECK(data.targets(0, 0) == 1.0);
  CHECK(data.targets(0, 1) == 0.0);
  CHECK(data.targets(1, 0) == 0.0);
  CHECK(data.targets(1, 1) == 1.0);
}

TEST_CASE("predict is forward lifted through GAP") {
  const int K = 3, C = 4;
  const HeadParams p = random_params(K, C, 80);
  FeatureMap map = FeatureMap::zeros(3, 3, C);
  Rng rng(81);
  for (Eigen::Index i = 0; i < map.values.size(); ++i)
    map.values.data()[i] = uniform(rng, -2.0, 2.0);

  const HeadOutput via_map = predict(p, map);
  const HeadOutput via_gap = forward(p, global_average_pool(map));
  CHECK((via_map.logits - via_gap.logits).cwiseAbs().maxCoeff() == 0.0);
  CHECK((via_map.sigma2 - via_gap.sigma2).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("zero parameters score mean BCE of log 2") {
  TrainingSet data;
  data.gap.resize(4, 3);
  data.gap.setRandom();
  data.targets = Matrix::Zero(4, 2);
  data.targets(0, 0) = 1.0;
  data.targets(3, 1) = 1.0;
  CHECK(mean_bce(HeadParams::zeros(2, 3), data) ==
        doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("head parameters round-trip through VHP1") {
  TempDir dir;
  HeadParams p = random_params(4, 6, 90);
  // Snap to float so the 32-bit file round-trips exactly.
  auto snap = [](auto& block) {
    for (Eigen::Index i = 0; i < block.size(); ++i)
      block.data()[i] = static_cast<double>(static_cast<float>(block.data()[i]));
  };
  snap(p.score_weights);
  snap(p.score_bias);
  snap(p.unc_weights);
  snap(p.unc_bias);

  save_head_params(p, dir.file("h.vhp1"));
  const HeadParams back = load_head_params(dir.file("h.vhp1"));
  CHECK((back.score_weights.array() == p.score_weights.array()).all());
  CHECK((back.score_bias.array() == p.score_bias.array()).all());
  CHECK((back.unc_weights.array() == p.unc_weights.array()).all());
  CHECK((back.unc_bias.array() == p.unc_bias.array()).all());
}

TEST_CASE("VHP1 loader rejects corrupted files") {
  TempDir dir;
  HeadParams p = HeadParams::zeros(2, 3);
  save_head_params(p, dir.file("h.vhp1"));

  auto bytes = testutil::read_bytes(dir.file("h.vhp1"));
  bytes[0] = 'X';
  std::ofstream(dir.file("bad_magic.vhp1"), std::ios::binary)
      .write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  try {
    load_head_params(dir.file("bad_magic.vhp1"));
    FAIL("expected BadMagic");
  } catch (const Error& e) {
    CHECK(e.code() == errc::bad_magic);
  }

  bytes[0] = 'V';
  std::ofstream(dir.file("short.vhp1"), std::ios::binary)
      .write(bytes.data(), static_cast<std::streamsize>(bytes.size() - 4));
  try {
    load_head_params(dir.file("short.vhp1"));
    FAIL("expected DimensionMismatch");
  } catch (const Error& e) {
    CHECK(e.code() == errc::dimension_mismatch);
  }
}

TEST_CASE("loss trace lands on disk as CSV") {
  TempDir dir;
  write_loss_trace_csv({0.5, 0.25, 0.125}, dir.file("trace.csv"));
  const std::string text = testutil::read_text(dir.file("trace.csv"));
  CHECK(text.find("epoch,mean_loss") == 0);
  CHECK(text.find("0,0.5") != std::string::npos);
  CHECK(text.find("2,0.125") != std::string::npos);
}

}  // TEST_SUITE
