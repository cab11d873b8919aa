#include "weblabel/uncertainty_head.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <numeric>

#include "weblabel/error.hpp"
#include "weblabel/numeric.hpp"
#include "weblabel/rng.hpp"

namespace weblabel {

namespace {

constexpr char kMagic[4] = {'V', 'H', 'P', '1'};

void check_targets(const Vector& targets, int num_classes) {
  if (targets.size() != num_classes)
    throw Error(errc::shape_mismatch,
                "expected " + std::to_string(num_classes) + " targets, got " +
                    std::to_string(targets.size()));
  for (Eigen::Index k = 0; k < targets.size(); ++k)
    if (targets[k] != 0.0 && targets[k] != 1.0)
      throw Error(errc::bad_config, "targets must be 0 or 1");
}

void write_floats(std::ofstream& out, const double* data, std::size_t count) {
  std::vector<float> buffer(count);
  for (std::size_t i = 0; i < count; ++i)
    buffer[i] = static_cast<float>(data[i]);
  out.write(reinterpret_cast<const char*>(buffer.data()),
            static_cast<std::streamsize>(count * sizeof(float)));
}

void read_floats(std::ifstream& in, double* data, std::size_t count,
                 const std::string& path) {
  std::vector<float> buffer(count);
  in.read(reinterpret_cast<char*>(buffer.data()),
          static_cast<std::streamsize>(count * sizeof(float)));
  if (static_cast<std::size_t>(in.gcount()) != count * sizeof(float))
    throw Error(errc::dimension_mismatch, "truncated VHP1 file: " + path);
  for (std::size_t i = 0; i < count; ++i) {
    if (!std::isfinite(buffer[i]))
      throw Error(errc::non_finite_value, "non-finite parameter in " + path);
    data[i] = static_cast<double>(buffer[i]);
  }
}

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                               Eigen::RowMajor>;

}  // namespace

HeadParams HeadParams::zeros(int num_classes, int channels) {
  HeadParams p;
  p.score_weights = Matrix::Zero(num_classes, channels);
  p.score_bias = Vector::Zero(num_classes);
  p.unc_weights = Matrix::Zero(num_classes, channels);
  p.unc_bias = Vector::Zero(num_classes);
  return p;
}

HeadOutput forward(const HeadParams& params, const Vector& gap) {
  if (gap.size() != params.channels())
    throw Error(errc::shape_mismatch,
                "gap has " + std::to_string(gap.size()) + " channels, head expects " +
                    std::to_string(params.channels()));
  HeadOutput out;
  out.logits = params.score_weights * gap + params.score_bias;
  out.log_var = params.unc_weights * gap + params.unc_bias;
  out.probs = out.logits.unaryExpr([](double z) { return sigmoid(z); });
  out.sigma2 = out.log_var.array().exp();
  return out;
}

double loss(const HeadOutput& output, const Vector& targets) {
  check_targets(targets, static_cast<int>(output.logits.size()));
  double total = 0.0;
  for (Eigen::Index k = 0; k < output.logits.size(); ++k) {
    const double bce = bce_with_logits(output.logits[k], targets[k]);
    const double s = output.log_var[k];
    total += 0.5 * std::exp(-s) * bce + 0.5 * s;
  }
  return total;
}

HeadParams gradients(const HeadParams& params, const Vector& gap,
                     const Vector& targets) {
  const HeadOutput out = forward(params, gap);
  check_targets(targets, params.num_classes());

  const Eigen::Index num_classes = params.num_classes();
  Vector dlogits(num_classes);
  Vector dlogvar(num_classes);
  for (Eigen::Index k = 0; k < num_classes; ++k) {
    const double attenuation = 0.5 * std::exp(-out.log_var[k]);
    const double bce = bce_with_logits(out.logits[k], targets[k]);
    dlogits[k] = attenuation * (out.probs[k] - targets[k]);
    dlogvar[k] = 0.5 - attenuation * bce;
  }

  HeadParams grad;
  grad.score_weights = dlogits * gap.transpose();
  grad.score_bias = dlogits;
  grad.unc_weights = dlogvar * gap.transpose();
  grad.unc_bias = dlogvar;
  return grad;
}

TrainingSet load_training_set(const DatasetManifest& manifest,
                              const std::filesystem::path& manifest_path) {
  if (manifest.samples.empty())
    throw Error(errc::empty_dataset, "manifest has no samples");
  const int num_classes = manifest.num_classes();

  TrainingSet data;
  data.targets = Matrix::Zero(manifest.samples.size(), num_classes);
  for (std::size_t i = 0; i < manifest.samples.size(); ++i) {
    const SampleRecord& sample = manifest.samples[i];
    FeatureMap map;
    try {
      map = load_feature_map(
          resolve_feature_path(manifest_path, sample.feature_path));
    } catch (const Error& e) {
      throw Error(e.code(), "sample " + sample.id + ": " + e.what());
    }
    const Vector gap = global_average_pool(map);
    if (i == 0) data.gap.resize(manifest.samples.size(), gap.size());
    if (gap.size() != data.gap.cols())
      throw Error(errc::shape_mismatch,
                  "sample " + sample.id + ": channel count mismatch");
    data.gap.row(i) = gap.transpose();
    for (int label : sample.labels) data.targets(i, label) = 1.0;
  }
  return data;
}

TrainResult train(const TrainingSet& data, const TrainConfig& config) {
  validate(config);
  if (data.size() == 0)
    throw Error(errc::empty_dataset, "no training samples");
  const int num_classes = static_cast<int>(data.targets.cols());
  const int channels = static_cast<int>(data.gap.cols());

  Rng rng(derive_seed(config.seed, 0x1eaf));
  HeadParams params = HeadParams::zeros(num_classes, channels);
  const double a = config.weight_init_scale / std::sqrt(double(channels));
  for (int k = 0; k < num_classes; ++k)
    for (int c = 0; c < channels; ++c)
      params.score_weights(k, c) = uniform(rng, -a, a);
  for (int k = 0; k < num_classes; ++k)
    for (int c = 0; c < channels; ++c)
      params.unc_weights(k, c) = uniform(rng, -a, a);
  params.unc_bias.setConstant(config.log_var_init);

  std::vector<std::size_t> order(static_cast<std::size_t>(data.size()));
  std::iota(order.begin(), order.end(), std::size_t{0});

  TrainResult result;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    Rng epoch_rng(derive_seed(config.seed, 0x5f1e, epoch));
    shuffle(order, epoch_rng);

    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size();
         start += config.batch_size) {
      const std::size_t end =
          std::min(order.size(), start + config.batch_size);
      HeadParams grad = HeadParams::zeros(num_classes, channels);
      double batch_loss = 0.0;
      for (std::size_t i = start; i < end; ++i) {
        const Vector gap = data.gap.row(order[i]).transpose();
        const Vector targets = data.targets.row(order[i]).transpose();
        const HeadOutput out = forward(params, gap);
        batch_loss += loss(out, targets);
        const HeadParams g = gradients(params, gap, targets);
        grad.score_weights += g.score_weights;
        grad.score_bias += g.score_bias;
        grad.unc_weights += g.unc_weights;
        grad.unc_bias += g.unc_bias;
      }
      const double inv = 1.0 / static_cast<double>(end - start);
      params.score_weights -= config.learning_rate * inv * grad.score_weights;
      params.score_bias -= config.learning_rate * inv * grad.score_bias;
      params.unc_weights -= config.learning_rate * inv * grad.unc_weights;
      params.unc_bias -= config.learning_rate * inv * grad.unc_bias;
      epoch_loss += batch_loss;
    }
    result.epoch_loss.push_back(epoch_loss /
                                static_cast<double>(order.size()));
  }
  result.params = std::move(params);
  return result;
}

HeadOutput predict(const HeadParams& params, const FeatureMap& map) {
  if (map.channels() != params.channels())
    throw Error(errc::shape_mismatch,
                "feature map has " + std::to_string(map.channels()) +
                    " channels, head expects " +
                    std::to_string(params.channels()));
  return forward(params, global_average_pool(map));
}

double mean_bce(const HeadParams& params, const TrainingSet& data) {
  if (data.size() == 0)
    throw Error(errc::empty_dataset, "no samples");
  double total = 0.0;
  for (Eigen::Index i = 0; i < data.size(); ++i) {
    const Vector logits =
        params.score_weights * data.gap.row(i).transpose() + params.score_bias;
    for (Eigen::Index k = 0; k < logits.size(); ++k)
      total += bce_with_logits(logits[k], data.targets(i, k));
  }
  return total / static_cast<double>(data.size() * data.targets.cols());
}

void save_head_params(const HeadParams& params,
                      const std::filesystem::path& path) {
  const int num_classes = params.num_classes();
  const int channels = params.channels();
  if (params.unc_weights.rows() != num_classes ||
      params.unc_weights.cols() != channels ||
      params.score_bias.size() != num_classes ||
      params.unc_bias.size() != num_classes)
    throw Error(errc::shape_mismatch, "parameter blocks disagree on shape");
  if (!params.score_weights.allFinite() || !params.score_bias.allFinite() ||
      !params.unc_weights.allFinite() || !params.unc_bias.allFinite())
    throw Error(errc::non_finite_value, "parameters hold non-finite values");

  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out)
      throw Error(errc::io_failure,
                  "cannot open " + tmp.string() + " for write");
    out.write(kMagic, 4);
    const std::uint32_t dims[2] = {static_cast<std::uint32_t>(num_classes),
                                   static_cast<std::uint32_t>(channels)};
    out.write(reinterpret_cast<const char*>(dims), sizeof(dims));

    const RowMajor sw = params.score_weights;
    const RowMajor uw = params.unc_weights;
    write_floats(out, sw.data(), sw.size());
    write_floats(out, params.score_bias.data(), num_classes);
    write_floats(out, uw.data(), uw.size());
    write_floats(out, params.unc_bias.data(), num_classes);
    if (!out) throw Error(errc::io_failure, "short write to " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec)
    throw Error(errc::io_failure,
                "cannot move " + tmp.string() + " into place: " + ec.message());
}

HeadParams load_head_params(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(errc::io_failure, "cannot open " + path.string());

  char magic[4] = {};
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0)
    throw Error(errc::bad_magic, "not a VHP1 file: " + path.string());

  std::uint32_t dims[2] = {};
  in.read(reinterpret_cast<char*>(dims), sizeof(dims));
  if (!in || dims[0] == 0 || dims[1] == 0)
    throw Error(errc::dimension_mismatch, "bad VHP1 header: " + path.string());
  const int num_classes = static_cast<int>(dims[0]);
  const int channels = static_cast<int>(dims[1]);

  RowMajor sw(num_classes, channels), uw(num_classes, channels);
  HeadParams params;
  params.score_bias.resize(num_classes);
  params.unc_bias.resize(num_classes);
  read_floats(in, sw.data(), sw.size(), path.string());
  read_floats(in, params.score_bias.data(), num_classes, path.string());
  read_floats(in, uw.data(), uw.size(), path.string());
  read_floats(in, params.unc_bias.data(), num_classes, path.string());
  if (in.peek() != std::ifstream::traits_type::eof())
    throw Error(errc::dimension_mismatch,
                "trailing bytes in " + path.string());
  params.score_weights = sw;
  params.unc_weights = uw;
  return params;
}

void write_loss_trace_csv(const std::vector<double>& epoch_loss,
                          const std::filesystem::path& path) {
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out)
      throw Error(errc::io_failure,
                  "cannot open " + tmp.string() + " for write");
    out << "epoch,mean_loss\n";
    for (std::size_t i = 0; i < epoch_loss.size(); ++i)
      out << i << ',' << std::setprecision(17) << epoch_loss[i] << '\n';
    if (!out) throw Error(errc::io_failure, "short write to " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec)
    throw Error(errc::io_failure,
                "cannot move " + tmp.string() + " into place: " + ec.message());
}

}  // namespace weblabel
