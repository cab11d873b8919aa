#include "weblabel/eval_harness.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <set>
#include <sstream>

#include <json.hpp>

#include "weblabel/error.hpp"
#include "weblabel/feature_map.hpp"
#include "weblabel/parallel.hpp"
#include "weblabel/rng.hpp"

namespace weblabel {

namespace {

using nlohmann::json;

// Peak channel activation of a planted signal; everything else scales off it.
constexpr double kSignalPeak = 3.0;
constexpr double kBackgroundSigma = 0.01 * kSignalPeak;
constexpr double kAmpJitterLo = 0.7;
constexpr double kAmpJitterHi = 1.3;
constexpr double kDegradedLo = 0.15;
constexpr double kDegradedHi = 0.35;

constexpr std::uint64_t kRolesTag = 0xa110c;
constexpr std::uint64_t kCurationTag = 0x5e7c;
constexpr std::uint64_t kMultiTag = 0x5e7d;

std::string zero_pad(int value, int width) {
  std::ostringstream out;
  out << std::setw(width) << std::setfill('0') << value;
  return out.str();
}

std::string sample_id(int class_index, int index) {
  return "c" + zero_pad(class_index, 2) + "_s" + zero_pad(index, 4);
}

int bundle_size(const SyntheticSpec& spec) {
  if (spec.channels < spec.num_classes)
    throw Error(errc::bad_config,
                "need at least one channel per class, got " +
                    std::to_string(spec.channels) + " channels for " +
                    std::to_string(spec.num_classes) + " classes");
  return spec.channels / spec.num_classes;
}

FeatureMap background_map(const SyntheticSpec& spec, Rng& rng) {
  FeatureMap map = FeatureMap::zeros(spec.grid_height, spec.grid_width,
                                     spec.channels);
  for (Eigen::Index p = 0; p < map.values.rows(); ++p)
    for (Eigen::Index c = 0; c < map.values.cols(); ++c)
      map.values(p, c) = kBackgroundSigma * gaussian(rng);
  return map;
}

// One spatially coherent class instance: a shared gaussian bump across the
// class's channel bundle, with small per-channel amplitude jitter.
void add_blob(FeatureMap& map, const SyntheticSpec& spec, int class_index,
              double cy, double cx, double peak, Rng& rng) {
  const int width = bundle_size(spec);
  const int first = class_index * width;
  const double sigma =
      spec.blob_spread * std::max(spec.grid_height, spec.grid_width);
  const double inv = 1.0 / (2.0 * sigma * sigma);
  for (int c = first; c < first + width; ++c) {
    const double amp = peak * (0.9 + 0.2 * uniform01(rng));
    for (int y = 0; y < spec.grid_height; ++y)
      for (int x = 0; x < spec.grid_width; ++x) {
        const double d2 = (y - cy) * (y - cy) + (x - cx) * (x - cx);
        map.values(static_cast<Eigen::Index>(y) * spec.grid_width + x, c) +=
            amp * std::exp(-d2 * inv);
      }
  }
}

std::vector<std::string> class_names(int num_classes) {
  std::vector<std::string> names(static_cast<std::size_t>(num_classes));
  for (int k = 0; k < num_classes; ++k)
    names[static_cast<std::size_t>(k)] = "class_" + zero_pad(k, 2);
  return names;
}

std::map<std::string, std::string> synth_provenance(const SyntheticSpec& spec,
                                                    const char* generator) {
  std::map<std::string, std::string> prov;
  prov["synth.generator"] = generator;
  prov["synth.num_classes"] = std::to_string(spec.num_classes);
  prov["synth.channels"] = std::to_string(spec.channels);
  prov["synth.samples_per_class"] = std::to_string(spec.samples_per_class);
  prov["synth.noise_fraction"] = std::to_string(spec.noise_fraction);
  prov["synth.blob_spread"] = std::to_string(spec.blob_spread);
  prov["synth.multilabel_fraction"] =
      std::to_string(spec.multilabel_fraction);
  prov["synth.grid_height"] = std::to_string(spec.grid_height);
  prov["synth.grid_width"] = std::to_string(spec.grid_width);
  prov["synth.seed"] = std::to_string(spec.seed);
  return prov;
}

int round_count(double fraction, int n) {
  return static_cast<int>(std::lround(fraction * n));
}

}  // namespace

void save_ground_truth(const GroundTruth& truth,
                       const std::filesystem::path& path) {
  json doc;
  doc["classes"] = truth.classes;
  doc["labels"] = json::object();
  for (const auto& [id, labels] : truth.labels) doc["labels"][id] = labels;

  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out)
      throw Error(errc::io_failure,
                  "cannot open " + tmp.string() + " for write");
    out << doc.dump(2) << '\n';
    if (!out) throw Error(errc::io_failure, "short write to " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec)
    throw Error(errc::io_failure,
                "cannot move " + tmp.string() + " into place: " + ec.message());
}

GroundTruth load_ground_truth(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(errc::io_failure, "cannot open " + path.string());
  json doc;
  try {
    in >> doc;
  } catch (const json::exception& e) {
    throw Error(errc::parse_error, path.string() + ": " + e.what());
  }
  GroundTruth truth;
  try {
    truth.classes = doc.at("classes").get<std::vector<std::string>>();
    for (const auto& [id, labels] : doc.at("labels").items()) {
      auto values = labels.get<std::vector<int>>();
      std::sort(values.begin(), values.end());
      truth.labels[id] = std::move(values);
    }
  } catch (const json::exception& e) {
    throw Error(errc::parse_error, path.string() + ": " + e.what());
  }
  const int k = static_cast<int>(truth.classes.size());
  for (const auto& [id, labels] : truth.labels)
    for (int label : labels)
      if (label < 0 || label >= k)
        throw Error(errc::unknown_class_name,
                    "truth label " + std::to_string(label) +
                        " out of range for sample " + id);
  return truth;
}

SynthOutput generate_curation_set(const SyntheticSpec& spec,
                                  const std::filesystem::path& out_dir,
                                  int threads) {
  validate(spec);
  bundle_size(spec);
  if (spec.noise_fraction > 0.0 && spec.num_classes < 2)
    throw Error(errc::bad_config,
                "off-class noise needs at least two classes");
  if (spec.grid_height < 3 || spec.grid_width < 3)
    throw Error(errc::bad_config, "curation grids must be at least 3x3");
  std::filesystem::create_directories(out_dir / "features");

  const int n = spec.samples_per_class;
  const int num_noise = round_count(spec.noise_fraction, n);
  // "First retrieved" window: these ranks stay reliable.
  const int low_ranks = std::max(1, n / 20);

  // true_class[k][i], decided up front so generation can run in parallel.
  std::vector<std::vector<int>> true_class(
      static_cast<std::size_t>(spec.num_classes));
  for (int k = 0; k < spec.num_classes; ++k) {
    auto& truth_k = true_class[static_cast<std::size_t>(k)];
    truth_k.assign(static_cast<std::size_t>(n), k);
    Rng roles(derive_seed(spec.seed, kRolesTag, static_cast<std::uint64_t>(k)));
    std::vector<int> noisy;
    int placed = 0;
    for (int i = 0; i < low_ranks && i < n; ++i)
      if (placed < num_noise && uniform01(roles) < 0.05) {
        noisy.push_back(i);
        ++placed;
      }
    std::vector<int> high(static_cast<std::size_t>(std::max(0, n - low_ranks)));
    std::iota(high.begin(), high.end(), low_ranks);
    shuffle(high, roles);
    for (int i : high) {
      if (placed >= num_noise) break;
      noisy.push_back(i);
      ++placed;
    }
    for (int i : noisy) {
      int other = static_cast<int>(bounded(roles, spec.num_classes - 1));
      if (other >= k) ++other;
      truth_k[static_cast<std::size_t>(i)] = other;
    }
  }

  SynthOutput out;
  out.manifest.classes = class_names(spec.num_classes);
  out.manifest.stage = Stage::raw;
  out.manifest.provenance = synth_provenance(spec, "curation");
  out.manifest.samples.resize(static_cast<std::size_t>(spec.num_classes) * n);

  const auto total = static_cast<std::size_t>(spec.num_classes) * n;
  parallel_for(total, threads, [&](std::size_t idx) {
    const int k = static_cast<int>(idx) / n;
    const int i = static_cast<int>(idx) % n;
    Rng rng(derive_seed(spec.seed, kCurationTag, idx));

    FeatureMap map = background_map(spec, rng);
    const int truth_k = true_class[static_cast<std::size_t>(k)]
                                  [static_cast<std::size_t>(i)];
    const double cy = uniform(rng, 1.0, spec.grid_height - 2.0);
    const double cx = uniform(rng, 1.0, spec.grid_width - 2.0);
    const double peak =
        kSignalPeak * uniform(rng, kAmpJitterLo, kAmpJitterHi);
    add_blob(map, spec, truth_k, cy, cx, peak, rng);

    SampleRecord& sample = out.manifest.samples[idx];
    sample.id = sample_id(k, i);
    sample.query_class = k;
    sample.rank = i;
    sample.feature_path = "features/" + sample.id + ".vfm";
    sample.labels = {k};
    save_feature_map(map, out_dir / sample.feature_path);
  });

  for (std::size_t idx = 0; idx < total; ++idx) {
    const int k = static_cast<int>(idx) / n;
    const int i = static_cast<int>(idx) % n;
    out.truth.labels[out.manifest.samples[idx].id] = {
        true_class[static_cast<std::size_t>(k)][static_cast<std::size_t>(i)]};
  }
  out.truth.classes = out.manifest.classes;
  return out;
}

SynthOutput generate_multilabel_maps(const SyntheticSpec& spec,
                                     const std::filesystem::path& out_dir,
                                     int threads) {
  validate(spec);
  bundle_size(spec);
  if (spec.multilabel_fraction > 0.0 && spec.num_classes < 2)
    throw Error(errc::bad_config, "second labels need at least two classes");
  if (spec.grid_height < 3 || spec.grid_width < 5)
    throw Error(errc::bad_config,
                "half layout needs grids of at least 3x5");
  std::filesystem::create_directories(out_dir / "features");

  const int n = spec.samples_per_class;
  const int num_second = round_count(spec.multilabel_fraction, n);
  const int num_degraded = round_count(spec.noise_fraction, n);
  if (num_second + num_degraded > n)
    throw Error(errc::bad_config,
                "multilabel_fraction + noise_fraction exceed the class size");

  enum class Role { clean, second, degraded };
  std::vector<std::vector<Role>> roles(
      static_cast<std::size_t>(spec.num_classes));
  for (int k = 0; k < spec.num_classes; ++k) {
    std::vector<int> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    Rng role_rng(
        derive_seed(spec.seed, kRolesTag, static_cast<std::uint64_t>(k)));
    shuffle(order, role_rng);
    auto& role_k = roles[static_cast<std::size_t>(k)];
    role_k.assign(static_cast<std::size_t>(n), Role::clean);
    for (int j = 0; j < num_second; ++j)
      role_k[static_cast<std::size_t>(order[static_cast<std::size_t>(j)])] =
          Role::second;
    for (int j = num_second; j < num_second + num_degraded; ++j)
      role_k[static_cast<std::size_t>(order[static_cast<std::size_t>(j)])] =
          Role::degraded;
  }

  // Blob centers sit mid-half; the middle column stays empty so planted
  // regions cannot touch.
  const int half_w = spec.grid_width / 2;
  const double left_cx = (half_w - 1) / 2.0;
  const double right_cx = (spec.grid_width - 1) - left_cx;

  SynthOutput out;
  out.manifest.classes = class_names(spec.num_classes);
  out.manifest.stage = Stage::curated;
  out.manifest.provenance = synth_provenance(spec, "multilabel");
  const auto total = static_cast<std::size_t>(spec.num_classes) * n;
  out.manifest.samples.resize(total);
  std::vector<std::vector<int>> truth_labels(total);

  parallel_for(total, threads, [&](std::size_t idx) {
    const int k = static_cast<int>(idx) / n;
    const int i = static_cast<int>(idx) % n;
    const Role role =
        roles[static_cast<std::size_t>(k)][static_cast<std::size_t>(i)];
    Rng rng(derive_seed(spec.seed, kMultiTag, idx));

    FeatureMap map = background_map(spec, rng);
    const bool primary_left = bounded(rng, 2) == 0;
    const double pcx = (primary_left ? left_cx : right_cx) +
                       uniform(rng, -0.4, 0.4);
    const double pcy = uniform(rng, 1.0, spec.grid_height - 2.0);
    double peak = kSignalPeak * uniform(rng, kAmpJitterLo, kAmpJitterHi);
    if (role == Role::degraded) peak *= uniform(rng, kDegradedLo, kDegradedHi);
    add_blob(map, spec, k, pcy, pcx, peak, rng);

    std::vector<int> truth = {k};
    if (role == Role::second) {
      int s = static_cast<int>(bounded(rng, spec.num_classes - 1));
      if (s >= k) ++s;
      const double scx = (primary_left ? right_cx : left_cx) +
                         uniform(rng, -0.4, 0.4);
      const double scy = uniform(rng, 1.0, spec.grid_height - 2.0);
      const double speak =
          kSignalPeak * uniform(rng, kAmpJitterLo, kAmpJitterHi);
      add_blob(map, spec, s, scy, scx, speak, rng);
      truth.push_back(s);
      std::sort(truth.begin(), truth.end());
    }
    truth_labels[idx] = std::move(truth);

    SampleRecord& sample = out.manifest.samples[idx];
    sample.id = sample_id(k, i);
    sample.query_class = k;
    sample.rank = i;
    sample.feature_path = "features/" + sample.id + ".vfm";
    sample.labels = {k};
    save_feature_map(map, out_dir / sample.feature_path);
  });

  for (std::size_t idx = 0; idx < total; ++idx)
    out.truth.labels[out.manifest.samples[idx].id] =
        std::move(truth_labels[idx]);
  out.truth.classes = out.manifest.classes;
  return out;
}

Metrics score_run(const GroundTruth& truth, const DatasetManifest& manifest) {
  Metrics metrics;
  metrics.samples = manifest.samples.size();

  std::size_t query_correct = 0;
  std::size_t true_added_total = 0;
  std::size_t true_added_found = 0;
  std::size_t label_total = 0;

  for (const SampleRecord& sample : manifest.samples) {
    const auto it = truth.labels.find(sample.id);
    if (it == truth.labels.end())
      throw Error(errc::id_mismatch,
                  "sample " + sample.id + " missing from ground truth");
    const std::vector<int>& actual = it->second;
    const auto in_truth = [&](int label) {
      return std::binary_search(actual.begin(), actual.end(), label);
    };

    if (in_truth(sample.query_class)) ++query_correct;
    label_total += sample.labels.size();

    for (int label : sample.labels) {
      if (label == sample.query_class) continue;
      ++metrics.added_total;
      if (in_truth(label)) ++metrics.added_correct;
    }
    for (int label : actual) {
      if (label == sample.query_class) continue;
      ++true_added_total;
      if (std::binary_search(sample.labels.begin(), sample.labels.end(),
                             label))
        ++true_added_found;
    }
  }

  if (!manifest.samples.empty())
    metrics.curation_precision =
        static_cast<double>(query_correct) /
        static_cast<double>(manifest.samples.size());
  if (!truth.labels.empty())
    metrics.kept_fraction = static_cast<double>(manifest.samples.size()) /
                            static_cast<double>(truth.labels.size());
  if (metrics.added_total == 0) {
    metrics.augment_precision = 1.0;  // no false positives by convention
    metrics.no_added_labels = true;
  } else {
    metrics.augment_precision = static_cast<double>(metrics.added_correct) /
                                static_cast<double>(metrics.added_total);
  }
  metrics.augment_recall =
      true_added_total == 0
          ? 1.0
          : static_cast<double>(true_added_found) /
                static_cast<double>(true_added_total);
  if (!manifest.samples.empty())
    metrics.labels_added_pct =
        100.0 *
        static_cast<double>(label_total - manifest.samples.size()) /
        static_cast<double>(manifest.samples.size());
  return metrics;
}

std::string Metrics::to_table() const {
  std::ostringstream out;
  out << std::fixed << std::setprecision(4);
  out << "samples scored:     " << samples << '\n';
  out << "curation precision: " << curation_precision << '\n';
  out << "kept fraction:      " << kept_fraction << '\n';
  out << "augment precision:  " << augment_precision
      << (no_added_labels ? " (no labels added)" : "") << '\n';
  out << "augment recall:     " << augment_recall << '\n';
  out << std::setprecision(2);
  out << "labels added:       " << labels_added_pct << "% (" << added_correct
      << '/' << added_total << " correct)\n";
  return out.str();
}

std::string Metrics::to_json_line() const {
  json doc;
  doc["samples"] = samples;
  doc["curation_precision"] = curation_precision;
  doc["kept_fraction"] = kept_fraction;
  doc["augment_precision"] = augment_precision;
  doc["augment_recall"] = augment_recall;
  doc["labels_added_pct"] = labels_added_pct;
  doc["no_added_labels"] = no_added_labels;
  doc["added_total"] = added_total;
  doc["added_correct"] = added_correct;
  return doc.dump();
}

}  // namespace weblabel
