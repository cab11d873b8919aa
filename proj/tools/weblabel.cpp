// Command line front end: synth, curate, train, augment, eval, run-all.
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "weblabel/config.hpp"
#include "weblabel/error.hpp"
#include "weblabel/eval_harness.hpp"
#include "weblabel/label_augment.hpp"
#include "weblabel/manifest.hpp"
#include "weblabel/noise_reduction.hpp"
#include "weblabel/parallel.hpp"
#include "weblabel/uncertainty_head.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace weblabel;

namespace {

struct CommonArgs {
  std::string config_path;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  int threads = default_threads();
  bool as_json = false;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_path, "JSON config file");
  cmd->add_option("--override", args.overrides,
                  "section.field=value, wins over the config file");
  cmd->add_option("--seed", args.seed,
                  "overrides every seed in the config");
  cmd->add_option("--threads", args.threads, "worker threads (1 = serial)")
      ->check(CLI::PositiveNumber);
  cmd->add_flag("--json", args.as_json, "machine-readable output");
}

FullConfig effective_config(const CommonArgs& args) {
  FullConfig config;
  if (!args.config_path.empty()) config = load_config(args.config_path);
  for (const std::string& kv : args.overrides) apply_override(config, kv);
  if (args.seed) {
    config.pipeline.seed = *args.seed;
    config.train.seed = *args.seed;
    config.synth.seed = *args.seed;
  }
  validate(config);
  return config;
}

void write_text_atomic(const std::string& text, const fs::path& path) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out)
      throw Error(errc::io_failure, "cannot open " + tmp.string() +
                                        " for write");
    out << text;
    if (!out) throw Error(errc::io_failure, "short write to " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec)
    throw Error(errc::io_failure,
                "cannot move " + tmp.string() + " into place: " + ec.message());
}

// Record the full effective config in a manifest about to be written.
void echo_config(DatasetManifest& manifest, const FullConfig& config) {
  for (const auto& [key, value] : flatten_config(config))
    manifest.provenance["config." + key] = value;
}

DatasetManifest read_manifest_at_stage(const fs::path& path, Stage stage,
                                       const char* verb) {
  DatasetManifest manifest = read_manifest(path);
  if (manifest.stage != stage)
    throw Error(errc::stage_mismatch,
                std::string(verb) + " expects a " + stage_name(stage) +
                    " manifest, got " + stage_name(manifest.stage) + " in " +
                    path.string());
  return manifest;
}

json curation_report_json(const CurationReport& report) {
  json rows = json::array();
  for (const auto& row : report.per_class) {
    json entry;
    entry["class_index"] = row.class_index;
    entry["class_name"] = row.class_name;
    entry["samples_in"] = row.samples_in;
    entry["anchors"] = row.anchors;
    entry["clusters_formed"] = row.clusters_formed;
    entry["clusters_kept"] = row.clusters_kept;
    entry["samples_kept"] = row.samples_kept;
    entry["samples_dropped"] = row.samples_dropped;
    if (!row.warning.empty()) entry["warning"] = row.warning;
    rows.push_back(entry);
  }
  return rows;
}

json augment_report_json(const AugmentReport& report,
                         const std::vector<std::string>& classes) {
  json doc;
  doc["samples"] = report.samples;
  doc["input_labels"] = report.input_labels;
  doc["output_labels"] = report.output_labels;
  doc["labels_added_pct"] = report.labels_added_pct;
  doc["uncertainty_threshold"] = report.uncertainty_threshold;
  doc["threshold_calibrated"] = report.threshold_calibrated;
  json added = json::object();
  for (std::size_t k = 0; k < report.added_per_class.size(); ++k)
    if (report.added_per_class[k] > 0)
      added[k < classes.size() ? classes[k] : std::to_string(k)] =
          report.added_per_class[k];
  doc["added_per_class"] = added;
  return doc;
}

struct SynthPaths {
  fs::path raw_dir, raw_manifest, raw_truth;
  fs::path multi_dir, multi_manifest, multi_truth;

  explicit SynthPaths(const fs::path& out_dir)
      : raw_dir(out_dir / "raw"),
        raw_manifest(raw_dir / "manifest.jsonl"),
        raw_truth(raw_dir / "truth.json"),
        multi_dir(out_dir / "multilabel"),
        multi_manifest(multi_dir / "manifest.jsonl"),
        multi_truth(multi_dir / "truth.json") {}
};

// Generates both synthetic sets and writes manifests plus ground truth.
SynthPaths run_synth(const FullConfig& config, const fs::path& out_dir,
                     int threads) {
  SynthPaths paths(out_dir);

  SynthOutput raw = generate_curation_set(config.synth, paths.raw_dir,
                                          threads);
  echo_config(raw.manifest, config);
  write_manifest(raw.manifest, paths.raw_manifest);
  save_ground_truth(raw.truth, paths.raw_truth);

  SynthOutput multi = generate_multilabel_maps(config.synth, paths.multi_dir,
                                               threads);
  echo_config(multi.manifest, config);
  write_manifest(multi.manifest, paths.multi_manifest);
  save_ground_truth(multi.truth, paths.multi_truth);
  return paths;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"noisy web-image labels: curation, training, augmentation"};

  CommonArgs common;
  std::string input_path, output_path, params_path, truth_path, trace_path;

  CLI::App* synth = app.add_subcommand(
      "synth", "generate both synthetic evaluation sets");
  add_common(synth, common);
  synth->add_option("--output", output_path, "output directory")->required();

  CLI::App* curate = app.add_subcommand(
      "curate", "anchor-guided cluster selection over a raw manifest");
  add_common(curate, common);
  curate->add_option("--input", input_path, "raw manifest")->required();
  curate->add_option("--output", output_path, "curated manifest")->required();

  CLI::App* train = app.add_subcommand(
      "train", "fit the classifier and uncertainty head");
  add_common(train, common);
  train->add_option("--input", input_path, "curated manifest")->required();
  train->add_option("--output", output_path, "head parameter file")
      ->required();
  train->add_option("--trace", trace_path, "per-epoch loss CSV");

  CLI::App* augment = app.add_subcommand(
      "augment", "add labels from CAM regions and uncertainty");
  add_common(augment, common);
  augment->add_option("--input", input_path, "curated manifest")->required();
  augment->add_option("--params", params_path, "head parameter file")
      ->required();
  augment->add_option("--output", output_path, "augmented manifest")
      ->required();

  CLI::App* eval = app.add_subcommand(
      "eval", "score a manifest against synthetic ground truth");
  add_common(eval, common);
  eval->add_option("--input", input_path, "manifest to score")->required();
  eval->add_option("--truth", truth_path, "ground truth file")->required();

  CLI::App* run_all = app.add_subcommand(
      "run-all", "synth, curate, train, augment, and eval in one go");
  add_common(run_all, common);
  run_all->add_option("--output", output_path, "working directory")
      ->required();

  app.require_subcommand(1);
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;  // bad flags are config errors
  }

  try {
    const FullConfig config = effective_config(common);

    if (app.got_subcommand(synth)) {
      const SynthPaths paths = run_synth(config, output_path, common.threads);
      if (common.as_json) {
        json doc;
        doc["raw_manifest"] = paths.raw_manifest.string();
        doc["multilabel_manifest"] = paths.multi_manifest.string();
        std::cout << doc.dump() << '\n';
      } else {
        std::cout << "wrote " << paths.raw_manifest.string() << " and "
                  << paths.multi_manifest.string() << '\n';
      }

    } else if (app.got_subcommand(curate)) {
      const DatasetManifest raw =
          read_manifest_at_stage(input_path, Stage::raw, "curate");
      CurationResult result = curate_dataset(raw, config.pipeline, input_path,
                                             output_path, common.threads);
      echo_config(result.manifest, config);
      write_manifest(result.manifest, output_path);
      if (common.as_json) {
        json doc;
        doc["output"] = output_path;
        doc["samples_in"] = raw.samples.size();
        doc["samples_kept"] = result.manifest.samples.size();
        doc["per_class"] = curation_report_json(result.report);
        std::cout << doc.dump() << '\n';
      } else {
        std::cout << result.report.to_table();
      }

    } else if (app.got_subcommand(train)) {
      const DatasetManifest curated =
          read_manifest_at_stage(input_path, Stage::curated, "train");
      const TrainingSet data = load_training_set(curated, input_path);
      const TrainResult result = weblabel::train(data, config.train);
      save_head_params(result.params, output_path);
      if (!trace_path.empty())
        write_loss_trace_csv(result.epoch_loss, trace_path);
      const double bce = mean_bce(result.params, data);
      if (common.as_json) {
        json doc;
        doc["output"] = output_path;
        doc["samples"] = data.size();
        doc["epochs"] = result.epoch_loss.size();
        doc["final_loss"] =
            result.epoch_loss.empty() ? 0.0 : result.epoch_loss.back();
        doc["mean_bce"] = bce;
        std::cout << doc.dump() << '\n';
      } else {
        std::cout << "trained on " << data.size() << " samples, final loss "
                  << (result.epoch_loss.empty() ? 0.0
                                                : result.epoch_loss.back())
                  << ", mean bce " << bce << '\n';
      }

    } else if (app.got_subcommand(augment)) {
      const DatasetManifest curated =
          read_manifest_at_stage(input_path, Stage::curated, "augment");
      const HeadParams params = load_head_params(params_path);
      AugmentResult result =
          augment_labels(curated, params, config.pipeline, input_path,
                         output_path, common.threads);
      echo_config(result.manifest, config);
      write_manifest(result.manifest, output_path);
      if (common.as_json)
        std::cout << augment_report_json(result.report, curated.classes)
                         .dump()
                  << '\n';
      else
        std::cout << result.report.to_table(curated.classes);

    } else if (app.got_subcommand(eval)) {
      const DatasetManifest manifest = read_manifest(input_path);
      const GroundTruth truth = load_ground_truth(truth_path);
      const Metrics metrics = score_run(truth, manifest);
      if (common.as_json)
        std::cout << metrics.to_json_line() << '\n';
      else
        std::cout << metrics.to_table();

    } else if (app.got_subcommand(run_all)) {
      const fs::path out_dir = output_path;
      const SynthPaths paths = run_synth(config, out_dir, common.threads);

      const DatasetManifest raw = read_manifest(paths.raw_manifest);
      CurationResult curated = curate_dataset(
          raw, config.pipeline, paths.raw_manifest,
          out_dir / "curated.jsonl", common.threads);
      echo_config(curated.manifest, config);
      write_manifest(curated.manifest, out_dir / "curated.jsonl");

      const DatasetManifest multi = read_manifest(paths.multi_manifest);
      const TrainingSet data = load_training_set(multi, paths.multi_manifest);
      const TrainResult trained = weblabel::train(data, config.train);
      save_head_params(trained.params, out_dir / "params.vhp1");
      write_loss_trace_csv(trained.epoch_loss, out_dir / "loss_trace.csv");

      AugmentResult augmented = augment_labels(
          multi, trained.params, config.pipeline, paths.multi_manifest,
          out_dir / "augmented.jsonl", common.threads);
      echo_config(augmented.manifest, config);
      write_manifest(augmented.manifest, out_dir / "augmented.jsonl");

      const Metrics curation_metrics = score_run(
          load_ground_truth(paths.raw_truth), curated.manifest);
      const Metrics augment_metrics = score_run(
          load_ground_truth(paths.multi_truth), augmented.manifest);

      Metrics merged = augment_metrics;
      merged.curation_precision = curation_metrics.curation_precision;
      merged.kept_fraction = curation_metrics.kept_fraction;
      write_text_atomic(merged.to_json_line() + "\n",
                        out_dir / "metrics.json");

      if (common.as_json) {
        std::cout << merged.to_json_line() << '\n';
      } else {
        std::cout << curated.report.to_table() << '\n'
                  << augmented.report.to_table(multi.classes) << '\n'
                  << merged.to_table();
      }
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return e.exit_code();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
