#include "weblabel/config.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

#include "weblabel/error.hpp"

namespace weblabel {

using nlohmann::json;

namespace {

[[noreturn]] void config_fail(const std::string& what) {
  throw Error(errc::bad_config, what);
}

void require(bool ok, const std::string& what) {
  if (!ok) config_fail(what);
}

json to_json(const PipelineConfig& c) {
  json j;
  j["anchors_per_class"] = c.anchors_per_class;
  j["clusters_per_class"] = c.clusters_per_class;
  j["cluster_accept_threshold"] = c.cluster_accept_threshold;
  j["prob_threshold"] = c.prob_threshold;
  j["iou_threshold"] = c.iou_threshold;
  j["area_threshold"] = c.area_threshold;
  if (c.uncertainty_threshold)
    j["uncertainty_threshold"] = *c.uncertainty_threshold;
  else
    j["uncertainty_threshold"] = nullptr;
  j["uncertainty_percentile"] = c.uncertainty_percentile;
  j["intermediate_resize"] = c.intermediate_resize;
  j["output_size"] = c.output_size;
  j["two_step_resize"] = c.two_step_resize;
  j["use_bbox_iou"] = c.use_bbox_iou;
  j["seed"] = c.seed;
  return j;
}

json to_json(const TrainConfig& c) {
  json j;
  j["learning_rate"] = c.learning_rate;
  j["epochs"] = c.epochs;
  j["batch_size"] = c.batch_size;
  j["seed"] = c.seed;
  j["log_var_init"] = c.log_var_init;
  j["weight_init_scale"] = c.weight_init_scale;
  return j;
}

json to_json(const SyntheticSpec& c) {
  json j;
  j["num_classes"] = c.num_classes;
  j["channels"] = c.channels;
  j["samples_per_class"] = c.samples_per_class;
  j["noise_fraction"] = c.noise_fraction;
  j["blob_spread"] = c.blob_spread;
  j["multilabel_fraction"] = c.multilabel_fraction;
  j["grid_height"] = c.grid_height;
  j["grid_width"] = c.grid_width;
  j["seed"] = c.seed;
  return j;
}

json to_json(const FullConfig& c) {
  json j;
  j["pipeline"] = to_json(c.pipeline);
  j["train"] = to_json(c.train);
  j["synth"] = to_json(c.synth);
  return j;
}

template <typename T>
void read_field(const json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    config_fail(std::string("field '") + key + "': " + e.what());
  }
}

void from_json(const json& j, PipelineConfig& c) {
  read_field(j, "anchors_per_class", c.anchors_per_class);
  read_field(j, "clusters_per_class", c.clusters_per_class);
  read_field(j, "cluster_accept_threshold", c.cluster_accept_threshold);
  read_field(j, "prob_threshold", c.prob_threshold);
  read_field(j, "iou_threshold", c.iou_threshold);
  read_field(j, "area_threshold", c.area_threshold);
  if (j.contains("uncertainty_threshold")) {
    if (j.at("uncertainty_threshold").is_null())
      c.uncertainty_threshold.reset();
    else {
      double v = 0;
      read_field(j, "uncertainty_threshold", v);
      c.uncertainty_threshold = v;
    }
  }
  read_field(j, "uncertainty_percentile", c.uncertainty_percentile);
  read_field(j, "intermediate_resize", c.intermediate_resize);
  read_field(j, "output_size", c.output_size);
  read_field(j, "two_step_resize", c.two_step_resize);
  read_field(j, "use_bbox_iou", c.use_bbox_iou);
  read_field(j, "seed", c.seed);
}

void from_json(const json& j, TrainConfig& c) {
  read_field(j, "learning_rate", c.learning_rate);
  read_field(j, "epochs", c.epochs);
  read_field(j, "batch_size", c.batch_size);
  read_field(j, "seed", c.seed);
  read_field(j, "log_var_init", c.log_var_init);
  read_field(j, "weight_init_scale", c.weight_init_scale);
}

void from_json(const json& j, SyntheticSpec& c) {
  read_field(j, "num_classes", c.num_classes);
  read_field(j, "channels", c.channels);
  read_field(j, "samples_per_class", c.samples_per_class);
  read_field(j, "noise_fraction", c.noise_fraction);
  read_field(j, "blob_spread", c.blob_spread);
  read_field(j, "multilabel_fraction", c.multilabel_fraction);
  read_field(j, "grid_height", c.grid_height);
  read_field(j, "grid_width", c.grid_width);
  read_field(j, "seed", c.seed);
}

FullConfig from_json(const json& j) {
  FullConfig c;
  if (!j.is_object()) config_fail("config root must be an object");
  for (const auto& [key, value] : j.items()) {
    if (key == "pipeline")
      from_json(value, c.pipeline);
    else if (key == "train")
      from_json(value, c.train);
    else if (key == "synth")
      from_json(value, c.synth);
    else
      config_fail("unknown config section '" + key + "'");
  }
  return c;
}

std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t");
  if (begin == std::string::npos) return "";
  const auto end = s.find_last_not_of(" \t");
  return s.substr(begin, end - begin + 1);
}

}  // namespace

void validate(const PipelineConfig& c) {
  require(c.anchors_per_class >= 1, "anchors_per_class must be >= 1");
  require(c.clusters_per_class >= 1, "clusters_per_class must be >= 1");
  require(c.cluster_accept_threshold >= 0,
          "cluster_accept_threshold must be >= 0");
  require(c.prob_threshold > 0 && c.prob_threshold < 1,
          "prob_threshold must be in (0,1)");
  require(c.iou_threshold > 0 && c.iou_threshold < 1,
          "iou_threshold must be in (0,1)");
  require(c.area_threshold > 0 && c.area_threshold < 1,
          "area_threshold must be in (0,1)");
  if (c.uncertainty_threshold)
    require(*c.uncertainty_threshold > 0, "uncertainty_threshold must be > 0");
  require(c.uncertainty_percentile > 0 && c.uncertainty_percentile <= 100,
          "uncertainty_percentile must be in (0,100]");
  require(c.intermediate_resize >= 1, "intermediate_resize must be >= 1");
  require(c.output_size >= 1, "output_size must be >= 1");
}

void validate(const TrainConfig& c) {
  require(c.learning_rate > 0, "learning_rate must be > 0");
  require(c.epochs >= 1, "epochs must be >= 1");
  require(c.batch_size >= 1, "batch_size must be >= 1");
  require(c.weight_init_scale > 0, "weight_init_scale must be > 0");
}

void validate(const SyntheticSpec& c) {
  require(c.num_classes >= 1, "num_classes must be >= 1");
  require(c.channels >= 1, "channels must be >= 1");
  require(c.samples_per_class >= 1, "samples_per_class must be >= 1");
  require(c.noise_fraction >= 0 && c.noise_fraction < 1,
          "noise_fraction must be in [0,1)");
  require(c.blob_spread > 0, "blob_spread must be > 0");
  require(c.multilabel_fraction >= 0 && c.multilabel_fraction <= 1,
          "multilabel_fraction must be in [0,1]");
  require(c.grid_height >= 1 && c.grid_width >= 1,
          "grid dimensions must be >= 1");
}

void validate(const FullConfig& c) {
  validate(c.pipeline);
  validate(c.train);
  validate(c.synth);
}

std::string config_to_string(const FullConfig& config) {
  return to_json(config).dump(2) + "\n";
}

FullConfig config_from_string(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    config_fail(std::string("config is not valid JSON: ") + e.what());
  }
  FullConfig c = from_json(j);
  validate(c);
  return c;
}

FullConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) config_fail("cannot open config " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return config_from_string(buffer.str());
}

void save_config(const FullConfig& config, const std::filesystem::path& path) {
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw Error(errc::io_failure, "cannot open " + tmp + " for write");
    out << config_to_string(config);
    if (!out) {
      std::filesystem::remove(tmp);
      throw Error(errc::io_failure, "short write to " + tmp);
    }
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp);
    throw Error(errc::io_failure,
                "cannot move " + tmp + " into place: " + ec.message());
  }
}

void apply_override(FullConfig& config, const std::string& key_value) {
  const auto eq = key_value.find('=');
  if (eq == std::string::npos)
    config_fail("override '" + key_value + "' is not of the form key=value");
  const std::string key = trim(key_value.substr(0, eq));
  const std::string value = trim(key_value.substr(eq + 1));
  const auto dot = key.find('.');
  if (dot == std::string::npos)
    config_fail("override key '" + key + "' must be section.field");
  const std::string section = key.substr(0, dot);
  const std::string field = key.substr(dot + 1);

  json root = to_json(config);
  if (!root.contains(section))
    config_fail("unknown config section '" + section + "'");
  if (!root[section].contains(field))
    config_fail("unknown config field '" + key + "'");

  json parsed;
  try {
    parsed = json::parse(value);
  } catch (const json::exception&) {
    parsed = value;  // bare strings are taken literally
  }
  root[section][field] = parsed;
  FullConfig next = from_json(root);
  validate(next);
  config = next;
}

std::map<std::string, std::string> flatten_config(const FullConfig& config) {
  std::map<std::string, std::string> flat;
  const json root = to_json(config);
  for (const auto& [section, fields] : root.items())
    for (const auto& [field, value] : fields.items()) {
      const std::string key = section + "." + field;
      flat[key] = value.is_string() ? value.get<std::string>() : value.dump();
    }
  return flat;
}

}  // namespace weblabel
