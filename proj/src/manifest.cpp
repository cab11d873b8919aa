#include "weblabel/manifest.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_set>

#include <json.hpp>

#include "weblabel/error.hpp"

namespace weblabel {

using nlohmann::json;

namespace {

[[noreturn]] void parse_fail(std::size_t line_no, const std::string& what) {
  throw Error(errc::parse_error,
              "line " + std::to_string(line_no) + ": " + what);
}

json detail_to_json(const LabelDetail& d) {
  json j;
  j["class"] = d.class_index;
  j["provenance"] = d.provenance;
  j["score"] = d.score;
  j["sigma2"] = d.sigma2;
  json boxes = json::array();
  for (const auto& b : d.boxes) boxes.push_back({b[0], b[1], b[2], b[3]});
  j["boxes"] = std::move(boxes);
  return j;
}

LabelDetail detail_from_json(const json& j, std::size_t line_no) {
  LabelDetail d;
  try {
    d.class_index = j.at("class").get<int>();
    d.provenance = j.at("provenance").get<std::string>();
    d.score = j.at("score").get<double>();
    d.sigma2 = j.at("sigma2").get<double>();
    for (const auto& b : j.at("boxes")) {
      if (!b.is_array() || b.size() != 4)
        parse_fail(line_no, "box must be [x0,y0,x1,y1]");
      d.boxes.push_back({b[0].get<int>(), b[1].get<int>(), b[2].get<int>(),
                         b[3].get<int>()});
    }
  } catch (const json::exception& e) {
    parse_fail(line_no, std::string("bad label detail: ") + e.what());
  }
  return d;
}

json record_to_json(const SampleRecord& r) {
  json j;
  j["id"] = r.id;
  j["query_class"] = r.query_class;
  j["rank"] = r.rank;
  j["feature_path"] = r.feature_path;
  j["labels"] = r.labels;
  if (!r.label_details.empty()) {
    json details = json::array();
    for (const auto& d : r.label_details) details.push_back(detail_to_json(d));
    j["label_details"] = std::move(details);
  }
  return j;
}

SampleRecord record_from_json(const json& j, std::size_t line_no) {
  SampleRecord r;
  try {
    r.id = j.at("id").get<std::string>();
    r.query_class = j.at("query_class").get<int>();
    r.rank = j.at("rank").get<int>();
    r.feature_path = j.at("feature_path").get<std::string>();
    r.labels = j.at("labels").get<std::vector<int>>();
    if (j.contains("label_details"))
      for (const auto& d : j.at("label_details"))
        r.label_details.push_back(detail_from_json(d, line_no));
  } catch (const json::exception& e) {
    parse_fail(line_no, std::string("bad record: ") + e.what());
  }
  if (r.id.empty()) parse_fail(line_no, "empty sample id");
  if (r.rank < 0) parse_fail(line_no, "negative rank");
  std::sort(r.labels.begin(), r.labels.end());
  r.labels.erase(std::unique(r.labels.begin(), r.labels.end()), r.labels.end());
  return r;
}

void check_class_index(int index, int num_classes, std::size_t line_no) {
  if (index < 0 || index >= num_classes)
    throw Error(errc::unknown_class_name,
                "line " + std::to_string(line_no) + ": class index " +
                    std::to_string(index) + " outside [0," +
                    std::to_string(num_classes) + ")");
}

ManifestHeader header_from_json(const json& j) {
  ManifestHeader h;
  try {
    h.classes = j.at("classes").get<std::vector<std::string>>();
    const auto stage = j.at("stage").get<std::string>();
    if (!stage_from_name(stage, h.stage))
      parse_fail(1, "unknown stage '" + stage + "'");
    if (j.contains("provenance"))
      h.provenance =
          j.at("provenance").get<std::map<std::string, std::string>>();
  } catch (const json::exception& e) {
    parse_fail(1, std::string("bad header: ") + e.what());
  }
  if (h.classes.empty()) parse_fail(1, "manifest needs at least one class");
  std::set<std::string> names(h.classes.begin(), h.classes.end());
  if (names.size() != h.classes.size())
    parse_fail(1, "duplicate class names");
  return h;
}

}  // namespace

void for_each_sample(
    const std::filesystem::path& path,
    const std::function<void(const ManifestHeader&)>& on_header,
    const std::function<void(SampleRecord&&)>& on_record) {
  std::ifstream in(path);
  if (!in) throw Error(errc::io_failure, "cannot open " + path.string());

  std::string line;
  std::size_t line_no = 0;
  ManifestHeader header;
  bool have_header = false;
  // Track (query_class, rank) uniqueness without holding the records.
  std::set<std::pair<int, int>> seen_ranks;
  std::unordered_set<std::string> seen_ids;

  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      parse_fail(line_no, e.what());
    }
    if (!have_header) {
      header = header_from_json(j);
      have_header = true;
      if (on_header) on_header(header);
      continue;
    }
    SampleRecord r = record_from_json(j, line_no);
    const int k = static_cast<int>(header.classes.size());
    check_class_index(r.query_class, k, line_no);
    for (int label : r.labels) check_class_index(label, k, line_no);
    for (const auto& d : r.label_details)
      check_class_index(d.class_index, k, line_no);
    if (!seen_ids.insert(r.id).second)
      parse_fail(line_no, "duplicate sample id '" + r.id + "'");
    if (!seen_ranks.insert({r.query_class, r.rank}).second)
      parse_fail(line_no, "duplicate rank " + std::to_string(r.rank) +
                              " within class " +
                              std::to_string(r.query_class));
    if (on_record) on_record(std::move(r));
  }
  if (!have_header)
    throw Error(errc::parse_error, "manifest has no header line");
}

DatasetManifest read_manifest(const std::filesystem::path& path) {
  DatasetManifest m;
  for_each_sample(
      path,
      [&](const ManifestHeader& h) {
        m.classes = h.classes;
        m.stage = h.stage;
        m.provenance = h.provenance;
      },
      [&](SampleRecord&& r) { m.samples.push_back(std::move(r)); });
  return m;
}

void write_manifest(const DatasetManifest& manifest,
                    const std::filesystem::path& path) {
  if (manifest.classes.empty())
    throw Error(errc::bad_config, "manifest needs at least one class");
  const int k = manifest.num_classes();
  for (const auto& r : manifest.samples) {
    if (r.query_class < 0 || r.query_class >= k)
      throw Error(errc::unknown_class_name,
                  "sample " + r.id + ": query class " +
                      std::to_string(r.query_class) + " outside [0," +
                      std::to_string(k) + ")");
    for (int label : r.labels)
      if (label < 0 || label >= k)
        throw Error(errc::unknown_class_name,
                    "sample " + r.id + ": label " + std::to_string(label) +
                        " outside [0," + std::to_string(k) + ")");
  }

  json header;
  header["classes"] = manifest.classes;
  header["stage"] = stage_name(manifest.stage);
  header["provenance"] = manifest.provenance;

  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw Error(errc::io_failure, "cannot open " + tmp + " for write");
    out << header.dump() << '\n';
    for (const auto& r : manifest.samples) out << record_to_json(r).dump() << '\n';
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

std::filesystem::path resolve_feature_path(
    const std::filesystem::path& manifest_path,
    const std::string& feature_path) {
  std::filesystem::path p(feature_path);
  if (p.is_absolute()) return p;
  return manifest_path.parent_path() / p;
}

std::string rebase_feature_path(const std::filesystem::path& in_manifest,
                                const std::filesystem::path& out_manifest,
                                const std::string& feature_path) {
  namespace fs = std::filesystem;
  const fs::path in_dir = in_manifest.parent_path();
  const fs::path out_dir = out_manifest.parent_path();
  if (in_dir == out_dir) return feature_path;
  const fs::path absolute =
      fs::absolute(resolve_feature_path(in_manifest, feature_path))
          .lexically_normal();
  std::error_code ec;
  const fs::path relative =
      fs::proximate(absolute, fs::absolute(out_dir), ec);
  if (ec) return absolute.string();
  return relative.string();
}

}  // namespace weblabel
