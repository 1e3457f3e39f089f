#include "wim/scene/dataset_io.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace wim::scene {
namespace {

using nlohmann::json;

void append_number(std::string& out, double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  out += buf;
}

void append_poses(std::string& out, const std::vector<Pose>& poses) {
  out += '[';
  for (std::size_t i = 0; i < poses.size(); ++i) {
    if (i) out += ',';
    out += '[';
    append_number(out, poses[i].x);
    out += ',';
    append_number(out, poses[i].y);
    out += ',';
    append_number(out, poses[i].heading);
    out += ']';
  }
  out += ']';
}

std::vector<Pose> parse_poses(const json& arr, const char* field) {
  if (!arr.is_array()) throw std::invalid_argument(std::string("field '") + field + "' must be an array");
  std::vector<Pose> poses;
  poses.reserve(arr.size());
  for (const auto& p : arr) {
    if (!p.is_array() || p.size() != 3) throw std::invalid_argument(std::string("field '") + field + "' needs [x, y, psi] triples");
    poses.push_back({p[0].get<double>(), p[1].get<double>(), p[2].get<double>()});
  }
  return poses;
}

Scene parse_scene(const json& j) {
  if (!j.is_object()) throw std::invalid_argument("record is not an object");
  const int version = j.value("v", -1);
  if (version != kDatasetVersion)
    throw std::invalid_argument("dataset version mismatch: expected " + std::to_string(kDatasetVersion) + ", found " +
                                std::to_string(version));
  Scene s;
  s.id = j.at("id").get<std::uint64_t>();
  const AgentKind kind = agent_kind_from_string(j.at("kind").get<std::string>());
  const double dt = j.at("dt").get<double>();
  s.past = Trajectory{parse_poses(j.at("past"), "past"), dt, kind};
  s.future = Trajectory{parse_poses(j.at("future"), "future"), dt, kind};
  if (auto it = j.find("labels"); it != j.end() && !it->is_null()) {
    feat::MotionLabels m;
    for (feat::Feature f : feat::kFeatures)
      feat::set_label(m, f, feat::class_id(f, it->at(std::string(feat::to_string(f))).get<std::string>()));
    s.labels = m;
  }
  s.validate();
  return s;
}

}  // namespace

std::string scene_to_json_line(const Scene& s) {
  std::string out = "{\"v\":" + std::to_string(kDatasetVersion) + ",\"id\":" + std::to_string(s.id) + ",\"kind\":\"";
  out += to_string(s.kind());
  out += "\",\"dt\":";
  append_number(out, s.past.dt);
  out += ",\"past\":";
  append_poses(out, s.past.poses);
  out += ",\"future\":";
  append_poses(out, s.future.poses);
  if (s.labels) {
    out += ",\"labels\":{";
    for (std::size_t i = 0; i < feat::kFeatures.size(); ++i) {
      const feat::Feature f = feat::kFeatures[i];
      if (i) out += ',';
      out += '"';
      out += feat::to_string(f);
      out += "\":\"";
      out += feat::class_name(f, feat::label_of(*s.labels, f));
      out += '"';
    }
    out += '}';
  }
  out += '}';
  return out;
}

void write_dataset(const std::vector<Scene>& scenes, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DatasetError("cannot open '" + path.string() + "' for writing");
  for (const Scene& s : scenes) out << scene_to_json_line(s) << '\n';
  if (!out) throw DatasetError("write failed for '" + path.string() + "'");
}

std::vector<Scene> parse_dataset(const std::string& text) {
  std::vector<Scene> scenes;
  std::size_t start = 0;
  std::size_t line_no = 0;
  while (start < text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string::npos) end = text.size();
    ++line_no;
    const std::string_view line(text.data() + start, end - start);
    if (line.find_first_not_of(" \t\r") != std::string_view::npos) {
      try {
        scenes.push_back(parse_scene(json::parse(line)));
      } catch (const json::parse_error& e) {
        const std::size_t offset = start + (e.byte > 0 ? e.byte - 1 : 0);
        throw DatasetError("malformed record at line " + std::to_string(line_no) + ", byte offset " +
                           std::to_string(offset) + ": " + e.what());
      } catch (const std::exception& e) {
        throw DatasetError("invalid record at line " + std::to_string(line_no) + ", byte offset " +
                           std::to_string(start) + ": " + e.what());
      }
    }
    start = end + 1;
  }
  return scenes;
}

std::vector<Scene> read_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DatasetError("cannot open '" + path.string() + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_dataset(buf.str());
}

}  // namespace wim::scene
