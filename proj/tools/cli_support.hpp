#pragma once

#include <chrono>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "wim/eval/eval.hpp"

namespace wim::cli {

namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;

inline constexpr const char* kToolVersion = "0.1.0";

// Exit code 1 with the offending path.
class MissingInput : public std::runtime_error {
 public:
  explicit MissingInput(const fs::path& p) : std::runtime_error("input file not found: " + p.string()) {}
};

inline fs::path require_input(const fs::path& p) {
  if (!fs::is_regular_file(p)) throw MissingInput(p);
  return p;
}

// Relative outputs land under WIM_DATA_DIR when it is set.
inline fs::path output_path(const fs::path& p) {
  fs::path out = p;
  if (out.is_relative())
    if (const char* root = std::getenv("WIM_DATA_DIR"); root && *root) out = fs::path(root) / out;
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  return out;
}

inline void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open for writing: " + path.string());
  out << text;
}

inline std::string read_text(const fs::path& path) {
  std::ifstream in(require_input(path), std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline std::uint32_t file_magic(const fs::path& path) {
  std::ifstream in(require_input(path), std::ios::binary);
  char m[4] = {};
  in.read(m, 4);
  return static_cast<std::uint32_t>(static_cast<unsigned char>(m[0])) << 24 |
         static_cast<std::uint32_t>(static_cast<unsigned char>(m[1])) << 16 |
         static_cast<std::uint32_t>(static_cast<unsigned char>(m[2])) << 8 |
         static_cast<std::uint32_t>(static_cast<unsigned char>(m[3]));
}

// Header-keyed view of a CSV file written by this tool (no quoting).
struct CsvFile {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return i;
    throw std::runtime_error("csv has no column '" + name + "'");
  }
  std::vector<double> numbers(const std::string& name) const {
    const std::size_t c = column(name);
    std::vector<double> out;
    for (const auto& r : rows) out.push_back(std::stod(r.at(c)));
    return out;
  }
};

inline CsvFile read_csv(const fs::path& path) {
  std::istringstream in(read_text(path));
  CsvFile f;
  std::string line;
  auto split = [](const std::string& s) {
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream ls(s);
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    if (!s.empty() && s.back() == ',') cells.emplace_back();
    return cells;
  };
  if (!std::getline(in, line)) throw std::runtime_error("empty csv: " + path.string());
  f.header = split(line);
  while (std::getline(in, line))
    if (!line.empty()) f.rows.push_back(split(line));
  return f;
}

inline eval::CalibrationCurve read_calibration(const fs::path& path, double band) {
  const CsvFile f = read_csv(path);
  return eval::CalibrationCurve::from_points(f.numbers("tau"), f.numbers("change_percent"), band);
}

// One manifest per artifact-producing run, written beside its main output.
class Manifest {
 public:
  Manifest(std::string subcommand, std::vector<std::string> argv)
      : subcommand_(std::move(subcommand)), argv_(std::move(argv)), start_(std::chrono::steady_clock::now()) {}

  void snapshot(const CLI::App& sub) {
    for (const CLI::Option* o : sub.get_options()) {
      if (o->get_name() == "--help" || o->get_name() == "-h") continue;
      const auto& r = o->results();
      std::string name = o->get_name();
      while (!name.empty() && name.front() == '-') name.erase(name.begin());
      if (o->get_expected_max() == 0)
        config_[name] = o->count() > 0;
      else if (r.size() == 1)
        config_[name] = r[0];
      else if (r.empty())
        config_[name] = o->get_default_str();
      else
        config_[name] = r;
    }
  }
  void seed(std::uint64_t s) { seeds_.push_back(s); }
  void input(const fs::path& p) { inputs_.push_back(p.string()); }
  void output(const fs::path& p) { outputs_.push_back(p.string()); }

  void write(const fs::path& path) const {
    Json j;
    j["subcommand"] = subcommand_;
    j["tool_version"] = kToolVersion;
    j["argv"] = argv_;
    j["working_directory"] = fs::current_path().string();
    j["config"] = config_;
    j["seeds"] = seeds_;
    j["inputs"] = inputs_;
    j["outputs"] = outputs_;
    j["wall_clock_seconds"] =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    write_text(path, j.dump(2) + "\n");
  }

 private:
  std::string subcommand_;
  std::vector<std::string> argv_;
  Json config_ = Json::object();
  std::vector<std::uint64_t> seeds_;
  std::vector<std::string> inputs_, outputs_;
  std::chrono::steady_clock::time_point start_;
};

inline fs::path manifest_path(const fs::path& output) {
  if (fs::is_directory(output)) return output / "manifest.json";
  return fs::path(output.string() + ".manifest.json");
}

}  // namespace wim::cli
