#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "wim/scene/trajectory.hpp"

namespace wim::scene {

inline constexpr int kDatasetVersion = 1;

class DatasetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string scene_to_json_line(const Scene& scene);
void write_dataset(const std::vector<Scene>& scenes, const std::filesystem::path& path);
std::vector<Scene> read_dataset(const std::filesystem::path& path);
std::vector<Scene> parse_dataset(const std::string& text);

}  // namespace wim::scene
