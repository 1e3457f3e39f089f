#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

#include "wim/scene/agent_kind.hpp"

namespace wim::feat {

enum class SpeedClass : std::uint8_t { backwards = 0, low = 1, moderate = 2, high = 3 };
enum class AccelerationClass : std::uint8_t { decelerating = 0, constant = 1, accelerating = 2 };
enum class DirectionClass : std::uint8_t { left = 0, straight = 1, right = 2, stationary = 3 };

enum class Feature : std::uint8_t { speed = 0, acceleration = 1, direction = 2, agent = 3 };

inline constexpr std::array<Feature, 4> kFeatures = {Feature::speed, Feature::acceleration, Feature::direction,
                                                    Feature::agent};

struct MotionLabels {
  SpeedClass speed = SpeedClass::low;
  AccelerationClass acceleration = AccelerationClass::constant;
  DirectionClass direction = DirectionClass::straight;
  scene::AgentKind agent = scene::AgentKind::vehicle;

  friend bool operator==(const MotionLabels&, const MotionLabels&) = default;
};

inline constexpr std::array<std::string_view, 4> kFeatureNames = {"speed", "acceleration", "direction", "agent"};

inline std::string_view to_string(Feature f) { return kFeatureNames.at(static_cast<std::size_t>(f)); }

inline Feature feature_from_string(std::string_view s) {
  for (std::size_t i = 0; i < kFeatureNames.size(); ++i)
    if (kFeatureNames[i] == s) return static_cast<Feature>(i);
  throw std::invalid_argument("unknown feature '" + std::string(s) + "'");
}

inline constexpr std::size_t class_count(Feature f) {
  switch (f) {
    case Feature::speed:
      return 4;
    case Feature::acceleration:
      return 3;
    case Feature::direction:
      return 4;
    case Feature::agent:
      return 3;
  }
  return 0;
}

inline std::string_view class_name(Feature f, int id) {
  static constexpr std::array<std::string_view, 4> speed = {"backwards", "low", "moderate", "high"};
  static constexpr std::array<std::string_view, 3> accel = {"decelerating", "constant", "accelerating"};
  static constexpr std::array<std::string_view, 4> dir = {"left", "straight", "right", "stationary"};
  const auto i = static_cast<std::size_t>(id);
  if (id < 0 || i >= class_count(f)) throw std::out_of_range("class id out of range for " + std::string(to_string(f)));
  switch (f) {
    case Feature::speed:
      return speed[i];
    case Feature::acceleration:
      return accel[i];
    case Feature::direction:
      return dir[i];
    case Feature::agent:
      return scene::kAgentKindNames[i];
  }
  return {};
}

inline int class_id(Feature f, std::string_view name) {
  for (std::size_t i = 0; i < class_count(f); ++i)
    if (class_name(f, static_cast<int>(i)) == name) return static_cast<int>(i);
  throw std::invalid_argument("unknown " + std::string(to_string(f)) + " class '" + std::string(name) + "'");
}

inline int label_of(const MotionLabels& m, Feature f) {
  switch (f) {
    case Feature::speed:
      return static_cast<int>(m.speed);
    case Feature::acceleration:
      return static_cast<int>(m.acceleration);
    case Feature::direction:
      return static_cast<int>(m.direction);
    case Feature::agent:
      return static_cast<int>(m.agent);
  }
  return -1;
}

inline void set_label(MotionLabels& m, Feature f, int id) {
  (void)class_name(f, id);
  switch (f) {
    case Feature::speed:
      m.speed = static_cast<SpeedClass>(id);
      break;
    case Feature::acceleration:
      m.acceleration = static_cast<AccelerationClass>(id);
      break;
    case Feature::direction:
      m.direction = static_cast<DirectionClass>(id);
      break;
    case Feature::agent:
      m.agent = static_cast<scene::AgentKind>(id);
      break;
  }
}

}  // namespace wim::feat
