#pragma once

#include <cstdint>
#include <optional>
#include <string_view>
#include <vector>

#include "wim/feat/motion_labels.hpp"
#include "wim/scene/agent_kind.hpp"

namespace wim::scene {

struct Pose {
  double x = 0.0;  // meters
  double y = 0.0;
  double heading = 0.0;  // radians in (-pi, pi]

  friend bool operator==(const Pose&, const Pose&) = default;
};

// Uniformly timed poses of one agent.
struct Trajectory {
  std::vector<Pose> poses;
  double dt = 0.1;  // seconds
  AgentKind kind = AgentKind::vehicle;

  std::size_t size() const noexcept { return poses.size(); }
  // Throws std::invalid_argument if fewer than 2 poses, dt <= 0, or any value is non-finite.
  void validate() const;

  friend bool operator==(const Trajectory&, const Trajectory&) = default;
};

// One focal agent. future.poses[0] is the reference point (the current
// position, equal to past.poses.back()); the forecast horizon follows it, so
// future holds horizon + 1 poses.
struct Scene {
  std::uint64_t id = 0;
  Trajectory past;
  Trajectory future;
  std::optional<feat::MotionLabels> labels;

  std::size_t past_steps() const noexcept { return past.size(); }
  std::size_t horizon() const noexcept { return future.size() ? future.size() - 1 : 0; }
  AgentKind kind() const noexcept { return past.kind; }
  // Continuity and timing invariants; throws std::invalid_argument.
  void validate() const;

  friend bool operator==(const Scene&, const Scene&) = default;
};

double wrap_angle(double radians);

}  // namespace wim::scene
