#pragma once

#include <array>
#include <cstddef>
#include <vector>

#include "wim/feat/motion_labels.hpp"
#include "wim/scene/trajectory.hpp"

namespace wim::feat {

struct Thresholds {
  double low_moderate_kmh = 25.0;
  double moderate_high_kmh = 50.0;
  double decelerating_ratio = 0.9;
  double accelerating_ratio = 1.1;
  double straight_degrees = 15.0;
  double stationary_path_m = 0.5;
  double rest_speed = 0.1;       // initial speeds below this count as starting from rest
  double rest_mean_speed = 0.5;  // mean speed above which a start from rest is accelerating
  double boundary_tolerance = 1e-9;
};

enum class Window { past, full };

// Mean of the per-step displacement projected onto the heading at the step start, m/s.
double mean_signed_speed(const scene::Trajectory& traj);
// Trapezoidal path integral over per-step speeds divided by v0 * duration.
double acceleration_ratio(const scene::Trajectory& traj);
// Sum of wrapped heading decrements in degrees; positive means turning right.
double cumulative_heading_change_deg(const scene::Trajectory& traj);
double path_length(const scene::Trajectory& traj);
std::vector<double> step_speeds(const scene::Trajectory& traj);

SpeedClass classify_speed(const scene::Trajectory& traj, const Thresholds& th = {});
AccelerationClass classify_acceleration(const scene::Trajectory& traj, const Thresholds& th = {});
DirectionClass classify_direction(const scene::Trajectory& traj, const Thresholds& th = {});

scene::Trajectory window_trajectory(const scene::Scene& scene, Window window);
MotionLabels label_scene(const scene::Scene& scene, Window window = Window::past, const Thresholds& th = {});
void label_dataset(std::vector<scene::Scene>& scenes, Window window = Window::past, const Thresholds& th = {},
                   unsigned threads = 1);

struct LabelHistogram {
  std::array<std::vector<std::size_t>, 4> counts;  // indexed by Feature
  std::size_t total = 0;

  double fraction(Feature f, int cls) const;
};

LabelHistogram label_histogram(const std::vector<MotionLabels>& labels);

}  // namespace wim::feat
