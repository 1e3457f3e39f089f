#include "wim/feat/classify.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

#include "wim/num/parallel.hpp"

namespace wim::feat {

using scene::Trajectory;

std::vector<double> step_speeds(const Trajectory& traj) {
  traj.validate();
  std::vector<double> u(traj.size() - 1);
  for (std::size_t k = 0; k + 1 < traj.size(); ++k) {
    const auto& a = traj.poses[k];
    const auto& b = traj.poses[k + 1];
    u[k] = std::hypot(b.x - a.x, b.y - a.y) / traj.dt;
  }
  return u;
}

double path_length(const Trajectory& traj) {
  double total = 0.0;
  for (double u : step_speeds(traj)) total += u * traj.dt;
  return total;
}

double mean_signed_speed(const Trajectory& traj) {
  traj.validate();
  double along = 0.0;
  for (std::size_t k = 0; k + 1 < traj.size(); ++k) {
    const auto& a = traj.poses[k];
    const auto& b = traj.poses[k + 1];
    along += (b.x - a.x) * std::cos(a.heading) + (b.y - a.y) * std::sin(a.heading);
  }
  return along / (static_cast<double>(traj.size() - 1) * traj.dt);
}

double acceleration_ratio(const Trajectory& traj) {
  if (traj.size() < 3) throw std::invalid_argument("acceleration needs at least 3 poses");
  const std::vector<double> u = step_speeds(traj);
  double integral = 0.0;
  for (std::size_t k = 0; k + 1 < u.size(); ++k) integral += 0.5 * (u[k] + u[k + 1]) * traj.dt;
  const double duration = static_cast<double>(u.size() - 1) * traj.dt;
  return integral / (u.front() * duration);
}

double cumulative_heading_change_deg(const Trajectory& traj) {
  traj.validate();
  double d = 0.0;
  for (std::size_t t = 0; t + 1 < traj.size(); ++t)
    d += scene::wrap_angle(traj.poses[t].heading - traj.poses[t + 1].heading);
  return d * 180.0 / std::numbers::pi;
}

SpeedClass classify_speed(const Trajectory& traj, const Thresholds& th) {
  const double v = mean_signed_speed(traj);
  const double eps = th.boundary_tolerance;
  if (v < -eps) return SpeedClass::backwards;
  if (v < th.low_moderate_kmh / 3.6 - eps) return SpeedClass::low;
  if (v <= th.moderate_high_kmh / 3.6 + eps) return SpeedClass::moderate;
  return SpeedClass::high;
}

AccelerationClass classify_acceleration(const Trajectory& traj, const Thresholds& th) {
  if (traj.size() < 3) throw std::invalid_argument("acceleration needs at least 3 poses");
  const std::vector<double> u = step_speeds(traj);
  if (u.front() < th.rest_speed) {
    double mean = 0.0;
    for (double x : u) mean += x;
    mean /= static_cast<double>(u.size());
    return mean > th.rest_mean_speed ? AccelerationClass::accelerating : AccelerationClass::constant;
  }
  const double r = acceleration_ratio(traj);
  const double eps = th.boundary_tolerance;
  if (r < th.decelerating_ratio - eps) return AccelerationClass::decelerating;
  if (r > th.accelerating_ratio + eps) return AccelerationClass::accelerating;
  return AccelerationClass::constant;
}

DirectionClass classify_direction(const Trajectory& traj, const Thresholds& th) {
  if (path_length(traj) < th.stationary_path_m) return DirectionClass::stationary;
  const double d = cumulative_heading_change_deg(traj);
  const double eps = th.boundary_tolerance;
  if (d > th.straight_degrees + eps) return DirectionClass::right;
  if (d < -th.straight_degrees - eps) return DirectionClass::left;
  return DirectionClass::straight;
}

Trajectory window_trajectory(const scene::Scene& scene, Window window) {
  if (window == Window::past) return scene.past;
  Trajectory full = scene.past;
  full.poses.insert(full.poses.end(), scene.future.poses.begin() + 1, scene.future.poses.end());
  return full;
}

MotionLabels label_scene(const scene::Scene& scene, Window window, const Thresholds& th) {
  scene.validate();
  const Trajectory traj = window_trajectory(scene, window);
  MotionLabels m;
  m.speed = classify_speed(traj, th);
  m.acceleration = classify_acceleration(traj, th);
  m.direction = classify_direction(traj, th);
  m.agent = scene.kind();
  return m;
}

void label_dataset(std::vector<scene::Scene>& scenes, Window window, const Thresholds& th, unsigned threads) {
  num::parallel_for(scenes.size(), threads, [&](std::size_t i) { scenes[i].labels = label_scene(scenes[i], window, th); });
}

double LabelHistogram::fraction(Feature f, int cls) const {
  if (total == 0) return 0.0;
  return static_cast<double>(counts.at(static_cast<std::size_t>(f)).at(static_cast<std::size_t>(cls))) /
         static_cast<double>(total);
}

LabelHistogram label_histogram(const std::vector<MotionLabels>& labels) {
  LabelHistogram h;
  for (Feature f : kFeatures) h.counts[static_cast<std::size_t>(f)].assign(class_count(f), 0);
  for (const auto& m : labels)
    for (Feature f : kFeatures) ++h.counts[static_cast<std::size_t>(f)][static_cast<std::size_t>(label_of(m, f))];
  h.total = labels.size();
  return h;
}

}  // namespace wim::feat
