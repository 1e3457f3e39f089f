#include "wim/scene/trajectory.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace wim::scene {

double wrap_angle(double a) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  double r = std::fmod(a, two_pi);
  if (r <= -std::numbers::pi) r += two_pi;
  if (r > std::numbers::pi) r -= two_pi;
  return r;
}

void Trajectory::validate() const {
  if (poses.size() < 2) throw std::invalid_argument("trajectory needs at least 2 poses, got " + std::to_string(poses.size()));
  if (!(dt > 0.0) || !std::isfinite(dt)) throw std::invalid_argument("trajectory dt must be positive and finite");
  for (std::size_t i = 0; i < poses.size(); ++i) {
    const Pose& p = poses[i];
    if (!std::isfinite(p.x) || !std::isfinite(p.y) || !std::isfinite(p.heading))
      throw std::invalid_argument("trajectory pose " + std::to_string(i) + " is not finite");
  }
}

void Scene::validate() const {
  past.validate();
  future.validate();
  if (past.dt != future.dt) throw std::invalid_argument("scene past and future dt differ");
  if (past.kind != future.kind) throw std::invalid_argument("scene past and future agent kinds differ");
  const Pose& a = past.poses.back();
  const Pose& b = future.poses.front();
  if (std::hypot(a.x - b.x, a.y - b.y) > 1e-9)
    throw std::invalid_argument("scene " + std::to_string(id) + " violates past/future continuity");
}

}  // namespace wim::scene
