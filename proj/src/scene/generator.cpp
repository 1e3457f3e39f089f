#include "wim/scene/generator.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

#include "wim/num/parallel.hpp"

namespace wim::scene {
namespace {

void check_weights(const double* w, std::size_t n, const char* what) {
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!(w[i] >= 0.0) || !std::isfinite(w[i])) throw std::invalid_argument(std::string(what) + " weights must be non-negative");
    total += w[i];
  }
  if (!(total > 0.0)) throw std::invalid_argument(std::string(what) + " weights must not all be zero");
}

void check_probability(double p, const char* what) {
  if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument(std::string(what) + " probability must lie in [0, 1]");
}

double truncated_normal(num::Rng& rng, const SpeedPrior& prior) {
  for (int attempt = 0; attempt < 1000; ++attempt) {
    const double v = num::normal(rng, prior.mean, prior.stddev);
    if (v >= 0.0) return v;
  }
  return std::max(prior.mean, 0.0);
}

}  // namespace

void GeneratorConfig::validate() const {
  if (past_steps < 2) throw std::invalid_argument("past_steps must be >= 2");
  if (future_steps < 2) throw std::invalid_argument("future_steps must be >= 2");
  if (!(dt > 0.0) || !std::isfinite(dt)) throw std::invalid_argument("dt must be positive");
  check_weights(weights.kind.data(), 3, "kind");
  check_weights(weights.yaw.data(), 3, "yaw");
  check_weights(weights.speed.data(), 3, "speed");
  check_probability(weights.stationary, "stationary");
  check_probability(weights.backwards, "backwards");
  if (noise.speed_sigma < 0.0 || noise.yaw_rate_sigma < 0.0) throw std::invalid_argument("noise sigmas must be >= 0");
  if (yaw_rate_min < 0.0 || yaw_rate_max < yaw_rate_min) throw std::invalid_argument("invalid yaw rate range");
  if (accel_rate_min < 0.0 || accel_rate_max < accel_rate_min) throw std::invalid_argument("invalid acceleration range");
  if (!(max_speed > 0.0)) throw std::invalid_argument("max_speed must be positive");
}

KinematicRegime sample_regime(num::Rng& rng, const GeneratorConfig& config) {
  KinematicRegime r;
  r.kind = static_cast<AgentKind>(num::categorical(rng, config.weights.kind));
  r.x = num::uniform(rng, -config.position_extent, config.position_extent);
  r.y = num::uniform(rng, -config.position_extent, config.position_extent);
  r.heading = wrap_angle(num::uniform(rng, -std::numbers::pi, std::numbers::pi));
  if (num::uniform01(rng) < config.weights.stationary) {
    r.noiseless = true;
    return r;
  }
  r.speed = std::min(truncated_normal(rng, config.speed_priors[static_cast<std::size_t>(r.kind)]), config.max_speed);
  r.backwards = num::uniform01(rng) < config.weights.backwards;

  const auto yaw = static_cast<YawRegime>(num::categorical(rng, config.weights.yaw));
  const double omega = num::uniform(rng, config.yaw_rate_min, config.yaw_rate_max);
  if (yaw == YawRegime::left) r.yaw_rate = omega;
  if (yaw == YawRegime::right) r.yaw_rate = -omega;

  const auto accel = static_cast<SpeedRegime>(num::categorical(rng, config.weights.speed));
  const double rho = num::uniform(rng, config.accel_rate_min, config.accel_rate_max);
  if (accel == SpeedRegime::accelerating) r.acceleration = rho * r.speed;
  if (accel == SpeedRegime::decelerating) r.acceleration = -rho * r.speed;
  return r;
}

Scene rollout(const KinematicRegime& regime, const GeneratorConfig& config, num::Rng* noise_rng, std::uint64_t id) {
  config.validate();
  const std::size_t n = config.past_steps + config.future_steps;
  const double dt = config.dt;
  const double direction = regime.backwards ? -1.0 : 1.0;
  num::Rng* noise = regime.noiseless ? nullptr : noise_rng;

  std::vector<Pose> poses;
  poses.reserve(n);
  Pose p{regime.x, regime.y, wrap_angle(regime.heading)};
  double speed = std::clamp(regime.speed, 0.0, config.max_speed);
  poses.push_back(p);
  for (std::size_t t = 1; t < n; ++t) {
    double omega = regime.yaw_rate;
    if (noise && config.noise.yaw_rate_sigma > 0.0) omega += num::normal(*noise, 0.0, config.noise.yaw_rate_sigma);
    p.x += direction * speed * std::cos(p.heading) * dt;
    p.y += direction * speed * std::sin(p.heading) * dt;
    p.heading = wrap_angle(p.heading + omega * dt);
    poses.push_back(p);
    speed += regime.acceleration * dt;
    if (noise && config.noise.speed_sigma > 0.0) speed += num::normal(*noise, 0.0, config.noise.speed_sigma);
    speed = std::clamp(speed, 0.0, config.max_speed);
  }

  Scene scene;
  scene.id = id;
  scene.past.dt = scene.future.dt = dt;
  scene.past.kind = scene.future.kind = regime.kind;
  scene.past.poses.assign(poses.begin(), poses.begin() + static_cast<std::ptrdiff_t>(config.past_steps));
  scene.future.poses.assign(poses.begin() + static_cast<std::ptrdiff_t>(config.past_steps - 1), poses.end());
  return scene;
}

Scene generate_scene(num::Rng& rng, const GeneratorConfig& config, std::uint64_t id) {
  const KinematicRegime regime = sample_regime(rng, config);
  return rollout(regime, config, &rng, id);
}

std::vector<Scene> generate_dataset(std::size_t count, std::uint64_t seed, const GeneratorConfig& config,
                                    unsigned threads) {
  config.validate();
  std::vector<Scene> scenes(count);
  num::parallel_for(count, threads, [&](std::size_t i) {
    num::Rng rng = num::make_rng(seed, i);
    scenes[i] = generate_scene(rng, config, i);
  });
  return scenes;
}

Scene apply_future_speed_shift(const Scene& scene) {
  const std::size_t horizon = scene.horizon();
  if (horizon < 4) throw std::invalid_argument("future speed shift needs a horizon of at least 4 steps, got " + std::to_string(horizon));
  const auto& src = scene.future.poses;
  const std::size_t half = horizon / 2;

  Scene out = scene;
  auto& dst = out.future.poses;
  for (std::size_t j = 1; j <= horizon; ++j) {
    const double u = static_cast<double>(j - 1) * static_cast<double>(half - 1) / static_cast<double>(horizon - 1);
    std::size_t lo = static_cast<std::size_t>(std::floor(u));
    if (lo >= half - 1) lo = half - 1;
    const double w = u - static_cast<double>(lo);
    const Pose& a = src[1 + lo];
    const Pose& b = src[std::min(1 + lo + 1, half)];
    dst[j].x = w == 0.0 ? a.x : a.x + (b.x - a.x) * w;
    dst[j].y = w == 0.0 ? a.y : a.y + (b.y - a.y) * w;
  }
  for (std::size_t j = 1; j <= horizon; ++j) {
    const double dx = dst[j].x - dst[j - 1].x;
    const double dy = dst[j].y - dst[j - 1].y;
    dst[j].heading = std::hypot(dx, dy) > 1e-12 ? wrap_angle(std::atan2(dy, dx)) : dst[j - 1].heading;
  }
  return out;
}

}  // namespace wim::scene
