#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "wim/num/random.hpp"
#include "wim/scene/trajectory.hpp"

namespace wim::scene {

enum class YawRegime : std::uint8_t { left = 0, straight = 1, right = 2 };
enum class SpeedRegime : std::uint8_t { decelerating = 0, constant = 1, accelerating = 2 };

struct SpeedPrior {
  double mean = 0.0;  // m/s
  double stddev = 1.0;
};

struct RegimeWeights {
  std::array<double, 3> kind{0.5, 0.25, 0.25};  // vehicle, pedestrian, cyclist
  std::array<double, 3> yaw{1.0, 1.0, 1.0};     // left, straight, right
  std::array<double, 3> speed{1.0, 1.0, 1.0};   // decelerating, constant, accelerating
  double stationary = 0.08;
  double backwards = 0.07;
};

struct NoiseConfig {
  double speed_sigma = 0.05;     // m/s added per step
  double yaw_rate_sigma = 0.02;  // rad/s added per step
};

struct GeneratorConfig {
  std::size_t past_steps = 11;
  std::size_t future_steps = 30;
  double dt = 0.1;
  RegimeWeights weights;
  NoiseConfig noise;
  std::array<SpeedPrior, 3> speed_priors{SpeedPrior{12.0, 5.0}, SpeedPrior{1.5, 0.7}, SpeedPrior{7.0, 3.0}};
  double yaw_rate_min = 0.25;  // rad/s
  double yaw_rate_max = 0.6;
  double accel_rate_min = 0.3;  // fraction of initial speed per second
  double accel_rate_max = 0.7;
  double max_speed = 40.0;
  double position_extent = 50.0;  // initial position uniform in [-extent, extent]^2

  // Throws std::invalid_argument when steps < 2, dt <= 0 or a weight vector is invalid.
  void validate() const;
};

// Fully specified kinematics of one rollout. Positive yaw rate turns left.
struct KinematicRegime {
  AgentKind kind = AgentKind::vehicle;
  double speed = 0.0;      // initial speed magnitude, m/s
  bool backwards = false;  // travel opposite to the heading
  double yaw_rate = 0.0;   // rad/s
  double acceleration = 0.0;  // m/s^2 applied to the speed magnitude
  double x = 0.0;
  double y = 0.0;
  double heading = 0.0;
  bool noiseless = false;
};

KinematicRegime sample_regime(num::Rng& rng, const GeneratorConfig& config);

// Unicycle rollout of past_steps + future_steps poses. noise_rng may be null for a noiseless rollout.
Scene rollout(const KinematicRegime& regime, const GeneratorConfig& config, num::Rng* noise_rng,
              std::uint64_t id = 0);

Scene generate_scene(num::Rng& rng, const GeneratorConfig& config, std::uint64_t id = 0);

// Scene i uses the stream derive_seed(seed, i); identical for any thread count.
std::vector<Scene> generate_dataset(std::size_t count, std::uint64_t seed, const GeneratorConfig& config,
                                    unsigned threads = 1);

// Replaces the forecast horizon by its first half resampled to the original length.
Scene apply_future_speed_shift(const Scene& scene);

}  // namespace wim::scene
