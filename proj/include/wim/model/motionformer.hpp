#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "wim/feat/motion_labels.hpp"
#include "wim/num/autodiff.hpp"
#include "wim/num/optim.hpp"
#include "wim/scene/trajectory.hpp"

namespace wim::model {

inline constexpr std::size_t kModules = 3;
// [dx, dy, cos psi, sin psi, v, a, vehicle, pedestrian, cyclist]
inline constexpr std::size_t kTokenFeatures = 9;

// How the head's normalized outputs map to meters: a fixed scale, or the
// distance the agent would cover over the horizon at its observed past speed.
enum class OutputScaling : std::uint8_t { fixed = 0, past_speed = 1 };

std::string_view to_string(OutputScaling s);
OutputScaling output_scaling_from_string(std::string_view s);

struct ModelConfig {
  std::size_t d = 64;
  std::size_t heads = 4;
  std::size_t modes = 3;
  std::size_t past_steps = 11;
  std::size_t future_steps = 30;
  std::size_t ffn = 128;
  double dt = 0.1;
  double position_scale = 10.0;  // meters per output unit (fixed scaling)
  OutputScaling output_scaling = OutputScaling::fixed;
  double speed_floor = 1.0;       // m/s, lower bound on the past speed used by past_speed scaling
  double steering_gain = 0.05;    // hidden shift is steering_gain * tau * V
  std::uint64_t seed = 0;

  void validate() const;
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

// Top-k forecasts in the agent frame (origin at the current pose, x along its heading).
struct ForecastSet {
  std::size_t modes = 0;
  std::size_t horizon = 0;
  std::vector<double> positions;  // [mode][step][xy]
  std::vector<double> confidences;

  double x(std::size_t mode, std::size_t step) const { return positions[(mode * horizon + step) * 2]; }
  double y(std::size_t mode, std::size_t step) const { return positions[(mode * horizon + step) * 2 + 1]; }
  std::size_t top1() const;
  // Path length from the origin through the mode's waypoints divided by its duration.
  double mean_speed(std::size_t mode, double dt) const;
  // Mean velocity along the agent's heading (+x): final forward displacement
  // over the horizon duration. Negative when the forecast ends behind the agent.
  double signed_speed(std::size_t mode, double dt) const;

  friend bool operator==(const ForecastSet&, const ForecastSet&) = default;
};

// H(m, i) for one sample; i may be negative to count from the last step.
struct HiddenStateSet {
  std::size_t modules = 0;
  std::size_t steps = 0;
  std::size_t d = 0;
  std::vector<double> values;  // [module][step][dim]

  std::span<const double> at(std::size_t module, long step) const;
  std::span<double> at(std::size_t module, long step);

  friend bool operator==(const HiddenStateSet&, const HiddenStateSet&) = default;
};

struct SteeringDirective {
  std::size_t module = 2;
  std::vector<double> vector;
  double tau = 0.0;
};

struct ForwardOutput {
  ForecastSet forecast;
  HiddenStateSet hidden;
};

// Per-token input features of the past trajectory in the agent frame (past_steps x kTokenFeatures).
num::Tensor token_features(const scene::Trajectory& past);
// Future waypoints after the reference point in the agent frame (horizon x 2).
num::Tensor agent_frame_future(const scene::Scene& scene);

// Winner-takes-all loss: mean over rows of the closest mode's mean squared
// error plus the cross-entropy that pushes confidence toward that mode.
// pred: (B x modes*horizon*2), logits: (B x modes), targets: (B x horizon*2).
num::Var wta_loss(const num::Var& pred, const num::Var& logits, const num::Tensor& targets, std::size_t modes);

class MotionFormer {
 public:
  explicit MotionFormer(ModelConfig config);

  const ModelConfig& config() const noexcept { return config_; }
  std::vector<num::Parameter*> parameters();
  std::vector<const num::Parameter*> parameters() const;
  std::size_t parameter_count() const;
  // Meters per normalized output unit for a scene with this past.
  double output_scale(const scene::Trajectory& past) const;

  ForwardOutput forward_with_taps(const scene::Scene& scene, std::span<const SteeringDirective> directives = {}) const;
  // Inference in fixed chunks distributed over threads; identical results for any thread count.
  std::vector<ForwardOutput> forward_batch(std::span<const scene::Scene> scenes,
                                           std::span<const SteeringDirective> directives = {}, unsigned threads = 1,
                                           bool keep_hidden = true) const;

  struct Graph {
    num::Var positions;  // normalized, (B x modes*horizon*2)
    num::Var logits;
    std::array<num::Var, kModules> taps;  // (B*T x d)
  };
  // Builds the network for a batch of token blocks (B*T x kTokenFeatures) on `tape`.
  Graph build(num::Tape& tape, const num::Tensor& tokens, std::size_t batch,
              std::span<const SteeringDirective> directives) const;

  void save(const std::filesystem::path& path) const;
  static MotionFormer load(const std::filesystem::path& path);
  std::vector<std::uint8_t> serialize() const;
  static MotionFormer deserialize(std::span<const std::uint8_t> bytes);

 private:
  struct Block {
    num::Parameter ln1_g, ln1_b, wq, wk, wv, wo, bo, ln2_g, ln2_b, w1, b1, w2, b2;
  };

  void check_directives(std::span<const SteeringDirective> directives) const;

  ModelConfig config_;
  num::Parameter in_w1_, in_b1_, in_w2_, in_b2_, pos_;
  std::array<Block, 2> blocks_;
  num::Parameter head_w1_, head_b1_, head_w2_, head_b2_;
};

struct TrainConfig {
  std::size_t epochs = 20;
  std::size_t batch_size = 64;
  num::OptimizerConfig optimizer = num::OptimizerConfig::adamw(2e-4);
  std::uint64_t seed = 0;
  bool verbose = false;
};

struct TrainResult {
  std::vector<double> loss_trace;  // entry 0 is the initial loss, then one mean batch loss per epoch
  std::vector<double> displacement_trace;  // mean winner displacement error (m) per epoch
  bool diverged = false;
  std::size_t steps = 0;
};

struct ProbeSet;

// Called after every optimizer step with the detached batch taps and labels.
using BatchHook = std::function<void(const std::array<num::Tensor, kModules>& last_step_taps,
                                     std::span<const feat::MotionLabels> labels)>;

// Trains with shuffled minibatches. On a non-finite loss or update the last
// finite parameters are restored and training stops with diverged = true.
TrainResult train(MotionFormer& model, std::span<const scene::Scene> scenes, const TrainConfig& config,
                  const BatchHook& hook = {});

// Mean winner displacement error (meters) over a set, without training.
double evaluate_displacement(const MotionFormer& model, std::span<const scene::Scene> scenes, unsigned threads = 1);

}  // namespace wim::model
