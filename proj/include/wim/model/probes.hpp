#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "wim/feat/motion_labels.hpp"
#include "wim/model/motionformer.hpp"
#include "wim/num/autodiff.hpp"

namespace wim::model {

// Linear classifier on detached hidden states.
class LinearProbe {
 public:
  LinearProbe() = default;
  LinearProbe(std::size_t d, std::size_t classes, std::uint64_t seed, double learning_rate = 5e-3);

  std::size_t dim() const noexcept { return d_; }
  std::size_t classes() const noexcept { return classes_; }
  num::Tensor logits(const num::Tensor& h) const;  // (n x d) -> (n x classes)
  std::vector<int> predict(const num::Tensor& h) const;
  // One Adam step on a minibatch; returns the batch cross-entropy.
  double step(const num::Tensor& h, std::span<const int> labels);
  // Shuffled minibatch epochs over the full set.
  void fit(const num::Tensor& h, std::span<const int> labels, std::size_t epochs, std::size_t batch_size,
           std::uint64_t seed);

  std::vector<num::Parameter*> parameters();
  std::vector<const num::Parameter*> parameters() const;

 private:
  struct State {
    num::Parameter w, b;
    std::optional<num::Optimizer> optimizer;
  };

  std::size_t d_ = 0;
  std::size_t classes_ = 0;
  double learning_rate_ = 5e-3;
  std::unique_ptr<State> state_;
};

struct ProbeConfig {
  double learning_rate = 5e-3;
  std::size_t epochs = 30;
  std::size_t batch_size = 256;
  std::uint64_t seed = 0;
};

// One probe per (module, feature), reading H(m, -1).
struct ProbeSet {
  std::array<std::array<LinearProbe, 4>, kModules> probes;

  LinearProbe& at(std::size_t module, feat::Feature f) { return probes.at(module)[static_cast<std::size_t>(f)]; }
  const LinearProbe& at(std::size_t module, feat::Feature f) const {
    return probes.at(module)[static_cast<std::size_t>(f)];
  }
};

ProbeSet make_probes(std::size_t d, std::uint64_t seed, double learning_rate = 5e-3);

// Probe logits per module and feature for one scene; probes only ever see a detached copy of H.
struct ProbeOutput {
  std::array<std::array<std::vector<double>, 4>, kModules> logits;
};

class ProbedModel {
 public:
  explicit ProbedModel(const MotionFormer& model) : model_(&model) {}

  void attach_probes(std::uint64_t seed, double learning_rate = 5e-3);
  bool attached() const noexcept { return probes_.has_value(); }
  ProbeSet& probes();
  const ProbeSet& probes() const;
  ProbeOutput probe_forward(const scene::Scene& scene) const;
  // One step for every probe on a batch of detached last-step taps.
  void train_step(const std::array<num::Tensor, kModules>& last_step_taps, std::span<const feat::MotionLabels> labels);
  BatchHook hook();

 private:
  const MotionFormer* model_;
  std::optional<ProbeSet> probes_;
};

// Stacks H(module, step) rows of a set of hidden states into (n x d).
num::Tensor stack_hidden(std::span<const HiddenStateSet> hidden, std::size_t module, long step = -1);
std::vector<int> feature_labels(std::span<const feat::MotionLabels> labels, feat::Feature f);

}  // namespace wim::model
