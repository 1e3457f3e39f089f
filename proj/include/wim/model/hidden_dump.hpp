#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "wim/feat/motion_labels.hpp"
#include "wim/model/motionformer.hpp"
#include "wim/num/tensor.hpp"

namespace wim::model {

inline constexpr std::uint32_t kHiddenDumpVersion = 1;

// Hidden states of many samples stored as f32, plus one label record per sample.
struct HiddenDump {
  std::size_t modules = 0;
  std::size_t steps = 0;
  std::size_t d = 0;
  std::vector<float> values;  // [sample][module][step][dim]
  std::vector<feat::MotionLabels> labels;

  std::size_t samples() const noexcept { return labels.size(); }
  // H(module, step) of every sample as (n x d); negative steps count from the end.
  num::Tensor rows(std::size_t module, long step = -1) const;
  // Full per-sample sequences of one module as (n*steps x d), sample-major.
  num::Tensor sequences(std::size_t module) const;
  // Samples whose index is in `keep`, in that order.
  HiddenDump subset(std::span<const std::size_t> keep) const;

  std::vector<std::uint8_t> serialize() const;
  static HiddenDump deserialize(std::span<const std::uint8_t> bytes);
  void save(const std::filesystem::path& path) const;
  static HiddenDump load(const std::filesystem::path& path);

  friend bool operator==(const HiddenDump&, const HiddenDump&) = default;
};

// Runs the model over the scenes and records every module's states. Labels come
// from scene.labels when present, otherwise from the past-window classifier.
HiddenDump dump_hidden(const MotionFormer& model, std::span<const scene::Scene> scenes, unsigned threads = 1);

}  // namespace wim::model
