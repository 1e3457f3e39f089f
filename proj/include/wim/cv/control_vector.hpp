#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "wim/feat/motion_labels.hpp"
#include "wim/model/hidden_dump.hpp"
#include "wim/model/motionformer.hpp"
#include "wim/num/csv.hpp"
#include "wim/num/tensor.hpp"
#include "wim/sae/sae.hpp"

namespace wim::cv {

struct FeaturePair {
  feat::Feature feature = feat::Feature::speed;
  int positive = 0;
  int negative = 0;

  // high vs low, accelerating vs decelerating, right vs left, vehicle vs pedestrian.
  static FeaturePair standard(feat::Feature f);
  void validate() const;
  std::string name() const;  // e.g. "speed:high-low"
  friend bool operator==(const FeaturePair&, const FeaturePair&) = default;
};

struct ControlVector {
  FeaturePair pair;
  std::size_t module = 2;
  std::string source = "plain";  // plain | sae:<tag> | koopman:<tag>
  std::string orientation = "mean-diff";
  std::vector<double> v;

  std::size_t dim() const noexcept { return v.size(); }
  double norm() const;
  // Copy with |v| = 1; steering with it at tau equals steering the original at tau / norm().
  ControlVector unit() const;
  model::SteeringDirective directive(double tau) const;

  std::string to_json() const;
  static ControlVector from_json(const std::string& text);
  void save(const std::filesystem::path& path) const;
  static ControlVector load(const std::filesystem::path& path);
};

struct OpposingStates {
  num::Tensor positive;  // (n+ x d)
  num::Tensor negative;  // (n- x d)
};

// Rows H(module, -1) of the samples whose ground-truth label is each class of the pair.
OpposingStates collect_opposing(const model::MotionFormer& model, std::span<const scene::Scene> scenes,
                                const FeaturePair& pair, std::size_t module = 2, unsigned threads = 1);
OpposingStates collect_opposing(const model::HiddenDump& dump, const FeaturePair& pair, std::size_t module = 2);

// One-to-one pairing: a seeded subset of the larger side, kept in row order, is
// matched index-wise with the smaller side, then the pair order is shuffled.
// Rows are positive minus negative.
num::Tensor paired_differences(const num::Tensor& positive, const num::Tensor& negative, std::uint64_t seed);

ControlVector fit_plain(const OpposingStates& states, const FeaturePair& pair, std::size_t module, std::uint64_t seed);

// Differences are taken between codes; the first component is decoded back to
// the hidden space (including the decoder bias).
ControlVector fit_codec(const sae::Codec& codec, const OpposingStates& states, const FeaturePair& pair,
                        std::size_t module, std::uint64_t seed, const std::string& source);

double angle_deg(std::span<const double> a, std::span<const double> b);

struct AngleTable {
  std::vector<std::string> names;
  std::vector<double> degrees;  // row-major, names.size()^2

  double at(std::size_t i, std::size_t j) const { return degrees[i * names.size() + j]; }
  num::CsvTable to_csv() const;
};

AngleTable compare_matrix(std::span<const ControlVector> vectors);

}  // namespace wim::cv
