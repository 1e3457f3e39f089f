#include "wim/model/probes.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

#include "wim/num/random.hpp"

namespace wim::model {

using num::Tensor;

LinearProbe::LinearProbe(std::size_t d, std::size_t classes, std::uint64_t seed, double learning_rate)
    : d_(d), classes_(classes), learning_rate_(learning_rate), state_(std::make_unique<State>()) {
  if (d == 0 || classes < 2) throw std::invalid_argument("probe needs d >= 1 and at least 2 classes");
  num::Rng rng = num::make_rng(seed, 0x70726f6265ULL);
  Tensor w({d, classes});
  const double sd = 1.0 / std::sqrt(static_cast<double>(d));
  for (double& x : w.values()) x = num::normal(rng, 0.0, sd);
  state_->w = num::Parameter("probe.w", std::move(w));
  state_->b = num::Parameter("probe.b", Tensor::filled({classes}, 0.0));
}

std::vector<num::Parameter*> LinearProbe::parameters() {
  if (!state_) return {};
  return {&state_->w, &state_->b};
}

std::vector<const num::Parameter*> LinearProbe::parameters() const {
  if (!state_) return {};
  return {&state_->w, &state_->b};
}

Tensor LinearProbe::logits(const Tensor& h) const {
  if (!state_) throw std::logic_error("probe is not initialized");
  if (h.rank() != 2 || h.cols() != d_)
    throw num::ShapeError("probe expects (n x " + std::to_string(d_) + ") inputs, got " + num::shape_str(h.shape()));
  num::Tape tape(false);
  return num::add_bias(num::matmul(tape.constant(h), tape.constant(state_->w.value)), tape.constant(state_->b.value))
      .value();
}

std::vector<int> LinearProbe::predict(const Tensor& h) const {
  const Tensor z = logits(h);
  std::vector<int> out(z.rows());
  for (std::size_t r = 0; r < z.rows(); ++r) {
    const auto row = z.row(r);
    out[r] = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
  }
  return out;
}

double LinearProbe::step(const Tensor& h, std::span<const int> labels) {
  if (!state_) throw std::logic_error("probe is not initialized");
  if (h.rows() != labels.size()) throw num::ShapeError("probe batch and label counts differ");
  if (!state_->optimizer)
    state_->optimizer.emplace(num::OptimizerConfig::adam(learning_rate_),
                              std::vector<num::Parameter*>{&state_->w, &state_->b});
  num::Tape tape;
  const num::Var z = num::add_bias(num::matmul(tape.constant(h), tape.param(state_->w)), tape.param(state_->b));
  const num::Var loss = num::cross_entropy(z, labels);
  state_->optimizer->zero_grad();
  tape.backward(loss);
  state_->optimizer->step();
  return loss.value().item();
}

void LinearProbe::fit(const Tensor& h, std::span<const int> labels, std::size_t epochs, std::size_t batch_size,
                      std::uint64_t seed) {
  if (h.rows() != labels.size() || h.rows() == 0) throw num::ShapeError("probe fit needs matching non-empty data");
  num::Rng rng = num::make_rng(seed, 0x666974ULL);
  std::vector<std::size_t> order(h.rows());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t e = 0; e < epochs; ++e) {
    num::shuffle(order, rng);
    for (std::size_t begin = 0; begin < order.size(); begin += batch_size) {
      const std::size_t m = std::min(batch_size, order.size() - begin);
      Tensor xb({m, d_});
      std::vector<int> yb(m);
      for (std::size_t i = 0; i < m; ++i) {
        std::copy_n(h.data() + order[begin + i] * d_, d_, xb.data() + i * d_);
        yb[i] = labels[order[begin + i]];
      }
      step(xb, yb);
    }
  }
}

ProbeSet make_probes(std::size_t d, std::uint64_t seed, double learning_rate) {
  ProbeSet set;
  for (std::size_t m = 0; m < kModules; ++m)
    for (feat::Feature f : feat::kFeatures)
      set.at(m, f) = LinearProbe(d, feat::class_count(f), num::derive_seed(seed, m * 4 + static_cast<std::size_t>(f)),
                                 learning_rate);
  return set;
}

void ProbedModel::attach_probes(std::uint64_t seed, double learning_rate) {
  probes_ = make_probes(model_->config().d, seed, learning_rate);
}

ProbeSet& ProbedModel::probes() {
  if (!probes_) throw std::logic_error("probes are not attached");
  return *probes_;
}

const ProbeSet& ProbedModel::probes() const {
  if (!probes_) throw std::logic_error("probes are not attached");
  return *probes_;
}

ProbeOutput ProbedModel::probe_forward(const scene::Scene& scene) const {
  const ProbeSet& set = probes();
  const ForwardOutput out = model_->forward_with_taps(scene);
  ProbeOutput p;
  for (std::size_t m = 0; m < kModules; ++m) {
    const auto h = out.hidden.at(m, -1);
    const Tensor row = Tensor::matrix(1, h.size(), {h.begin(), h.end()});
    for (feat::Feature f : feat::kFeatures) {
      const Tensor z = set.at(m, f).logits(row);
      p.logits[m][static_cast<std::size_t>(f)].assign(z.values().begin(), z.values().end());
    }
  }
  return p;
}

void ProbedModel::train_step(const std::array<Tensor, kModules>& last_step_taps,
                             std::span<const feat::MotionLabels> labels) {
  ProbeSet& set = probes();
  for (std::size_t m = 0; m < kModules; ++m)
    for (feat::Feature f : feat::kFeatures) set.at(m, f).step(last_step_taps[m], feature_labels(labels, f));
}

BatchHook ProbedModel::hook() {
  return [this](const std::array<Tensor, kModules>& taps, std::span<const feat::MotionLabels> labels) {
    train_step(taps, labels);
  };
}

Tensor stack_hidden(std::span<const HiddenStateSet> hidden, std::size_t module, long step) {
  if (hidden.empty()) throw std::invalid_argument("no hidden states to stack");
  const std::size_t d = hidden.front().d;
  Tensor out({hidden.size(), d});
  for (std::size_t i = 0; i < hidden.size(); ++i) {
    if (hidden[i].d != d) throw num::ShapeError("hidden state dimensions differ");
    const auto row = hidden[i].at(module, step);
    std::copy(row.begin(), row.end(), out.data() + i * d);
  }
  return out;
}

std::vector<int> feature_labels(std::span<const feat::MotionLabels> labels, feat::Feature f) {
  std::vector<int> out(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) out[i] = feat::label_of(labels[i], f);
  return out;
}

}  // namespace wim::model
