#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "wim/feat/classify.hpp"
#include "wim/model/motionformer.hpp"
#include "wim/num/random.hpp"

namespace wim::model {

using num::Tensor;

namespace {

struct Prepared {
  std::vector<Tensor> tokens;
  std::vector<Tensor> targets;
  std::vector<double> scales;
  std::vector<feat::MotionLabels> labels;
};

Prepared prepare(const MotionFormer& model, std::span<const scene::Scene> scenes, bool with_labels) {
  const ModelConfig& c = model.config();
  Prepared p;
  p.tokens.reserve(scenes.size());
  p.targets.reserve(scenes.size());
  for (const scene::Scene& s : scenes) {
    if (s.past.size() != c.past_steps || s.horizon() != c.future_steps)
      throw std::invalid_argument("scene " + std::to_string(s.id) + " does not match the model horizons");
    p.tokens.push_back(token_features(s.past));
    Tensor t = agent_frame_future(s);
    const double scale = model.output_scale(s.past);
    for (double& v : t.values()) v /= scale;
    p.scales.push_back(scale);
    p.targets.push_back(std::move(t));
    if (with_labels) p.labels.push_back(s.labels ? *s.labels : feat::label_scene(s));
  }
  return p;
}

struct Batch {
  Tensor tokens;
  Tensor targets;
  std::vector<double> scales;
};

Batch gather(const Prepared& p, std::span<const std::size_t> idx, const ModelConfig& c) {
  const std::size_t T = c.past_steps, W = c.future_steps * 2;
  Batch b{Tensor({idx.size() * T, kTokenFeatures}), Tensor({idx.size(), W}), {}};
  for (std::size_t i = 0; i < idx.size(); ++i) {
    std::copy(p.tokens[idx[i]].values().begin(), p.tokens[idx[i]].values().end(),
              b.tokens.data() + i * T * kTokenFeatures);
    std::copy(p.targets[idx[i]].values().begin(), p.targets[idx[i]].values().end(), b.targets.data() + i * W);
    b.scales.push_back(p.scales[idx[i]]);
  }
  return b;
}

// Mean over rows of the winning mode's average pointwise distance, in meters.
double winner_displacement(const Tensor& pred, const Tensor& targets, std::span<const double> scales,
                           const ModelConfig& c) {
  const std::size_t H = c.future_steps, W = H * 2;
  double total = 0.0;
  for (std::size_t b = 0; b < pred.rows(); ++b) {
    double best_mse = std::numeric_limits<double>::infinity(), best_ade = 0.0;
    for (std::size_t j = 0; j < c.modes; ++j) {
      double mse = 0.0, ade = 0.0;
      for (std::size_t t = 0; t < H; ++t) {
        const double dx = pred.at(b, j * W + 2 * t) - targets.at(b, 2 * t);
        const double dy = pred.at(b, j * W + 2 * t + 1) - targets.at(b, 2 * t + 1);
        mse += dx * dx + dy * dy;
        ade += std::sqrt(dx * dx + dy * dy);
      }
      if (mse < best_mse) {
        best_mse = mse;
        best_ade = ade / static_cast<double>(H);
      }
    }
    total += best_ade * scales[b];
  }
  return total;
}

}  // namespace

TrainResult train(MotionFormer& model, std::span<const scene::Scene> scenes, const TrainConfig& config,
                  const BatchHook& hook) {
  if (scenes.empty()) throw std::invalid_argument("training needs a non-empty dataset");
  if (config.batch_size == 0) throw std::invalid_argument("batch size must be positive");
  const ModelConfig& mc = model.config();
  const Prepared data = prepare(model, scenes, static_cast<bool>(hook));
  const std::size_t n = scenes.size(), T = mc.past_steps;
  auto params = model.parameters();
  num::Optimizer opt(config.optimizer, params);

  TrainResult result;
  {
    std::vector<std::size_t> idx(std::min<std::size_t>(n, 1024));
    std::iota(idx.begin(), idx.end(), 0);
    double total = 0.0;
    for (std::size_t begin = 0; begin < idx.size(); begin += config.batch_size) {
      const std::size_t m = std::min(config.batch_size, idx.size() - begin);
      const Batch b = gather(data, std::span(idx).subspan(begin, m), mc);
      num::Tape tape(false);
      const auto g = model.build(tape, b.tokens, m, {});
      total += wta_loss(g.positions, g.logits, b.targets, mc.modes).value().item() * static_cast<double>(m);
    }
    result.loss_trace.push_back(total / static_cast<double>(idx.size()));
  }

  std::vector<Tensor> snapshot;
  auto take_snapshot = [&] {
    snapshot.clear();
    for (const num::Parameter* p : params) snapshot.push_back(p->value);
  };
  take_snapshot();

  num::Rng rng = num::make_rng(config.seed, 0x747261696eULL);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t epoch = 0; epoch < config.epochs && !result.diverged; ++epoch) {
    num::shuffle(order, rng);
    double loss_sum = 0.0, disp_sum = 0.0;
    for (std::size_t begin = 0; begin < n; begin += config.batch_size) {
      const std::size_t m = std::min(config.batch_size, n - begin);
      const std::span<const std::size_t> idx(order.data() + begin, m);
      const Batch b = gather(data, idx, mc);
      try {
        num::Tape tape;
        const auto g = model.build(tape, b.tokens, m, {});
        const num::Var loss = wta_loss(g.positions, g.logits, b.targets, mc.modes);
        opt.zero_grad();
        tape.backward(loss);
        opt.step();
        ++result.steps;
        loss_sum += loss.value().item() * static_cast<double>(m);
        disp_sum += winner_displacement(g.positions.value(), b.targets, b.scales, mc);
        if (hook) {
          std::array<Tensor, kModules> last;
          std::vector<feat::MotionLabels> labels(m);
          for (std::size_t mod = 0; mod < kModules; ++mod) {
            const Tensor& h = g.taps[mod].value();
            last[mod] = Tensor({m, mc.d});
            for (std::size_t i = 0; i < m; ++i)
              std::copy_n(h.data() + (i * T + T - 1) * mc.d, mc.d, last[mod].data() + i * mc.d);
          }
          for (std::size_t i = 0; i < m; ++i) labels[i] = data.labels[idx[i]];
          hook(last, labels);
        }
      } catch (const num::NumericError&) {
        for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = snapshot[i];
        result.diverged = true;
        break;
      }
    }
    if (result.diverged) break;
    result.loss_trace.push_back(loss_sum / static_cast<double>(n));
    result.displacement_trace.push_back(disp_sum / static_cast<double>(n));
    take_snapshot();
    if (config.verbose)
      std::fprintf(stderr, "epoch %zu loss %.6f displacement %.4f m\n", epoch + 1, result.loss_trace.back(),
                   result.displacement_trace.back());
  }
  return result;
}

double evaluate_displacement(const MotionFormer& model, std::span<const scene::Scene> scenes, unsigned threads) {
  if (scenes.empty()) throw std::invalid_argument("evaluation needs a non-empty dataset");
  const auto out = model.forward_batch(scenes, {}, threads, false);
  double total = 0.0;
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    const Tensor gt = agent_frame_future(scenes[i]);
    const ForecastSet& f = out[i].forecast;
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < f.modes; ++j) {
      double ade = 0.0;
      for (std::size_t t = 0; t < f.horizon; ++t) ade += std::hypot(f.x(j, t) - gt.at(t, 0), f.y(j, t) - gt.at(t, 1));
      best = std::min(best, ade / static_cast<double>(f.horizon));
    }
    total += best;
  }
  return total / static_cast<double>(scenes.size());
}

}  // namespace wim::model
