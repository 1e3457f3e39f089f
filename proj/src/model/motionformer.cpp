#include "wim/model/motionformer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include "wim/num/binary_io.hpp"
#include "wim/num/parallel.hpp"
#include "wim/num/random.hpp"

namespace wim::model {

using num::Parameter;
using num::Shape;
using num::Tape;
using num::Tensor;
using num::Var;

namespace {

constexpr std::uint32_t kCheckpointVersion = 2;
constexpr std::size_t kInferenceChunk = 32;

Tensor xavier(std::size_t fan_in, std::size_t fan_out, num::Rng& rng, double gain = 1.0) {
  const double limit = gain * std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::vector<double> v(fan_in * fan_out);
  for (double& x : v) x = num::uniform(rng, -limit, limit);
  return Tensor::matrix(fan_in, fan_out, std::move(v));
}

Tensor gaussian(Shape shape, double stddev, num::Rng& rng) {
  Tensor t(std::move(shape));
  for (double& x : t.values()) x = num::normal(rng, 0.0, stddev);
  return t;
}

Var linear(Tape& tape, const Var& x, Parameter& w, Parameter& b) {
  return num::add_bias(num::matmul(x, tape.param(w)), tape.param(b));
}

}  // namespace

std::string_view to_string(OutputScaling s) { return s == OutputScaling::fixed ? "fixed" : "past-speed"; }

OutputScaling output_scaling_from_string(std::string_view s) {
  if (s == "fixed") return OutputScaling::fixed;
  if (s == "past-speed") return OutputScaling::past_speed;
  throw std::invalid_argument("unknown output scaling '" + std::string(s) + "' (expected fixed or past-speed)");
}

void ModelConfig::validate() const {
  if (d == 0 || heads == 0 || d % heads != 0)
    throw std::invalid_argument("model d (" + std::to_string(d) + ") must be a positive multiple of heads (" +
                                std::to_string(heads) + ")");
  if (modes == 0) throw std::invalid_argument("model needs at least one mode");
  if (past_steps < 2 || future_steps < 1) throw std::invalid_argument("model horizons too short");
  if (ffn == 0) throw std::invalid_argument("model ffn width must be positive");
  if (!(dt > 0.0) || !(position_scale > 0.0)) throw std::invalid_argument("model dt and position_scale must be positive");
  if (output_scaling != OutputScaling::fixed && output_scaling != OutputScaling::past_speed)
    throw std::invalid_argument("unknown output scaling");
  if (!(speed_floor > 0.0) || !std::isfinite(speed_floor)) throw std::invalid_argument("model speed_floor must be positive");
  if (!std::isfinite(steering_gain)) throw std::invalid_argument("model steering gain must be finite");
}

std::size_t ForecastSet::top1() const {
  return static_cast<std::size_t>(std::max_element(confidences.begin(), confidences.end()) - confidences.begin());
}

double ForecastSet::mean_speed(std::size_t mode, double dt) const {
  double path = 0.0, px = 0.0, py = 0.0;
  for (std::size_t t = 0; t < horizon; ++t) {
    path += std::hypot(x(mode, t) - px, y(mode, t) - py);
    px = x(mode, t);
    py = y(mode, t);
  }
  return path / (static_cast<double>(horizon) * dt);
}

double ForecastSet::signed_speed(std::size_t mode, double dt) const {
  return x(mode, horizon - 1) / (static_cast<double>(horizon) * dt);
}

namespace {
std::size_t hidden_offset(const HiddenStateSet& h, std::size_t module, long step) {
  const long steps = static_cast<long>(h.steps);
  const long i = step < 0 ? steps + step : step;
  if (module >= h.modules || i < 0 || i >= steps)
    throw std::out_of_range("hidden state index (" + std::to_string(module) + ", " + std::to_string(step) +
                            ") out of range");
  return (module * h.steps + static_cast<std::size_t>(i)) * h.d;
}
}  // namespace

std::span<const double> HiddenStateSet::at(std::size_t module, long step) const {
  return {values.data() + hidden_offset(*this, module, step), d};
}

std::span<double> HiddenStateSet::at(std::size_t module, long step) {
  return {values.data() + hidden_offset(*this, module, step), d};
}

Tensor token_features(const scene::Trajectory& past) {
  past.validate();
  const std::size_t n = past.size();
  const scene::Pose& ref = past.poses.back();
  const double c = std::cos(ref.heading), s = std::sin(ref.heading);
  Tensor out({n, kTokenFeatures});
  double prev_x = 0.0, prev_y = 0.0, prev_v = 0.0;
  const double vel_scale = 1.0 / (10.0 * past.dt);
  for (std::size_t i = 0; i < n; ++i) {
    const scene::Pose& p = past.poses[i];
    const double x = c * (p.x - ref.x) + s * (p.y - ref.y);
    const double y = -s * (p.x - ref.x) + c * (p.y - ref.y);
    const double dx = i ? x - prev_x : 0.0;
    const double dy = i ? y - prev_y : 0.0;
    const double v = std::hypot(dx, dy) * vel_scale;
    const double a = i > 1 ? (v - prev_v) / past.dt : 0.0;
    const double rel = p.heading - ref.heading;
    double* row = out.data() + i * kTokenFeatures;
    row[0] = dx * vel_scale;
    row[1] = dy * vel_scale;
    row[2] = std::cos(rel);
    row[3] = std::sin(rel);
    row[4] = v;
    row[5] = a;
    row[6 + static_cast<std::size_t>(past.kind)] = 1.0;
    prev_x = x;
    prev_y = y;
    prev_v = v;
  }
  return out;
}

Tensor agent_frame_future(const scene::Scene& scene) {
  const auto& fut = scene.future.poses;
  if (fut.size() < 2) throw std::invalid_argument("scene future has no forecast steps");
  const scene::Pose& ref = scene.past.poses.back();
  const double c = std::cos(ref.heading), s = std::sin(ref.heading);
  Tensor out({fut.size() - 1, 2});
  for (std::size_t t = 1; t < fut.size(); ++t) {
    out[(t - 1) * 2] = c * (fut[t].x - ref.x) + s * (fut[t].y - ref.y);
    out[(t - 1) * 2 + 1] = -s * (fut[t].x - ref.x) + c * (fut[t].y - ref.y);
  }
  return out;
}

Var wta_loss(const Var& pred, const Var& logits, const Tensor& targets, std::size_t modes) {
  const Tensor& P = pred.value();
  const Tensor& L = logits.value();
  if (P.rank() != 2 || L.rank() != 2 || targets.rank() != 2 || modes == 0 || P.rows() != L.rows() ||
      P.rows() != targets.rows() || L.cols() != modes || P.cols() != modes * targets.cols())
    throw num::ShapeError("wta_loss: incompatible shapes " + num::shape_str(P.shape()) + ", " +
                          num::shape_str(L.shape()) + ", targets " + num::shape_str(targets.shape()));
  const std::size_t batch = P.rows(), width = targets.cols();
  std::vector<std::size_t> winner(batch);
  std::vector<double> probs(batch * modes);
  double total = 0.0;
  for (std::size_t b = 0; b < batch; ++b) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < modes; ++j) {
      double err = 0.0;
      for (std::size_t t = 0; t < width; ++t) {
        const double diff = P.at(b, j * width + t) - targets.at(b, t);
        err += diff * diff;
      }
      err /= static_cast<double>(width);
      if (err < best) {
        best = err;
        winner[b] = j;
      }
    }
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < modes; ++j) mx = std::max(mx, L.at(b, j));
    double z = 0.0;
    for (std::size_t j = 0; j < modes; ++j) z += std::exp(L.at(b, j) - mx);
    for (std::size_t j = 0; j < modes; ++j) probs[b * modes + j] = std::exp(L.at(b, j) - mx) / z;
    total += best + (mx + std::log(z) - L.at(b, winner[b]));
  }
  const double inv_b = 1.0 / static_cast<double>(batch);
  const std::size_t ip = pred.id(), il = logits.id();
  return pred.tape().record(
      "wta_loss", Tensor::scalar(total * inv_b), {pred, logits},
      [ip, il, winner, probs, targets, batch, width, modes, inv_b](Tape& t, std::size_t self) {
        const double g = t.output_grad(self)[0] * inv_b;
        if (t.needs_grad(ip)) {
          Tensor& gp = t.grad_of(ip);
          const Tensor& P = t.value(ip);
          for (std::size_t b = 0; b < batch; ++b)
            for (std::size_t k = 0; k < width; ++k) {
              const std::size_t c = winner[b] * width + k;
              gp.at(b, c) += g * 2.0 * (P.at(b, c) - targets.at(b, k)) / static_cast<double>(width);
            }
        }
        if (t.needs_grad(il)) {
          Tensor& gl = t.grad_of(il);
          for (std::size_t b = 0; b < batch; ++b)
            for (std::size_t j = 0; j < modes; ++j)
              gl.at(b, j) += g * (probs[b * modes + j] - (j == winner[b] ? 1.0 : 0.0));
        }
      });
}

MotionFormer::MotionFormer(ModelConfig config) : config_(config) {
  config_.validate();
  const std::size_t d = config_.d, f = config_.ffn;
  num::Rng rng = num::make_rng(config_.seed, 0x6d6f64656cULL);
  auto vec = [](std::size_t n, double v) { return Tensor::filled({n}, v); };
  in_w1_ = Parameter("input.w1", xavier(kTokenFeatures, d, rng));
  in_b1_ = Parameter("input.b1", vec(d, 0.0));
  in_w2_ = Parameter("input.w2", xavier(d, d, rng));
  in_b2_ = Parameter("input.b2", vec(d, 0.0));
  pos_ = Parameter("input.position", gaussian({config_.past_steps, d}, 0.1, rng));
  for (std::size_t l = 0; l < blocks_.size(); ++l) {
    Block& b = blocks_[l];
    const std::string p = "block" + std::to_string(l) + ".";
    b.ln1_g = Parameter(p + "ln1.gamma", vec(d, 1.0));
    b.ln1_b = Parameter(p + "ln1.beta", vec(d, 0.0));
    b.wq = Parameter(p + "attn.wq", xavier(d, d, rng));
    b.wk = Parameter(p + "attn.wk", xavier(d, d, rng));
    b.wv = Parameter(p + "attn.wv", xavier(d, d, rng));
    b.wo = Parameter(p + "attn.wo", xavier(d, d, rng));
    b.bo = Parameter(p + "attn.bo", vec(d, 0.0));
    b.ln2_g = Parameter(p + "ln2.gamma", vec(d, 1.0));
    b.ln2_b = Parameter(p + "ln2.beta", vec(d, 0.0));
    b.w1 = Parameter(p + "ffn.w1", xavier(d, f, rng));
    b.b1 = Parameter(p + "ffn.b1", vec(f, 0.0));
    b.w2 = Parameter(p + "ffn.w2", xavier(f, d, rng));
    b.b2 = Parameter(p + "ffn.b2", vec(d, 0.0));
  }
  const std::size_t out = config_.modes * config_.future_steps * 2 + config_.modes;
  head_w1_ = Parameter("head.w1", xavier(d, f, rng));
  head_b1_ = Parameter("head.b1", vec(f, 0.0));
  head_w2_ = Parameter("head.w2", xavier(f, out, rng));
  head_b2_ = Parameter("head.b2", vec(out, 0.0));
}

std::vector<Parameter*> MotionFormer::parameters() {
  std::vector<Parameter*> ps{&in_w1_, &in_b1_, &in_w2_, &in_b2_, &pos_};
  for (Block& b : blocks_)
    for (Parameter* p : {&b.ln1_g, &b.ln1_b, &b.wq, &b.wk, &b.wv, &b.wo, &b.bo, &b.ln2_g, &b.ln2_b, &b.w1, &b.b1,
                         &b.w2, &b.b2})
      ps.push_back(p);
  for (Parameter* p : {&head_w1_, &head_b1_, &head_w2_, &head_b2_}) ps.push_back(p);
  return ps;
}

std::vector<const Parameter*> MotionFormer::parameters() const {
  auto ps = const_cast<MotionFormer*>(this)->parameters();
  return {ps.begin(), ps.end()};
}

std::size_t MotionFormer::parameter_count() const {
  std::size_t n = 0;
  for (const Parameter* p : parameters()) n += p->value.size();
  return n;
}

void MotionFormer::check_directives(std::span<const SteeringDirective> directives) const {
  for (const SteeringDirective& s : directives) {
    if (s.module >= kModules) throw std::invalid_argument("steering module " + std::to_string(s.module) + " out of range");
    if (s.vector.size() != config_.d)
      throw std::invalid_argument("steering vector has dimension " + std::to_string(s.vector.size()) +
                                  ", model expects " + std::to_string(config_.d));
    if (!std::isfinite(s.tau)) throw std::invalid_argument("steering temperature must be finite");
    for (double v : s.vector)
      if (!std::isfinite(v)) throw std::invalid_argument("steering vector must be finite");
  }
}

MotionFormer::Graph MotionFormer::build(Tape& tape, const Tensor& tokens, std::size_t batch,
                                        std::span<const SteeringDirective> directives) const {
  check_directives(directives);
  const std::size_t T = config_.past_steps;
  if (tokens.rank() != 2 || tokens.cols() != kTokenFeatures || tokens.rows() != batch * T)
    throw num::ShapeError("model input must be " + num::shape_str({batch * T, kTokenFeatures}) + ", got " +
                          num::shape_str(tokens.shape()));
  auto& self = const_cast<MotionFormer&>(*this);

  auto inject = [&](const Var& h, std::size_t module) {
    bool any = false;
    std::vector<double> shift(config_.d, 0.0);
    for (const SteeringDirective& s : directives) {
      if (s.module != module) continue;
      any = true;
      for (std::size_t j = 0; j < config_.d; ++j) shift[j] += config_.steering_gain * s.tau * s.vector[j];
    }
    return any ? num::add_bias(h, tape.constant(Tensor::vector(std::move(shift)))) : h;
  };

  Graph g;
  Var h = linear(tape, tape.constant(tokens), self.in_w1_, self.in_b1_);
  h = linear(tape, num::relu(h), self.in_w2_, self.in_b2_);
  h = num::add_tiled(h, tape.param(self.pos_));
  h = inject(h, 0);
  g.taps[0] = h;
  for (std::size_t l = 0; l < blocks_.size(); ++l) {
    Block& b = self.blocks_[l];
    const Var a = num::layer_norm(h, tape.param(b.ln1_g), tape.param(b.ln1_b));
    const Var att = num::attention(num::matmul(a, tape.param(b.wq)), num::matmul(a, tape.param(b.wk)),
                                   num::matmul(a, tape.param(b.wv)), batch, T, config_.heads);
    h = num::add(h, linear(tape, att, b.wo, b.bo));
    const Var f = num::layer_norm(h, tape.param(b.ln2_g), tape.param(b.ln2_b));
    h = num::add(h, linear(tape, num::relu(linear(tape, f, b.w1, b.b1)), b.w2, b.b2));
    h = inject(h, l + 1);
    g.taps[l + 1] = h;
  }
  std::vector<std::size_t> last(batch);
  for (std::size_t i = 0; i < batch; ++i) last[i] = i * T + T - 1;
  const Var z = linear(tape, num::relu(linear(tape, num::gather_rows(h, std::move(last)), self.head_w1_, self.head_b1_)),
                       self.head_w2_, self.head_b2_);
  const std::size_t npos = config_.modes * config_.future_steps * 2;
  g.positions = num::slice_cols(z, 0, npos);
  g.logits = num::slice_cols(z, npos, config_.modes);
  return g;
}

std::vector<ForwardOutput> MotionFormer::forward_batch(std::span<const scene::Scene> scenes,
                                                       std::span<const SteeringDirective> directives, unsigned threads,
                                                       bool keep_hidden) const {
  check_directives(directives);
  const std::size_t T = config_.past_steps, d = config_.d, H = config_.future_steps, K = config_.modes;
  for (const scene::Scene& s : scenes)
    if (s.past.size() != T)
      throw std::invalid_argument("scene " + std::to_string(s.id) + " has " + std::to_string(s.past.size()) +
                                  " past steps, model expects " + std::to_string(T));
  std::vector<ForwardOutput> out(scenes.size());
  const std::size_t chunks = (scenes.size() + kInferenceChunk - 1) / kInferenceChunk;
  num::parallel_for(chunks, threads, [&](std::size_t c) {
    const std::size_t begin = c * kInferenceChunk;
    const std::size_t n = std::min(kInferenceChunk, scenes.size() - begin);
    Tensor tokens({n * T, kTokenFeatures});
    for (std::size_t i = 0; i < n; ++i) {
      const Tensor f = token_features(scenes[begin + i].past);
      std::copy(f.values().begin(), f.values().end(), tokens.data() + i * T * kTokenFeatures);
    }
    Tape tape(false);
    const Graph g = build(tape, tokens, n, directives);
    const Tensor& P = g.positions.value();
    const Tensor& L = g.logits.value();
    for (std::size_t i = 0; i < n; ++i) {
      ForwardOutput& o = out[begin + i];
      o.forecast.modes = K;
      o.forecast.horizon = H;
      o.forecast.positions.resize(K * H * 2);
      const double scale = output_scale(scenes[begin + i].past);
      for (std::size_t j = 0; j < K * H * 2; ++j) o.forecast.positions[j] = P.at(i, j) * scale;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < K; ++j) mx = std::max(mx, L.at(i, j));
      double z = 0.0;
      o.forecast.confidences.resize(K);
      for (std::size_t j = 0; j < K; ++j) z += o.forecast.confidences[j] = std::exp(L.at(i, j) - mx);
      for (double& p : o.forecast.confidences) p /= z;
      if (!keep_hidden) continue;
      o.hidden.modules = kModules;
      o.hidden.steps = T;
      o.hidden.d = d;
      o.hidden.values.resize(kModules * T * d);
      for (std::size_t m = 0; m < kModules; ++m) {
        const double* src = g.taps[m].value().data() + i * T * d;
        std::copy(src, src + T * d, o.hidden.values.data() + m * T * d);
      }
    }
  });
  return out;
}

double MotionFormer::output_scale(const scene::Trajectory& past) const {
  if (config_.output_scaling == OutputScaling::fixed) return config_.position_scale;
  double path = 0.0;
  for (std::size_t i = 1; i < past.size(); ++i)
    path += std::hypot(past.poses[i].x - past.poses[i - 1].x, past.poses[i].y - past.poses[i - 1].y);
  const double speed = past.size() > 1 ? path / (static_cast<double>(past.size() - 1) * past.dt) : 0.0;
  return std::max(speed, config_.speed_floor) * static_cast<double>(config_.future_steps) * config_.dt;
}

ForwardOutput MotionFormer::forward_with_taps(const scene::Scene& scene,
                                              std::span<const SteeringDirective> directives) const {
  return std::move(forward_batch(std::span<const scene::Scene>(&scene, 1), directives, 1, true).front());
}

std::vector<std::uint8_t> MotionFormer::serialize() const {
  num::BinaryWriter w;
  w.magic("WIMM");
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(config_.d));
  w.u32(static_cast<std::uint32_t>(config_.heads));
  w.u32(static_cast<std::uint32_t>(config_.modes));
  w.u32(static_cast<std::uint32_t>(config_.past_steps));
  w.u32(static_cast<std::uint32_t>(config_.future_steps));
  w.u32(static_cast<std::uint32_t>(config_.ffn));
  w.f64(config_.dt);
  w.f64(config_.position_scale);
  w.f64(config_.steering_gain);
  w.u8(static_cast<std::uint8_t>(config_.output_scaling));
  w.f64(config_.speed_floor);
  w.u64(config_.seed);
  const auto params = parameters();
  w.u32(static_cast<std::uint32_t>(params.size()));
  for (const Parameter* p : params) {
    w.str(p->name);
    w.u64(p->value.size());
    w.f64s(p->value.values());
  }
  return w.bytes();
}

MotionFormer MotionFormer::deserialize(std::span<const std::uint8_t> bytes) {
  num::BinaryReader r({bytes.begin(), bytes.end()});
  r.expect_magic("WIMM");
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion)
    throw num::FormatError("unsupported WIMM version " + std::to_string(version));
  ModelConfig c;
  c.d = r.u32();
  c.heads = r.u32();
  c.modes = r.u32();
  c.past_steps = r.u32();
  c.future_steps = r.u32();
  c.ffn = r.u32();
  c.dt = r.f64();
  c.position_scale = r.f64();
  c.steering_gain = r.f64();
  c.output_scaling = static_cast<OutputScaling>(r.u8());
  c.speed_floor = r.f64();
  c.seed = r.u64();
  try {
    c.validate();
  } catch (const std::invalid_argument& e) {
    throw num::FormatError(std::string("invalid WIMM config: ") + e.what());
  }
  MotionFormer m(c);
  auto params = m.parameters();
  const std::uint32_t count = r.u32();
  if (count != params.size())
    throw num::FormatError("WIMM parameter count " + std::to_string(count) + " does not match " +
                           std::to_string(params.size()));
  for (Parameter* p : params) {
    const std::size_t at = r.offset();
    const std::string name = r.str();
    const std::uint64_t n = r.u64();
    if (name != p->name || n != p->value.size())
      throw num::FormatError("WIMM parameter mismatch at byte offset " + std::to_string(at) + ": expected " + p->name);
    p->value = Tensor(p->value.shape(), r.f64s(n));
  }
  r.expect_end();
  return m;
}

void MotionFormer::save(const std::filesystem::path& path) const {
  num::write_file_bytes(path, serialize());
}

MotionFormer MotionFormer::load(const std::filesystem::path& path) {
  return deserialize(num::read_file_bytes(path));
}

}  // namespace wim::model
