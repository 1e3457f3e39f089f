#include "wim/sae/sae.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <stdexcept>

#include "wim/num/binary_io.hpp"
#include "wim/num/optim.hpp"
#include "wim/num/random.hpp"

namespace wim::sae {

using num::Parameter;
using num::Tape;
using num::Tensor;
using num::Var;

namespace {

constexpr std::uint32_t kSaeVersion = 1;
constexpr std::array<std::string_view, 7> kVariantNames = {"fc-relu",       "fc-jumprelu", "fc-tied",
                                                           "conv",          "conv-jumprelu", "mixer",
                                                           "mixer-jumprelu"};

Tensor uniform_tensor(num::Shape shape, double limit, num::Rng& rng) {
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = num::uniform(rng, -limit, limit);
  return t;
}

bool is_fc(SaeVariant v) { return v == SaeVariant::fc_relu || v == SaeVariant::fc_jumprelu || v == SaeVariant::fc_tied; }
bool is_conv(SaeVariant v) { return v == SaeVariant::conv || v == SaeVariant::conv_jumprelu; }

}  // namespace

std::string_view to_string(SaeVariant v) { return kVariantNames.at(static_cast<std::size_t>(v)); }

SaeVariant sae_variant_from_string(std::string_view s) {
  for (std::size_t i = 0; i < kVariantNames.size(); ++i)
    if (kVariantNames[i] == s) return static_cast<SaeVariant>(i);
  throw std::invalid_argument("unknown SAE variant '" + std::string(s) + "'");
}

bool uses_jumprelu(SaeVariant v) {
  return v == SaeVariant::fc_jumprelu || v == SaeVariant::conv_jumprelu || v == SaeVariant::mixer_jumprelu;
}

std::size_t SaeConfig::code_dim() const {
  if (is_fc(variant)) return sparse_dim;
  if (is_conv(variant)) return channels * d;
  return d * mixer_expansion;
}

void SaeConfig::validate() const {
  if (d == 0) throw std::invalid_argument("SAE input dimension must be positive");
  if (!(theta >= 0.0)) throw std::invalid_argument("JumpReLU threshold must be >= 0");
  if (is_fc(variant) && sparse_dim == 0) throw std::invalid_argument("SAE sparse dimension must be >= 1");
  if (is_conv(variant) && (channels == 0 || kernel == 0))
    throw std::invalid_argument("conv SAE needs positive channels and kernel");
  if (!is_fc(variant) && !is_conv(variant) && (patch == 0 || d % patch != 0 || mixer_expansion == 0))
    throw std::invalid_argument("mixer SAE patch " + std::to_string(patch) + " must divide d " + std::to_string(d));
}

SaeModel::SaeModel(SaeConfig config) : config_(config) {
  config_.validate();
  num::Rng rng = num::make_rng(config_.seed, 0x736165ULL);
  const std::size_t d = config_.d, code = config_.code_dim();
  b_enc_ = Parameter("b_enc", Tensor::filled({code}, 0.0));
  b_dec_ = Parameter("b_dec", Tensor::filled({d}, 0.0));
  if (is_fc(config_.variant)) {
    w_enc_ = Parameter("w_enc", uniform_tensor({code, d}, std::sqrt(6.0 / static_cast<double>(code + d)), rng));
    if (config_.variant != SaeVariant::fc_tied) w_dec_ = Parameter("w_dec", w_enc_.value.transposed());
  } else if (is_conv(config_.variant)) {
    const std::size_t c = config_.channels, k = config_.kernel;
    w_enc_ = Parameter("w_enc", uniform_tensor({c, 1, k}, 1.0 / std::sqrt(static_cast<double>(k)), rng));
    w_dec_ = Parameter("w_dec", uniform_tensor({1, c, k}, 1.0 / std::sqrt(static_cast<double>(c * k)), rng));
  } else {
    const std::size_t p = config_.patch, e = p * config_.mixer_expansion, tokens = d / p;
    w_enc_ = Parameter("w_enc", uniform_tensor({p, e}, std::sqrt(6.0 / static_cast<double>(p + e)), rng));
    w_dec_ = Parameter("w_dec", w_enc_.value.transposed());
    Tensor mix = Tensor::identity(tokens);
    for (double& v : mix.values()) v += num::uniform(rng, -0.05, 0.05);
    mix_enc_ = Parameter("mix_enc", mix);
    mix_dec_ = Parameter("mix_dec", mix.transposed());
  }
}

std::string SaeModel::tag() const {
  return std::string(to_string(config_.variant)) + "-" + std::to_string(code_dim());
}

std::vector<Parameter*> SaeModel::parameters() {
  std::vector<Parameter*> ps{&w_enc_, &b_enc_};
  if (config_.variant != SaeVariant::fc_tied) ps.push_back(&w_dec_);
  ps.push_back(&b_dec_);
  if (!is_fc(config_.variant) && !is_conv(config_.variant)) {
    ps.push_back(&mix_enc_);
    ps.push_back(&mix_dec_);
  }
  return ps;
}

std::vector<const Parameter*> SaeModel::parameters() const {
  auto ps = const_cast<SaeModel*>(this)->parameters();
  return {ps.begin(), ps.end()};
}

Var SaeModel::activation(const Var& pre) const {
  return uses_jumprelu(config_.variant) ? num::jump_relu(pre, config_.theta) : num::relu(pre);
}

namespace {
Var pre_activation_var(Tape& tape, const Var& h, const SaeConfig& c, Parameter& w_enc, Parameter& b_enc,
                       Parameter& b_dec, Parameter& mix_enc) {
  const std::size_t n = h.value().rows(), d = c.d;
  const Var x = num::add_bias(h, num::scale(tape.param(b_dec), -1.0));
  Var pre;
  if (is_fc(c.variant)) {
    pre = num::matmul_nt(x, tape.param(w_enc));
  } else if (is_conv(c.variant)) {
    pre = num::circular_conv1d(x, tape.param(w_enc), 1, d);
  } else {
    const std::size_t p = c.patch, tokens = d / p, e = p * c.mixer_expansion;
    const Var mixed = num::token_mix(x, tape.param(mix_enc), tokens, p);
    pre = num::reshape(num::matmul(num::reshape(mixed, {n * tokens, p}), tape.param(w_enc)), {n, tokens * e});
  }
  return num::add_bias(pre, tape.param(b_enc));
}
}  // namespace

Var SaeModel::encode_var(Tape& tape, const Var& h) {
  if (h.value().rank() != 2 || h.value().cols() != config_.d)
    throw num::ShapeError("SAE encode expects (n x " + std::to_string(config_.d) + "), got " +
                          num::shape_str(h.value().shape()));
  return activation(pre_activation_var(tape, h, config_, w_enc_, b_enc_, b_dec_, mix_enc_));
}

Var SaeModel::decode_var(Tape& tape, const Var& s) {
  const std::size_t code = code_dim(), d = config_.d;
  if (s.value().rank() != 2 || s.value().cols() != code)
    throw num::ShapeError("SAE decode expects (n x " + std::to_string(code) + "), got " +
                          num::shape_str(s.value().shape()));
  const std::size_t n = s.value().rows();
  Var out;
  if (config_.variant == SaeVariant::fc_tied) {
    out = num::matmul(s, tape.param(w_enc_));
  } else if (is_fc(config_.variant)) {
    out = num::matmul_nt(s, tape.param(w_dec_));
  } else if (is_conv(config_.variant)) {
    out = num::circular_conv1d(s, tape.param(w_dec_), config_.channels, d);
  } else {
    const std::size_t p = config_.patch, tokens = d / p, e = p * config_.mixer_expansion;
    const Var un = num::reshape(num::matmul(num::reshape(s, {n * tokens, e}), tape.param(w_dec_)), {n, d});
    out = num::token_mix(un, tape.param(mix_dec_), tokens, p);
  }
  return num::add_bias(out, tape.param(b_dec_));
}

Tensor SaeModel::pre_activations(const Tensor& h) const {
  Tape tape(false);
  auto& self = const_cast<SaeModel&>(*this);
  return pre_activation_var(tape, tape.constant(h), config_, self.w_enc_, self.b_enc_, self.b_dec_, self.mix_enc_)
      .value();
}

Tensor SaeModel::encode(const Tensor& h) const {
  Tape tape(false);
  return const_cast<SaeModel&>(*this).encode_var(tape, tape.constant(h)).value();
}

Tensor SaeModel::decode(const Tensor& s) const {
  Tape tape(false);
  return const_cast<SaeModel&>(*this).decode_var(tape, tape.constant(s)).value();
}

Tensor SaeModel::decoder_matrix() const {
  const std::size_t code = code_dim(), d = config_.d;
  if (config_.variant == SaeVariant::fc_tied) return w_enc_.value.transposed();
  if (is_fc(config_.variant)) return w_dec_.value;
  // Linear part of decode applied to the unit codes.
  Tensor basis = Tensor::identity(code);
  Tensor out = decode(basis);
  for (std::size_t r = 0; r < code; ++r)
    for (std::size_t c = 0; c < d; ++c) out.at(r, c) -= b_dec_.value[c];
  return out.transposed();
}

std::vector<std::uint8_t> SaeModel::serialize() const {
  num::BinaryWriter w;
  w.magic("WIMS");
  w.u32(kSaeVersion);
  w.u8(static_cast<std::uint8_t>(config_.variant));
  w.u32(static_cast<std::uint32_t>(config_.d));
  w.u32(static_cast<std::uint32_t>(config_.sparse_dim));
  w.u32(static_cast<std::uint32_t>(config_.channels));
  w.u32(static_cast<std::uint32_t>(config_.kernel));
  w.u32(static_cast<std::uint32_t>(config_.patch));
  w.u32(static_cast<std::uint32_t>(config_.mixer_expansion));
  w.f64(config_.theta);
  w.u64(config_.seed);
  const auto ps = parameters();
  w.u32(static_cast<std::uint32_t>(ps.size()));
  for (const Parameter* p : ps) {
    w.str(p->name);
    w.u64(p->value.size());
    w.f64s(p->value.values());
  }
  return w.bytes();
}

SaeModel SaeModel::deserialize(std::span<const std::uint8_t> bytes) {
  num::BinaryReader r({bytes.begin(), bytes.end()});
  r.expect_magic("WIMS");
  const std::uint32_t version = r.u32();
  if (version != kSaeVersion) throw num::FormatError("unsupported WIMS version " + std::to_string(version));
  SaeConfig c;
  const std::uint8_t tag = r.u8();
  if (tag >= kVariantNames.size()) throw num::FormatError("unknown WIMS variant tag " + std::to_string(tag));
  c.variant = static_cast<SaeVariant>(tag);
  c.d = r.u32();
  c.sparse_dim = r.u32();
  c.channels = r.u32();
  c.kernel = r.u32();
  c.patch = r.u32();
  c.mixer_expansion = r.u32();
  c.theta = r.f64();
  c.seed = r.u64();
  try {
    c.validate();
  } catch (const std::invalid_argument& e) {
    throw num::FormatError(std::string("invalid WIMS config: ") + e.what());
  }
  SaeModel m(c);
  auto ps = m.parameters();
  if (r.u32() != ps.size()) throw num::FormatError("WIMS parameter count mismatch");
  for (Parameter* p : ps) {
    const std::size_t at = r.offset();
    const std::string name = r.str();
    const std::uint64_t n = r.u64();
    if (name != p->name || n != p->value.size())
      throw num::FormatError("WIMS parameter mismatch at byte offset " + std::to_string(at) + ": expected " + p->name);
    p->value = Tensor(p->value.shape(), r.f64s(n));
  }
  r.expect_end();
  return m;
}

void SaeModel::save(const std::filesystem::path& path) const { num::write_file_bytes(path, serialize()); }

SaeModel SaeModel::load(const std::filesystem::path& path) { return deserialize(num::read_file_bytes(path)); }

SaeLoss evaluate_sae(const SaeModel& model, const Tensor& h, double lambda) {
  if (h.rank() != 2 || h.rows() == 0) throw std::invalid_argument("SAE evaluation needs a non-empty dump");
  SaeLoss loss;
  const std::size_t chunk = 1024;
  for (std::size_t begin = 0; begin < h.rows(); begin += chunk) {
    const std::size_t m = std::min(chunk, h.rows() - begin);
    Tensor rows({m, h.cols()});
    std::copy_n(h.data() + begin * h.cols(), m * h.cols(), rows.data());
    const Tensor s = model.encode(rows);
    const Tensor rec = model.decode(s);
    for (std::size_t i = 0; i < rows.size(); ++i) loss.l2 += (rows[i] - rec[i]) * (rows[i] - rec[i]);
    for (double v : s.values()) loss.l1 += std::abs(v);
  }
  loss.l2 /= static_cast<double>(h.rows());
  loss.total = loss.l2 + lambda * loss.l1;
  return loss;
}

SaeTrainResult train_sae(const SaeConfig& config, const Tensor& h, const SaeTrainConfig& train) {
  if (h.rank() != 2 || h.rows() == 0) throw std::invalid_argument("SAE training needs a non-empty dump");
  if (h.cols() != config.d)
    throw num::ShapeError("SAE d=" + std::to_string(config.d) + " does not match dump rows of width " +
                          std::to_string(h.cols()));
  if (!(train.lambda > 0.0)) throw std::invalid_argument("SAE lambda must be positive");
  if (train.batch_size == 0) throw std::invalid_argument("SAE batch size must be positive");
  SaeTrainResult result;
  SaeModel model(config);
  auto params = model.parameters();
  num::Optimizer opt(num::OptimizerConfig::adam(train.learning_rate), params);

  auto record_epoch = [&](std::size_t epoch) {
    const SaeLoss loss = evaluate_sae(model, h, train.lambda);
    result.trace.push_back(loss);
    if (train.on_epoch) train.on_epoch(epoch, model);
    if (epoch == 0 || loss.total < result.trace[result.best_epoch].total) {
      result.best_epoch = epoch;
      result.model = model;
    }
    if (train.verbose)
      std::fprintf(stderr, "sae epoch %zu total %.6f l2 %.6f l1 %.3f\n", epoch, loss.total, loss.l2, loss.l1);
  };
  record_epoch(0);

  num::Rng rng = num::make_rng(train.seed, 0x7361652d7472ULL);
  std::vector<std::size_t> order(h.rows());
  std::iota(order.begin(), order.end(), 0);
  const std::size_t d = h.cols();
  for (std::size_t epoch = 1; epoch <= train.epochs; ++epoch) {
    num::shuffle(order, rng);
    try {
      for (std::size_t begin = 0; begin < order.size(); begin += train.batch_size) {
        const std::size_t m = std::min(train.batch_size, order.size() - begin);
        Tensor batch({m, d});
        for (std::size_t i = 0; i < m; ++i) std::copy_n(h.data() + order[begin + i] * d, d, batch.data() + i * d);
        Tape tape;
        const Var x = tape.constant(batch);
        const Var s = model.encode_var(tape, x);
        const Var rec = model.decode_var(tape, s);
        const Var l2 = num::scale(num::sum_squares(num::sub(rec, x)), 1.0 / static_cast<double>(m));
        const Var loss = num::add(l2, num::scale(num::sum_abs(s), train.lambda));
        opt.zero_grad();
        tape.backward(loss);
        opt.step();
      }
    } catch (const num::NumericError&) {
      result.diverged = true;
      break;
    }
    record_epoch(epoch);
  }
  return result;
}

// ---------------------------------------------------------------------------

void KoopmanConfig::validate() const {
  if (d == 0 || latent == 0) throw std::invalid_argument("Koopman dimensions must be positive");
  if (!(consistency >= 0.0)) throw std::invalid_argument("Koopman consistency weight must be >= 0");
}

KoopmanModel::KoopmanModel(KoopmanConfig config) : config_(config) {
  config_.validate();
  num::Rng rng = num::make_rng(config_.seed, 0x6b6f6f706d616eULL);
  const std::size_t d = config_.d, k = config_.latent;
  w_e_ = Parameter("w_enc", uniform_tensor({d, k}, std::sqrt(6.0 / static_cast<double>(d + k)), rng));
  b_e_ = Parameter("b_enc", Tensor::filled({k}, 0.0));
  w_d_ = Parameter("w_dec", uniform_tensor({k, d}, std::sqrt(6.0 / static_cast<double>(d + k)), rng));
  b_d_ = Parameter("b_dec", Tensor::filled({d}, 0.0));
  Tensor eye = Tensor::identity(k).reshaped({k * k});
  b_c_ = Parameter("c.bias", eye);
  b_b_ = Parameter("d.bias", eye);
  if (config_.input_conditioned) {
    const double limit = 0.01 / std::sqrt(static_cast<double>(k));
    w_c_ = Parameter("c.weight", uniform_tensor({k, k * k}, limit, rng));
    w_b_ = Parameter("d.weight", uniform_tensor({k, k * k}, limit, rng));
  }
}

std::string KoopmanModel::tag() const { return "koopman-" + std::to_string(config_.latent); }

std::vector<Parameter*> KoopmanModel::parameters() {
  std::vector<Parameter*> ps{&w_e_, &b_e_, &w_d_, &b_d_, &b_c_, &b_b_};
  if (config_.input_conditioned) {
    ps.push_back(&w_c_);
    ps.push_back(&w_b_);
  }
  return ps;
}

std::vector<Parameter*> KoopmanModel::operator_parameters() {
  if (config_.input_conditioned) return {&w_c_, &b_c_, &w_b_, &b_b_};
  return {&b_c_, &b_b_};
}

std::vector<const Parameter*> KoopmanModel::parameters() const {
  auto ps = const_cast<KoopmanModel*>(this)->parameters();
  return {ps.begin(), ps.end()};
}

std::vector<std::uint8_t> KoopmanModel::serialize() const {
  num::BinaryWriter w;
  w.magic("WIMK");
  w.u32(kSaeVersion);
  w.u32(static_cast<std::uint32_t>(config_.d));
  w.u32(static_cast<std::uint32_t>(config_.latent));
  w.f64(config_.consistency);
  w.u8(config_.input_conditioned ? 1 : 0);
  w.u64(config_.seed);
  const auto ps = parameters();
  w.u32(static_cast<std::uint32_t>(ps.size()));
  for (const Parameter* p : ps) {
    w.str(p->name);
    w.u64(p->value.size());
    w.f64s(p->value.values());
  }
  return w.bytes();
}

KoopmanModel KoopmanModel::deserialize(std::span<const std::uint8_t> bytes) {
  num::BinaryReader r({bytes.begin(), bytes.end()});
  r.expect_magic("WIMK");
  const std::uint32_t version = r.u32();
  if (version != kSaeVersion) throw num::FormatError("unsupported WIMK version " + std::to_string(version));
  KoopmanConfig c;
  c.d = r.u32();
  c.latent = r.u32();
  c.consistency = r.f64();
  c.input_conditioned = r.u8() != 0;
  c.seed = r.u64();
  try {
    c.validate();
  } catch (const std::invalid_argument& e) {
    throw num::FormatError(std::string("invalid WIMK config: ") + e.what());
  }
  KoopmanModel m(c);
  auto ps = m.parameters();
  if (r.u32() != ps.size()) throw num::FormatError("WIMK parameter count mismatch");
  for (Parameter* p : ps) {
    const std::size_t at = r.offset();
    const std::string name = r.str();
    const std::uint64_t n = r.u64();
    if (name != p->name || n != p->value.size())
      throw num::FormatError("WIMK parameter mismatch at byte offset " + std::to_string(at) + ": expected " + p->name);
    p->value = Tensor(p->value.shape(), r.f64s(n));
  }
  r.expect_end();
  return m;
}

void KoopmanModel::save(const std::filesystem::path& path) const { num::write_file_bytes(path, serialize()); }

KoopmanModel KoopmanModel::load(const std::filesystem::path& path) { return deserialize(num::read_file_bytes(path)); }

Tensor KoopmanModel::encode(const Tensor& h) const {
  Tape tape(false);
  auto& self = const_cast<KoopmanModel&>(*this);
  return num::tanh(num::add_bias(num::matmul(tape.constant(h), tape.param(self.w_e_)), tape.param(self.b_e_))).value();
}

Tensor KoopmanModel::decode(const Tensor& z) const {
  Tape tape(false);
  auto& self = const_cast<KoopmanModel&>(*this);
  return num::add_bias(num::matmul(tape.constant(z), tape.param(self.w_d_)), tape.param(self.b_d_)).value();
}

Var KoopmanModel::operators(Tape& tape, const Var& zbar, Parameter& w, Parameter& b, std::size_t batch) {
  if (config_.input_conditioned) return num::add_bias(num::matmul(zbar, tape.param(w)), tape.param(b));
  const std::size_t kk = config_.latent * config_.latent;
  return num::add_bias(tape.constant(Tensor({batch, kk})), tape.param(b));
}

namespace {
Tensor averaging_matrix(std::size_t batch, std::size_t steps) {
  Tensor a({batch, batch * steps});
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t t = 0; t < steps; ++t) a.at(b, b * steps + t) = 1.0 / static_cast<double>(steps);
  return a;
}
}  // namespace

Tensor KoopmanModel::forward_operator(const Tensor& sequence) const {
  Tape tape(false);
  auto& self = const_cast<KoopmanModel&>(*this);
  const Var z = tape.constant(encode(sequence));
  const Var zbar = num::matmul(tape.constant(averaging_matrix(1, sequence.rows())), z);
  return self.operators(tape, zbar, self.w_c_, self.b_c_, 1).value().reshaped({config_.latent, config_.latent});
}

Tensor KoopmanModel::backward_operator(const Tensor& sequence) const {
  Tape tape(false);
  auto& self = const_cast<KoopmanModel&>(*this);
  const Var z = tape.constant(encode(sequence));
  const Var zbar = num::matmul(tape.constant(averaging_matrix(1, sequence.rows())), z);
  return self.operators(tape, zbar, self.w_b_, self.b_b_, 1).value().reshaped({config_.latent, config_.latent});
}

KoopmanModel::Terms KoopmanModel::loss_terms(Tape& tape, const Tensor& h, std::size_t batch, std::size_t steps) {
  if (steps < 4) throw std::invalid_argument("Koopman sequences need at least 4 steps, got " + std::to_string(steps));
  if (h.rank() != 2 || h.rows() != batch * steps || h.cols() != config_.d)
    throw num::ShapeError("Koopman batch " + num::shape_str(h.shape()) + " does not hold " + std::to_string(batch) +
                          " sequences of " + std::to_string(steps) + " x " + std::to_string(config_.d));
  const std::size_t k = config_.latent, mid = steps / 2;
  const Var x = tape.constant(h);
  const Var z = num::tanh(num::add_bias(num::matmul(x, tape.param(w_e_)), tape.param(b_e_)));
  const Var zbar = num::matmul(tape.constant(averaging_matrix(batch, steps)), z);
  const Var c = operators(tape, zbar, w_c_, b_c_, batch);
  const Var dop = operators(tape, zbar, w_b_, b_b_, batch);

  std::vector<std::size_t> fwd_src, fwd_dst, bwd_src, bwd_dst;
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t i = 0; i < mid; ++i) {
      fwd_src.push_back(b * steps + i);
      fwd_dst.push_back(b * steps + i + 1);
    }
    for (std::size_t i = mid; i < steps; ++i) {
      bwd_src.push_back(b * steps + i);
      bwd_dst.push_back(b * steps + i - 1);
    }
  }
  auto predict = [&](const Var& op, std::vector<std::size_t> src) {
    const Var advanced = num::row_operator(z, op, steps);
    return num::add_bias(num::matmul(num::gather_rows(advanced, std::move(src)), tape.param(w_d_)), tape.param(b_d_));
  };
  const double nf = static_cast<double>(fwd_dst.size()), nb = static_cast<double>(bwd_dst.size());
  Terms t;
  t.forward = num::scale(num::sum_squares(num::sub(predict(c, fwd_src), num::gather_rows(x, fwd_dst))), 1.0 / nf);
  t.backward = num::scale(num::sum_squares(num::sub(predict(dop, bwd_src), num::gather_rows(x, bwd_dst))), 1.0 / nb);
  Tensor eye({batch, k * k});
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t i = 0; i < k; ++i) eye.at(b, i * k + i) = 1.0;
  t.consistency = num::scale(num::sum_squares(num::sub(num::row_matmul(c, dop, k), tape.constant(std::move(eye)))),
                             1.0 / static_cast<double>(batch));
  t.total = num::add(num::add(t.forward, t.backward), num::scale(t.consistency, config_.consistency));
  return t;
}

KoopmanTrainResult train_koopman(const KoopmanConfig& config, const Tensor& sequences, std::size_t steps,
                                 const KoopmanTrainConfig& train) {
  if (steps < 4) throw std::invalid_argument("Koopman sequences need at least 4 steps, got " + std::to_string(steps));
  if (sequences.rank() != 2 || sequences.rows() == 0 || sequences.rows() % steps != 0)
    throw std::invalid_argument("Koopman training needs whole sequences of " + std::to_string(steps) + " rows");
  if (train.batch_size == 0) throw std::invalid_argument("Koopman batch size must be positive");
  const std::size_t n = sequences.rows() / steps, d = sequences.cols();
  KoopmanTrainResult result{KoopmanModel(config), {}, false};
  KoopmanModel& model = result.model;
  num::OptimizerConfig oc = num::OptimizerConfig::adam(train.learning_rate);
  if (train.optimizer == num::OptimizerKind::sgd) oc = num::OptimizerConfig::sgd(train.learning_rate);
  else if (train.optimizer == num::OptimizerKind::adamw) oc = num::OptimizerConfig::adamw(train.learning_rate);
  num::Optimizer opt(oc, model.parameters());

  auto batch_of = [&](std::span<const std::size_t> idx) {
    Tensor b({idx.size() * steps, d});
    for (std::size_t i = 0; i < idx.size(); ++i)
      std::copy_n(sequences.data() + idx[i] * steps * d, steps * d, b.data() + i * steps * d);
    return b;
  };
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  auto evaluate = [&] {
    double total = 0.0;
    for (std::size_t begin = 0; begin < n; begin += train.batch_size) {
      const std::size_t m = std::min(train.batch_size, n - begin);
      Tape tape(false);
      total += model.loss_terms(tape, batch_of(std::span(order).subspan(begin, m)), m, steps).total.value().item() *
               static_cast<double>(m);
    }
    return total / static_cast<double>(n);
  };
  result.trace.push_back(evaluate());

  num::Rng rng = num::make_rng(train.seed, 0x6b6f6f702d7472ULL);
  std::vector<Tensor> snapshot;
  for (std::size_t epoch = 1; epoch <= train.epochs; ++epoch) {
    snapshot.clear();
    for (const Parameter* p : model.parameters()) snapshot.push_back(p->value);
    num::shuffle(order, rng);
    double total = 0.0;
    try {
      for (std::size_t begin = 0; begin < n; begin += train.batch_size) {
        const std::size_t m = std::min(train.batch_size, n - begin);
        Tape tape;
        const KoopmanModel::Terms t = model.loss_terms(tape, batch_of(std::span(order).subspan(begin, m)), m, steps);
        opt.zero_grad();
        tape.backward(t.total);
        if (epoch <= train.operator_warmup)
          for (num::Parameter* p : model.operator_parameters()) p->zero_grad();
        opt.step();
        total += t.total.value().item() * static_cast<double>(m);
      }
    } catch (const num::NumericError&) {
      auto ps = model.parameters();
      for (std::size_t i = 0; i < ps.size(); ++i) ps[i]->value = snapshot[i];
      result.diverged = true;
      break;
    }
    result.trace.push_back(total / static_cast<double>(n));
    if (train.verbose) std::fprintf(stderr, "koopman epoch %zu loss %.6f\n", epoch, result.trace.back());
  }
  return result;
}

}  // namespace wim::sae
