#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "wim/num/autodiff.hpp"
#include "wim/num/optim.hpp"
#include "wim/num/tensor.hpp"

namespace wim::sae {

// Affine-decoder codec used by control-vector fitting: rows in, rows out.
class Codec {
 public:
  virtual ~Codec() = default;
  virtual std::size_t input_dim() const = 0;
  virtual std::size_t code_dim() const = 0;
  virtual num::Tensor encode(const num::Tensor& h) const = 0;  // (n x d) -> (n x code)
  virtual num::Tensor decode(const num::Tensor& s) const = 0;  // (n x code) -> (n x d)
  virtual std::string tag() const = 0;
};

enum class SaeVariant : std::uint8_t {
  fc_relu = 0,
  fc_jumprelu = 1,
  fc_tied = 2,
  conv = 3,
  conv_jumprelu = 4,
  mixer = 5,
  mixer_jumprelu = 6,
};

std::string_view to_string(SaeVariant v);
SaeVariant sae_variant_from_string(std::string_view s);
bool uses_jumprelu(SaeVariant v);

struct SaeConfig {
  SaeVariant variant = SaeVariant::fc_relu;
  std::size_t d = 64;
  std::size_t sparse_dim = 128;  // fc variants only
  double theta = 0.001;          // JumpReLU threshold
  std::size_t channels = 8;      // conv variants: code is channels * d
  std::size_t kernel = 32;       // conv variants
  std::size_t patch = 32;        // mixer variants: d / patch tokens
  std::size_t mixer_expansion = 8;  // mixer variants: code is (d / patch) * patch * expansion
  std::uint64_t seed = 0;

  // Code dimension implied by the variant.
  std::size_t code_dim() const;
  void validate() const;
  friend bool operator==(const SaeConfig&, const SaeConfig&) = default;
};

class SaeModel : public Codec {
 public:
  SaeModel() = default;
  explicit SaeModel(SaeConfig config);

  const SaeConfig& config() const noexcept { return config_; }
  std::size_t input_dim() const override { return config_.d; }
  std::size_t code_dim() const override { return config_.code_dim(); }
  std::string tag() const override;

  num::Tensor encode(const num::Tensor& h) const override;
  num::Tensor decode(const num::Tensor& s) const override;
  // Pre-activations W_enc (h - b_dec) + b_enc.
  num::Tensor pre_activations(const num::Tensor& h) const;

  // Graph pieces for training.
  num::Var encode_var(num::Tape& tape, const num::Var& h);
  num::Var decode_var(num::Tape& tape, const num::Var& s);

  std::vector<num::Parameter*> parameters();
  std::vector<const num::Parameter*> parameters() const;
  // Dense decoder matrix (d x code); for fc-tied this is the transpose of W_enc.
  num::Tensor decoder_matrix() const;
  const num::Parameter& encoder_weight() const { return w_enc_; }
  const num::Parameter& decoder_bias() const { return b_dec_; }
  num::Parameter& encoder_weight() { return w_enc_; }
  num::Parameter& encoder_bias() { return b_enc_; }
  num::Parameter& decoder_weight() { return w_dec_; }
  num::Parameter& decoder_bias() { return b_dec_; }

  std::vector<std::uint8_t> serialize() const;
  static SaeModel deserialize(std::span<const std::uint8_t> bytes);
  void save(const std::filesystem::path& path) const;
  static SaeModel load(const std::filesystem::path& path);

 private:
  num::Var activation(const num::Var& pre) const;

  SaeConfig config_;
  // fc: w_enc (code x d), w_dec (d x code; unused when tied)
  // conv: w_enc (channels x 1 x kernel), w_dec (1 x channels x kernel)
  // mixer: w_enc (patch x patch*expansion) channel mix, w_dec (patch*expansion x patch),
  //        mix_enc / mix_dec (tokens x tokens)
  num::Parameter w_enc_, b_enc_, w_dec_, b_dec_, mix_enc_, mix_dec_;
};

struct SaeLoss {
  double total = 0.0;
  double l2 = 0.0;  // mean over rows of |h - h_hat|^2
  double l1 = 0.0;  // sum over rows and coordinates of |s|
};

SaeLoss evaluate_sae(const SaeModel& model, const num::Tensor& h, double lambda);

struct SaeTrainConfig {
  double lambda = 3e-4;
  std::size_t epochs = 500;
  std::size_t batch_size = 256;
  double learning_rate = 1e-3;
  std::uint64_t seed = 0;
  bool verbose = false;
  // Called after each epoch's evaluation with the epoch index (0 = before training).
  std::function<void(std::size_t epoch, const SaeModel& model)> on_epoch;
};

struct SaeTrainResult {
  SaeModel model;                 // best epoch by total loss
  std::vector<SaeLoss> trace;     // entry 0 is the untrained model
  std::size_t best_epoch = 0;
  bool diverged = false;
};

SaeTrainResult train_sae(const SaeConfig& config, const num::Tensor& h, const SaeTrainConfig& train);

// ---- Koopman autoencoder ----

struct KoopmanConfig {
  std::size_t d = 64;
  std::size_t latent = 128;
  double consistency = 0.01;
  bool input_conditioned = true;  // false: C and D are global parameters
  std::uint64_t seed = 0;

  void validate() const;
  friend bool operator==(const KoopmanConfig&, const KoopmanConfig&) = default;
};

class KoopmanModel : public Codec {
 public:
  KoopmanModel() = default;
  explicit KoopmanModel(KoopmanConfig config);

  const KoopmanConfig& config() const noexcept { return config_; }
  std::size_t input_dim() const override { return config_.d; }
  std::size_t code_dim() const override { return config_.latent; }
  std::string tag() const override;

  num::Tensor encode(const num::Tensor& h) const override;  // tanh(h W_e + b_e)
  num::Tensor decode(const num::Tensor& z) const override;  // z W_d + b_d
  // Operators for one sequence (steps x d); each (latent x latent) row-major.
  num::Tensor forward_operator(const num::Tensor& sequence) const;
  num::Tensor backward_operator(const num::Tensor& sequence) const;

  struct Terms {
    num::Var forward, backward, consistency, total;
  };
  // Loss over `batch` sequences of `steps` rows each, stacked in h.
  Terms loss_terms(num::Tape& tape, const num::Tensor& h, std::size_t batch, std::size_t steps);

  std::vector<num::Parameter*> parameters();
  std::vector<const num::Parameter*> parameters() const;
  std::vector<num::Parameter*> operator_parameters();

  std::vector<std::uint8_t> serialize() const;
  static KoopmanModel deserialize(std::span<const std::uint8_t> bytes);
  void save(const std::filesystem::path& path) const;
  static KoopmanModel load(const std::filesystem::path& path);

 private:
  num::Var operators(num::Tape& tape, const num::Var& zbar, num::Parameter& w, num::Parameter& b, std::size_t batch);

  KoopmanConfig config_;
  num::Parameter w_e_, b_e_, w_d_, b_d_, w_c_, b_c_, w_b_, b_b_;
};

struct KoopmanTrainConfig {
  std::size_t epochs = 200;
  std::size_t batch_size = 64;
  double learning_rate = 1e-3;
  num::OptimizerKind optimizer = num::OptimizerKind::adam;
  // Epochs during which C and D stay at their initial value while the encoder and decoder fit.
  std::size_t operator_warmup = 0;
  std::uint64_t seed = 0;
  bool verbose = false;
};

struct KoopmanTrainResult {
  KoopmanModel model;
  std::vector<double> trace;  // mean total loss per epoch, entry 0 untrained
  bool diverged = false;
};

// sequences: (n*steps x d), sample-major.
KoopmanTrainResult train_koopman(const KoopmanConfig& config, const num::Tensor& sequences, std::size_t steps,
                                 const KoopmanTrainConfig& train);

}  // namespace wim::sae
