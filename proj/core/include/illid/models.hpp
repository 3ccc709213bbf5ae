#pragma once

// IL-LIDVAE and its Gaussian-mixture variant.
//
// Both models share the decoder stack: a single Brenier map when latent and
// data dimensions agree, otherwise f2(B^T f1(z)) with B^T the zero-padding
// embedding. The likelihood is an exponential family in the decoder output.

#include <cstddef>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "illid/config.hpp"
#include "illid/expfam.hpp"
#include "illid/icnn.hpp"
#include "illid/random.hpp"
#include "illid/tensor.hpp"

namespace illid {

/// Fully connected network with tanh hidden layers and a linear output.
/// Weights are stored [in x out] so a batch [B x in] maps with one matmul.
class Mlp {
 public:
  Mlp() = default;
  /// Weights and biases ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
  Mlp(std::size_t in, std::size_t hidden_layers, std::size_t width, std::size_t out, Rng& rng);

  std::size_t input_dim() const;
  std::size_t output_dim() const;
  Tensor operator()(const Tensor& x) const;

  std::vector<Tensor*> parameters();
  std::vector<Tensor>& weights() { return w_; }
  std::vector<Tensor>& biases() { return b_; }

 private:
  std::vector<Tensor> w_, b_;
};

class Decoder {
 public:
  Decoder() = default;
  explicit Decoder(BrenierMap single);
  Decoder(BrenierMap f1, BrenierMap f2);
  static Decoder random(const ModelConfig& cfg, Rng& rng);

  bool composed() const noexcept { return second_.has_value(); }
  std::size_t latent_dim() const noexcept { return first_.dim(); }
  std::size_t output_dim() const noexcept { return second_ ? second_->dim() : first_.dim(); }

  /// The annealed stage: f1, or the single map.
  const BrenierMap& first() const noexcept { return first_; }
  BrenierMap& first() noexcept { return first_; }
  const BrenierMap* second() const noexcept { return second_ ? &*second_ : nullptr; }
  BrenierMap* second() noexcept { return second_ ? &*second_ : nullptr; }

  /// xi = f(z). When `stage1` is non-null it receives f1(z) (detached).
  Tensor operator()(const Tensor& z, Tensor* stage1 = nullptr) const;
  std::vector<double> operator()(std::span<const double> z) const;

  std::vector<Tensor*> parameters();

 private:
  BrenierMap first_;
  std::optional<BrenierMap> second_;
};

/// A batch of diagonal Gaussian mixtures: row r is sum_k w_rk N(mu_rk, diag exp(logvar_rk)).
/// Used for posteriors (one row per data point) and priors (a single row).
struct DiagGaussianMixture {
  std::size_t rows = 0, components = 0, dim = 0;
  std::vector<double> log_weight;  ///< rows x components
  std::vector<double> mean;        ///< rows x components x dim
  std::vector<double> log_var;     ///< rows x components x dim

  DiagGaussianMixture(std::size_t rows, std::size_t components, std::size_t dim);

  std::span<const double> component_mean(std::size_t r, std::size_t k) const {
    return {mean.data() + (r * components + k) * dim, dim};
  }
  std::span<const double> component_log_var(std::size_t r, std::size_t k) const {
    return {log_var.data() + (r * components + k) * dim, dim};
  }

  double log_density(std::size_t row, std::span<const double> z) const;
  /// Gradient of log_density in z.
  std::vector<double> score(std::size_t row, std::span<const double> z) const;
  std::vector<double> sample(std::size_t row, Rng& rng, std::size_t* component = nullptr) const;
  /// sum_k w_k mu_k
  std::vector<double> mixture_mean(std::size_t row) const;
};

struct Generated {
  Tensor x;                     ///< [n x data_dim]
  Tensor z;                     ///< [n x latent_dim]
  std::vector<std::size_t> y;   ///< component labels; all zero for the plain VAE
};

/// Latent codes and their first-stage decoder outputs seen during one ELBO evaluation.
struct ElboCapture {
  Tensor z, stage1;
};

class LatentModel {
 public:
  explicit LatentModel(ModelConfig cfg);
  virtual ~LatentModel() = default;

  const ModelConfig& config() const noexcept { return cfg_; }
  std::size_t latent_dim() const noexcept { return cfg_.latent_dim; }
  std::size_t data_dim() const noexcept { return cfg_.data_dim; }
  const ExpFamily& likelihood() const noexcept { return likelihood_; }
  const Decoder& decoder() const noexcept { return decoder_; }
  Decoder& decoder() noexcept { return decoder_; }

  /// Sets the strong-convexity constant of the first decoder stage and records it in config().L1.
  void set_first_stage_L(double L);

  /// All trainable tensors in declaration order: encoder, decoder, prior.
  virtual std::vector<Tensor*> parameters() = 0;
  std::vector<const Tensor*> parameters() const;

  /// Per-row single-sample ELBO, [B x 1]; differentiable in parameters().
  /// Throws TrainingError naming the term when a value is not finite.
  virtual Tensor elbo(const Tensor& x, Rng& rng, ElboCapture* capture = nullptr) const = 0;

  virtual DiagGaussianMixture posterior(const Tensor& x) const = 0;
  virtual DiagGaussianMixture prior() const = 0;
  /// Closed-form KL(q(.|x) || prior) per row.
  virtual std::vector<double> kl_to_prior(const Tensor& x) const = 0;

  /// Ancestral sampling: prior, decoder, likelihood.
  Generated generate(std::size_t n, Rng& rng) const;

  /// log p(x | z) per row.
  Tensor log_likelihood(const Tensor& x, const Tensor& z) const;

  virtual std::unique_ptr<LatentModel> clone() const = 0;

 protected:
  ModelConfig cfg_;
  ExpFamily likelihood_;
  Decoder decoder_;
};

class IlLidVaeModel final : public LatentModel {
 public:
  IlLidVaeModel(const ModelConfig& cfg, Rng& rng);

  std::vector<Tensor*> parameters() override;
  Tensor elbo(const Tensor& x, Rng& rng, ElboCapture* capture = nullptr) const override;
  DiagGaussianMixture posterior(const Tensor& x) const override;
  DiagGaussianMixture prior() const override;
  std::vector<double> kl_to_prior(const Tensor& x) const override;
  std::unique_ptr<LatentModel> clone() const override { return std::make_unique<IlLidVaeModel>(*this); }

  Mlp& encoder() { return encoder_; }
  /// (mu, logvar) each [B x l].
  std::pair<Tensor, Tensor> encode(const Tensor& x) const;

 private:
  Mlp encoder_;
};

class IlLidMVaeModel final : public LatentModel {
 public:
  IlLidMVaeModel(const ModelConfig& cfg, Rng& rng);

  std::size_t components() const noexcept { return cfg_.c; }

  std::vector<Tensor*> parameters() override;
  Tensor elbo(const Tensor& x, Rng& rng, ElboCapture* capture = nullptr) const override;
  DiagGaussianMixture posterior(const Tensor& x) const override;
  DiagGaussianMixture prior() const override;
  std::vector<double> kl_to_prior(const Tensor& x) const override;
  std::unique_ptr<LatentModel> clone() const override { return std::make_unique<IlLidMVaeModel>(*this); }

  /// log q(y | x), [B x c]; rows are normalized log-probabilities.
  Tensor log_responsibilities(const Tensor& x) const;
  /// q(z | x, y) parameters (mu, logvar) each [B x l].
  std::pair<Tensor, Tensor> encode(const Tensor& x, std::size_t y) const;

  Mlp& label_encoder() { return qy_; }
  Mlp& latent_encoder() { return qz_; }
  Tensor& prior_mean() { return prior_mean_; }
  Tensor& prior_log_var() { return prior_log_var_; }

 private:
  Mlp qy_, qz_;
  Tensor prior_mean_;     ///< [c x l], starts at one-hot rows
  Tensor prior_log_var_;  ///< [c x l], starts at zero
};

/// q(y | x) as probabilities, [B x c].
Tensor posterior_responsibilities(const IlLidMVaeModel& model, const Tensor& x);

std::unique_ptr<LatentModel> make_model(const ModelConfig& cfg, Rng& rng);

/// Checkpoint layout: "ILVAE1", u64 little-endian JSON length, model config JSON
/// (with the current L1), then every parameter tensor in declaration order as
/// little-endian doubles.
void save_checkpoint(const LatentModel& model, const std::filesystem::path& path);
/// Throws FormatError on a malformed file.
std::unique_ptr<LatentModel> load_checkpoint(const std::filesystem::path& path);

/// 0.5 * sum(exp(lv) + mu^2 - 1 - lv) per row, as a [B x 1] differentiable tensor.
Tensor gaussian_kl_to_standard(const Tensor& mu, const Tensor& log_var);

}  // namespace illid
