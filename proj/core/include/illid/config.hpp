#pragma once

// Plain configuration records and their strict JSON form. Unknown keys and
// wrongly typed values raise ConfigError carrying the JSON pointer of the
// offending entry; every defaulted field is written back by the serializers.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace illid {

struct NetShape {
  std::size_t layers = 2;
  std::size_t width = 10;
};

struct ModelConfig {
  enum class Kind { vae, mixture };
  enum class Likelihood { gaussian, bernoulli };

  Kind kind = Kind::mixture;
  std::size_t latent_dim = 2;
  std::size_t data_dim = 2;
  std::size_t c = 2;   ///< mixture components; ignored by the plain VAE
  double L1 = 1.0;     ///< first (or only) Brenier stage
  double L2 = 1.0;     ///< second stage, used only when latent_dim < data_dim
  NetShape icnn{2, 10};
  NetShape encoder{2, 10};
  double sigma_dec = 1.0;
  Likelihood likelihood = Likelihood::gaussian;
};

struct AnnealConfig {
  double decay = 0.85;
  double trigger_ratio = 1.1;
  double min_L = 0.0;
};

struct TrainConfig {
  std::size_t epochs = 100;
  std::size_t batch_size = 64;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t eval_every = 10;  ///< epochs between evaluations; 0 evaluates only at the end
  std::uint64_t seed = 0;
  std::optional<AnnealConfig> anneal;
};

struct ToyDataConfig {
  double sigma = 7.5;
  std::size_t n_per_class = 2000;
};

struct IdxDataConfig {
  std::string images;
  std::string labels;  ///< optional
};

struct DataConfig {
  std::optional<ToyDataConfig> toy;
  std::optional<IdxDataConfig> idx;
};

struct EvalConfig {
  std::size_t n_mc = 1024;           ///< latent samples per Monte-Carlo estimate
  std::size_t n_eval_points = 256;   ///< held-out points scored per evaluation
  std::size_t iw_samples = 100;      ///< importance samples for the NLL
};

struct ExperimentConfig {
  std::vector<double> sigma_grid{7.5};
  std::vector<double> L_grid{0.0, 0.5, 1.5, 5.0};
  std::vector<std::uint64_t> seeds{0, 1, 2};
};

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  DataConfig data;
  EvalConfig eval;
  ExperimentConfig experiment;
  std::string out_dir = "runs";
};

std::string_view to_string(ModelConfig::Kind kind);
std::string_view to_string(ModelConfig::Likelihood likelihood);

/// Throws ConfigError with a JSON pointer for unknown keys, type errors and
/// out-of-range values. Missing keys keep their defaults.
RunConfig parse_run_config(std::string_view json_text);
ModelConfig parse_model_config(std::string_view json_text);
/// Checks value ranges; `pointer_prefix` is prepended to reported pointers.
void validate(const ModelConfig& m, const std::string& pointer_prefix = "/model");
void validate(const TrainConfig& t, const std::string& pointer_prefix = "/train");

/// Fully resolved JSON, every field present.
std::string to_json(const RunConfig& cfg, int indent = 2);
std::string to_json(const ModelConfig& cfg, int indent = -1);

}  // namespace illid
