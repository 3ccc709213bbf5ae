#pragma once

// Posterior-collapse measurements.
//
// Fisher quantities integrate against the prior p(z) and use the identity
//   grad_z log p(z|x) - grad_z log p(z) = grad_z log p(x|z) = J(z)^T (T(x) - grad A(f(z))),
// with J the central-difference Jacobian of the decoder. Every estimator
// returns a standard error alongside its point value.

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "illid/config.hpp"
#include "illid/models.hpp"

namespace illid {

struct Estimate {
  double value = 0.0;
  double se = 0.0;  ///< standard error
};

/// Prior draws with everything the Fisher estimators need, computed once and
/// reused across data points.
struct PriorDraws {
  Tensor z;                          ///< [n x l]
  Tensor stage1;                     ///< f1(z), [n x l]
  Tensor mean_stat;                  ///< grad A(f(z)), [n x t]
  std::vector<Tensor> jacobian;      ///< df/dz per draw, [t x l]
  std::vector<Tensor> stage2_embed;  ///< composed decoders only: grad f2(B^T f1(z)) B^T, [t x l]
};

/// n draws from the model prior (the mixture prior for IL-LIDMVAE).
PriorDraws draw_prior(const LatentModel& model, std::size_t n, Rng& rng);

/// For each x: E_z |J^T (T(x) - grad A(f(z)))|^2. The returned standard error is
/// over the z draws for that x.
std::vector<Estimate> relative_fisher_per_point(const LatentModel& model, const Tensor& xs, const PriorDraws& d);
/// Mean over xs; standard error from the per-draw averages over xs.
Estimate relative_fisher(const LatentModel& model, const Tensor& xs, std::size_t n_z, Rng& rng);
Estimate relative_fisher(const LatentModel& model, const Tensor& xs, const PriorDraws& d);

/// L^2 E_z |T(x) - grad A(f(z))|^2 per x.
std::vector<Estimate> theorem1_bound_per_point(const LatentModel& model, const Tensor& xs, double L,
                                               const PriorDraws& d);
Estimate theorem1_bound(const LatentModel& model, const Tensor& x, double L, std::size_t n_z, Rng& rng);

/// L1^2 E_z |(T(x) - grad A(f(z)))^T grad f2(B^T f1(z)) B^T|^2 per x. Needs latent_dim < data_dim.
std::vector<Estimate> theorem3_bound_per_point(const LatentModel& model, const Tensor& xs, const PriorDraws& d);

/// The model's Fisher lower bound: Theorem 1 with L1 when latent and data
/// dimensions agree, Theorem 3 otherwise. Averaged over xs.
Estimate fisher_lower_bound(const LatentModel& model, const Tensor& xs, const PriorDraws& d);

struct Theorem2Result {
  Estimate lhs;            ///< E_z |(1/n) sum_i score_i|^2
  Estimate rhs;            ///< L^2 E_z |Tbar - grad A(f(z))|^2
  double variance = 0.0;   ///< L^2 E_z |grad A(f(z)) - E grad A|^2
  double bias = 0.0;       ///< L^2 |Tbar - E grad A|^2
};
Theorem2Result theorem2_bound(const LatentModel& model, const Tensor& xs, double L, const PriorDraws& d);

/// Mean closed-form KL(q(z|x) || p(z)) over xs (mixture: including the categorical term).
Estimate kl_posterior_prior(const LatentModel& model, const Tensor& xs);

/// log (1/K) sum_k p(x|z_k) p(z_k) / q(z_k|x), z_k ~ q(z|x), per row of xs.
std::vector<double> iw_log_likelihood(const LatentModel& model, const Tensor& xs, std::size_t K, Rng& rng);

/// E log q(z|x) - E log qbar(z) with qbar the aggregate posterior over the rows
/// of q. n_mc draws cycle through the rows.
double mutual_information(const DiagGaussianMixture& q, std::size_t n_mc, Rng& rng);
double mutual_information(const LatentModel& model, const Tensor& xs, std::size_t n_mc, Rng& rng);

/// Fraction of columns of `means` ([n x l]) whose variance across rows exceeds threshold.
double active_units(const Tensor& means, double threshold = 0.01);
/// Uses posterior means (mixtures: responsibility-weighted component means).
double active_units(const LatentModel& model, const Tensor& xs, double threshold = 0.01);

/// Maximum-weight perfect assignment on a square matrix, row i -> result[i].
std::vector<std::size_t> max_weight_assignment(const std::vector<std::vector<double>>& weight);
/// Best accuracy over relabelings of `predicted`, found by assignment on the confusion matrix.
double clustering_accuracy(const std::vector<std::size_t>& predicted, const std::vector<std::size_t>& labels,
                           std::size_t c);
/// argmax q(y|x) against labels.
double clustering_accuracy(const IlLidMVaeModel& model, const Tensor& xs, const std::vector<std::size_t>& labels);

/// Empirical inverse-Lipschitz constant of the first decoder stage from
/// consecutive pairs of prior draws.
double first_stage_inverse_lipschitz(const PriorDraws& d);

struct MetricsRecord {
  std::string run_id;
  std::size_t step = 0;
  double L1 = 0, L2 = 0;
  double nll = 0, kl = 0, fisher = 0, fisher_se = 0, t1_bound = 0, t1_se = 0, mi = 0, au = 0;
  std::optional<double> accuracy;
  double emp_inv_lip = 0;
  std::size_t n_mc = 0;
  std::uint64_t seed = 0;
};

/// All metrics on held-out points. Deterministic given (model, xs, seed).
MetricsRecord evaluate(const LatentModel& model, const Tensor& xs, const std::vector<std::size_t>* labels,
                       const EvalConfig& cfg, std::uint64_t seed);

/// `run_id,step,L1,L2,nll,kl,fisher,fisher_se,t1_bound,t1_se,mi,au,accuracy,emp_inv_lip,seed`
void write_metrics_header(std::ostream& os);
/// Doubles with 17 significant digits; an absent accuracy is an empty field.
void write_metrics_row(std::ostream& os, const MetricsRecord& r);

}  // namespace illid
