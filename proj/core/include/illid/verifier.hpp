#pragma once

// Numerical checks of the collapse-control results on instances where both
// sides can be computed: the conjugate linear-Gaussian model, linear Brenier
// maps, random ICNN decoders, and one-dimensional Gaussians under smoothing.
//
// Inequalities lhs >= rhs pass when the deficit rhs - lhs is at most three
// combined standard errors, are inconclusive up to six, and fail beyond that.
// Identities pass when |lhs - rhs| is within an absolute tolerance.

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "illid/expfam.hpp"
#include "illid/icnn.hpp"
#include "illid/models.hpp"

namespace illid {

enum class Verdict { pass, fail, inconclusive };
std::string_view to_string(Verdict v);

struct VerifyReport {
  std::string name;
  std::string instance;
  double lhs = 0.0, rhs = 0.0;
  double lhs_se = 0.0, rhs_se = 0.0;
  Verdict verdict = Verdict::fail;
  std::uint64_t seed = 0;
};

Verdict inequality_verdict(double lhs, double rhs, double combined_se);
Verdict identity_verdict(double lhs, double rhs, double tol);

/// The report with the least slack, lhs - rhs + 3 se, among `reports`, renamed to
/// `name` and tagged with the instance count. Any fail wins over inconclusive.
VerifyReport worst_of(std::string name, const std::vector<VerifyReport>& reports);

// Fixtures ------------------------------------------------------------------

/// IL-LIDVAE with random ICNN decoder stages of the given strong convexity.
std::unique_ptr<IlLidVaeModel> random_fixture(std::size_t l, std::size_t t, double L1, double L2,
                                              std::uint64_t seed);
/// Decoder f(z) = L z (l == t) or f2(B^T f1(z)) with f1 = L1 id, f2 = L2 id, plus
/// an optional constant offset added by the last stage.
std::unique_ptr<IlLidVaeModel> linear_fixture(std::size_t l, std::size_t t, double L1, double L2,
                                              std::span<const double> offset = {});

// Checks ----------------------------------------------------------------------

/// Posterior score minus prior score against the likelihood score for
/// p(z) = N(0, I), p(x|z) = N(W z, I); W is [t x l], xs [n x t], zs [n x l].
/// Vectors compared entrywise with tolerance 1e-9.
VerifyReport check_lemma1(const Tensor& W, const Tensor& xs, const Tensor& zs, std::uint64_t seed = 0);

/// grad A(xi) against the Monte-Carlo mean of T(x), x ~ EF(xi), within 4 standard errors per coordinate.
VerifyReport check_lemma2(const ExpFamily& family, std::span<const double> xi, std::size_t n, std::uint64_t seed);

/// min eigenvalue of the Jacobian of f over `points` against L, tolerance 1e-3.
VerifyReport check_lemma3(const BrenierMap& m, const Tensor& points, std::uint64_t seed = 0);

/// One report per row of xs: relative Fisher divergence against the Theorem 1 bound with the model's L1.
std::vector<VerifyReport> check_theorem1(const LatentModel& model, const Tensor& xs, std::size_t n_z,
                                         std::uint64_t seed);
/// Linear l = t = 1 instance, where the two sides coincide; pass within 2 combined standard errors.
VerifyReport check_theorem1_equality(double L, double x, std::size_t n_z, std::uint64_t seed);
/// Empirical divergence over all of xs against the bias-variance form of the bound.
VerifyReport check_theorem2(const LatentModel& model, const Tensor& xs, std::size_t n_z, std::uint64_t seed);
/// The Theorem 1 bound at x must not decrease along `models`, which are ordered by increasing L1.
/// Reports the adjacent pair with the least slack.
VerifyReport check_corollary1(const std::vector<const LatentModel*>& models, const Tensor& x, std::size_t n_z,
                              std::uint64_t seed);
/// For a standard normal prior the infimum of E|x - f(z)|^2 over L-inverse-Lipschitz f
/// is L^2 l, attained by f(z) = x + L z. Compares the Monte-Carlo bound at that
/// minimizer with the closed form L^4 l within 4 standard errors.
VerifyReport check_corollary1_infimum(double L, std::span<const double> x, std::size_t n_z, std::uint64_t seed);
/// One report per row of xs; the model must have latent_dim < data_dim.
std::vector<VerifyReport> check_theorem3(const LatentModel& model, const Tensor& xs, std::size_t n_z,
                                         std::uint64_t seed);

/// KL(N(mp, vp) || N(mq, vq)).
double gaussian_kl(double mp, double vp, double mq, double vq);
/// Relative Fisher divergence F(N(mp, vp) || N(mq, vq)) = vp (1/vq - 1/vp)^2 + (mp - mq)^2 / vq^2.
double gaussian_fisher_divergence(double mp, double vp, double mq, double vq);
/// D(p||q) >= delta/2 * min_{t in grid over [0, delta]} F(p_t || q_t), with p_t = p * N(0, t).
VerifyReport check_prop1(double mp, double vp, double mq, double vq, double delta, std::size_t grid = 1000);

/// The default instance set. Independent checks run on up to `jobs` threads;
/// results are ordered identically for any `jobs`.
std::vector<VerifyReport> run_all(std::uint64_t seed, std::size_t jobs = 1);

void write_report_csv(std::ostream& os, const std::vector<VerifyReport>& reports);
void write_report_table(std::ostream& os, const std::vector<VerifyReport>& reports);

}  // namespace illid
