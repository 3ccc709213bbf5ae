#include "illid/models.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <unistd.h>

#include "illid/error.hpp"
#include "support/gradcheck.hpp"
#include "support/gradient_suite.hpp"
#include "support/params.hpp"

namespace illid {
namespace {

using illid::testing::central_gradient;
using illid::testing::compare_gradients;

ModelConfig small_config(ModelConfig::Kind kind, std::size_t l = 2, std::size_t t = 2, std::size_t c = 2) {
  ModelConfig cfg;
  cfg.kind = kind;
  cfg.latent_dim = l;
  cfg.data_dim = t;
  cfg.c = c;
  cfg.L1 = 0.5;
  cfg.L2 = 0.5;
  cfg.icnn = {1, 4};
  cfg.encoder = {1, 4};
  return cfg;
}

void zero_all(Mlp& m) {
  for (auto* p : m.parameters())
    for (auto& v : p->mutable_data()) v = 0.0;
}

// Decoder output constant in z: L = 0 and only the output layer sees z, linearly.
void make_decoder_constant(Decoder& d, std::span<const double> xi0) {
  auto& p = d.first().params();
  p.strong_convexity = 0.0;
  for (auto& layer : p.layers) {
    for (auto& v : layer.wz.mutable_data()) v = 0.0;
    for (auto& v : layer.b.mutable_data()) v = 0.0;
  }
  auto w = p.layers.back().wz.mutable_data();
  for (std::size_t j = 0; j < w.size(); ++j) w[j] = xi0[j];
}

double log_normal(double x, double mu, double lv) {
  return -0.5 * (std::log(2 * std::numbers::pi) + lv + (x - mu) * (x - mu) * std::exp(-lv));
}

TEST(Kl, ShiftedUnitGaussianIsHalf) {
  const Tensor kl = gaussian_kl_to_standard(Tensor::matrix(1, 2, {1.0, 0.0}), Tensor::zeros({1, 2}));
  EXPECT_DOUBLE_EQ(kl.item(), 0.5);
}

TEST(Elbo, CollapsedEncoderAndConstantDecoderGiveLikelihoodOnly) {
  Rng rng(1);
  IlLidVaeModel model(small_config(ModelConfig::Kind::vae), rng);
  zero_all(model.encoder());
  const std::vector<double> xi0{0.3, -1.2};
  make_decoder_constant(model.decoder(), xi0);
  const Tensor x = Tensor::matrix(3, 2, {0.1, 0.2, -1.0, 2.0, 5.0, -3.0});
  const Tensor e = model.elbo(x, rng);
  for (std::size_t r = 0; r < 3; ++r)
    EXPECT_NEAR(e[r], model.likelihood().log_density(x.data().subspan(2 * r, 2), xi0), 1e-12);
}

TEST(Elbo, NonFiniteTermIsNamed) {
  Rng rng(2);
  IlLidVaeModel model(small_config(ModelConfig::Kind::vae), rng);
  const Tensor x = Tensor::matrix(1, 2, {std::nan(""), 0.0});
  try {
    model.elbo(x, rng);
    FAIL() << "expected TrainingError";
  } catch (const TrainingError& e) {
    EXPECT_FALSE(e.term().empty());
  }
}

TEST(Elbo, WrongDataDimension) {
  Rng rng(3);
  IlLidVaeModel model(small_config(ModelConfig::Kind::vae), rng);
  EXPECT_THROW(model.elbo(Tensor::zeros({2, 3}), rng), DimensionError);
}

TEST(MixtureElbo, SingleComponentIsShiftedPriorElbo) {
  Rng init(4);
  IlLidMVaeModel model(small_config(ModelConfig::Kind::mixture, 2, 2, 1), init);
  const Tensor x = Tensor::matrix(2, 2, {0.5, 1.5, -2.0, 0.25});
  Rng a(9), b(9);
  const Tensor e = model.elbo(x, a);

  const auto [mu, lv] = model.encode(x, 0);
  const Tensor z = mu + ad::exp(ad::scale(lv, 0.5)) * standard_normal(2, 2, b);
  const Tensor rec = model.log_likelihood(x, z);
  const auto pm = model.prior_mean().data();  // one-hot (1, 0)
  for (std::size_t r = 0; r < 2; ++r) {
    double kl = 0.0;
    for (std::size_t d = 0; d < 2; ++d)
      kl += 0.5 * (std::exp(lv(r, d)) + (mu(r, d) - pm[d]) * (mu(r, d) - pm[d]) - 1 - lv(r, d));
    EXPECT_NEAR(e[r], rec[r] - kl, 1e-12);
  }
}

TEST(MixtureElbo, UniformResponsibilitiesHaveNoCategoricalPenalty) {
  Rng init(5);
  IlLidMVaeModel model(small_config(ModelConfig::Kind::mixture, 2, 2, 3), init);
  // Output layer of q(y|x) zeroed: logits are 0 for every x.
  auto& w = model.label_encoder().weights().back();
  auto& bias = model.label_encoder().biases().back();
  for (auto& v : w.mutable_data()) v = 0.0;
  for (auto& v : bias.mutable_data()) v = 0.0;
  const Tensor x = Tensor::matrix(1, 2, {1.0, -1.0});
  Rng a(11), b(11);
  const double e = model.elbo(x, a).item();
  double expected = 0.0;
  const auto p = model.prior();
  for (std::size_t y = 0; y < 3; ++y) {
    const auto [mu, lv] = model.encode(x, y);
    const Tensor z = mu + ad::exp(ad::scale(lv, 0.5)) * standard_normal(1, 2, b);
    double kl = 0.0;
    for (std::size_t d = 0; d < 2; ++d) {
      const double pm = p.component_mean(0, y)[d];
      kl += 0.5 * (std::exp(lv[d]) + (mu[d] - pm) * (mu[d] - pm) - 1 - lv[d]);
    }
    expected += (model.log_likelihood(x, z).item() - kl) / 3.0;
  }
  EXPECT_NEAR(e, expected, 1e-12);
}

// Independent evaluation of the 1-D, two-component mixture ELBO from raw
// weights: loops for the networks and a finite difference of icnn_eval for f.
TEST(MixtureElbo, MatchesDirectFormulaOnOneDimensionalInstance) {
  ModelConfig cfg = small_config(ModelConfig::Kind::mixture, 1, 1, 2);
  cfg.L1 = 0.8;
  cfg.sigma_dec = 1.3;
  Rng init(6);
  IlLidMVaeModel model(cfg, init);
  model.prior_log_var().mutable_data()[1] = 0.4;
  model.prior_mean().mutable_data()[1] = -0.7;

  const double x = 0.9;
  Rng a(21), b(21);
  const double e = model.elbo(Tensor::matrix(1, 1, {x}), a).item();

  const auto mlp = [](Mlp& m, const std::vector<double>& in) {
    std::vector<double> h = in;
    const auto& W = m.weights();
    const auto& B = m.biases();
    for (std::size_t i = 0; i < W.size(); ++i) {
      const std::size_t n_in = W[i].rows(), n_out = W[i].cols();
      std::vector<double> o(n_out);
      for (std::size_t j = 0; j < n_out; ++j) {
        double s = B[i][j];
        for (std::size_t k = 0; k < n_in; ++k) s += h[k] * W[i](k, j);
        o[j] = i + 1 == W.size() ? s : std::tanh(s);
      }
      h = o;
    }
    return h;
  };
  const auto logits = mlp(model.label_encoder(), {x});
  const double mx = std::max(logits[0], logits[1]);
  const double lse = mx + std::log(std::exp(logits[0] - mx) + std::exp(logits[1] - mx));
  const double sigma = cfg.sigma_dec;
  double expected = 0.0;
  for (std::size_t y = 0; y < 2; ++y) {
    const double lq = logits[y] - lse;
    const auto enc = mlp(model.latent_encoder(), {x, y == 0 ? 1.0 : 0.0, y == 1 ? 1.0 : 0.0});
    const double mu = enc[0], lv = enc[1];
    const double z = mu + std::exp(0.5 * lv) * std::normal_distribution<double>()(b);
    const double h = 1e-5;
    const auto& ip = model.decoder().first().params();
    const double xi = (icnn_eval(ip, std::vector<double>{z + h}) - icnn_eval(ip, std::vector<double>{z - h})) / (2 * h);
    const double rec = log_normal(x, sigma * xi, 2 * std::log(sigma));
    const double pm = model.prior_mean()[y], plv = model.prior_log_var()[y];
    const double kl = 0.5 * (plv - lv + (std::exp(lv) + (mu - pm) * (mu - pm)) / std::exp(plv) - 1);
    expected += std::exp(lq) * (rec - kl) - std::exp(lq) * (lq + std::log(2.0));
  }
  EXPECT_NEAR(e, expected, 1e-7);
}

TEST(MixtureElbo, BoundedByBestComponentPlusLogC) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng init(seed);
    IlLidMVaeModel model(small_config(ModelConfig::Kind::mixture, 2, 2, 3), init);
    const Tensor x = standard_normal(1, 2, init);
    Rng a(seed), b(seed);
    const double e = model.elbo(x, a).item();
    double best = -INFINITY;
    const auto p = model.prior();
    for (std::size_t y = 0; y < 3; ++y) {
      const auto [mu, lv] = model.encode(x, y);
      const Tensor z = mu + ad::exp(ad::scale(lv, 0.5)) * standard_normal(1, 2, b);
      double kl = 0.0;
      for (std::size_t d = 0; d < 2; ++d) {
        const double pm = p.component_mean(0, y)[d], plv = p.component_log_var(0, y)[d];
        kl += 0.5 * (plv - lv[d] + (std::exp(lv[d]) + (mu[d] - pm) * (mu[d] - pm)) * std::exp(-plv) - 1);
      }
      best = std::max(best, model.log_likelihood(x, z).item() - kl);
    }
    EXPECT_LE(e, best + std::log(3.0) + 1e-12);
  }
}

TEST(ElboGradient, VaeMatchesFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng init(seed);
    IlLidVaeModel model(small_config(ModelConfig::Kind::vae, 2, 3), init);
    EXPECT_EQ(testing::check_elbo_gradients(model, seed), "") << "seed " << seed;
  }
}

TEST(ElboGradient, MixtureMatchesFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng init(seed);
    IlLidMVaeModel model(small_config(ModelConfig::Kind::mixture, 2, 2, 2), init);
    EXPECT_EQ(testing::check_elbo_gradients(model, seed), "") << "seed " << seed;
  }
}

TEST(Generate, ConstantDecoderMeanIsNaturalParameter) {
  Rng rng(7);
  IlLidVaeModel model(small_config(ModelConfig::Kind::vae), rng);
  const std::vector<double> xi0{1.5, -0.5};
  make_decoder_constant(model.decoder(), xi0);
  constexpr std::size_t n = 100000;
  const auto g = model.generate(n, rng);
  for (std::size_t d = 0; d < 2; ++d) {
    double s = 0.0, sq = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      s += g.x(i, d);
      sq += g.x(i, d) * g.x(i, d);
    }
    const double m = s / n;
    const double se = std::sqrt((sq / n - m * m) / n);
    EXPECT_LE(std::abs(m - xi0[d]), 4 * se);
  }
}

TEST(Generate, MixtureLabelsAreUniform) {
  Rng rng(8);
  IlLidMVaeModel model(small_config(ModelConfig::Kind::mixture), rng);
  model.prior_mean().mutable_data()[0] = 10.0;  // separate the class means
  constexpr std::size_t n = 20000;
  const auto g = model.generate(n, rng);
  std::size_t ones = 0;
  for (auto y : g.y) ones += y;
  const double se = std::sqrt(0.25 / n);
  EXPECT_LE(std::abs(static_cast<double>(ones) / n - 0.5), 4 * se);
}

TEST(Generate, DeterministicUnderSeed) {
  Rng init(9);
  IlLidMVaeModel model(small_config(ModelConfig::Kind::mixture), init);
  Rng a(5), b(5);
  const auto ga = model.generate(50, a), gb = model.generate(50, b);
  EXPECT_TRUE(std::equal(ga.x.data().begin(), ga.x.data().end(), gb.x.data().begin()));
  EXPECT_EQ(ga.y, gb.y);
}

TEST(Responsibilities, RowsSumToOne) {
  Rng rng(10);
  IlLidMVaeModel model(small_config(ModelConfig::Kind::mixture, 2, 2, 5), rng);
  const Tensor r = posterior_responsibilities(model, standard_normal(50, 2, rng));
  for (std::size_t i = 0; i < 50; ++i) {
    double s = 0.0;
    for (std::size_t k = 0; k < 5; ++k) s += r(i, k);
    EXPECT_NEAR(s, 1.0, 1e-9);
  }
}

TEST(Responsibilities, SymmetricEncoderSplitsEvenly) {
  Rng rng(11);
  IlLidMVaeModel model(small_config(ModelConfig::Kind::mixture), rng);
  // Logit difference proportional to x1 - x2: zero on the diagonal.
  auto& m = model.label_encoder();
  zero_all(m);
  m.weights()[0].mutable_data()[0] = 1.0;   // x1 -> hidden 0
  m.weights()[0].mutable_data()[4] = -1.0;  // x2 -> hidden 0
  m.weights()[1].mutable_data()[0] = 2.0;   // hidden 0 -> logit 0
  const Tensor r = posterior_responsibilities(model, Tensor::matrix(1, 2, {5.0, 5.0}));
  EXPECT_NEAR(r[0], 0.5, 1e-15);
  EXPECT_NEAR(r[1], 0.5, 1e-15);
  const Tensor r2 = posterior_responsibilities(model, Tensor::matrix(1, 2, {1.0, 0.0}));
  const double logit = 2.0 * std::tanh(1.0);
  EXPECT_NEAR(r2[0], std::exp(logit) / (std::exp(logit) + 1.0), 1e-14);
}

TEST(PosteriorMixture, ScoreMatchesFiniteDifferences) {
  Rng rng(12);
  IlLidMVaeModel model(small_config(ModelConfig::Kind::mixture, 2, 2, 3), rng);
  const auto q = model.posterior(standard_normal(4, 2, rng));
  for (std::size_t r = 0; r < 4; ++r) {
    const std::vector<double> z{0.3 * r, -0.2};
    const auto fd = central_gradient([&](std::span<const double> v) { return q.log_density(r, v); }, z);
    EXPECT_EQ(compare_gradients(q.score(r, z), fd, 1e-6), "");
  }
}

TEST(PosteriorMixture, KlMatchesMonteCarlo) {
  Rng rng(13);
  IlLidMVaeModel model(small_config(ModelConfig::Kind::mixture), rng);
  const Tensor x = Tensor::matrix(1, 2, {0.4, 1.0});
  const double kl = model.kl_to_prior(x)[0];
  // Joint KL over (y, z) by sampling the joint posterior.
  const auto q = model.posterior(x);
  const auto p = model.prior();
  constexpr int n = 200000;
  double s = 0.0, sq = 0.0;
  for (int i = 0; i < n; ++i) {
    std::size_t y = 0;
    const auto z = q.sample(0, rng, &y);
    double lq = q.log_weight[y], lp = p.log_weight[y];
    for (std::size_t d = 0; d < 2; ++d) {
      lq += log_normal(z[d], q.component_mean(0, y)[d], q.component_log_var(0, y)[d]);
      lp += log_normal(z[d], p.component_mean(0, y)[d], p.component_log_var(0, y)[d]);
    }
    s += lq - lp;
    sq += (lq - lp) * (lq - lp);
  }
  const double m = s / n, se = std::sqrt((sq / n - m * m) / n);
  EXPECT_LE(std::abs(m - kl), 4 * se);
}

class CheckpointTest : public ::testing::Test {
 protected:
  std::filesystem::path path_ = std::filesystem::temp_directory_path() /
                                ("illid_ckpt_" + std::to_string(::getpid()) + ".bin");
  void TearDown() override { std::filesystem::remove(path_); }
};

TEST_F(CheckpointTest, RoundTripIsBitExact) {
  for (auto kind : {ModelConfig::Kind::vae, ModelConfig::Kind::mixture}) {
    Rng rng(14);
    auto model = make_model(small_config(kind, 2, 3), rng);
    model->set_first_stage_L(0.3);
    save_checkpoint(*model, path_);
    const auto loaded = load_checkpoint(path_);
    EXPECT_EQ(loaded->config().L1, 0.3);
    EXPECT_EQ(loaded->decoder().first().strong_convexity(), 0.3);
    const auto a = model->parameters();
    const auto b = std::as_const(*loaded).parameters();
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      ASSERT_EQ(a[i]->shape(), b[i]->shape());
      EXPECT_TRUE(std::equal(a[i]->data().begin(), a[i]->data().end(), b[i]->data().begin()));
    }
  }
}

TEST_F(CheckpointTest, HeaderLayout) {
  Rng rng(15);
  auto model = make_model(small_config(ModelConfig::Kind::vae), rng);
  save_checkpoint(*model, path_);
  std::ifstream is(path_, std::ios::binary);
  std::string magic(6, '\0');
  is.read(magic.data(), 6);
  EXPECT_EQ(magic, "ILVAE1");
  unsigned char len_bytes[8];
  is.read(reinterpret_cast<char*>(len_bytes), 8);
  std::uint64_t len = 0;
  for (int i = 0; i < 8; ++i) len |= std::uint64_t{len_bytes[i]} << (8 * i);
  std::string json(len, '\0');
  is.read(json.data(), static_cast<std::streamsize>(len));
  EXPECT_EQ(parse_model_config(json).kind, ModelConfig::Kind::vae);
  std::size_t n_params = 0;
  for (const auto* p : std::as_const(*model).parameters()) n_params += p->size();
  EXPECT_EQ(std::filesystem::file_size(path_), 6 + 8 + len + 8 * n_params);
}

TEST_F(CheckpointTest, BadMagicAndTruncation) {
  {
    std::ofstream os(path_, std::ios::binary);
    os << "NOTAVAE";
  }
  try {
    load_checkpoint(path_);
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_EQ(e.offset(), 0u);
  }
  Rng rng(16);
  auto model = make_model(small_config(ModelConfig::Kind::vae), rng);
  save_checkpoint(*model, path_);
  std::filesystem::resize_file(path_, std::filesystem::file_size(path_) - 3);
  EXPECT_THROW(load_checkpoint(path_), FormatError);
}

}  // namespace
}  // namespace illid
