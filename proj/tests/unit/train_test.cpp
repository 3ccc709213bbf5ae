#include "illid/train.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <unistd.h>

#include "illid/data.hpp"
#include "illid/error.hpp"
#include "support/params.hpp"

namespace illid {
namespace {

TEST(Adam, TwoScalarStepsMatchReferenceRecurrence) {
  const double lr = 0.1, b1 = 0.9, b2 = 0.999, eps = 1e-8;
  Tensor w = Tensor::matrix(1, 1, {1.0});
  Adam adam(lr, b1, b2, eps);
  std::vector<Tensor*> params{&w};

  adam.step(params, std::vector<Tensor>{Tensor::matrix(1, 1, {0.5})});
  // m = 0.05, v = 2.5e-4; bias-corrected 0.5 and 0.25.
  EXPECT_DOUBLE_EQ(w.item(), 1.0 - lr * 0.5 / (0.5 + eps));

  adam.step(params, std::vector<Tensor>{Tensor::matrix(1, 1, {-0.2})});
  const double m = 0.9 * 0.05 + 0.1 * -0.2;          // 0.025
  const double v = 0.999 * 2.5e-4 + 0.001 * 0.04;    // 2.8975e-4
  const double mhat = m / (1 - 0.81), vhat = v / (1 - 0.998001);
  EXPECT_NEAR(w.item(), 1.0 - lr * 0.5 / (0.5 + eps) - lr * mhat / (std::sqrt(vhat) + eps), 1e-15);
  EXPECT_EQ(adam.steps(), 2u);
}

TEST(Adam, RejectsLayoutChanges) {
  Tensor a = Tensor::zeros({1, 2}), b = Tensor::zeros({1, 3});
  Adam adam(0.1);
  std::vector<Tensor*> one{&a};
  adam.step(one, std::vector<Tensor>{Tensor::zeros({1, 2})});
  std::vector<Tensor*> two{&a, &b};
  EXPECT_THROW(adam.step(two, std::vector<Tensor>{Tensor::zeros({1, 2}), Tensor::zeros({1, 3})}), DimensionError);
}

// Pairs (z, k z) have empirical inverse-Lipschitz constant exactly k.
void fill_scaled_pairs(AnnealState& s, double k, std::size_t rows, std::uint64_t seed = 0) {
  Rng rng(seed);
  const Tensor z = standard_normal(rows, 2, rng);
  s.record(z, scale(z, k));
}

TEST(Anneal, FarAboveTriggerLeavesLUnchanged) {
  AnnealState s(1.0);
  fill_scaled_pairs(s, 10.0, 128);
  BrenierMap f(IcnnParams::zero(2, 1, 4, 1.0));
  EXPECT_FALSE(anneal_step(s, f, 1, AnnealConfig{}).has_value());
  EXPECT_EQ(s.current_L(), 1.0);
  EXPECT_EQ(f.strong_convexity(), 1.0);
}

TEST(Anneal, BoundaryDecaysByConfiguredFactor) {
  AnnealState s(2.0);
  fill_scaled_pairs(s, 2.0, 128);
  BrenierMap f(IcnnParams::zero(2, 1, 4, 2.0));
  const auto ev = anneal_step(s, f, 3, AnnealConfig{});
  ASSERT_TRUE(ev.has_value());
  EXPECT_EQ(ev->new_L, 0.85 * 2.0);
  EXPECT_EQ(ev->old_L, 2.0);
  EXPECT_NEAR(ev->emp_L, 2.0, 1e-12);
  EXPECT_EQ(ev->epoch, 3u);
  EXPECT_EQ(s.current_L(), 0.85 * 2.0);
  EXPECT_EQ(f.strong_convexity(), 0.85 * 2.0);
  EXPECT_EQ(s.size(), 0u);
  EXPECT_EQ(s.events().size(), 1u);
}

TEST(Anneal, RepeatedTriggersFloorAtMinimum) {
  AnnealState s(1.0);
  BrenierMap f(IcnnParams::zero(2, 1, 4, 1.0));
  const AnnealConfig cfg{0.5, 1.1, 0.3};
  for (int i = 0; i < 6; ++i) {
    fill_scaled_pairs(s, s.current_L(), 128, i);
    anneal_step(s, f, i, cfg);
    EXPECT_GE(s.current_L(), 0.3);
  }
  EXPECT_EQ(s.current_L(), 0.3);
  ASSERT_EQ(s.events().size(), 2u);  // 1 -> 0.5 -> 0.3, then clamped
  for (const auto& e : s.events()) EXPECT_LE(e.new_L, e.old_L);
}

TEST(Anneal, SkipsWithTooFewPairs) {
  AnnealState s(1.0);
  fill_scaled_pairs(s, 1.0, 2 * (AnnealState::min_pairs - 1));
  BrenierMap f(IcnnParams::zero(2, 1, 4, 1.0));
  std::ostringstream log;
  EXPECT_FALSE(anneal_step(s, f, 4, AnnealConfig{}, &log).has_value());
  EXPECT_NE(log.str().find("warning"), std::string::npos);
  EXPECT_EQ(s.current_L(), 1.0);
}

TEST(Anneal, RingBufferKeepsNewestPairs) {
  AnnealState s(1.0);
  fill_scaled_pairs(s, 5.0, 2 * AnnealState::capacity);
  EXPECT_EQ(s.size(), AnnealState::capacity);
  fill_scaled_pairs(s, 3.0, 2 * AnnealState::capacity, 1);
  EXPECT_NEAR(*s.empirical_L(), 3.0, 1e-12);
}

TEST(Anneal, RebuiltMapKeepsInverseLipschitzGuarantee) {
  Rng rng(5);
  BrenierMap f(IcnnParams::random(2, 2, 10, 5.0, rng));
  AnnealState s(5.0);
  for (int i = 0; i < 8; ++i) {
    fill_scaled_pairs(s, s.current_L(), 64, i);
    anneal_step(s, f, i, AnnealConfig{});
    std::vector<std::pair<std::vector<double>, std::vector<double>>> fresh;
    const Tensor a = uniform(500, 2, -5, 5, rng), b = uniform(500, 2, -5, 5, rng);
    for (std::size_t r = 0; r < 500; ++r)
      fresh.push_back({{a(r, 0), a(r, 1)}, {b(r, 0), b(r, 1)}});
    EXPECT_GE(empirical_inverse_lipschitz(f, fresh), s.current_L() - 1e-9);
  }
}

struct ToyRun {
  std::unique_ptr<LatentModel> model;
  TrainData data;
  std::vector<std::size_t> labels;
};

ToyRun toy_setup(std::uint64_t seed, std::size_t n_per_class = 100) {
  ModelConfig mc;
  mc.icnn = {1, 6};
  mc.encoder = {1, 6};
  Rng rng(seed);
  ToyRun s;
  s.model = make_model(mc, rng);
  const ToyDataset ds = generate_toy(2.0, n_per_class, seed);
  s.data.train_x = gather_rows(ds.x, ds.train);
  s.data.eval_x = gather_rows(ds.x, ds.test);
  s.labels = gather(ds.labels, ds.test);
  return s;
}

TrainOptions quick_options() {
  TrainOptions opt;
  opt.eval.n_mc = 128;
  opt.eval.iw_samples = 5;
  return opt;
}

TEST(Train, ZeroLearningRateLeavesParametersBitIdentical) {
  ToyRun s = toy_setup(1);
  s.data.eval_labels = &s.labels;
  const auto before = testing::flatten(s.model->parameters());
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.learning_rate = 0.0;
  train(*s.model, s.data, cfg, quick_options());
  EXPECT_EQ(testing::flatten(s.model->parameters()), before);
}

TEST(Train, SameSeedGivesIdenticalMetrics) {
  std::string csv[2];
  for (auto& out : csv) {
    ToyRun s = toy_setup(2);
    s.data.eval_labels = &s.labels;
    TrainConfig cfg;
    cfg.epochs = 3;
    cfg.eval_every = 1;
    cfg.seed = 9;
    std::ostringstream log;
    TrainOptions opt = quick_options();
    opt.log = &log;
    const auto res = train(*s.model, s.data, cfg, opt);
    ASSERT_EQ(res.history.size(), 4u);
    std::ostringstream os;
    write_metrics_header(os);
    for (const auto& r : res.history) write_metrics_row(os, r);
    out = os.str() + log.str();
  }
  EXPECT_EQ(csv[0], csv[1]);
}

TEST(Train, ProgressLinesHaveFixedFormat) {
  ToyRun s = toy_setup(3);
  TrainConfig cfg;
  cfg.epochs = 2;
  std::ostringstream log;
  TrainOptions opt = quick_options();
  opt.log = &log;
  train(*s.model, s.data, cfg, opt);
  std::istringstream in(log.str());
  std::string line;
  std::size_t epoch = 0;
  while (std::getline(in, line)) {
    ++epoch;
    EXPECT_EQ(line.rfind("epoch=" + std::to_string(epoch) + " elbo=", 0), 0u) << line;
    EXPECT_NE(line.find(" L=1 emp_L="), std::string::npos) << line;
  }
  EXPECT_EQ(epoch, 2u);
}

TEST(Train, LossDecreasesOnLinearGaussianInstance) {
  // x = 2 z + noise, z ~ N(0, 1): identifiable with f(z) = L z + ...
  ModelConfig mc;
  mc.kind = ModelConfig::Kind::vae;
  mc.latent_dim = mc.data_dim = 1;
  mc.L1 = 0.5;
  mc.icnn = {1, 4};
  mc.encoder = {1, 4};
  Rng rng(4);
  auto model = make_model(mc, rng);
  const Tensor z = standard_normal(4096, 1, rng);
  TrainData data;
  data.train_x = add(scale(z, 2.0), standard_normal(4096, 1, rng));
  TrainConfig cfg;
  cfg.epochs = 20;
  cfg.batch_size = 128;
  cfg.learning_rate = 3e-3;
  const auto res = train(*model, data, cfg, quick_options());
  std::size_t violations = 0;
  for (std::size_t e = 1; e < res.epoch_elbo.size(); ++e) violations += res.epoch_elbo[e] < res.epoch_elbo[e - 1];
  EXPECT_LE(violations, res.epoch_elbo.size() / 20) << "first " << res.epoch_elbo.front() << " last "
                                                    << res.epoch_elbo.back();
  EXPECT_GT(res.epoch_elbo.back(), res.epoch_elbo.front());
}

TEST(Train, ZeroEpochsCheckpointIsInitialization) {
  ToyRun s = toy_setup(5);
  const auto dir = std::filesystem::temp_directory_path() / ("illid_train_" + std::to_string(::getpid()));
  std::filesystem::create_directories(dir);
  TrainConfig cfg;
  cfg.epochs = 0;
  TrainOptions opt = quick_options();
  opt.checkpoint_dir = dir;
  const auto res = train(*s.model, s.data, cfg, opt);
  const auto loaded = load_checkpoint(res.last_checkpoint);
  EXPECT_EQ(testing::flatten(loaded->parameters()), testing::flatten(s.model->parameters()));
  std::filesystem::remove_all(dir);
}

TEST(Train, NonFiniteDataAbortsWithLastCheckpoint) {
  ToyRun s = toy_setup(6);
  auto x = s.data.train_x.mutable_data();
  std::fill(x.begin(), x.end(), std::nan(""));
  const auto dir = std::filesystem::temp_directory_path() / ("illid_nan_" + std::to_string(::getpid()));
  std::filesystem::create_directories(dir);
  TrainConfig cfg;
  cfg.epochs = 1;
  TrainOptions opt = quick_options();
  opt.checkpoint_dir = dir;
  s.data.eval_x = Tensor();
  try {
    train(*s.model, s.data, cfg, opt);
    ADD_FAILURE() << "expected TrainingError";
  } catch (const TrainingError& e) {
    EXPECT_EQ(e.term(), "reconstruction");
    EXPECT_EQ(e.last_good_checkpoint(), (dir / "checkpoint_e0.ilvae").string());
    EXPECT_TRUE(std::filesystem::exists(e.last_good_checkpoint()));
  }
  EXPECT_TRUE(s.model->parameters().front()->tracked() == false);
  std::filesystem::remove_all(dir);
}

TEST(Train, AnnealingTrajectoryOnToyData) {
  ModelConfig mc;
  mc.L1 = mc.L2 = 5.0;
  Rng rng(7);
  auto model = make_model(mc, rng);
  const ToyDataset ds = generate_toy(7.5, 200, 7);
  TrainData data;
  data.train_x = gather_rows(ds.x, ds.train);
  TrainConfig cfg;
  cfg.epochs = 15;
  cfg.anneal = AnnealConfig{};
  const auto res = train(*model, data, cfg, quick_options());
  ASSERT_TRUE(res.anneal.has_value());
  double L = 5.0;
  for (const auto& e : res.anneal->events()) {
    EXPECT_EQ(e.old_L, L);
    EXPECT_EQ(e.new_L, 0.85 * L);
    EXPECT_LE(e.emp_L, 1.1 * e.old_L);
    L = e.new_L;
  }
  EXPECT_EQ(model->config().L1, L);
  EXPECT_EQ(model->decoder().first().strong_convexity(), L);
}

}  // namespace
}  // namespace illid
