#pragma once

// Minibatch ELBO maximization with Adam, periodic evaluation, and the
// inverse-Lipschitz annealing controller for the first decoder stage.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "illid/config.hpp"
#include "illid/diagnostics.hpp"
#include "illid/icnn.hpp"
#include "illid/models.hpp"

namespace illid {

class Adam {
 public:
  Adam(double learning_rate, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);
  explicit Adam(const TrainConfig& cfg) : Adam(cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps) {}

  /// One update of every tensor in `params` by the matching gradient. The first
  /// call fixes the parameter layout; later calls must pass the same shapes.
  void step(std::span<Tensor* const> params, std::span<const Tensor> grads);
  std::size_t steps() const noexcept { return t_; }

 private:
  double lr_, b1_, b2_, eps_;
  std::size_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

struct AnnealEvent {
  std::size_t epoch = 0;
  double old_L = 0, new_L = 0, emp_L = 0;
};

/// Ring buffer of (z, f1(z)) pairs captured during training plus the L trajectory.
class AnnealState {
 public:
  static constexpr std::size_t capacity = 4096;
  static constexpr std::size_t min_pairs = 32;

  explicit AnnealState(double initial_L) : initial_L_(initial_L), current_L_(initial_L) {}

  double initial_L() const noexcept { return initial_L_; }
  double current_L() const noexcept { return current_L_; }
  const std::vector<AnnealEvent>& events() const noexcept { return events_; }
  std::size_t size() const noexcept { return pairs_.size(); }
  std::span<const RecycledPair> pairs() const noexcept { return pairs_; }

  /// Pairs consecutive rows (0,1), (2,3), ... of latents and first-stage outputs.
  void record(const Tensor& z, const Tensor& stage1);
  void clear_pairs();

  /// Empirical inverse-Lipschitz constant over the buffered pairs; empty below min_pairs.
  std::optional<double> empirical_L() const;

 private:
  friend std::optional<AnnealEvent> anneal_step(AnnealState&, BrenierMap&, std::size_t, const AnnealConfig&,
                                                std::ostream*);
  double initial_L_, current_L_;
  std::vector<RecycledPair> pairs_;
  std::size_t head_ = 0;
  std::vector<AnnealEvent> events_;
};

/// If the empirical constant of f1 is within trigger_ratio of the imposed one,
/// shrinks L to max(min_L, decay L), rebuilds f1 with it, logs the event and
/// empties the pair buffer (its outputs belong to the old map). Skips with a
/// warning on `log` when fewer than min_pairs pairs are buffered.
std::optional<AnnealEvent> anneal_step(AnnealState& state, BrenierMap& f1, std::size_t epoch,
                                       const AnnealConfig& cfg, std::ostream* log = nullptr);

struct TrainData {
  Tensor train_x;
  Tensor eval_x;                                 ///< held-out points for metrics
  const std::vector<std::size_t>* eval_labels = nullptr;
};

struct TrainOptions {
  EvalConfig eval;
  std::string run_id = "run";
  std::ostream* log = nullptr;                   ///< progress lines
  std::filesystem::path checkpoint_dir;          ///< empty: no checkpoints
};

struct TrainResult {
  std::vector<MetricsRecord> history;
  std::vector<double> epoch_elbo;                ///< mean training ELBO per epoch
  std::optional<AnnealState> anneal;
  std::filesystem::path last_checkpoint;
};

/// Maximizes the mean ELBO. Deterministic given cfg.seed. Metrics are recorded
/// at epoch 0, every eval_every epochs and after the last epoch. On a
/// non-finite value throws TrainingError carrying the last checkpoint written.
TrainResult train(LatentModel& model, const TrainData& data, const TrainConfig& cfg, const TrainOptions& opt = {});

/// Seed used for every evaluation of a run with training seed `seed`, so that a
/// reloaded checkpoint reproduces the in-training metrics.
inline std::uint64_t evaluation_seed(std::uint64_t seed) { return derive_seed(seed, 0xE7A1); }

}  // namespace illid
