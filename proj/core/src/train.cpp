#include "illid/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <ostream>

#include "illid/data.hpp"
#include "illid/error.hpp"

namespace illid {

using namespace ad;

Adam::Adam(double learning_rate, double beta1, double beta2, double eps)
    : lr_(learning_rate), b1_(beta1), b2_(beta2), eps_(eps) {}

void Adam::step(std::span<Tensor* const> params, std::span<const Tensor> grads) {
  if (params.size() != grads.size()) throw DimensionError("Adam::step: parameter and gradient counts differ");
  if (m_.empty()) {
    for (const Tensor* p : params) {
      m_.emplace_back(p->size(), 0.0);
      v_.emplace_back(p->size(), 0.0);
    }
  }
  if (m_.size() != params.size()) throw DimensionError("Adam::step: parameter layout changed");
  ++t_;
  const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto w = params[i]->mutable_data();
    const auto g = grads[i].data();
    if (w.size() != m_[i].size() || g.size() != w.size()) throw DimensionError("Adam::step: shape mismatch");
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t k = 0; k < w.size(); ++k) {
      m[k] = b1_ * m[k] + (1.0 - b1_) * g[k];
      v[k] = b2_ * v[k] + (1.0 - b2_) * g[k] * g[k];
      w[k] -= lr_ * (m[k] / c1) / (std::sqrt(v[k] / c2) + eps_);
    }
  }
}

void AnnealState::record(const Tensor& z, const Tensor& stage1) {
  const std::size_t l = z.cols();
  for (std::size_t r = 0; r + 1 < z.rows(); r += 2) {
    RecycledPair p;
    p.x.assign(z.data().begin() + r * l, z.data().begin() + (r + 1) * l);
    p.y.assign(z.data().begin() + (r + 1) * l, z.data().begin() + (r + 2) * l);
    p.fx.assign(stage1.data().begin() + r * l, stage1.data().begin() + (r + 1) * l);
    p.fy.assign(stage1.data().begin() + (r + 1) * l, stage1.data().begin() + (r + 2) * l);
    if (pairs_.size() < capacity) {
      pairs_.push_back(std::move(p));
    } else {
      pairs_[head_] = std::move(p);
      head_ = (head_ + 1) % capacity;
    }
  }
}

void AnnealState::clear_pairs() {
  pairs_.clear();
  head_ = 0;
}

std::optional<double> AnnealState::empirical_L() const {
  if (pairs_.size() < min_pairs) return std::nullopt;
  return empirical_inverse_lipschitz(std::span<const RecycledPair>(pairs_));
}

std::optional<AnnealEvent> anneal_step(AnnealState& state, BrenierMap& f1, std::size_t epoch,
                                       const AnnealConfig& cfg, std::ostream* log) {
  const auto emp = state.empirical_L();
  if (!emp) {
    if (log) *log << "warning: epoch=" << epoch << " annealing skipped, " << state.size() << " recycled pairs\n";
    return std::nullopt;
  }
  if (*emp > cfg.trigger_ratio * state.current_L_) return std::nullopt;
  AnnealEvent ev{epoch, state.current_L_, std::max(cfg.min_L, cfg.decay * state.current_L_), *emp};
  if (ev.new_L == ev.old_L) return std::nullopt;
  state.current_L_ = ev.new_L;
  f1.set_strong_convexity(ev.new_L);
  state.events_.push_back(ev);
  state.clear_pairs();
  return ev;
}

namespace {

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

bool all_finite(std::span<const Tensor> grads) {
  for (const auto& g : grads)
    for (double v : g.data())
      if (!std::isfinite(v)) return false;
  return true;
}

}  // namespace

TrainResult train(LatentModel& model, const TrainData& data, const TrainConfig& cfg, const TrainOptions& opt) {
  const std::size_t n = data.train_x.rows();
  if (n == 0) throw ContractError("train: empty training data");
  if (data.train_x.cols() != model.data_dim()) throw DimensionError("train: data width differs from model data_dim");
  if (cfg.batch_size == 0) throw ContractError("train: batch_size must be positive");

  TrainResult result;
  if (cfg.anneal) result.anneal.emplace(model.config().L1);
  AnnealState pairs(model.config().L1);  // feeds emp_L in the progress log when annealing is off
  AnnealState& recycle = result.anneal ? *result.anneal : pairs;

  Rng shuffle_rng(derive_seed(cfg.seed, 1));
  Rng noise_rng(derive_seed(cfg.seed, 2));
  Adam adam(cfg);

  const bool evaluating = data.eval_x.size() > 0;
  Tensor eval_x = data.eval_x;
  std::vector<std::size_t> eval_labels;
  if (evaluating && eval_x.rows() > opt.eval.n_eval_points) {
    std::vector<std::size_t> idx(opt.eval.n_eval_points);
    std::iota(idx.begin(), idx.end(), 0);
    eval_x = gather_rows(eval_x, idx);
    if (data.eval_labels) eval_labels = gather(*data.eval_labels, idx);
  } else if (data.eval_labels) {
    eval_labels = *data.eval_labels;
  }

  const auto checkpoint = [&](std::size_t epoch) {
    if (opt.checkpoint_dir.empty()) return;
    const auto path = opt.checkpoint_dir / ("checkpoint_e" + std::to_string(epoch) + ".ilvae");
    save_checkpoint(model, path);
    result.last_checkpoint = path;
  };
  const auto record_metrics = [&](std::size_t epoch) {
    if (!evaluating) return;
    MetricsRecord rec = evaluate(model, eval_x, data.eval_labels ? &eval_labels : nullptr, opt.eval,
                                 evaluation_seed(cfg.seed));
    rec.run_id = opt.run_id;
    rec.step = epoch;
    rec.seed = cfg.seed;
    result.history.push_back(std::move(rec));
  };

  checkpoint(0);
  record_metrics(0);

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double elbo_sum = 0.0;
    for (std::size_t start = 0; start < n; start += cfg.batch_size) {
      const std::size_t stop = std::min(n, start + cfg.batch_size);
      const Tensor batch =
          gather_rows(data.train_x, std::vector<std::size_t>(order.begin() + start, order.begin() + stop));
      const auto params = model.parameters();
      Tape tape;
      for (Tensor* p : params) tape.watch(*p);
      ElboCapture capture;
      Tensor per_row;
      try {
        per_row = model.elbo(batch, noise_rng, &capture);
      } catch (const TrainingError& e) {
        for (Tensor* p : params) p->detach();
        throw TrainingError(e.term(), std::string(e.what()) + " at epoch " + std::to_string(epoch),
                            result.last_checkpoint.string());
      }
      const Tensor loss = -mean(per_row);
      std::vector<Tensor> grads;
      grads.reserve(params.size());
      {
        const Gradients g = tape.backward(loss);
        for (Tensor* p : params) grads.push_back(g.wrt(*p));
      }
      for (Tensor* p : params) p->detach();
      if (!std::isfinite(loss.item()) || !all_finite(grads))
        throw TrainingError("gradient", "non-finite gradient at epoch " + std::to_string(epoch),
                            result.last_checkpoint.string());
      adam.step(params, grads);
      elbo_sum += -loss.item() * static_cast<double>(stop - start);
      recycle.record(capture.z, capture.stage1);
    }
    const double epoch_elbo = elbo_sum / static_cast<double>(n);
    result.epoch_elbo.push_back(epoch_elbo);

    const auto emp = recycle.empirical_L();
    if (result.anneal) {
      if (const auto ev = anneal_step(*result.anneal, model.decoder().first(), epoch, *cfg.anneal, opt.log))
        model.set_first_stage_L(ev->new_L);
    }
    if (opt.log)
      *opt.log << "epoch=" << epoch << " elbo=" << format_double(epoch_elbo)
               << " L=" << format_double(model.config().L1) << " emp_L=" << (emp ? format_double(*emp) : "nan")
               << '\n';

    if (epoch == cfg.epochs || (cfg.eval_every > 0 && epoch % cfg.eval_every == 0)) {
      checkpoint(epoch);
      record_metrics(epoch);
    }
  }
  return result;
}

}  // namespace illid
