#include "illid/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <ostream>

#include "illid/error.hpp"

namespace illid {

using namespace ad;

namespace {

// Mean and standard error of a sample.
Estimate summarize(const std::vector<double>& v) {
  const double n = static_cast<double>(v.size());
  double s = 0.0;
  for (double x : v) s += x;
  const double m = s / n;
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  const double se = v.size() > 1 ? std::sqrt(ss / (n - 1) / n) : 0.0;
  return {m, se};
}

// value(i, k) for data point i and draw k, reduced both per point and across points.
struct PointDrawTable {
  std::size_t n_x, n_z;
  std::vector<double> v;  // n_x * n_z

  std::vector<Estimate> per_point() const {
    std::vector<Estimate> out;
    std::vector<double> row(n_z);
    for (std::size_t i = 0; i < n_x; ++i) {
      std::copy(v.begin() + i * n_z, v.begin() + (i + 1) * n_z, row.begin());
      out.push_back(summarize(row));
    }
    return out;
  }
  Estimate averaged() const {
    std::vector<double> per_draw(n_z, 0.0);
    for (std::size_t i = 0; i < n_x; ++i)
      for (std::size_t k = 0; k < n_z; ++k) per_draw[k] += v[i * n_z + k] / static_cast<double>(n_x);
    return summarize(per_draw);
  }
};

// |M^T r|^2 for M [t x l].
double sq_norm_transposed(const Tensor& M, std::span<const double> r) {
  const std::size_t t = M.rows(), l = M.cols();
  double s = 0.0;
  for (std::size_t j = 0; j < l; ++j) {
    double acc = 0.0;
    for (std::size_t i = 0; i < t; ++i) acc += M(i, j) * r[i];
    s += acc * acc;
  }
  return s;
}

template <class Fn>
PointDrawTable tabulate(const LatentModel& model, const Tensor& xs, const PriorDraws& d, Fn fn) {
  const Tensor T = model.likelihood().sufficient_statistic(xs);
  const std::size_t n_x = xs.rows(), n_z = d.z.rows(), t = T.cols();
  PointDrawTable table{n_x, n_z, std::vector<double>(n_x * n_z)};
  std::vector<double> r(t);
  for (std::size_t i = 0; i < n_x; ++i)
    for (std::size_t k = 0; k < n_z; ++k) {
      for (std::size_t j = 0; j < t; ++j) r[j] = T(i, j) - d.mean_stat(k, j);
      table.v[i * n_z + k] = fn(k, std::span<const double>(r));
    }
  return table;
}

double log_sum_exp(const std::vector<double>& v) {
  const double m = *std::max_element(v.begin(), v.end());
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

}  // namespace

PriorDraws draw_prior(const LatentModel& model, std::size_t n, Rng& rng) {
  if (n < 2) throw ContractError("draw_prior needs at least two draws");
  const auto p = model.prior();
  const std::size_t l = model.latent_dim();
  std::vector<double> z(n * l);
  for (std::size_t k = 0; k < n; ++k) {
    const auto zk = p.sample(0, rng);
    std::copy(zk.begin(), zk.end(), z.begin() + k * l);
  }
  PriorDraws d;
  d.z = Tensor::matrix(n, l, std::move(z));
  const Decoder& dec = model.decoder();
  const Tensor xi = dec(d.z, &d.stage1);
  d.mean_stat = model.likelihood().mean_map(xi);
  d.jacobian = finite_difference_jacobians([&](const Tensor& zz) { return dec(zz); }, d.z);
  if (dec.composed()) {
    const BrenierMap& f2 = *dec.second();
    const auto j2 = finite_difference_jacobians(f2, zero_pad(d.stage1, f2.dim()));
    for (const auto& J : j2) {
      const std::size_t t = J.rows();
      std::vector<double> e(t * l);
      for (std::size_t i = 0; i < t; ++i)
        for (std::size_t j = 0; j < l; ++j) e[i * l + j] = J(i, j);
      d.stage2_embed.push_back(Tensor::matrix(t, l, std::move(e)));
    }
  }
  return d;
}

std::vector<Estimate> relative_fisher_per_point(const LatentModel& model, const Tensor& xs, const PriorDraws& d) {
  return tabulate(model, xs, d, [&](std::size_t k, std::span<const double> r) {
           return sq_norm_transposed(d.jacobian[k], r);
         }).per_point();
}

Estimate relative_fisher(const LatentModel& model, const Tensor& xs, const PriorDraws& d) {
  return tabulate(model, xs, d, [&](std::size_t k, std::span<const double> r) {
           return sq_norm_transposed(d.jacobian[k], r);
         }).averaged();
}

Estimate relative_fisher(const LatentModel& model, const Tensor& xs, std::size_t n_z, Rng& rng) {
  if (n_z < 100) throw ContractError("relative_fisher needs n_z >= 100");
  return relative_fisher(model, xs, draw_prior(model, n_z, rng));
}

std::vector<Estimate> theorem1_bound_per_point(const LatentModel& model, const Tensor& xs, double L,
                                               const PriorDraws& d) {
  return tabulate(model, xs, d, [&](std::size_t, std::span<const double> r) {
           double s = 0.0;
           for (double v : r) s += v * v;
           return L * L * s;
         }).per_point();
}

Estimate theorem1_bound(const LatentModel& model, const Tensor& x, double L, std::size_t n_z, Rng& rng) {
  if (n_z < 100) throw ContractError("theorem1_bound needs n_z >= 100");
  return theorem1_bound_per_point(model, x, L, draw_prior(model, n_z, rng)).front();
}

std::vector<Estimate> theorem3_bound_per_point(const LatentModel& model, const Tensor& xs, const PriorDraws& d) {
  if (d.stage2_embed.empty()) throw ContractError("Theorem 3 bound needs a composed decoder (latent_dim < data_dim)");
  const double L1 = model.decoder().first().strong_convexity();
  return tabulate(model, xs, d, [&](std::size_t k, std::span<const double> r) {
           return L1 * L1 * sq_norm_transposed(d.stage2_embed[k], r);
         }).per_point();
}

Estimate fisher_lower_bound(const LatentModel& model, const Tensor& xs, const PriorDraws& d) {
  const double L1 = model.decoder().first().strong_convexity();
  if (model.decoder().composed()) {
    return tabulate(model, xs, d, [&](std::size_t k, std::span<const double> r) {
             return L1 * L1 * sq_norm_transposed(d.stage2_embed[k], r);
           }).averaged();
  }
  return tabulate(model, xs, d, [&](std::size_t, std::span<const double> r) {
           double s = 0.0;
           for (double v : r) s += v * v;
           return L1 * L1 * s;
         }).averaged();
}

Theorem2Result theorem2_bound(const LatentModel& model, const Tensor& xs, double L, const PriorDraws& d) {
  if (xs.rows() == 0) throw ContractError("theorem2_bound needs at least one point");
  const Tensor T = model.likelihood().sufficient_statistic(xs);
  const std::size_t n_x = xs.rows(), n_z = d.z.rows(), t = T.cols();
  std::vector<double> tbar(t, 0.0), abar(t, 0.0);
  for (std::size_t i = 0; i < n_x; ++i)
    for (std::size_t j = 0; j < t; ++j) tbar[j] += T(i, j) / static_cast<double>(n_x);
  for (std::size_t k = 0; k < n_z; ++k)
    for (std::size_t j = 0; j < t; ++j) abar[j] += d.mean_stat(k, j) / static_cast<double>(n_z);

  // The average of per-point scores is J^T (Tbar - grad A) by linearity.
  std::vector<double> lhs(n_z), rhs(n_z), r(t);
  double var = 0.0;
  for (std::size_t k = 0; k < n_z; ++k) {
    double s = 0.0;
    for (std::size_t j = 0; j < t; ++j) {
      r[j] = tbar[j] - d.mean_stat(k, j);
      s += r[j] * r[j];
      const double dev = d.mean_stat(k, j) - abar[j];
      var += dev * dev / static_cast<double>(n_z);
    }
    lhs[k] = sq_norm_transposed(d.jacobian[k], r);
    rhs[k] = L * L * s;
  }
  double bias = 0.0;
  for (std::size_t j = 0; j < t; ++j) bias += (tbar[j] - abar[j]) * (tbar[j] - abar[j]);
  return {summarize(lhs), summarize(rhs), L * L * var, L * L * bias};
}

Estimate kl_posterior_prior(const LatentModel& model, const Tensor& xs) {
  return summarize(model.kl_to_prior(xs));
}

std::vector<double> iw_log_likelihood(const LatentModel& model, const Tensor& xs, std::size_t K, Rng& rng) {
  if (K == 0) throw ContractError("iw_log_likelihood needs K >= 1");
  const std::size_t n = xs.rows(), l = model.latent_dim(), m = model.data_dim();
  const auto q = model.posterior(xs);
  const auto p = model.prior();
  std::vector<double> z(n * K * l), xr(n * K * m);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < K; ++k) {
      const auto zk = q.sample(i, rng);
      std::copy(zk.begin(), zk.end(), z.begin() + (i * K + k) * l);
      for (std::size_t j = 0; j < m; ++j) xr[(i * K + k) * m + j] = xs(i, j);
    }
  const Tensor Z = Tensor::matrix(n * K, l, std::move(z));
  const Tensor ll = model.log_likelihood(Tensor::matrix(n * K, m, std::move(xr)), Z);
  std::vector<double> out(n), lw(K);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < K; ++k) {
      const auto zk = Z.data().subspan((i * K + k) * l, l);
      lw[k] = ll[i * K + k] + p.log_density(0, zk) - q.log_density(i, zk);
    }
    out[i] = log_sum_exp(lw) - std::log(static_cast<double>(K));
  }
  return out;
}

double mutual_information(const DiagGaussianMixture& q, std::size_t n_mc, Rng& rng) {
  if (n_mc < 100) throw ContractError("mutual_information needs n_mc >= 100");
  const std::size_t n = q.rows;
  const double log_n = std::log(static_cast<double>(n));
  std::vector<double> terms(n);
  double total = 0.0;
  for (std::size_t s = 0; s < n_mc; ++s) {
    const std::size_t i = s % n;
    const auto z = q.sample(i, rng);
    for (std::size_t j = 0; j < n; ++j) terms[j] = q.log_density(j, z);
    total += terms[i] - (log_sum_exp(terms) - log_n);
  }
  return total / static_cast<double>(n_mc);
}

double mutual_information(const LatentModel& model, const Tensor& xs, std::size_t n_mc, Rng& rng) {
  return mutual_information(model.posterior(xs), n_mc, rng);
}

double active_units(const Tensor& means, double threshold) {
  const std::size_t n = means.rows(), l = means.cols();
  if (n < 2) throw ContractError("active_units needs at least two points");
  std::size_t active = 0;
  for (std::size_t d = 0; d < l; ++d) {
    double m = 0.0;
    for (std::size_t i = 0; i < n; ++i) m += means(i, d);
    m /= static_cast<double>(n);
    double v = 0.0;
    for (std::size_t i = 0; i < n; ++i) v += (means(i, d) - m) * (means(i, d) - m);
    v /= static_cast<double>(n);
    if (v > threshold) ++active;
  }
  return static_cast<double>(active) / static_cast<double>(l);
}

double active_units(const LatentModel& model, const Tensor& xs, double threshold) {
  const auto q = model.posterior(xs);
  std::vector<double> means;
  means.reserve(xs.rows() * model.latent_dim());
  for (std::size_t i = 0; i < xs.rows(); ++i) {
    const auto m = q.mixture_mean(i);
    means.insert(means.end(), m.begin(), m.end());
  }
  return active_units(Tensor::matrix(xs.rows(), model.latent_dim(), std::move(means)), threshold);
}

// Shortest augmenting path assignment (Kuhn-Munkres with potentials), O(n^3),
// run on cost = -weight.
std::vector<std::size_t> max_weight_assignment(const std::vector<std::vector<double>>& weight) {
  const std::size_t n = weight.size();
  for (const auto& row : weight)
    if (row.size() != n) throw DimensionError("assignment needs a square matrix");
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0), minv(n + 1);
  std::vector<std::size_t> match(n + 1, 0), way(n + 1, 0);  // match[col] = row, 1-based
  std::vector<char> used(n + 1);
  for (std::size_t i = 1; i <= n; ++i) {
    match[0] = i;
    std::size_t j0 = 0;
    std::fill(minv.begin(), minv.end(), inf);
    std::fill(used.begin(), used.end(), 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = match[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = -weight[i0 - 1][j - 1] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[match[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (match[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      match[j0] = match[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<std::size_t> result(n);
  for (std::size_t j = 1; j <= n; ++j) result[match[j] - 1] = j - 1;
  return result;
}

double clustering_accuracy(const std::vector<std::size_t>& predicted, const std::vector<std::size_t>& labels,
                           std::size_t c) {
  if (predicted.size() != labels.size() || labels.empty())
    throw DimensionError("clustering_accuracy: predictions and labels differ in length or are empty");
  std::vector<std::vector<double>> confusion(c, std::vector<double>(c, 0.0));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (predicted[i] >= c || labels[i] >= c) throw ContractError("cluster index outside 0..c-1");
    confusion[predicted[i]][labels[i]] += 1.0;
  }
  const auto assign = max_weight_assignment(confusion);
  double hits = 0.0;
  for (std::size_t k = 0; k < c; ++k) hits += confusion[k][assign[k]];
  return hits / static_cast<double>(labels.size());
}

double clustering_accuracy(const IlLidMVaeModel& model, const Tensor& xs, const std::vector<std::size_t>& labels) {
  const Tensor r = model.log_responsibilities(xs);
  const std::size_t c = model.components();
  std::vector<std::size_t> pred(xs.rows());
  for (std::size_t i = 0; i < xs.rows(); ++i) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < c; ++k)
      if (r(i, k) > r(i, best)) best = k;
    pred[i] = best;
  }
  return clustering_accuracy(pred, labels, c);
}

double first_stage_inverse_lipschitz(const PriorDraws& d) {
  const std::size_t l = d.z.cols();
  std::vector<RecycledPair> pairs;
  for (std::size_t k = 0; k + 1 < d.z.rows(); k += 2) {
    const auto row = [&](const Tensor& t, std::size_t r) {
      return std::vector<double>(t.data().begin() + r * l, t.data().begin() + (r + 1) * l);
    };
    pairs.push_back({row(d.z, k), row(d.stage1, k), row(d.z, k + 1), row(d.stage1, k + 1)});
  }
  return empirical_inverse_lipschitz(pairs);
}

MetricsRecord evaluate(const LatentModel& model, const Tensor& xs, const std::vector<std::size_t>* labels,
                       const EvalConfig& cfg, std::uint64_t seed) {
  MetricsRecord rec;
  rec.L1 = model.config().L1;
  rec.L2 = model.config().L2;
  rec.n_mc = cfg.n_mc;
  rec.seed = seed;

  Rng draw_rng(derive_seed(seed, 1));
  const PriorDraws draws = draw_prior(model, cfg.n_mc, draw_rng);
  const Estimate fisher = relative_fisher(model, xs, draws);
  const Estimate bound = fisher_lower_bound(model, xs, draws);
  rec.fisher = fisher.value;
  rec.fisher_se = fisher.se;
  rec.t1_bound = bound.value;
  rec.t1_se = bound.se;
  rec.emp_inv_lip = first_stage_inverse_lipschitz(draws);

  Rng iw_rng(derive_seed(seed, 2));
  const auto ll = iw_log_likelihood(model, xs, cfg.iw_samples, iw_rng);
  double s = 0.0;
  for (double v : ll) s += v;
  rec.nll = -s / static_cast<double>(ll.size());
  rec.kl = kl_posterior_prior(model, xs).value;

  Rng mi_rng(derive_seed(seed, 3));
  rec.mi = mutual_information(model, xs, cfg.n_mc, mi_rng);
  rec.au = active_units(model, xs);
  if (labels) {
    if (const auto* mix = dynamic_cast<const IlLidMVaeModel*>(&model)) rec.accuracy = clustering_accuracy(*mix, xs, *labels);
  }
  return rec;
}

void write_metrics_header(std::ostream& os) {
  os << "run_id,step,L1,L2,nll,kl,fisher,fisher_se,t1_bound,t1_se,mi,au,accuracy,emp_inv_lip,seed\n";
}

void write_metrics_row(std::ostream& os, const MetricsRecord& r) {
  const auto num = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return std::string(buf);
  };
  os << r.run_id << ',' << r.step << ',' << num(r.L1) << ',' << num(r.L2) << ',' << num(r.nll) << ',' << num(r.kl)
     << ',' << num(r.fisher) << ',' << num(r.fisher_se) << ',' << num(r.t1_bound) << ',' << num(r.t1_se) << ','
     << num(r.mi) << ',' << num(r.au) << ',' << (r.accuracy ? num(*r.accuracy) : std::string()) << ','
     << num(r.emp_inv_lip) << ',' << r.seed << '\n';
}

}  // namespace illid
