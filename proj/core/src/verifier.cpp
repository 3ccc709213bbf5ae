#include "illid/verifier.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <ostream>
#include <sstream>
#include <thread>

#include "illid/diagnostics.hpp"
#include "illid/error.hpp"
#include "illid/linalg.hpp"

namespace illid {

using namespace ad;

namespace {

std::string describe(std::initializer_list<std::pair<const char*, double>> kv) {
  std::ostringstream os;
  bool first = true;
  for (const auto& [k, v] : kv) {
    if (!first) os << ' ';
    os << k << '=' << v;
    first = false;
  }
  return os.str();
}

double slack(const VerifyReport& r) {
  return r.lhs - r.rhs + 3.0 * std::hypot(r.lhs_se, r.rhs_se);
}

int severity(Verdict v) {
  switch (v) {
    case Verdict::fail: return 2;
    case Verdict::inconclusive: return 1;
    case Verdict::pass: return 0;
  }
  return 2;
}

VerifyReport inequality(std::string name, std::string instance, Estimate lhs, Estimate rhs, std::uint64_t seed) {
  VerifyReport r{std::move(name), std::move(instance), lhs.value, rhs.value, lhs.se, rhs.se, Verdict::fail, seed};
  r.verdict = inequality_verdict(r.lhs, r.rhs, std::hypot(r.lhs_se, r.rhs_se));
  return r;
}

ModelConfig fixture_config(std::size_t l, std::size_t t, double L1, double L2) {
  ModelConfig cfg;
  cfg.kind = ModelConfig::Kind::vae;
  cfg.latent_dim = l;
  cfg.data_dim = t;
  cfg.L1 = L1;
  cfg.L2 = L2;
  cfg.icnn = {2, 10};
  cfg.encoder = {1, 4};
  return cfg;
}

}  // namespace

std::string_view to_string(Verdict v) {
  switch (v) {
    case Verdict::pass: return "pass";
    case Verdict::fail: return "fail";
    case Verdict::inconclusive: return "inconclusive";
  }
  return "fail";
}

Verdict inequality_verdict(double lhs, double rhs, double combined_se) {
  if (!std::isfinite(lhs) || !std::isfinite(rhs)) return Verdict::fail;
  const double deficit = rhs - lhs;
  if (deficit <= 3.0 * combined_se) return Verdict::pass;
  if (deficit <= 6.0 * combined_se) return Verdict::inconclusive;
  return Verdict::fail;
}

Verdict identity_verdict(double lhs, double rhs, double tol) {
  return std::abs(lhs - rhs) <= tol ? Verdict::pass : Verdict::fail;
}

VerifyReport worst_of(std::string name, const std::vector<VerifyReport>& reports) {
  if (reports.empty()) throw ContractError("worst_of: no reports");
  const auto it = std::min_element(reports.begin(), reports.end(), [](const auto& a, const auto& b) {
    if (severity(a.verdict) != severity(b.verdict)) return severity(a.verdict) > severity(b.verdict);
    return slack(a) < slack(b);
  });
  VerifyReport r = *it;
  r.name = std::move(name);
  r.instance += " (worst of " + std::to_string(reports.size()) + ")";
  return r;
}

std::unique_ptr<IlLidVaeModel> random_fixture(std::size_t l, std::size_t t, double L1, double L2,
                                              std::uint64_t seed) {
  Rng rng(seed);
  return std::make_unique<IlLidVaeModel>(fixture_config(l, t, L1, L2), rng);
}

std::unique_ptr<IlLidVaeModel> linear_fixture(std::size_t l, std::size_t t, double L1, double L2,
                                              std::span<const double> offset) {
  Rng rng(0);
  auto model = std::make_unique<IlLidVaeModel>(fixture_config(l, t, L1, L2), rng);
  IcnnParams last = IcnnParams::zero(t, 1, 4, l == t ? L1 : L2);
  if (!offset.empty()) {
    if (offset.size() != t) throw DimensionError("linear_fixture: offset has wrong length");
    last.layers.back().wz = Tensor::matrix(1, t, std::vector<double>(offset.begin(), offset.end()));
  }
  model->decoder() = l == t ? Decoder(BrenierMap(std::move(last)))
                            : Decoder(BrenierMap(IcnnParams::zero(l, 1, 4, L1)), BrenierMap(std::move(last)));
  return model;
}

VerifyReport check_lemma1(const Tensor& W, const Tensor& xs, const Tensor& zs, std::uint64_t seed) {
  const std::size_t t = W.rows(), l = W.cols();
  if (xs.cols() != t || zs.cols() != l || xs.rows() != zs.rows())
    throw DimensionError("check_lemma1: shapes of W, xs, zs disagree");
  // Posterior precision P = I + W^T W, mean m = P^-1 W^T x.
  std::vector<double> P(l * l);
  for (std::size_t a = 0; a < l; ++a)
    for (std::size_t b = 0; b < l; ++b) {
      double s = a == b ? 1.0 : 0.0;
      for (std::size_t i = 0; i < t; ++i) s += W(i, a) * W(i, b);
      P[a * l + b] = s;
    }
  const Tensor Pm = Tensor::matrix(l, l, P);
  const ExpFamily family = ExpFamily::gaussian(t);

  VerifyReport r{"lemma1", describe({{"l", double(l)}, {"t", double(t)}, {"points", double(xs.rows())}}),
                 0, 0, 0, 0, Verdict::pass, seed};
  double worst = -1.0;
  for (std::size_t n = 0; n < xs.rows(); ++n) {
    std::vector<double> x(t), z(l), wtx(l, 0.0), wz(t, 0.0);
    for (std::size_t i = 0; i < t; ++i) x[i] = xs(n, i);
    for (std::size_t j = 0; j < l; ++j) z[j] = zs(n, j);
    for (std::size_t i = 0; i < t; ++i)
      for (std::size_t j = 0; j < l; ++j) {
        wtx[j] += W(i, j) * x[i];
        wz[i] += W(i, j) * z[j];
      }
    const std::vector<double> m = solve_spd(Pm, wtx);
    // grad log p(z|x) - grad log p(z) = -P (z - m) + z.
    std::vector<double> lhs(l), rhs(l, 0.0);
    for (std::size_t a = 0; a < l; ++a) {
      double s = 0.0;
      for (std::size_t b = 0; b < l; ++b) s += P[a * l + b] * (z[b] - m[b]);
      lhs[a] = -s + z[a];
    }
    // grad log p(x|z) = W^T (T(x) - grad A(W z)).
    const auto T = family.sufficient_statistic(x);
    const auto mu = family.mean_map(wz);
    for (std::size_t j = 0; j < l; ++j)
      for (std::size_t i = 0; i < t; ++i) rhs[j] += W(i, j) * (T[i] - mu[i]);
    double diff = 0.0, nl = 0.0, nr = 0.0;
    for (std::size_t j = 0; j < l; ++j) {
      diff = std::max(diff, std::abs(lhs[j] - rhs[j]));
      nl += lhs[j] * lhs[j];
      nr += rhs[j] * rhs[j];
    }
    if (diff > worst) {
      worst = diff;
      r.lhs = std::sqrt(nl);
      r.rhs = std::sqrt(nr);
    }
  }
  r.verdict = worst <= 1e-9 ? Verdict::pass : Verdict::fail;
  return r;
}

VerifyReport check_lemma2(const ExpFamily& family, std::span<const double> xi, std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  const std::size_t t = family.dim();
  std::vector<double> sum(t, 0.0), sumsq(t, 0.0);
  for (std::size_t s = 0; s < n; ++s) {
    const auto T = family.sufficient_statistic(family.sample(xi, rng));
    for (std::size_t j = 0; j < t; ++j) {
      sum[j] += T[j];
      sumsq[j] += T[j] * T[j];
    }
  }
  const auto grad_a = family.mean_map(xi);
  VerifyReport r{"lemma2",
                 std::string(family.kind() == ExpFamily::Kind::gaussian_fixed_var ? "gaussian" : "bernoulli") + " " +
                     describe({{"t", double(t)}, {"n", double(n)}}),
                 0, 0, 0, 0, Verdict::pass, seed};
  double worst = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < t; ++j) {
    const double m = sum[j] / n;
    const double se = std::sqrt(std::max(0.0, sumsq[j] / n - m * m) / (n - 1));
    const double z = std::abs(m - grad_a[j]) - 4.0 * se;
    if (z > worst) {
      worst = z;
      r.lhs = m;
      r.lhs_se = se;
      r.rhs = grad_a[j];
    }
  }
  r.verdict = worst <= 0.0 ? Verdict::pass : Verdict::fail;
  return r;
}

VerifyReport check_lemma3(const BrenierMap& m, const Tensor& points, std::uint64_t seed) {
  double lo = std::numeric_limits<double>::infinity();
  for (std::size_t p = 0; p < points.rows(); ++p) {
    std::vector<double> z(points.cols());
    for (std::size_t j = 0; j < z.size(); ++j) z[j] = points(p, j);
    lo = std::min(lo, min_eigenvalue(brenier_jacobian(m, z)));
  }
  VerifyReport r{"lemma3",
                 describe({{"l", double(m.dim())}, {"L", m.strong_convexity()}, {"points", double(points.rows())}}),
                 lo, m.strong_convexity(), 0, 0, Verdict::fail, seed};
  r.verdict = lo >= m.strong_convexity() - 1e-3 ? Verdict::pass : Verdict::fail;
  return r;
}

std::vector<VerifyReport> check_theorem1(const LatentModel& model, const Tensor& xs, std::size_t n_z,
                                         std::uint64_t seed) {
  if (model.latent_dim() != model.data_dim()) throw ContractError("check_theorem1: needs latent_dim == data_dim");
  Rng rng(seed);
  const PriorDraws d = draw_prior(model, n_z, rng);
  const double L = model.config().L1;
  const auto f = relative_fisher_per_point(model, xs, d);
  const auto b = theorem1_bound_per_point(model, xs, L, d);
  std::vector<VerifyReport> out;
  for (std::size_t i = 0; i < f.size(); ++i)
    out.push_back(inequality("theorem1", describe({{"L", L}, {"point", double(i)}, {"n_z", double(n_z)}}), f[i],
                             b[i], seed));
  return out;
}

VerifyReport check_theorem1_equality(double L, double x, std::size_t n_z, std::uint64_t seed) {
  const auto model = linear_fixture(1, 1, L, L);
  Rng rng(seed);
  const PriorDraws d = draw_prior(*model, n_z, rng);
  const Tensor xs = Tensor::matrix(1, 1, {x});
  const Estimate f = relative_fisher_per_point(*model, xs, d)[0];
  const Estimate b = theorem1_bound_per_point(*model, xs, L, d)[0];
  VerifyReport r{"theorem1_equality", describe({{"L", L}, {"x", x}, {"n_z", double(n_z)}}),
                 f.value, b.value, f.se, b.se, Verdict::fail, seed};
  r.verdict = identity_verdict(f.value, b.value, 2.0 * std::hypot(f.se, b.se));
  return r;
}

VerifyReport check_theorem2(const LatentModel& model, const Tensor& xs, std::size_t n_z, std::uint64_t seed) {
  Rng rng(seed);
  const PriorDraws d = draw_prior(model, n_z, rng);
  const double L = model.config().L1;
  const Theorem2Result res = theorem2_bound(model, xs, L, d);
  return inequality("theorem2", describe({{"L", L}, {"points", double(xs.rows())}, {"n_z", double(n_z)}}), res.lhs,
                    res.rhs, seed);
}

VerifyReport check_corollary1(const std::vector<const LatentModel*>& models, const Tensor& x, std::size_t n_z,
                              std::uint64_t seed) {
  if (models.size() < 2) throw ContractError("check_corollary1: needs at least two models");
  std::vector<Estimate> bounds;
  for (std::size_t i = 0; i < models.size(); ++i) {
    Rng rng(derive_seed(seed, i));
    const PriorDraws d = draw_prior(*models[i], n_z, rng);
    bounds.push_back(theorem1_bound_per_point(*models[i], x, models[i]->config().L1, d)[0]);
  }
  std::vector<VerifyReport> pairs;
  for (std::size_t i = 0; i + 1 < models.size(); ++i)
    pairs.push_back(inequality("corollary1",
                               describe({{"L_lo", models[i]->config().L1}, {"L_hi", models[i + 1]->config().L1}}),
                               bounds[i + 1], bounds[i], seed));
  VerifyReport r = worst_of("corollary1", pairs);
  return r;
}

VerifyReport check_corollary1_infimum(double L, std::span<const double> x, std::size_t n_z, std::uint64_t seed) {
  const std::size_t l = x.size();
  const auto model = linear_fixture(l, l, L, L, x);
  Rng rng(seed);
  const PriorDraws d = draw_prior(*model, n_z, rng);
  const Estimate b =
      theorem1_bound_per_point(*model, Tensor::matrix(1, l, std::vector<double>(x.begin(), x.end())), L, d)[0];
  const double closed = std::pow(L, 4) * static_cast<double>(l);
  VerifyReport r{"corollary1_infimum", describe({{"L", L}, {"l", double(l)}, {"n_z", double(n_z)}}),
                 b.value, closed, b.se, 0.0, Verdict::fail, seed};
  r.verdict = identity_verdict(b.value, closed, 4.0 * b.se + 1e-12);
  return r;
}

std::vector<VerifyReport> check_theorem3(const LatentModel& model, const Tensor& xs, std::size_t n_z,
                                         std::uint64_t seed) {
  if (model.latent_dim() >= model.data_dim()) throw ContractError("check_theorem3: needs latent_dim < data_dim");
  Rng rng(seed);
  const PriorDraws d = draw_prior(model, n_z, rng);
  const auto f = relative_fisher_per_point(model, xs, d);
  const auto b = theorem3_bound_per_point(model, xs, d);
  std::vector<VerifyReport> out;
  for (std::size_t i = 0; i < f.size(); ++i)
    out.push_back(inequality("theorem3",
                             describe({{"l", double(model.latent_dim())}, {"t", double(model.data_dim())},
                                       {"L1", model.config().L1}, {"L2", model.config().L2}, {"point", double(i)}}),
                             f[i], b[i], seed));
  return out;
}

double gaussian_kl(double mp, double vp, double mq, double vq) {
  return 0.5 * (std::log(vq / vp) + (vp + (mp - mq) * (mp - mq)) / vq - 1.0);
}

double gaussian_fisher_divergence(double mp, double vp, double mq, double vq) {
  const double a = 1.0 / vq - 1.0 / vp;
  return vp * a * a + (mp - mq) * (mp - mq) / (vq * vq);
}

VerifyReport check_prop1(double mp, double vp, double mq, double vq, double delta, std::size_t grid) {
  if (!(vp > 0 && vq > 0 && delta >= 0) || grid < 2) throw ContractError("check_prop1: invalid instance");
  double eps = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < grid; ++i) {
    const double t = delta * static_cast<double>(i) / static_cast<double>(grid - 1);
    eps = std::min(eps, gaussian_fisher_divergence(mp, vp + t, mq, vq + t));
  }
  VerifyReport r{"prop1", describe({{"mp", mp}, {"vp", vp}, {"mq", mq}, {"vq", vq}, {"delta", delta}}),
                 gaussian_kl(mp, vp, mq, vq), 0.5 * delta * eps, 0, 0, Verdict::fail, 0};
  r.verdict = r.lhs >= r.rhs ? Verdict::pass : Verdict::fail;
  return r;
}

std::vector<VerifyReport> run_all(std::uint64_t seed, std::size_t jobs) {
  using Job = std::function<std::vector<VerifyReport>()>;
  std::vector<Job> work;
  std::uint64_t stream = 0;
  const auto next = [&] { return derive_seed(seed, stream++); };
  constexpr std::size_t n_z = 1024;

  // Lemma 1: random W, the non-identifiable W = 0, and the scalar W = 1 instance.
  work.push_back([s = next()] {
    Rng rng(s);
    const Tensor W = standard_normal(3, 2, rng);
    const Tensor xs = scale(standard_normal(100, 3, rng), 2.0);
    const Tensor zs = standard_normal(100, 2, rng);
    VerifyReport zero = check_lemma1(Tensor::zeros({3, 2}), xs, zs, s);
    zero.instance = "W=0 " + zero.instance;
    VerifyReport unit = check_lemma1(Tensor::matrix(1, 1, {1.0}), Tensor::matrix(1, 1, {1.0}),
                                     Tensor::matrix(1, 1, {0.0}), s);
    unit.instance = "W=1 x=1 z=0";
    return std::vector<VerifyReport>{check_lemma1(W, xs, zs, s), zero, unit};
  });

  work.push_back([s = next()] {
    Rng rng(s);
    std::vector<VerifyReport> out;
    const Tensor xi_g = standard_normal(1, 3, rng);
    const Tensor xi_b = scale(standard_normal(1, 3, rng), 2.0);
    out.push_back(check_lemma2(ExpFamily::gaussian(3, 1.0), xi_g.data(), 100000, derive_seed(s, 0)));
    out.push_back(check_lemma2(ExpFamily::gaussian(3, 0.5), xi_g.data(), 100000, derive_seed(s, 1)));
    out.push_back(check_lemma2(ExpFamily::bernoulli(3), xi_b.data(), 100000, derive_seed(s, 2)));
    return out;
  });

  for (double L : {0.0, 0.5, 1.5, 5.0})
    work.push_back([L, s = next()] {
      Rng rng(s);
      const BrenierMap m(IcnnParams::random(2, 2, 10, L, rng));
      return std::vector<VerifyReport>{check_lemma3(m, uniform(100, 2, -5.0, 5.0, rng), s)};
    });

  for (double L : {0.5, 1.5, 5.0})
    work.push_back([L, s = next()] {
      const auto model = random_fixture(2, 2, L, L, s);
      Rng rng(derive_seed(s, 1));
      const Tensor xs = scale(standard_normal(32, 2, rng), 3.0);
      return std::vector<VerifyReport>{
          worst_of("theorem1", check_theorem1(*model, xs, n_z, derive_seed(s, 2))),
          check_theorem2(*model, xs, n_z, derive_seed(s, 3))};
    });

  work.push_back([s = next()] {
    return std::vector<VerifyReport>{check_theorem1_equality(1.0, 0.0, n_z, s),
                                     check_theorem1_equality(1.5, 0.7, n_z, derive_seed(s, 1))};
  });

  work.push_back([s = next()] {
    std::vector<std::unique_ptr<IlLidVaeModel>> owned;
    std::vector<const LatentModel*> models;
    for (double L : {0.5, 1.5, 5.0}) {
      owned.push_back(random_fixture(2, 2, L, L, s));
      models.push_back(owned.back().get());
    }
    const Tensor x = Tensor::matrix(1, 2, {1.0, -2.0});
    std::vector<VerifyReport> out{check_corollary1(models, x, n_z, s)};
    const std::vector<double> xv{1.0, -2.0};
    for (double L : {0.5, 1.5, 5.0})
      out.push_back(check_corollary1_infimum(L, xv, n_z, derive_seed(s, static_cast<std::uint64_t>(L * 10))));
    return out;
  });

  work.push_back([s = next()] {
    const auto model = linear_fixture(1, 2, 1.5, 2.0);
    Rng rng(s);
    const Tensor xs = scale(standard_normal(8, 2, rng), 2.0);
    VerifyReport r = worst_of("theorem3", check_theorem3(*model, xs, n_z, derive_seed(s, 1)));
    r.instance = "linear " + r.instance;
    return std::vector<VerifyReport>{r};
  });
  for (std::size_t k = 0; k < 4; ++k)
    work.push_back([k, s = next()] {
      const std::size_t l = k % 2 == 0 ? 1 : 2;
      const auto model = random_fixture(l, 3, 0.5 + k, 1.0, s);
      Rng rng(derive_seed(s, 1));
      const Tensor xs = scale(standard_normal(8, 3, rng), 2.0);
      return std::vector<VerifyReport>{worst_of("theorem3", check_theorem3(*model, xs, n_z, derive_seed(s, 2)))};
    });

  work.push_back([s = next()] {
    std::vector<VerifyReport> out{check_prop1(0, 1, 0, 1, 1.0), check_prop1(0, 1, 2, 1, 1.0),
                                  check_prop1(0, 1, 1, 1, 1e-6)};
    Rng rng(s);
    std::uniform_real_distribution<double> mu(-3, 3), var(0.1, 4), del(0.0, 3);
    std::vector<VerifyReport> random;
    for (int i = 0; i < 50; ++i) {
      const double mp = mu(rng), vp = var(rng), mq = mu(rng), vq = var(rng), d = del(rng);
      random.push_back(check_prop1(mp, vp, mq, vq, d));
    }
    out.push_back(worst_of("prop1", random));
    return out;
  });

  std::vector<std::vector<VerifyReport>> results(work.size());
  std::atomic<std::size_t> cursor{0};
  const auto worker = [&] {
    for (std::size_t i; (i = cursor.fetch_add(1)) < work.size();) results[i] = work[i]();
  };
  const std::size_t n_threads = std::max<std::size_t>(1, std::min(jobs, work.size()));
  std::vector<std::jthread> threads;
  for (std::size_t i = 1; i < n_threads; ++i) threads.emplace_back(worker);
  worker();
  threads.clear();

  std::vector<VerifyReport> out;
  for (auto& r : results) out.insert(out.end(), r.begin(), r.end());
  return out;
}

void write_report_csv(std::ostream& os, const std::vector<VerifyReport>& reports) {
  os << "name,instance,lhs,rhs,lhs_se,rhs_se,verdict,seed\n";
  char buf[64];
  const auto num = [&](double v) {
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return std::string(buf);
  };
  for (const auto& r : reports)
    os << r.name << ",\"" << r.instance << "\"," << num(r.lhs) << ',' << num(r.rhs) << ',' << num(r.lhs_se) << ','
       << num(r.rhs_se) << ',' << to_string(r.verdict) << ',' << r.seed << '\n';
}

void write_report_table(std::ostream& os, const std::vector<VerifyReport>& reports) {
  char buf[256];
  for (const auto& r : reports) {
    std::snprintf(buf, sizeof buf, "%-20s %-13s lhs=%-12.6g rhs=%-12.6g se=%-10.3g  ", r.name.c_str(),
                  std::string(to_string(r.verdict)).c_str(), r.lhs, r.rhs, std::hypot(r.lhs_se, r.rhs_se));
    os << buf << r.instance << '\n';
  }
}

}  // namespace illid
