// Runs acceptance criteria 1-10 and prints one PASS/FAIL line per criterion.
// Usage: illid_acceptance [--only N] [--work DIR]

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "app.hpp"
#include "illid/data.hpp"
#include "illid/icnn.hpp"
#include "illid/random.hpp"
#include "illid/train.hpp"
#include "illid/verifier.hpp"
#include "support/gradient_suite.hpp"

namespace fs = std::filesystem;
using namespace illid;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Criterion {
  int id;
  const char* title;
  double limit_seconds;
  std::function<Outcome()> run;
};

fs::path g_work;

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::vector<double> row(const Tensor& t, std::size_t r) {
  return {t.data().begin() + static_cast<std::ptrdiff_t>(r * t.cols()),
          t.data().begin() + static_cast<std::ptrdiff_t>((r + 1) * t.cols())};
}

BrenierMap random_icnn(std::size_t l, double L, std::uint64_t seed) {
  Rng rng(seed);
  return BrenierMap(IcnnParams::random(l, 2, 10, L, rng));
}

const std::vector<double> kLs{0.5, 1.5, 5.0};
const std::vector<std::size_t> kDims{2, 8, 32};

Outcome inverse_lipschitz() {
  double worst_slack = INFINITY;
  std::string where;
  for (double L : kLs)
    for (std::size_t l : kDims)
      for (std::uint64_t s = 0; s < 20; ++s) {
        const auto m = random_icnn(l, L, derive_seed(s, 100 + l));
        Rng rng(derive_seed(s, 200 + l));
        const Tensor a = uniform(1000, l, -5, 5, rng), b = uniform(1000, l, -5, 5, rng);
        std::vector<std::pair<std::vector<double>, std::vector<double>>> pairs;
        for (std::size_t i = 0; i < 1000; ++i) pairs.emplace_back(row(a, i), row(b, i));
        const double slack = empirical_inverse_lipschitz(m, pairs) - L;
        if (slack < worst_slack) {
          worst_slack = slack;
          where = "L=" + fmt("%g", L) + " l=" + std::to_string(l) + " seed=" + std::to_string(s);
        }
      }
  return {worst_slack >= -1e-9, "min(ratio - L) = " + fmt("%.3g", worst_slack) + " at " + where};
}

Outcome hessian_bound() {
  std::vector<VerifyReport> all;
  for (double L : kLs)
    for (std::size_t l : kDims)
      for (std::uint64_t s = 0; s < 20; ++s) {
        const auto m = random_icnn(l, L, derive_seed(s, 100 + l));
        Rng rng(derive_seed(s, 300 + l));
        all.push_back(check_lemma3(m, uniform(100, l, -5, 5, rng), s));
      }
  const auto w = worst_of("lemma3", all);
  return {w.verdict == Verdict::pass, "worst: min eig " + fmt("%.6g", w.lhs) + " vs L " + fmt("%g", w.rhs) +
                                          " over " + std::to_string(all.size()) + " models"};
}

Outcome lemma1() {
  Rng rng(31);
  const Tensor W = standard_normal(3, 2, rng);
  const Tensor xs = scale(standard_normal(100, 3, rng), 2.0);
  const Tensor zs = standard_normal(100, 2, rng);
  const auto r = check_lemma1(W, xs, zs, 31);
  return {r.verdict == Verdict::pass, "max |lhs - rhs| = " + fmt("%.3g", std::abs(r.lhs - r.rhs))};
}

Outcome theorem1() {
  constexpr std::size_t n_z = 1024;
  const double grid[] = {0.0, 0.5, 1.5, 5.0};
  std::size_t total = 0, passed = 0;
  std::vector<VerifyReport> all;
  for (std::uint64_t k = 0; k < 20; ++k) {
    const double L = grid[k % 4];
    const std::uint64_t s = derive_seed(41, k);
    const auto model = random_fixture(2, 2, L, L, s);
    Rng rng(derive_seed(s, 1));
    const Tensor xs = scale(standard_normal(32, 2, rng), 3.0);
    auto reps = check_theorem1(*model, xs, n_z, derive_seed(s, 2));
    reps.push_back(check_theorem2(*model, xs, n_z, derive_seed(s, 3)));
    for (auto& r : reps) {
      ++total;
      passed += r.verdict == Verdict::pass;
      all.push_back(std::move(r));
    }
  }
  const auto eq1 = check_theorem1_equality(1.0, 0.0, n_z, 42);
  const auto eq2 = check_theorem1_equality(1.5, 0.7, n_z, 43);
  const auto w = worst_of("theorem1/2", all);
  const bool ok = passed == total && eq1.verdict == Verdict::pass && eq2.verdict == Verdict::pass;
  return {ok, std::to_string(passed) + "/" + std::to_string(total) + " inequalities pass (worst " + w.instance +
                  ": " + fmt("%.4g", w.lhs) + " vs " + fmt("%.4g", w.rhs) + "); equality fixtures " +
                  std::string(to_string(eq1.verdict)) + ", " + std::string(to_string(eq2.verdict))};
}

Outcome theorem3() {
  constexpr std::size_t n_z = 1024;
  std::vector<VerifyReport> all;
  {
    const auto model = linear_fixture(1, 2, 1.5, 2.0);
    Rng rng(51);
    all.push_back(worst_of("theorem3", check_theorem3(*model, scale(standard_normal(8, 2, rng), 2.0), n_z, 52)));
  }
  for (std::uint64_t k = 0; k < 10; ++k) {
    const std::uint64_t s = derive_seed(53, k);
    const std::size_t l = k % 2 == 0 ? 1 : 2, t = l + 1;
    const auto model = random_fixture(l, t, 0.5 + 0.5 * static_cast<double>(k % 4), 1.0, s);
    Rng rng(derive_seed(s, 1));
    all.push_back(worst_of("theorem3", check_theorem3(*model, scale(standard_normal(8, t, rng), 2.0), n_z,
                                                      derive_seed(s, 2))));
  }
  std::size_t passed = 0;
  for (const auto& r : all) passed += r.verdict == Verdict::pass;
  const auto w = worst_of("theorem3", all);
  return {passed == all.size(), std::to_string(passed) + "/" + std::to_string(all.size()) +
                                    " instances pass (worst " + fmt("%.4g", w.lhs) + " vs " + fmt("%.4g", w.rhs) + ")"};
}

Outcome prop1() {
  Rng rng(61);
  std::uniform_real_distribution<double> mu(-3, 3), var(0.1, 4), del(1e-3, 3);
  std::size_t passed = 0;
  double min_margin = INFINITY;
  for (int i = 0; i < 50; ++i) {
    const double mp = mu(rng), vp = var(rng), mq = mu(rng), vq = var(rng), d = del(rng);
    const auto r = check_prop1(mp, vp, mq, vq, d);
    passed += r.verdict == Verdict::pass;
    min_margin = std::min(min_margin, r.lhs - r.rhs);
  }
  return {passed == 50, std::to_string(passed) + "/50 exact; min D - bound = " + fmt("%.3g", min_margin)};
}

// Criteria 7 and 8 share one grid run.
struct GridSummary {
  std::vector<double> L;
  std::map<std::string, std::vector<double>> mean, se;
  std::string error;
};

GridSummary& toy_grid() {
  static GridSummary g = [] {
    GridSummary out;
    app::Options opt;
    RunConfig cfg = app::load_config(ILLID_CONFIG_DIR "/toy_experiment.json", opt);
    cfg.experiment.sigma_grid = {7.5};
    cfg.experiment.L_grid = {0.0, 0.5, 1.5, 5.0};
    cfg.experiment.seeds = {0, 1, 2};
    cfg.data.toy = ToyDataConfig{7.5, 2000};
    cfg.train.epochs = 100;
    const auto results = app::run_toy_grid(cfg, g_work / "toy", cfg.train.seed, 1);
    out.L = cfg.experiment.L_grid;
    for (const char* key : {"fisher", "kl", "accuracy"}) {
      for (double L : out.L) {
        std::vector<double> v;
        for (const auto& r : results) {
          if (r.cell.L != L) continue;
          const std::string k = key;
          if (!r.final) {
            if (k == "fisher") out.error += r.run_id + ": " + r.error + "; ";
            continue;
          }
          v.push_back(k == "fisher" ? r.final->fisher : k == "kl" ? r.final->kl : r.final->accuracy.value_or(NAN));
        }
        double m = 0, s2 = 0;
        for (double x : v) m += x;
        m /= static_cast<double>(v.size());
        for (double x : v) s2 += (x - m) * (x - m);
        const double sd = v.size() > 1 ? std::sqrt(s2 / static_cast<double>(v.size() - 1)) : 0.0;
        out.mean[key].push_back(m);
        out.se[key].push_back(sd / std::sqrt(static_cast<double>(v.size())));
      }
    }
    return out;
  }();
  return g;
}

// Non-decreasing in L, allowing one adjacent inversion within one combined standard error.
Outcome trend(const GridSummary& g, const std::string& key, std::string& detail) {
  const auto& m = g.mean.at(key);
  const auto& s = g.se.at(key);
  int small = 0, large = 0;
  for (std::size_t i = 0; i + 1 < m.size(); ++i) {
    if (m[i + 1] >= m[i]) continue;
    (m[i] - m[i + 1] <= std::hypot(s[i], s[i + 1]) ? small : large)++;
  }
  std::ostringstream os;
  os << key << " means";
  for (std::size_t i = 0; i < m.size(); ++i) os << ' ' << fmt("%.4g", m[i]) << "(" << fmt("%.2g", s[i]) << ")";
  detail = os.str();
  return {large == 0 && small <= 1, ""};
}

Outcome toy_trend() {
  const auto& g = toy_grid();
  if (!g.error.empty()) return {false, "aborted cells: " + g.error};
  std::string d;
  const bool a = trend(g, "fisher", d).pass;
  const auto& f = g.mean.at("fisher");
  const auto& acc = g.mean.at("accuracy");
  const bool b = acc.back() - acc.front() >= 0.05;
  const bool c = f.front() < 0.25 * f.back();
  return {a && b && c, std::string("(a) ") + (a ? "ok" : "FAIL") + " " + d + "; (b) " + (b ? "ok" : "FAIL") +
                           " accuracy " + fmt("%.3f", acc.front()) + " -> " + fmt("%.3f", acc.back()) + "; (c) " +
                           (c ? "ok" : "FAIL") + " ratio " + fmt("%.3g", f.front() / f.back())};
}

Outcome kl_trend() {
  const auto& g = toy_grid();
  if (!g.error.empty()) return {false, "aborted cells: " + g.error};
  std::string d;
  const bool ok = trend(g, "kl", d).pass;
  return {ok, d};
}

Outcome annealing() {
  app::Options opt;
  RunConfig cfg = app::load_config(ILLID_CONFIG_DIR "/anneal.json", opt);
  // Same data and initialization as `illid train --config configs/anneal.json`.
  const app::Dataset ds = app::load_dataset(cfg, cfg.train.seed);
  Rng init(derive_seed(cfg.train.seed, 0));
  auto model = make_model(cfg.model, init);
  TrainData data;
  data.train_x = ds.train_x;
  TrainOptions topt;
  topt.eval.n_mc = 128;
  topt.eval.iw_samples = 5;
  const auto res = train(*model, data, cfg.train, topt);
  if (!res.anneal) return {false, "no anneal state"};
  const auto& ev = res.anneal->events();
  double L = res.anneal->initial_L();
  bool exact = true;
  for (const auto& e : ev) {
    exact = exact && e.old_L == L && e.new_L == std::max(cfg.train.anneal->min_L, 0.85 * L) && e.new_L <= e.old_L;
    L = e.new_L;
  }
  const auto& f1 = model->decoder().first();
  Rng rng(91);
  const std::size_t l = f1.dim();
  const Tensor a = uniform(1000, l, -5, 5, rng), b = uniform(1000, l, -5, 5, rng);
  std::vector<std::pair<std::vector<double>, std::vector<double>>> pairs;
  for (std::size_t i = 0; i < 1000; ++i) pairs.emplace_back(row(a, i), row(b, i));
  const double emp = empirical_inverse_lipschitz(f1, pairs);
  const bool ok = !ev.empty() && exact && L == f1.strong_convexity() && emp >= L - 1e-9;
  return {ok, std::to_string(ev.size()) + " decays 5 -> " + fmt("%.4g", L) + (exact ? ", each x0.85" : ", NOT x0.85") +
                  "; post-run emp_L " + fmt("%.4g", emp)};
}

Outcome gradients() {
  std::size_t cases = 0;
  std::string first;
  const auto note = [&](const std::string& e, const std::string& what) {
    ++cases;
    if (!e.empty() && first.empty()) first = what + ": " + e;
  };
  for (const auto& c : testing::ad_composites())
    for (std::uint64_t s = 0; s < 100; ++s) note(testing::check_composite(c, s), std::string(c.name));
  for (std::uint64_t s = 0; s < 100; ++s) note(testing::check_icnn_parameter_gradients(s), "icnn");
  for (std::uint64_t s = 0; s < 100; ++s) {
    Rng init(s);
    IlLidVaeModel vae(testing::gradient_config(ModelConfig::Kind::vae, 2, 3), init);
    note(testing::check_elbo_gradients(vae, s), "elbo vae seed " + std::to_string(s));
    IlLidMVaeModel mix(testing::gradient_config(ModelConfig::Kind::mixture, 2, 2, 2), init);
    note(testing::check_elbo_gradients(mix, s), "elbo mixture seed " + std::to_string(s));
  }
  return {first.empty(), std::to_string(cases) + " cases at rtol 1e-4" + (first.empty() ? "" : "; first failure " + first)};
}

}  // namespace

int main(int argc, char** argv) {
  int only = 0;
  g_work = fs::temp_directory_path() / "illid_acceptance";
  for (int i = 1; i + 1 < argc; i += 2) {
    const std::string a = argv[i];
    if (a == "--only") only = std::atoi(argv[i + 1]);
    else if (a == "--work") g_work = argv[i + 1];
    else {
      std::cerr << "usage: illid_acceptance [--only N] [--work DIR]\n";
      return 2;
    }
  }
  fs::remove_all(g_work);
  fs::create_directories(g_work);

  const std::vector<Criterion> criteria{
      {1, "inverse-Lipschitz guarantee", 10, inverse_lipschitz},
      {2, "Jacobian eigenvalue bound", 30, hessian_bound},
      {3, "score identity on the linear-Gaussian fixture", 1, lemma1},
      {4, "Fisher bound on random and linear decoders", 120, theorem1},
      {5, "two-stage Fisher bound", 60, theorem3},
      {6, "KL bound under Gaussian smoothing", 1, prop1},
      {7, "toy experiment Fisher and accuracy trend", 1200, toy_trend},
      {8, "toy experiment KL trend", 1200, kl_trend},
      {9, "annealing trajectory", 600, annealing},
      {10, "gradient suite", 60, gradients},
  };

  int failures = 0;
  for (const auto& c : criteria) {
    if (only != 0 && c.id != only) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool in_time = secs <= c.limit_seconds;
    const bool pass = o.pass && in_time;
    failures += !pass;
    std::cout << "criterion " << c.id << ": " << (pass ? "PASS" : "FAIL") << " " << c.title << ": " << o.detail
              << " [" << fmt("%.1f", secs) << " s" << (in_time ? "" : ", over the " + fmt("%g", c.limit_seconds) + " s limit")
              << "]" << std::endl;
  }
  return failures == 0 ? 0 : 1;
}
