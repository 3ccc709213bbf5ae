#include "app.hpp"

#include <nlohmann/json.hpp>

#include <atomic>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <mutex>
#include <numeric>
#include <ostream>
#include <sstream>
#include <streambuf>
#include <thread>

#include "illid/data.hpp"
#include "illid/error.hpp"
#include "illid/models.hpp"
#include "illid/train.hpp"
#include "illid/verifier.hpp"

#ifndef ILLID_GIT_DESCRIBE
#define ILLID_GIT_DESCRIBE "unknown"
#endif

namespace illid::app {

namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

// Duplicates everything written to it into two streams.
class TeeBuf : public std::streambuf {
 public:
  TeeBuf(std::streambuf* a, std::streambuf* b) : a_(a), b_(b) {}

 protected:
  int overflow(int c) override {
    if (c == traits_type::eof()) return traits_type::not_eof(c);
    const bool ok = a_->sputc(static_cast<char>(c)) != traits_type::eof() &&
                    b_->sputc(static_cast<char>(c)) != traits_type::eof();
    return ok ? c : traits_type::eof();
  }
  int sync() override { return (a_->pubsync() == 0 && b_->pubsync() == 0) ? 0 : -1; }

 private:
  std::streambuf *a_, *b_;
};

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("", "cannot read config file '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write '" + path.string() + "'");
  return os;
}

std::string fmt_g(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

std::string run_id_for(const RunConfig& cfg) {
  return std::string(to_string(cfg.model.kind)) + "-seed" + std::to_string(cfg.train.seed);
}

// First n_eval_points held-out rows, matching what train() scores.
std::pair<Tensor, std::vector<std::size_t>> eval_subset(const Dataset& ds, const EvalConfig& ec) {
  if (ds.test_x.rows() <= ec.n_eval_points) return {ds.test_x, ds.test_labels};
  std::vector<std::size_t> idx(ec.n_eval_points);
  std::iota(idx.begin(), idx.end(), 0);
  return {gather_rows(ds.test_x, idx), ds.labelled ? gather(ds.test_labels, idx) : std::vector<std::size_t>{}};
}

void write_meta(const fs::path& dir, std::uint64_t seed, double seconds, const std::string& split,
                const nlohmann::json& extra = nlohmann::json::object()) {
  nlohmann::json meta = extra;
  meta["seed"] = seed;
  meta["git_describe"] = git_describe();
  meta["wall_clock_seconds"] = seconds;
  meta["eval_split"] = split;
  open_out(dir / "meta.json") << meta.dump(2) << '\n';
}

void write_metrics(const fs::path& path, const std::vector<MetricsRecord>& rows) {
  auto os = open_out(path);
  write_metrics_header(os);
  for (const auto& r : rows) write_metrics_row(os, r);
}

void write_anneal_log(const fs::path& path, const AnnealState& s) {
  auto os = open_out(path);
  os << "epoch,old_L,new_L,emp_L\n";
  char buf[128];
  for (const auto& e : s.events()) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g\n", e.epoch, e.old_L, e.new_L, e.emp_L);
    os << buf;
  }
}

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

}  // namespace

std::string git_describe() { return ILLID_GIT_DESCRIBE; }

RunConfig load_config(const std::string& path, const Options& opt) {
  RunConfig cfg = path.empty() ? parse_run_config("{}") : parse_run_config(read_file(path));
  if (!opt.out.empty()) cfg.out_dir = opt.out;
  if (opt.seed) cfg.train.seed = *opt.seed;
  return cfg;
}

Dataset load_dataset(const RunConfig& cfg, std::uint64_t data_seed) {
  Dataset ds;
  if (cfg.data.idx) {
    const IdxImages images = load_idx_images(cfg.data.idx->images);
    if (images.rows * images.cols != cfg.model.data_dim)
      throw ConfigError("/model/data_dim", "does not match IDX image size " + std::to_string(images.rows * images.cols));
    std::vector<std::uint8_t> labels;
    if (!cfg.data.idx->labels.empty()) {
      labels = load_idx_labels(cfg.data.idx->labels);
      if (labels.size() != images.count) throw ConfigError("/data/idx/labels", "label count differs from image count");
    }
    const std::size_t n_train = images.count - images.count / 10;
    std::vector<std::size_t> train(n_train), test(images.count - n_train);
    std::iota(train.begin(), train.end(), 0);
    std::iota(test.begin(), test.end(), n_train);
    ds.train_x = gather_rows(images.pixels, train);
    ds.test_x = gather_rows(images.pixels, test);
    if (!labels.empty()) {
      ds.labelled = true;
      for (auto i : test) ds.test_labels.push_back(labels[i]);
    }
    return ds;
  }
  const ToyDataConfig toy = cfg.data.toy.value_or(ToyDataConfig{});
  const ToyDataset t = generate_toy(toy.sigma, toy.n_per_class, data_seed);
  ds.train_x = gather_rows(t.x, t.train);
  ds.test_x = gather_rows(t.x, t.test);
  ds.test_labels = gather(t.labels, t.test);
  ds.labelled = true;
  return ds;
}

int cmd_train(const Options& opt, std::ostream& out, std::ostream& err) {
  const auto t0 = Clock::now();
  const RunConfig cfg = load_config(opt.config, opt);
  const fs::path dir = cfg.out_dir;
  fs::create_directories(dir);
  open_out(dir / "config.json") << to_json(cfg) << '\n';

  const Dataset ds = load_dataset(cfg, cfg.train.seed);
  if (!cfg.data.idx) {
    const ToyDataConfig toy = cfg.data.toy.value_or(ToyDataConfig{});
    auto os = open_out(dir / "data.csv");
    write_toy_csv(os, generate_toy(toy.sigma, toy.n_per_class, cfg.train.seed));
  }
  Rng init(derive_seed(cfg.train.seed, 0));
  auto model = make_model(cfg.model, init);

  std::ofstream log_file = open_out(dir / "train.log");
  TeeBuf tee(log_file.rdbuf(), out.rdbuf());
  std::ostream log(&tee);
  TrainData data{ds.train_x, ds.test_x, ds.labelled ? &ds.test_labels : nullptr};
  TrainOptions topt{cfg.eval, run_id_for(cfg), &log, dir};
  try {
    const TrainResult res = train(*model, data, cfg.train, topt);
    save_checkpoint(*model, dir / "model.ilvae");
    write_metrics(dir / "metrics.csv", res.history);
    if (res.anneal) write_anneal_log(dir / "anneal.csv", *res.anneal);
  } catch (const TrainingError& e) {
    log.flush();
    err << "training aborted (" << e.term() << "): " << e.what() << "\n  last good checkpoint: "
        << e.last_good_checkpoint() << '\n';
    write_meta(dir, cfg.train.seed, seconds_since(t0), ds.split, {{"aborted", e.what()}});
    return failure;
  }
  log.flush();
  write_meta(dir, cfg.train.seed, seconds_since(t0), ds.split);
  return ok;
}

int cmd_eval(const Options& opt, std::ostream& out, std::ostream&) {
  const auto t0 = Clock::now();
  const RunConfig cfg = load_config(opt.config, opt);
  const fs::path dir = cfg.out_dir;
  const fs::path ckpt = opt.checkpoint.empty() ? dir / "model.ilvae" : fs::path(opt.checkpoint);
  const auto model = load_checkpoint(ckpt);
  const Dataset ds = load_dataset(cfg, cfg.train.seed);
  const auto [xs, labels] = eval_subset(ds, cfg.eval);
  MetricsRecord rec = evaluate(*model, xs, ds.labelled ? &labels : nullptr, cfg.eval, evaluation_seed(cfg.train.seed));
  rec.run_id = run_id_for(cfg);
  rec.step = cfg.train.epochs;
  rec.seed = cfg.train.seed;
  fs::create_directories(dir);
  write_metrics(dir / "eval_metrics.csv", {rec});
  write_meta(dir, cfg.train.seed, seconds_since(t0), ds.split, {{"checkpoint", ckpt.string()}});
  write_metrics_header(out);
  write_metrics_row(out, rec);
  return ok;
}

int cmd_verify(const Options& opt, std::ostream& out, std::ostream&) {
  const auto t0 = Clock::now();
  const RunConfig cfg = load_config(opt.config, opt);
  const auto reports = run_all(cfg.train.seed, opt.jobs);
  const fs::path dir = cfg.out_dir;
  fs::create_directories(dir);
  {
    auto os = open_out(dir / "verify.csv");
    write_report_csv(os, reports);
  }
  auto table = open_out(dir / "verify.txt");
  write_report_table(table, reports);
  write_report_table(out, reports);
  std::size_t fails = 0, inconclusive = 0;
  for (const auto& r : reports) {
    fails += r.verdict == Verdict::fail;
    inconclusive += r.verdict == Verdict::inconclusive;
  }
  out << reports.size() << " checks, " << fails << " failed, " << inconclusive << " inconclusive\n";
  write_meta(dir, cfg.train.seed, seconds_since(t0), "none");
  return fails == 0 ? ok : failure;
}

CellResult run_toy_cell(const RunConfig& base, const ToyCell& cell, const fs::path& root, std::uint64_t base_seed) {
  const auto t0 = Clock::now();
  CellResult res;
  res.cell = cell;
  res.run_id = "sigma" + fmt_g(cell.sigma) + "_L" + fmt_g(cell.L) + "_seed" + std::to_string(cell.seed);
  res.dir = root / "cells" / res.run_id;
  fs::create_directories(res.dir);

  RunConfig cfg = base;
  cfg.model.kind = ModelConfig::Kind::mixture;
  cfg.model.L1 = cfg.model.L2 = cell.L;
  cfg.data.idx.reset();
  cfg.data.toy = cfg.data.toy.value_or(ToyDataConfig{});
  cfg.data.toy->sigma = cell.sigma;
  cfg.train.seed = derive_seed(base_seed, cell.seed);
  cfg.out_dir = res.dir.string();
  open_out(res.dir / "config.json") << to_json(cfg) << '\n';

  const Dataset ds = load_dataset(cfg, cfg.train.seed);
  Rng init(derive_seed(cfg.train.seed, 0));
  auto model = make_model(cfg.model, init);
  auto log = open_out(res.dir / "train.log");
  TrainData data{ds.train_x, ds.test_x, &ds.test_labels};
  TrainOptions topt{cfg.eval, res.run_id, &log, res.dir};
  try {
    const TrainResult tr = train(*model, data, cfg.train, topt);
    save_checkpoint(*model, res.dir / "model.ilvae");
    write_metrics(res.dir / "metrics.csv", tr.history);
    if (tr.anneal) write_anneal_log(res.dir / "anneal.csv", *tr.anneal);
    if (!tr.history.empty()) res.final = tr.history.back();

    const auto& mix = dynamic_cast<const IlLidMVaeModel&>(*model);
    const Tensor q = posterior_responsibilities(mix, ds.test_x);
    std::vector<std::size_t> assign(q.rows());
    for (std::size_t i = 0; i < q.rows(); ++i) {
      std::size_t best = 0;
      for (std::size_t k = 1; k < q.cols(); ++k)
        if (q(i, k) > q(i, best)) best = k;
      assign[i] = best;
    }
    auto svg = open_out(res.dir / "scatter.svg");
    write_toy_svg(svg, ds.test_x, assign, {{0.0, 0.0}, {10.0, 10.0}}, cell.sigma,
                  "sigma=" + fmt_g(cell.sigma) + " L=" + fmt_g(cell.L) + " seed=" + std::to_string(cell.seed));
  } catch (const TrainingError& e) {
    res.error = std::string(e.what()) + "; last good checkpoint: " + e.last_good_checkpoint();
  }
  res.seconds = seconds_since(t0);
  write_meta(res.dir, cfg.train.seed, res.seconds, ds.split);
  return res;
}

std::vector<CellResult> run_toy_grid(const RunConfig& cfg, const fs::path& root, std::uint64_t base_seed,
                                     std::size_t jobs) {
  const auto& ex = cfg.experiment;
  if (ex.sigma_grid.empty() || ex.L_grid.empty() || ex.seeds.empty())
    throw ConfigError("/experiment", "grids must be non-empty");
  std::vector<ToyCell> cells;
  for (double s : ex.sigma_grid)
    for (double L : ex.L_grid)
      for (auto seed : ex.seeds) cells.push_back({s, L, seed});

  std::vector<CellResult> results(cells.size());
  std::atomic<std::size_t> cursor{0};
  const auto worker = [&] {
    for (std::size_t i; (i = cursor.fetch_add(1)) < cells.size();) {
      try {
        results[i] = run_toy_cell(cfg, cells[i], root, base_seed);
      } catch (const std::exception& e) {
        results[i].cell = cells[i];
        results[i].error = e.what();
      }
    }
  };
  std::vector<std::jthread> threads;
  for (std::size_t i = 1; i < std::min(std::max<std::size_t>(jobs, 1), cells.size()); ++i) threads.emplace_back(worker);
  worker();
  threads.clear();
  return results;
}

int cmd_toy_experiment(const Options& opt, std::ostream& out, std::ostream& err) {
  const auto t0 = Clock::now();
  const RunConfig cfg = load_config(opt.config, opt);
  const fs::path root = cfg.out_dir;
  fs::create_directories(root);
  open_out(root / "config.json") << to_json(cfg) << '\n';

  const auto results = run_toy_grid(cfg, root, cfg.train.seed, opt.jobs);
  std::vector<MetricsRecord> rows;
  std::size_t failed = 0;
  for (const auto& r : results) {
    if (r.final) {
      rows.push_back(*r.final);
      out << r.run_id << " fisher=" << r.final->fisher << " kl=" << r.final->kl
          << " accuracy=" << r.final->accuracy.value_or(0.0) << " (" << r.seconds << " s)\n";
    } else {
      ++failed;
      err << "cell " << r.run_id << " failed: " << r.error << '\n';
    }
  }
  write_metrics(root / "toy_experiment.csv", rows);
  write_meta(root, cfg.train.seed, seconds_since(t0), "test", {{"cells", results.size()}, {"failed_cells", failed}});
  return failed == 0 ? ok : failure;
}

}  // namespace illid::app
