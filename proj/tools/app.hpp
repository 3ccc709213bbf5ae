#pragma once

// Commands behind the illid executable. Kept in a library so the acceptance
// binary can drive the same toy-experiment pipeline.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "illid/config.hpp"
#include "illid/diagnostics.hpp"
#include "illid/tensor.hpp"

namespace illid::app {

enum ExitCode : int { ok = 0, failure = 1, config_error = 2 };

struct Options {
  std::string config;      ///< path to a RunConfig JSON file; empty uses defaults
  std::string out;         ///< overrides out_dir
  std::optional<std::uint64_t> seed;
  std::size_t jobs = 1;
  std::string checkpoint;  ///< eval only; defaults to <out>/model.ilvae
};

int cmd_train(const Options& opt, std::ostream& out, std::ostream& err);
int cmd_eval(const Options& opt, std::ostream& out, std::ostream& err);
int cmd_verify(const Options& opt, std::ostream& out, std::ostream& err);
int cmd_toy_experiment(const Options& opt, std::ostream& out, std::ostream& err);

/// Reads and parses the config file (defaults when `path` is empty), then
/// applies the --out and --seed overrides. Throws ConfigError.
RunConfig load_config(const std::string& path, const Options& opt);

struct Dataset {
  ad::Tensor train_x, test_x;
  std::vector<std::size_t> test_labels;
  bool labelled = false;
  std::string split = "test";
};
/// Toy data from (sigma, n, seed) or IDX files split 90/10 in file order.
Dataset load_dataset(const RunConfig& cfg, std::uint64_t data_seed);

struct ToyCell {
  double sigma = 7.5;
  double L = 0.0;
  std::uint64_t seed = 0;
};

struct CellResult {
  ToyCell cell;
  std::string run_id;
  std::filesystem::path dir;
  std::optional<MetricsRecord> final;  ///< empty when training aborted
  std::string error;
  double seconds = 0.0;
};

/// Trains IL-LIDMVAE with L1 = L2 = cell.L on toy data for one grid cell and
/// fills a run directory under `root`. Training and data seeds are derived
/// from (base_seed, cell.seed) only, so cells differing in L share both.
CellResult run_toy_cell(const RunConfig& base, const ToyCell& cell, const std::filesystem::path& root,
                        std::uint64_t base_seed);
/// All cells of cfg.experiment, up to `jobs` at a time; results in grid order
/// (sigma, then L, then seed).
std::vector<CellResult> run_toy_grid(const RunConfig& cfg, const std::filesystem::path& root, std::uint64_t base_seed,
                                     std::size_t jobs);

/// Scatter of `xs` ([n x 2]) coloured by `assignment`, with dashed circles of
/// radius 2 sigma around each class mean.
void write_toy_svg(std::ostream& os, const ad::Tensor& xs, const std::vector<std::size_t>& assignment,
                   const std::vector<std::pair<double, double>>& class_means, double sigma, const std::string& title);

std::string git_describe();

}  // namespace illid::app
