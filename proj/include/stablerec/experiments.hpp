#ifndef STABLEREC_EXPERIMENTS_HPP
#define STABLEREC_EXPERIMENTS_HPP

#include "stablerec/training.hpp"

#include <filesystem>
#include <map>
#include <string>

namespace stablerec {

// Flat key=value config text, one pair per line, '#' comments.
using KeyValues = std::map<std::string, std::string>;
KeyValues read_config_text(const std::string& text);
KeyValues read_config_file(const std::filesystem::path& path);
void write_config_file(const std::filesystem::path& path, const KeyValues& kv);

struct SyntheticInstance {
  std::vector<Vector> inputs;  // T vectors, entries ~ N(0, 4)
  Vector target;               // final-step target ~ Unif[-2, 2]
  std::uint64_t seed = 0;
  double lambda = 0.75;
  Index d_in = 32;
  Index d_h = 32;
  Index d_out = 1;
};

struct GeneratedModel {
  SyntheticInstance instance;
  CellParams params;      // W spectrally thresholded to lambda
  ReadoutParams readout;  // C, D ~ N(0, 1)
};

// Fixed draw order (W, U, C, D, inputs, target) so a seed pins everything.
GeneratedModel gen_instance(std::uint64_t seed, Family family = Family::lds,
                            std::size_t T = 200, Index d_in = 32,
                            Index d_h = 32, double lambda = 0.75);

// Unconstrained Gaussian parameters (no stability projection); used by the
// gradient-check harness, which must cover unstable weights too.
CellParams random_cell(Family family, Index d_h, Index d_in, Rng& rng,
                       double scale = 0.5);

struct ExperimentReport {
  std::string name;
  std::filesystem::path dir;
  KeyValues config;  // resolved config echo, reproduces the run verbatim
  std::vector<std::uint64_t> seeds;
  std::map<std::string, double> summary;
  std::vector<std::filesystem::path> files;
  std::vector<std::string> warnings;  // aborted runs, excluded from aggregates
};

// --- weight-divergence figure: full vs truncated training in lockstep ---

struct DivergenceConfig {
  std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
  std::vector<Schedule> schedules = {Schedule::inverse_t,
                                     Schedule::inverse_sqrt_t,
                                     Schedule::constant};
  std::vector<Family> families = {Family::lds, Family::rnn};
  std::size_t T = 200;
  Index d_in = 32;
  Index d_h = 32;
  double lambda = 0.75;
  std::size_t k = 35;
  double alpha = 0.01;
  std::size_t steps = 200;
  std::size_t jobs = 1;
  // "operator": spectral norm on the hidden-to-hidden matrices (the metric of
  // the 2*lambda triangle-inequality ceiling); "frobenius": all parameters.
  std::string metric = "operator";

  KeyValues to_kv() const;
  static DivergenceConfig from_kv(const KeyValues& kv);
};

ExperimentReport run_divergence_figure(const DivergenceConfig& cfg,
                                       const std::filesystem::path& out_root);

// --- scalar counterexample: gradient descent on h_t = a h_{t-1} + x_t ---

// closed-form gradient of the final-step squared loss (b = 1, x = y = 1)
double scalar_lds_gradient(double a, std::size_t T);
// the same loss by explicit unrolling, used as the finite-difference target
double scalar_lds_loss(double a, std::size_t T);

struct CounterexampleTrace {
  double a0 = 0.0;
  std::vector<double> a;     // iterates, a[0] = a0
  std::vector<double> grad;  // gradient at each visited point
  bool diverged = false;     // |a| exceeded the divergence threshold
};

CounterexampleTrace scalar_descent(double a0, std::size_t T, std::size_t steps,
                                   Schedule schedule = Schedule::inverse_t,
                                   double alpha = 1.0);

struct CounterexampleConfig {
  std::vector<double> a0 = {1.5, 0.5, 0.0};
  std::size_t T = 50;
  std::size_t steps = 500;
  Schedule schedule = Schedule::inverse_t;
  double alpha = 1.0;

  KeyValues to_kv() const;
  static CounterexampleConfig from_kv(const KeyValues& kv);
};

ExperimentReport run_counterexample(const CounterexampleConfig& cfg,
                                    const std::filesystem::path& out_root);

// --- truncation sweep: train one model per context length k ---

struct TruncSweepConfig {
  std::vector<std::size_t> ks = {1, 2, 4, 8, 16, 32, 64};
  std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
  Family family = Family::rnn;
  std::size_t T = 64;
  Index d_in = 8;
  Index d_h = 8;
  double lambda = 0.75;
  Schedule schedule = Schedule::constant;
  double alpha = 0.001;
  std::size_t steps = 200;
  std::size_t jobs = 1;

  KeyValues to_kv() const;
  static TruncSweepConfig from_kv(const KeyValues& kv);
};

ExperimentReport run_truncation_sweep(const TruncSweepConfig& cfg,
                                      const std::filesystem::path& out_root);

// --- vanishing-gradient profile over input-to-loss gaps ---

struct VanishProfileConfig {
  Family family = Family::rnn;
  bool stable = true;      // false lifts the spectral threshold above 1
  double lambda = 0.75;    // threshold when stable
  double lambda_unstable = 1.2;
  std::vector<std::size_t> gaps = {};  // empty = 0..30
  std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
  std::size_t T = 64;
  Index d_in = 8;
  Index d_h = 8;

  KeyValues to_kv() const;
  static VanishProfileConfig from_kv(const KeyValues& kv);
};

ExperimentReport run_vanishing_profile(const VanishProfileConfig& cfg,
                                       const std::filesystem::path& out_root);

// --- data-dependent stability report ---

struct StabilityReportConfig {
  AscentConfig ascent;
  double B_x = 0.75;               // certificate input bound (LSTM)
  std::vector<std::size_t> r_grid; // LSTM iterate exponents; empty = auto
  KeyValues extra;  // caller-side provenance (weight source, input source)
};

ExperimentReport run_stability_report(const CellParams& params,
                                      const std::vector<Vector>& inputs,
                                      const StabilityReportConfig& cfg,
                                      const std::filesystem::path& out_root);

// --- shared report plumbing ---

std::filesystem::path make_run_dir(const std::filesystem::path& root,
                                   const std::string& name,
                                   std::uint64_t master_seed);

double mean_of(const std::vector<double>& v);
double stddev_of(const std::vector<double>& v);  // sample standard deviation

// least-squares slope of log(y) against x, skipping non-positive y
double log_slope(const std::vector<double>& x, const std::vector<double>& y);

}  // namespace stablerec

#endif
