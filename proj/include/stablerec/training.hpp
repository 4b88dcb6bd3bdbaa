#ifndef STABLEREC_TRAINING_HPP
#define STABLEREC_TRAINING_HPP

#include "stablerec/autograd.hpp"
#include "stablerec/stability.hpp"

#include <optional>
#include <variant>

namespace stablerec {

enum class Schedule { inverse_t, inverse_sqrt_t, constant };

std::string schedule_name(Schedule s);
Schedule schedule_from_name(const std::string& name);

// step size at step t >= 1
double lr(Schedule schedule, double alpha, std::size_t t);

struct SpectralProjector {
  double cap = 0.999;
};
struct LstmProjector {
  LstmStabilityConfig cfg;
};
using Projector = std::variant<std::monostate, SpectralProjector, LstmProjector>;

void apply_projector(const Projector& proj, CellParams& p);

// Which parameters the optimizer touches.
enum class TrainSet { recurrent_only, cell, cell_and_readout };

struct TrainConfig {
  Schedule schedule = Schedule::inverse_t;
  double alpha = 0.01;
  std::size_t steps = 200;
  std::optional<std::size_t> truncation;
  Projector projector;
  TrainSet trainable = TrainSet::cell;
  std::size_t snapshot_stride = 0;  // 0 = auto (1 for N <= 500, else N/500)
};

struct TrainData {
  std::vector<Vector> inputs;
  LossSpec loss;
};

struct TrainResult {
  CellParams params;
  ReadoutParams readout;
  std::vector<double> losses;            // loss before each step, size N
  std::vector<CellParams> snapshots;     // strided parameter history
  std::vector<std::size_t> snapshot_steps;
};

TrainResult sgd_run(const TrainConfig& cfg, const CellParams& init,
                    const ReadoutParams& readout, const TrainData& data);

// Lipschitz/smoothness constants for the bound calculators; the absolute
// values are user-supplied or fitted, defaults are 1.
struct BoundConstants {
  double gamma = 1.0;
  double beta = 1.0;
  double L_x = 1.0;
  double B_x = 1.0;
  double L_w = 1.0;
  double L_f = 1.0;
  double L_p = 1.0;
};

// alpha * gamma * k * lambda^k * N^(alpha*beta + 1)
double prop4_bound(const BoundConstants& c, double alpha, std::size_t k,
                   double lambda, std::size_t N);

// ceil(log_{1/lambda}(L_f L_x B_x / ((1 - lambda) eps))), clamped at 0
std::size_t context_length(double lambda, double L_x, double B_x, double eps,
                           double L_f = 1.0);

// Smallest k with both final-output error terms below eps/2, by integer search.
std::size_t thm1_context(const BoundConstants& c, double lambda, std::size_t N,
                         double eps, double alpha = 1.0);

// Operator-norm distance between hidden-to-hidden matrices: spectral norm of
// the W difference (max over the four W blocks for an LSTM).
double recurrent_operator_distance(const CellParams& a, const CellParams& b);

// gamma estimate: gradient gap divided by k*lambda^k at the given point
double fit_gamma(const CellParams& params, const ReadoutParams& readout,
                 const TrainData& data, std::size_t k, double lambda);

// beta estimate: gradient Lipschitz ratio over random parameter perturbations
double fit_beta(const CellParams& params, const ReadoutParams& readout,
                const TrainData& data, std::size_t samples, Rng& rng);

struct DivergenceRecord {
  std::vector<double> distance;       // operator norm on W, size N+1, [0] = 0
  std::vector<double> distance_frob;  // Frobenius over all parameters
  std::vector<double> bound;          // Prop-4 curve at each step
  std::vector<double> loss_full;   // size N
  std::vector<double> loss_trunc;
  std::vector<double> lr_series;
  Schedule schedule = Schedule::inverse_t;
  double alpha = 0.0;
  std::size_t k = 0;
  double lambda = 0.0;
  double final_loss_full = 0.0;
  double final_loss_trunc = 0.0;
  CellParams final_full;
  CellParams final_trunc;
};

// Trains the full and k-truncated models in lockstep from a shared
// initialization and records the per-step parameter distance next to the
// theoretical bound curve.
DivergenceRecord paired_divergence_run(const TrainConfig& cfg,
                                       const CellParams& init,
                                       const ReadoutParams& readout,
                                       const TrainData& data,
                                       const BoundConstants& consts,
                                       double lambda);

}  // namespace stablerec

#endif
