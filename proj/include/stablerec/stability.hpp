#ifndef STABLEREC_STABILITY_HPP
#define STABLEREC_STABILITY_HPP

#include "stablerec/cells.hpp"

#include <map>
#include <string>

namespace stablerec {

struct StabilityCertificate {
  Family family = Family::lds;
  bool certified = false;
  double lambda = 0.0;   // certified contraction constant
  double margin = 0.0;   // slack in the binding inequality
  std::size_t iterations = 1;  // r for which phi^r is l2-contractive
  std::map<std::string, double> detail;

  std::string to_text() const;
};

// Row-l1 caps and bias clamp reproducing the published projection recipe.
struct LstmStabilityConfig {
  double cap_Wf = 0.128;
  double cap_Uf = 0.25;
  double cap_bf = 0.25;
  double B_x = 0.75;
  double cap_Wi_Wo = 0.36;
  double cap_Wz = 0.091;
};

struct AscentConfig {
  std::size_t restarts = 20;
  std::size_t steps = 1000;
  double learning_rate = 0.9;
  double init_scale = 0.1;
  std::size_t iterate_exponent = 1;  // evaluate S on phi^r
  std::uint64_t seed = 0;
};

// SVD of W with singular values thresholded at cap.
Matrix project_spectral(const Matrix& W, double cap = 0.999);

// Rows with l1 norm above the cap are rescaled onto it.
Matrix project_rows_l1(const Matrix& W, double cap);

// Applies the row-l1 caps and forget-bias clamp; input clipping to
// [-B_x, B_x] is a data-boundary concern, see clip_inputs.
LstmParams project_lstm_stable(const LstmParams& p,
                               const LstmStabilityConfig& cfg = {});

std::vector<Vector> clip_inputs(const std::vector<Vector>& xs, double B_x);

StabilityCertificate check_rnn_certificate(const CellParams& p,
                                           double L_rho = 1.0);

StabilityCertificate check_lstm_certificate(const LstmParams& p, double B_x);

StabilityCertificate check_certificate(const CellParams& p,
                                       double B_x = 0.75);

// Smallest r with lambda_inf^r * sqrt(d) <= 1.
std::size_t iterated_contraction_exponent(double lambda_inf, std::size_t dim);

// Gradient-ascent estimate of sup S(h, h', x) over the supplied inputs,
// S = ||phi(h,x) - phi(h',x)|| / ||h - h'||, maximum over restarts.
double estimate_stability(const CellParams& params,
                          const std::vector<Vector>& sample_inputs,
                          const AscentConfig& cfg = {});

}  // namespace stablerec

#endif
