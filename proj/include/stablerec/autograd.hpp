#ifndef STABLEREC_AUTOGRAD_HPP
#define STABLEREC_AUTOGRAD_HPP

#include "stablerec/cells.hpp"

#include <optional>

namespace stablerec {

// Squared loss applied to the prediction at the final step:
//   p_T = 1/2 * || C h_T (+ D x_T) - target ||^2
struct LossSpec {
  Vector target;
};

struct GradientBundle {
  CellParams cell;            // gradient, mirrors the parameter layout
  Matrix C;                   // readout gradients
  Matrix D;                   // empty when the readout has no input term
  std::vector<Vector> inputs; // per-input gradients, empty unless requested
};

struct BpttOptions {
  std::optional<std::size_t> truncation;  // gradient of p^k_T when set
  bool input_grads = false;
};

double loss_value(const CellParams& params, const ReadoutParams& readout,
                  const std::vector<Vector>& inputs, const LossSpec& loss,
                  std::optional<std::size_t> truncation = std::nullopt);

// Exact reverse-mode gradient of the final-step loss with respect to every
// cell weight, bias, readout entry and (on request) every input vector.
GradientBundle bptt(const CellParams& params, const ReadoutParams& readout,
                    const std::vector<Vector>& inputs, const LossSpec& loss,
                    const BpttOptions& opts = {});

// Central-difference oracle perturbing one scalar parameter at a time.
GradientBundle finite_diff_grad(const CellParams& params,
                                const ReadoutParams& readout,
                                const std::vector<Vector>& inputs,
                                const LossSpec& loss,
                                std::optional<std::size_t> truncation = std::nullopt,
                                double step = 1e-6);

// max over all entries of |a - b| / max(1, |a|)
double max_relative_error(const GradientBundle& a, const GradientBundle& b);

// || grad_{x_t} p_{t+i} ||_2 for each gap i, averaged over the base
// positions t (1-based step indices of x_t).
std::vector<double> input_gradient_profile(const CellParams& params,
                                           const ReadoutParams& readout,
                                           const std::vector<Vector>& inputs,
                                           const LossSpec& loss,
                                           const std::vector<std::size_t>& positions,
                                           const std::vector<std::size_t>& gaps);

// Adjoint of one transition step with respect to the incoming state:
// maps the gradient at the output state to the gradient at the input state,
// using only values cached on the forward pass.
State state_adjoint_step(const CellParams& params, const StepCache& cache,
                         const State& grad_out);

}  // namespace stablerec

#endif
