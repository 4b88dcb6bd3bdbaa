#ifndef STABLEREC_CELLS_HPP
#define STABLEREC_CELLS_HPP

#include "stablerec/types.hpp"

#include <cstddef>
#include <string>
#include <variant>
#include <vector>

namespace stablerec {

enum class Family { lds, rnn, lstm };

std::string family_name(Family f);
Family family_from_name(const std::string& name);

// h_t = W h_{t-1} + U x_t
struct LdsParams {
  Matrix W;  // n x n
  Matrix U;  // n x d
};

// h_t = tanh(W h_{t-1} + U x_t)
struct RnnParams {
  Matrix W;
  Matrix U;
};

// Standard LSTM with gate biases; state is (c, h).
struct LstmParams {
  Matrix Wf, Wi, Wo, Wz;  // d_h x d_h
  Matrix Uf, Ui, Uo, Uz;  // d_h x d_in
  Vector bf, bi, bo, bz;  // d_h
};

using CellParams = std::variant<LdsParams, RnnParams, LstmParams>;

Family family_of(const CellParams& p);
Index state_dim(const CellParams& p);
Index input_dim(const CellParams& p);

// Total number of scalar parameters.
Index param_count(const CellParams& p);
Vector flatten(const CellParams& p);
CellParams unflatten_like(const CellParams& shape, const Vector& flat);

// p += a * g, shapes must match
void axpy(double a, const CellParams& g, CellParams& p);

// Frobenius distance over all stacked parameters.
double param_distance(const CellParams& a, const CellParams& b);
// Distance over the hidden-to-hidden matrices only (W, or the four W_* for
// an LSTM).
double recurrent_distance(const CellParams& a, const CellParams& b);

// Hidden state. c is used by the LSTM only and stays empty otherwise.
struct State {
  Vector h;
  Vector c;
};

State zero_state(const CellParams& p);
double state_distance(const State& a, const State& b);       // l2, concatenated
double state_distance_inf(const State& a, const State& b);   // l_inf, concatenated

// Per-step values cached on the forward pass; enough for an exact backward
// pass without re-evaluating any nonlinearity.
struct StepCache {
  Vector pre;                 // LDS/RNN pre-activation
  Vector act;                 // RNN tanh(pre)
  Vector f, i, o, z;          // LSTM gate activations
  Vector c_prev, c, tanh_c;   // LSTM cell values
};

struct Trajectory {
  std::vector<State> states;      // size T + 1, states[0] = initial state
  std::vector<StepCache> caches;  // size T
  std::vector<Vector> inputs;     // size T
};

State step(const CellParams& p, const State& s, const Vector& x,
           StepCache* cache = nullptr);

Trajectory rollout(const CellParams& p, const std::vector<Vector>& inputs,
                   const State& init);
Trajectory rollout(const CellParams& p, const std::vector<Vector>& inputs);

// State h^k_t of the k-truncated model: zero state at step t-k (clipped at
// the sequence start), rolled forward over the last k inputs.
State rollout_truncated(const CellParams& p, const std::vector<Vector>& inputs,
                        std::size_t t, std::size_t k);

// y = C h + D x; D may be empty (size 0) for the pure-state readout.
struct ReadoutParams {
  Matrix C;  // d_out x n
  Matrix D;  // d_out x d_in, optional
  bool has_input_term() const { return D.size() > 0; }
};

Vector predict(const ReadoutParams& r, const State& s, const Vector& x);

}  // namespace stablerec

#endif
