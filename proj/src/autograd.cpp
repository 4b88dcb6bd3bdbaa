#include "stablerec/autograd.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace stablerec {

namespace {

CellParams zeros_like(const CellParams& p) {
  CellParams g = p;
  Vector z = Vector::Zero(param_count(p));
  return unflatten_like(g, z);
}

void check_loss(const ReadoutParams& readout, const LossSpec& loss) {
  if (loss.target.size() != readout.C.rows())
    throw std::invalid_argument("loss target dimension mismatch");
}

// forward window for a (possibly truncated) final-step loss
std::size_t window_start(std::size_t T, std::optional<std::size_t> k) {
  if (!k.has_value() || *k >= T) return 0;
  return T - *k;
}

}  // namespace

double loss_value(const CellParams& params, const ReadoutParams& readout,
                  const std::vector<Vector>& inputs, const LossSpec& loss,
                  std::optional<std::size_t> truncation) {
  check_loss(readout, loss);
  if (inputs.empty()) throw std::invalid_argument("loss_value: empty inputs");
  const std::size_t T = inputs.size();
  const State hT = rollout_truncated(params, inputs, T,
                                     truncation.value_or(T));
  const Vector y = predict(readout, hT, inputs.back());
  return 0.5 * (y - loss.target).squaredNorm();
}

State state_adjoint_step(const CellParams& params, const StepCache& cache,
                         const State& grad_out) {
  State g_in;
  if (const auto* lds = std::get_if<LdsParams>(&params)) {
    g_in.h = lds->W.transpose() * grad_out.h;
  } else if (const auto* rnn = std::get_if<RnnParams>(&params)) {
    const Vector dpre = grad_out.h.cwiseProduct(
        Vector::Ones(cache.act.size()) - cache.act.cwiseProduct(cache.act));
    g_in.h = rnn->W.transpose() * dpre;
  } else {
    const auto& q = std::get<LstmParams>(params);
    const Vector ones = Vector::Ones(cache.f.size());
    const Vector g_c_total =
        grad_out.c + grad_out.h.cwiseProduct(cache.o)
                         .cwiseProduct(ones - cache.tanh_c.cwiseProduct(cache.tanh_c));
    const Vector dpre_o = grad_out.h.cwiseProduct(cache.tanh_c)
                              .cwiseProduct(cache.o)
                              .cwiseProduct(ones - cache.o);
    const Vector dpre_f = g_c_total.cwiseProduct(cache.c_prev)
                              .cwiseProduct(cache.f)
                              .cwiseProduct(ones - cache.f);
    const Vector dpre_i = g_c_total.cwiseProduct(cache.z)
                              .cwiseProduct(cache.i)
                              .cwiseProduct(ones - cache.i);
    const Vector dpre_z = g_c_total.cwiseProduct(cache.i)
                              .cwiseProduct(ones - cache.z.cwiseProduct(cache.z));
    g_in.h = q.Wf.transpose() * dpre_f + q.Wi.transpose() * dpre_i +
             q.Wo.transpose() * dpre_o + q.Wz.transpose() * dpre_z;
    g_in.c = g_c_total.cwiseProduct(cache.f);
  }
  return g_in;
}

GradientBundle bptt(const CellParams& params, const ReadoutParams& readout,
                    const std::vector<Vector>& inputs, const LossSpec& loss,
                    const BpttOptions& opts) {
  check_loss(readout, loss);
  if (inputs.empty()) throw std::invalid_argument("bptt: empty inputs");
  const std::size_t T = inputs.size();
  const std::size_t start = window_start(T, opts.truncation);

  const std::vector<Vector> window(inputs.begin() + start, inputs.end());
  const Trajectory traj = rollout(params, window);
  const State& hT = traj.states.back();
  const Vector& xT = inputs.back();
  const Vector delta = predict(readout, hT, xT) - loss.target;

  GradientBundle g;
  g.cell = zeros_like(params);
  g.C = delta * hT.h.transpose();
  g.D = readout.has_input_term() ? Matrix(delta * xT.transpose()) : Matrix();
  if (opts.input_grads)
    g.inputs.assign(T, Vector::Zero(input_dim(params)));

  State adj;
  adj.h = readout.C.transpose() * delta;
  if (family_of(params) == Family::lstm)
    adj.c = Vector::Zero(state_dim(params));
  if (opts.input_grads && readout.has_input_term())
    g.inputs[T - 1] += readout.D.transpose() * delta;

  const std::size_t steps = window.size();
  for (std::size_t t = steps; t-- > 0;) {
    const StepCache& cache = traj.caches[t];
    const State& prev = traj.states[t];
    const Vector& x = window[t];
    const std::size_t global_t = start + t;  // 0-based index of x_{t+1}

    if (auto* glds = std::get_if<LdsParams>(&g.cell)) {
      glds->W += adj.h * prev.h.transpose();
      glds->U += adj.h * x.transpose();
      if (opts.input_grads)
        g.inputs[global_t] += std::get<LdsParams>(params).U.transpose() * adj.h;
      adj = state_adjoint_step(params, cache, adj);
    } else if (auto* grnn = std::get_if<RnnParams>(&g.cell)) {
      const Vector ones = Vector::Ones(cache.act.size());
      const Vector dpre =
          adj.h.cwiseProduct(ones - cache.act.cwiseProduct(cache.act));
      grnn->W += dpre * prev.h.transpose();
      grnn->U += dpre * x.transpose();
      if (opts.input_grads)
        g.inputs[global_t] += std::get<RnnParams>(params).U.transpose() * dpre;
      adj = state_adjoint_step(params, cache, adj);
    } else {
      auto& gl = std::get<LstmParams>(g.cell);
      const auto& q = std::get<LstmParams>(params);
      const Vector ones = Vector::Ones(cache.f.size());
      const Vector g_c_total =
          adj.c + adj.h.cwiseProduct(cache.o).cwiseProduct(
                      ones - cache.tanh_c.cwiseProduct(cache.tanh_c));
      const Vector dpre_o = adj.h.cwiseProduct(cache.tanh_c)
                                .cwiseProduct(cache.o)
                                .cwiseProduct(ones - cache.o);
      const Vector dpre_f = g_c_total.cwiseProduct(cache.c_prev)
                                .cwiseProduct(cache.f)
                                .cwiseProduct(ones - cache.f);
      const Vector dpre_i = g_c_total.cwiseProduct(cache.z)
                                .cwiseProduct(cache.i)
                                .cwiseProduct(ones - cache.i);
      const Vector dpre_z = g_c_total.cwiseProduct(cache.i).cwiseProduct(
          ones - cache.z.cwiseProduct(cache.z));
      gl.Wf += dpre_f * prev.h.transpose();
      gl.Wi += dpre_i * prev.h.transpose();
      gl.Wo += dpre_o * prev.h.transpose();
      gl.Wz += dpre_z * prev.h.transpose();
      gl.Uf += dpre_f * x.transpose();
      gl.Ui += dpre_i * x.transpose();
      gl.Uo += dpre_o * x.transpose();
      gl.Uz += dpre_z * x.transpose();
      gl.bf += dpre_f;
      gl.bi += dpre_i;
      gl.bo += dpre_o;
      gl.bz += dpre_z;
      if (opts.input_grads)
        g.inputs[global_t] += q.Uf.transpose() * dpre_f +
                              q.Ui.transpose() * dpre_i +
                              q.Uo.transpose() * dpre_o +
                              q.Uz.transpose() * dpre_z;
      State next;
      next.h = q.Wf.transpose() * dpre_f + q.Wi.transpose() * dpre_i +
               q.Wo.transpose() * dpre_o + q.Wz.transpose() * dpre_z;
      next.c = g_c_total.cwiseProduct(cache.f);
      adj = std::move(next);
    }

    if (!adj.h.allFinite() || (adj.c.size() > 0 && !adj.c.allFinite()))
      throw std::runtime_error("bptt: non-finite adjoint at step " +
                               std::to_string(global_t + 1));
  }
  return g;
}

GradientBundle finite_diff_grad(const CellParams& params,
                                const ReadoutParams& readout,
                                const std::vector<Vector>& inputs,
                                const LossSpec& loss,
                                std::optional<std::size_t> truncation,
                                double step) {
  if (step < 1e-8 || step > 1e-3)
    throw std::invalid_argument("finite_diff_grad: step outside [1e-8, 1e-3]");
  GradientBundle g;
  const Vector theta = flatten(params);
  Vector gcell(theta.size());
  for (Index j = 0; j < theta.size(); ++j) {
    Vector tp = theta, tm = theta;
    tp[j] += step;
    tm[j] -= step;
    const double lp = loss_value(unflatten_like(params, tp), readout, inputs,
                                 loss, truncation);
    const double lm = loss_value(unflatten_like(params, tm), readout, inputs,
                                 loss, truncation);
    gcell[j] = (lp - lm) / (2.0 * step);
  }
  g.cell = unflatten_like(params, gcell);

  auto fd_matrix = [&](const Matrix& m, auto&& setter) {
    Matrix out = Matrix::Zero(m.rows(), m.cols());
    for (Index r = 0; r < m.rows(); ++r)
      for (Index c = 0; c < m.cols(); ++c) {
        ReadoutParams rp = readout;
        ReadoutParams rm = readout;
        setter(rp, r, c, step);
        setter(rm, r, c, -step);
        out(r, c) = (loss_value(params, rp, inputs, loss, truncation) -
                     loss_value(params, rm, inputs, loss, truncation)) /
                    (2.0 * step);
      }
    return out;
  };
  g.C = fd_matrix(readout.C, [](ReadoutParams& r, Index i, Index j, double d) {
    r.C(i, j) += d;
  });
  if (readout.has_input_term())
    g.D = fd_matrix(readout.D, [](ReadoutParams& r, Index i, Index j, double d) {
      r.D(i, j) += d;
    });
  return g;
}

double max_relative_error(const GradientBundle& a, const GradientBundle& b) {
  auto rel = [](const Vector& u, const Vector& v) {
    double m = 0.0;
    for (Index i = 0; i < u.size(); ++i)
      m = std::max(m, std::abs(u[i] - v[i]) / std::max(1.0, std::abs(u[i])));
    return m;
  };
  double m = rel(flatten(a.cell), flatten(b.cell));
  m = std::max(m, rel(Eigen::Map<const Vector>(a.C.data(), a.C.size()),
                      Eigen::Map<const Vector>(b.C.data(), b.C.size())));
  if (a.D.size() > 0 && b.D.size() > 0)
    m = std::max(m, rel(Eigen::Map<const Vector>(a.D.data(), a.D.size()),
                        Eigen::Map<const Vector>(b.D.data(), b.D.size())));
  return m;
}

std::vector<double> input_gradient_profile(
    const CellParams& params, const ReadoutParams& readout,
    const std::vector<Vector>& inputs, const LossSpec& loss,
    const std::vector<std::size_t>& positions,
    const std::vector<std::size_t>& gaps) {
  std::vector<double> out;
  out.reserve(gaps.size());
  for (std::size_t gap : gaps) {
    double acc = 0.0;
    for (std::size_t t : positions) {
      const std::size_t end = t + gap;  // loss at step t + gap
      if (t < 1 || end > inputs.size())
        throw std::invalid_argument("input_gradient_profile: position + gap beyond T");
      const std::vector<Vector> prefix(inputs.begin(), inputs.begin() + end);
      BpttOptions opts;
      opts.input_grads = true;
      const GradientBundle g = bptt(params, readout, prefix, loss, opts);
      acc += g.inputs[t - 1].norm();
    }
    out.push_back(acc / static_cast<double>(positions.size()));
  }
  return out;
}

}  // namespace stablerec
