#include "stablerec/training.hpp"

#include "stablerec/numerics.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace stablerec {

std::string schedule_name(Schedule s) {
  switch (s) {
    case Schedule::inverse_t: return "inverse_t";
    case Schedule::inverse_sqrt_t: return "inverse_sqrt_t";
    case Schedule::constant: return "constant";
  }
  return "?";
}

Schedule schedule_from_name(const std::string& name) {
  if (name == "inverse_t") return Schedule::inverse_t;
  if (name == "inverse_sqrt_t") return Schedule::inverse_sqrt_t;
  if (name == "constant") return Schedule::constant;
  throw std::invalid_argument("unknown schedule: " + name);
}

double lr(Schedule schedule, double alpha, std::size_t t) {
  if (t < 1) throw std::invalid_argument("lr: step index starts at 1");
  switch (schedule) {
    case Schedule::inverse_t: return alpha / static_cast<double>(t);
    case Schedule::inverse_sqrt_t: return alpha / std::sqrt(static_cast<double>(t));
    case Schedule::constant: return alpha;
  }
  return alpha;
}

void apply_projector(const Projector& proj, CellParams& p) {
  if (std::holds_alternative<std::monostate>(proj)) return;
  if (const auto* sp = std::get_if<SpectralProjector>(&proj)) {
    if (auto* lds = std::get_if<LdsParams>(&p)) {
      lds->W = project_spectral(lds->W, sp->cap);
    } else if (auto* rnn = std::get_if<RnnParams>(&p)) {
      rnn->W = project_spectral(rnn->W, sp->cap);
    } else {
      throw std::invalid_argument("spectral projector applies to LDS/RNN only");
    }
    return;
  }
  const auto& lp = std::get<LstmProjector>(proj);
  auto* lstm = std::get_if<LstmParams>(&p);
  if (!lstm) throw std::invalid_argument("lstm projector applies to LSTM only");
  *lstm = project_lstm_stable(*lstm, lp.cfg);
}

namespace {

void apply_update(CellParams& p, const GradientBundle& g, double step,
                  TrainSet set) {
  if (set == TrainSet::recurrent_only) {
    if (auto* lds = std::get_if<LdsParams>(&p)) {
      lds->W -= step * std::get<LdsParams>(g.cell).W;
    } else if (auto* rnn = std::get_if<RnnParams>(&p)) {
      rnn->W -= step * std::get<RnnParams>(g.cell).W;
    } else {
      auto& l = std::get<LstmParams>(p);
      const auto& gl = std::get<LstmParams>(g.cell);
      l.Wf -= step * gl.Wf;
      l.Wi -= step * gl.Wi;
      l.Wo -= step * gl.Wo;
      l.Wz -= step * gl.Wz;
    }
    return;
  }
  axpy(-step, g.cell, p);
}

std::size_t effective_stride(const TrainConfig& cfg) {
  if (cfg.snapshot_stride > 0) return cfg.snapshot_stride;
  return cfg.steps <= 500 ? 1 : (cfg.steps + 499) / 500;
}

}  // namespace

TrainResult sgd_run(const TrainConfig& cfg, const CellParams& init,
                    const ReadoutParams& readout, const TrainData& data) {
  if (data.inputs.empty()) throw std::invalid_argument("sgd_run: empty inputs");
  TrainResult res;
  res.params = init;
  res.readout = readout;
  const std::size_t stride = effective_stride(cfg);
  res.snapshots.push_back(res.params);
  res.snapshot_steps.push_back(0);

  BpttOptions opts;
  opts.truncation = cfg.truncation;
  for (std::size_t t = 1; t <= cfg.steps; ++t) {
    const double cur =
        loss_value(res.params, res.readout, data.inputs, data.loss, cfg.truncation);
    if (!std::isfinite(cur))
      throw std::runtime_error("sgd_run: non-finite loss at step " + std::to_string(t));
    res.losses.push_back(cur);

    const GradientBundle g =
        bptt(res.params, res.readout, data.inputs, data.loss, opts);
    const double step = lr(cfg.schedule, cfg.alpha, t);
    apply_update(res.params, g, step, cfg.trainable);
    if (cfg.trainable == TrainSet::cell_and_readout) {
      res.readout.C -= step * g.C;
      if (res.readout.has_input_term()) res.readout.D -= step * g.D;
    }
    apply_projector(cfg.projector, res.params);
    if (t % stride == 0) {
      res.snapshots.push_back(res.params);
      res.snapshot_steps.push_back(t);
    }
  }
  return res;
}

double prop4_bound(const BoundConstants& c, double alpha, std::size_t k,
                   double lambda, std::size_t N) {
  if (!(lambda > 0.0 && lambda < 1.0))
    throw std::invalid_argument("prop4_bound: lambda in (0,1) required");
  if (k == 0 || N == 0) return 0.0;
  return alpha * c.gamma * static_cast<double>(k) *
         std::pow(lambda, static_cast<double>(k)) *
         std::pow(static_cast<double>(N), alpha * c.beta + 1.0);
}

std::size_t context_length(double lambda, double L_x, double B_x, double eps,
                           double L_f) {
  if (!(lambda > 0.0 && lambda < 1.0))
    throw std::invalid_argument("context_length: lambda in (0,1) required");
  if (!(eps > 0.0)) throw std::invalid_argument("context_length: eps > 0 required");
  const double arg = L_f * L_x * B_x / ((1.0 - lambda) * eps);
  if (arg <= 1.0) return 0;
  const double k = std::log(arg) / std::log(1.0 / lambda);
  return static_cast<std::size_t>(std::ceil(k - 1e-12));
}

std::size_t thm1_context(const BoundConstants& c, double lambda, std::size_t N,
                         double eps, double alpha) {
  if (!(lambda > 0.0 && lambda < 1.0))
    throw std::invalid_argument("thm1_context: lambda in (0,1) required");
  if (!(eps > 0.0)) throw std::invalid_argument("thm1_context: eps > 0 required");
  const double half = eps / 2.0;
  const double inference_scale = c.L_f * c.L_x * c.B_x / (1.0 - lambda);
  const double training_scale =
      alpha * c.L_f * c.L_w *
      std::pow(static_cast<double>(N), alpha * c.beta + 1.0) / (1.0 - lambda);
  for (std::size_t k = 0; k <= 1000000; ++k) {
    const double lk = std::pow(lambda, static_cast<double>(k));
    const double inference_term = lk * inference_scale;
    const double training_term = static_cast<double>(k) * lk * training_scale;
    if (inference_term <= half && training_term <= half) return k;
  }
  throw std::runtime_error("thm1_context: no finite context below search cap");
}

double recurrent_operator_distance(const CellParams& a, const CellParams& b) {
  if (family_of(a) != family_of(b))
    throw std::invalid_argument("recurrent_operator_distance: family mismatch");
  if (const auto* la = std::get_if<LdsParams>(&a))
    return spectral_norm(la->W - std::get<LdsParams>(b).W);
  if (const auto* ra = std::get_if<RnnParams>(&a))
    return spectral_norm(ra->W - std::get<RnnParams>(b).W);
  const auto& xa = std::get<LstmParams>(a);
  const auto& xb = std::get<LstmParams>(b);
  double d = spectral_norm(xa.Wf - xb.Wf);
  d = std::max(d, spectral_norm(xa.Wi - xb.Wi));
  d = std::max(d, spectral_norm(xa.Wo - xb.Wo));
  d = std::max(d, spectral_norm(xa.Wz - xb.Wz));
  return d;
}

double fit_gamma(const CellParams& params, const ReadoutParams& readout,
                 const TrainData& data, std::size_t k, double lambda) {
  const GradientBundle full = bptt(params, readout, data.inputs, data.loss);
  BpttOptions opts;
  opts.truncation = k;
  const GradientBundle trunc = bptt(params, readout, data.inputs, data.loss, opts);
  const double gap = (flatten(full.cell) - flatten(trunc.cell)).norm();
  return gap / (static_cast<double>(k) * std::pow(lambda, static_cast<double>(k)));
}

double fit_beta(const CellParams& params, const ReadoutParams& readout,
                const TrainData& data, std::size_t samples, Rng& rng) {
  const GradientBundle base = bptt(params, readout, data.inputs, data.loss);
  const Vector theta = flatten(params);
  const double eps = 1e-4 * std::max(1.0, theta.norm());
  double best = 0.0;
  for (std::size_t s = 0; s < samples; ++s) {
    Vector dir = rng.gaussian_vector(theta.size());
    dir *= eps / dir.norm();
    const CellParams other = unflatten_like(params, Vector(theta + dir));
    const GradientBundle g = bptt(other, readout, data.inputs, data.loss);
    best = std::max(best,
                    (flatten(g.cell) - flatten(base.cell)).norm() / dir.norm());
  }
  return best;
}

DivergenceRecord paired_divergence_run(const TrainConfig& cfg,
                                       const CellParams& init,
                                       const ReadoutParams& readout,
                                       const TrainData& data,
                                       const BoundConstants& consts,
                                       double lambda) {
  if (!cfg.truncation.has_value())
    throw std::invalid_argument("paired_divergence_run: truncation required");
  const std::size_t k = *cfg.truncation;

  DivergenceRecord rec;
  rec.schedule = cfg.schedule;
  rec.alpha = cfg.alpha;
  rec.k = k;
  rec.lambda = lambda;

  CellParams w_recurr = init;
  CellParams w_trunc = init;
  ReadoutParams ro = readout;  // readout stays fixed between the two runs
  rec.distance.push_back(0.0);
  rec.distance_frob.push_back(0.0);
  rec.bound.push_back(0.0);

  BpttOptions trunc_opts;
  trunc_opts.truncation = k;
  for (std::size_t t = 1; t <= cfg.steps; ++t) {
    const double lf = loss_value(w_recurr, ro, data.inputs, data.loss);
    const double lt = loss_value(w_trunc, ro, data.inputs, data.loss, k);
    if (!std::isfinite(lf) || !std::isfinite(lt))
      throw std::runtime_error("paired_divergence_run: non-finite loss at step " +
                               std::to_string(t));
    rec.loss_full.push_back(lf);
    rec.loss_trunc.push_back(lt);

    const GradientBundle gf = bptt(w_recurr, ro, data.inputs, data.loss);
    const GradientBundle gt = bptt(w_trunc, ro, data.inputs, data.loss, trunc_opts);
    const double step = lr(cfg.schedule, cfg.alpha, t);
    rec.lr_series.push_back(step);
    apply_update(w_recurr, gf, step, cfg.trainable);
    apply_update(w_trunc, gt, step, cfg.trainable);
    apply_projector(cfg.projector, w_recurr);
    apply_projector(cfg.projector, w_trunc);

    rec.distance.push_back(recurrent_operator_distance(w_recurr, w_trunc));
    rec.distance_frob.push_back(param_distance(w_recurr, w_trunc));
    rec.bound.push_back(prop4_bound(consts, cfg.alpha, k, lambda, t));
  }
  rec.final_loss_full = loss_value(w_recurr, ro, data.inputs, data.loss);
  rec.final_loss_trunc = loss_value(w_trunc, ro, data.inputs, data.loss, k);
  rec.final_full = std::move(w_recurr);
  rec.final_trunc = std::move(w_trunc);
  return rec;
}

}  // namespace stablerec
