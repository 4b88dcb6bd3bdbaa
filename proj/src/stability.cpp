#include "stablerec/stability.hpp"

#include "stablerec/autograd.hpp"
#include "stablerec/numerics.hpp"

#include <cassert>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <stdexcept>

namespace stablerec {

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

const Matrix& recurrent_matrix(const CellParams& p) {
  if (const auto* lds = std::get_if<LdsParams>(&p)) return lds->W;
  if (const auto* rnn = std::get_if<RnnParams>(&p)) return rnn->W;
  throw std::invalid_argument("recurrent certificate applies to LDS/RNN only");
}

}  // namespace

std::string StabilityCertificate::to_text() const {
  std::ostringstream os;
  os << "family: " << family_name(family) << "\n";
  os << "certified: " << (certified ? "true" : "false") << "\n";
  os << "lambda: " << lambda << "\n";
  os << "margin: " << margin << "\n";
  os << "iterations: " << iterations << "\n";
  for (const auto& [k, v] : detail) os << k << ": " << v << "\n";
  return os.str();
}

Matrix project_spectral(const Matrix& W, double cap) {
  if (!(cap > 0.0)) throw std::invalid_argument("project_spectral: cap must be positive");
  SvdResult d = svd(W);
  if (d.S[0] <= cap) return W;  // already inside the ball
  const Vector clamped = d.S.cwiseMin(cap);
  return d.U * clamped.asDiagonal() * d.V.transpose();
}

Matrix project_rows_l1(const Matrix& W, double cap) {
  if (!(cap > 0.0)) throw std::invalid_argument("project_rows_l1: cap must be positive");
  Matrix out = W;
  for (Index r = 0; r < out.rows(); ++r) {
    double sum = out.row(r).cwiseAbs().sum();
    if (sum <= cap) continue;
    out.row(r) *= cap / sum;
    // guard against an ulp of overshoot so re-application is a no-op
    while (out.row(r).cwiseAbs().sum() > cap)
      out.row(r) *= 1.0 - 0x1.0p-52;
  }
  return out;
}

LstmParams project_lstm_stable(const LstmParams& p,
                               const LstmStabilityConfig& cfg) {
  LstmParams out = p;
  out.Wf = project_rows_l1(p.Wf, cfg.cap_Wf);
  out.Uf = project_rows_l1(p.Uf, cfg.cap_Uf);
  out.Wi = project_rows_l1(p.Wi, cfg.cap_Wi_Wo);
  out.Wo = project_rows_l1(p.Wo, cfg.cap_Wi_Wo);
  out.Wz = project_rows_l1(p.Wz, cfg.cap_Wz);
  out.bf = p.bf.cwiseMax(-cfg.cap_bf).cwiseMin(cfg.cap_bf);
  return out;
}

std::vector<Vector> clip_inputs(const std::vector<Vector>& xs, double B_x) {
  std::vector<Vector> out;
  out.reserve(xs.size());
  for (const Vector& x : xs) out.push_back(x.cwiseMax(-B_x).cwiseMin(B_x));
  return out;
}

StabilityCertificate check_rnn_certificate(const CellParams& p, double L_rho) {
  if (!(L_rho > 0.0)) throw std::invalid_argument("check_rnn_certificate: L_rho > 0 required");
  const double norm = spectral_norm(recurrent_matrix(p));
  StabilityCertificate cert;
  cert.family = family_of(p);
  cert.lambda = norm * L_rho;
  cert.certified = cert.lambda < 1.0;
  cert.margin = cert.certified ? 1.0 - cert.lambda : 0.0;
  cert.iterations = 1;
  cert.detail["spectral_norm_W"] = norm;
  cert.detail["L_rho"] = L_rho;
  return cert;
}

StabilityCertificate check_lstm_certificate(const LstmParams& p, double B_x) {
  if (!(B_x > 0.0)) throw std::invalid_argument("check_lstm_certificate: B_x > 0 required");
  const double nWf = inf_induced_norm(p.Wf);
  const double nUf = inf_induced_norm(p.Uf);
  const double nbf = p.bf.size() > 0 ? p.bf.cwiseAbs().maxCoeff() : 0.0;
  const double nWi = inf_induced_norm(p.Wi);
  const double nWo = inf_induced_norm(p.Wo);
  const double nWz = inf_induced_norm(p.Wz);

  // sup of the forget gate given ||h||_inf <= 1 and ||x||_inf <= B_x
  const double f_inf = sigmoid(nWf + nUf * B_x + nbf);
  assert(f_inf < 1.0);  // sigma(finite) < 1
  const double cell_bound = 1.0 / (1.0 - f_inf);

  const double lhs = (nWi + cell_bound * nWf + nWo) / 4.0 + nWz;
  StabilityCertificate cert;
  cert.family = Family::lstm;
  cert.certified = lhs < 1.0 - f_inf;
  cert.lambda = lhs + f_inf;  // l_inf contraction factor of one step
  cert.margin = cert.certified ? (1.0 - f_inf) - lhs : 0.0;
  cert.iterations = cert.certified
      ? iterated_contraction_exponent(cert.lambda, 2 * static_cast<std::size_t>(p.Wf.rows()))
      : 0;
  cert.detail["f_inf"] = f_inf;
  cert.detail["cell_bound"] = cell_bound;
  cert.detail["lhs"] = lhs;
  cert.detail["B_x"] = B_x;
  cert.detail["inf_norm_Wf"] = nWf;
  cert.detail["inf_norm_Uf"] = nUf;
  cert.detail["inf_norm_bf"] = nbf;
  cert.detail["inf_norm_Wi"] = nWi;
  cert.detail["inf_norm_Wo"] = nWo;
  cert.detail["inf_norm_Wz"] = nWz;
  return cert;
}

StabilityCertificate check_certificate(const CellParams& p, double B_x) {
  if (const auto* lstm = std::get_if<LstmParams>(&p))
    return check_lstm_certificate(*lstm, B_x);
  return check_rnn_certificate(p);
}

std::size_t iterated_contraction_exponent(double lambda_inf, std::size_t dim) {
  if (!(lambda_inf > 0.0) || lambda_inf >= 1.0)
    throw std::invalid_argument("iterated_contraction_exponent: lambda in (0,1) required");
  const double root_d = std::sqrt(static_cast<double>(dim));
  std::size_t r = 0;
  double factor = root_d;
  while (factor > 1.0 + 1e-15) {
    factor *= lambda_inf;
    ++r;
    if (r > 1000000)
      throw std::runtime_error("iterated_contraction_exponent: exponent overflow");
  }
  return r;
}

namespace {

struct AscentPoint {
  State a;
  State b;
};

AscentPoint random_point(const CellParams& params, double scale, Rng& rng) {
  AscentPoint pt;
  const Index n = state_dim(params);
  pt.a.h = rng.gaussian_vector(n, scale);
  pt.b.h = rng.gaussian_vector(n, scale);
  if (family_of(params) == Family::lstm) {
    pt.a.c = rng.gaussian_vector(n, scale);
    pt.b.c = rng.gaussian_vector(n, scale);
  }
  return pt;
}

// forward r steps with a fixed input, keeping caches for the adjoint pass
State iterate_map(const CellParams& params, const State& s0, const Vector& x,
                  std::size_t r, std::vector<StepCache>* caches) {
  State s = s0;
  caches->clear();
  caches->resize(r);
  for (std::size_t i = 0; i < r; ++i) s = step(params, s, x, &(*caches)[i]);
  return s;
}

// gradient of ||phi^r(s0) - phi^r(s0')|| with respect to s0: adjoint chain
// seeded with the normalized output difference
State pullback(const CellParams& params, const std::vector<StepCache>& caches,
               State seed) {
  for (std::size_t i = caches.size(); i-- > 0;)
    seed = state_adjoint_step(params, caches[i], seed);
  return seed;
}

void state_axpy(double a, const State& g, State& s) {
  s.h += a * g.h;
  if (s.c.size() > 0) s.c += a * g.c;
}

}  // namespace

double estimate_stability(const CellParams& params,
                          const std::vector<Vector>& sample_inputs,
                          const AscentConfig& cfg) {
  if (sample_inputs.empty())
    throw std::invalid_argument("estimate_stability: need at least one sample input");
  const std::size_t r = std::max<std::size_t>(1, cfg.iterate_exponent);
  const bool is_lstm = family_of(params) == Family::lstm;
  double best = 0.0;

  for (std::size_t restart = 0; restart < cfg.restarts; ++restart) {
    Rng rng(cfg.seed * 0x9e3779b97f4a7c15ULL + restart + 1);
    const Vector& x =
        sample_inputs[rng.next_u64() % sample_inputs.size()];
    AscentPoint pt = random_point(params, cfg.init_scale, rng);

    std::vector<StepCache> ca, cb;
    for (std::size_t it = 0; it < cfg.steps; ++it) {
      double m = state_distance(pt.a, pt.b);
      if (m < 1e-12) {
        std::fprintf(stderr,
                     "estimate_stability: degenerate pair re-perturbed "
                     "(restart %zu, step %zu)\n", restart, it);
        AscentPoint fresh = random_point(params, cfg.init_scale, rng);
        state_axpy(1.0, fresh.a, pt.a);
        state_axpy(1.0, fresh.b, pt.b);
        m = state_distance(pt.a, pt.b);
      }
      const State fa = iterate_map(params, pt.a, x, r, &ca);
      const State fb = iterate_map(params, pt.b, x, r, &cb);

      State diff;
      diff.h = fa.h - fb.h;
      if (is_lstm) diff.c = fa.c - fb.c;
      const double n = state_distance(fa, fb);
      const double S = n / m;
      best = std::max(best, S);
      if (n < 1e-300) continue;  // constant map at this point, nothing to ascend

      State seed;
      seed.h = diff.h / n;
      if (is_lstm) seed.c = diff.c / n;
      const State gn_a = pullback(params, ca, seed);
      State neg_seed;
      neg_seed.h = -seed.h;
      if (is_lstm) neg_seed.c = -seed.c;
      const State gn_b = pullback(params, cb, neg_seed);

      // grad S = grad n / m - (n / m^2) grad m
      State gm_a, gm_b;
      gm_a.h = (pt.a.h - pt.b.h) / m;
      gm_b.h = -gm_a.h;
      if (is_lstm) {
        gm_a.c = (pt.a.c - pt.b.c) / m;
        gm_b.c = -gm_a.c;
      }
      const double scale = n / (m * m);
      State ga, gb;
      ga.h = gn_a.h / m - scale * gm_a.h;
      gb.h = gn_b.h / m - scale * gm_b.h;
      if (is_lstm) {
        ga.c = gn_a.c / m - scale * gm_a.c;
        gb.c = gn_b.c / m - scale * gm_b.c;
      }
      state_axpy(cfg.learning_rate, ga, pt.a);
      state_axpy(cfg.learning_rate, gb, pt.b);
    }
    // score the final iterate as well
    const double m = state_distance(pt.a, pt.b);
    if (m >= 1e-12) {
      const State fa = iterate_map(params, pt.a, x, r, &ca);
      const State fb = iterate_map(params, pt.b, x, r, &cb);
      best = std::max(best, state_distance(fa, fb) / m);
    }
  }
  return best;
}

}  // namespace stablerec
