// Acceptance gate: one pass/fail line per shipped guarantee, pinned
// tolerances, non-zero exit on any failure. Runs desk-scale versions of the
// library's headline experiments end to end.

#include "stablerec/experiments.hpp"
#include "stablerec/numerics.hpp"
#include "test_util.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <string>
#include <thread>
#include <vector>

using namespace stablerec;
using stablerec::testutil::Csv;
using stablerec::testutil::random_orthogonal;
using stablerec::testutil::read_csv;
using stablerec::testutil::read_file;
using stablerec::testutil::scratch_dir;

namespace fs = std::filesystem;

namespace {

int g_failures = 0;

class Criterion {
 public:
  explicit Criterion(std::string name) : name_(std::move(name)) {
    start_ = std::chrono::steady_clock::now();
  }
  void expect(bool ok, const std::string& what) {
    if (!ok) {
      ok_ = false;
      details_.push_back(what);
    }
  }
  ~Criterion() {
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start_)
            .count();
    std::printf("%s: %s (%.1f s)\n", ok_ ? "PASS" : "FAIL", name_.c_str(), secs);
    for (const std::string& d : details_) std::printf("      %s\n", d.c_str());
    if (!ok_) ++g_failures;
    std::fflush(stdout);
  }

 private:
  std::string name_;
  bool ok_ = true;
  std::vector<std::string> details_;
  std::chrono::steady_clock::time_point start_;
};

std::string num(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

// ---- criterion 1: analytic gradients against central differences ----------

void criterion_gradients() {
  Criterion c("1. analytic gradients match finite differences (<= 1e-5)");
  const Family families[] = {Family::lds, Family::rnn, Family::lstm};
  double worst = 0.0;
  for (Family family : families) {
    for (int trial = 0; trial < 200; ++trial) {
      Rng rng(static_cast<std::uint64_t>(family) * 100000 + trial + 1);
      const Index d_h = 2 + static_cast<Index>(rng.next_u64() % 7);   // <= 8
      const Index d_in = 1 + static_cast<Index>(rng.next_u64() % 8);  // <= 8
      const std::size_t T = 4 + rng.next_u64() % 17;                  // <= 20
      const CellParams params = random_cell(family, d_h, d_in, rng);
      ReadoutParams ro;
      ro.C = rng.gaussian_matrix(1, d_h);
      if (trial % 2 == 0) ro.D = rng.gaussian_matrix(1, d_in);
      std::vector<Vector> xs;
      for (std::size_t t = 0; t < T; ++t) xs.push_back(rng.gaussian_vector(d_in));
      LossSpec loss{rng.uniform_vector(1, -2.0, 2.0)};
      std::optional<std::size_t> trunc;
      if (trial % 3 == 1) trunc = 1 + rng.next_u64() % T;
      BpttOptions opts;
      opts.truncation = trunc;
      const GradientBundle analytic = bptt(params, ro, xs, loss, opts);
      const GradientBundle fd = finite_diff_grad(params, ro, xs, loss, trunc);
      worst = std::max(worst, max_relative_error(analytic, fd));
    }
  }
  c.expect(worst <= 1e-5, "worst relative error " + num(worst));
}

// ---- criterion 2: truncated-state error under the geometric envelope ------

void criterion_state_envelope() {
  Criterion c("2. truncated-state error obeys the geometric envelope");
  const double lambdas[] = {0.5, 0.75, 0.9};
  const int per_lambda[] = {17, 17, 16};  // 50 instances total
  const Index d = 8, d_in = 4;
  const std::size_t T = 60;
  std::size_t violations = 0;
  for (int li = 0; li < 3; ++li) {
    const double lambda = lambdas[li];
    std::vector<double> mean_gap(40, 0.0);
    for (int inst = 0; inst < per_lambda[li]; ++inst) {
      Rng rng(static_cast<std::uint64_t>(li) * 1000 + inst + 1);
      // scaled orthogonal recurrence: every mode decays at exactly lambda
      const Matrix W = lambda * random_orthogonal(d, rng);
      const Matrix U = rng.gaussian_matrix(d, d_in);
      const CellParams p = LdsParams{W, U};
      std::vector<Vector> xs;
      for (std::size_t t = 0; t < T; ++t) xs.push_back(rng.gaussian_vector(d_in));
      const Trajectory full = rollout(p, xs);
      const double L_x = spectral_norm(U);
      double B_x = 0.0;
      for (const Vector& x : xs) B_x = std::max(B_x, x.norm());
      for (std::size_t k = 1; k <= 40; ++k) {
        const State hk = rollout_truncated(p, xs, T, k);
        const double gap = state_distance(full.states.back(), hk);
        const double envelope =
            std::pow(lambda, double(k)) * L_x * B_x / (1.0 - lambda);
        if (gap > envelope) ++violations;
        mean_gap[k - 1] += gap / per_lambda[li];
      }
    }
    std::vector<double> ks;
    for (std::size_t k = 1; k <= 40; ++k) ks.push_back(double(k));
    const double slope = log_slope(ks, mean_gap);
    c.expect(std::abs(slope - std::log(lambda)) <= 0.05,
             "state-gap decay rate off at lambda " + num(lambda) + ": slope " +
                 num(slope) + " vs " + num(std::log(lambda)));
  }
  c.expect(violations == 0,
           std::to_string(violations) + " envelope violations (want 0)");
}

// ---- criterion 3: gradient gap decays at the contraction rate -------------

void criterion_gradient_gap() {
  Criterion c("3. full-vs-truncated gradient gap decays like k*lambda^k");
  const Index d = 8, d_in = 4;
  const std::size_t T = 60;
  const int instances = 50;
  for (double lambda : {0.5, 0.75, 0.9}) {
    std::vector<double> mean_gap(36, 0.0);
    for (int inst = 0; inst < instances; ++inst) {
      Rng rng(static_cast<std::uint64_t>(lambda * 100000) + inst);
      const Matrix W = lambda * random_orthogonal(d, rng);
      const CellParams p = LdsParams{W, rng.gaussian_matrix(d, d_in)};
      std::vector<Vector> xs;
      for (std::size_t t = 0; t < T; ++t) xs.push_back(rng.gaussian_vector(d_in));
      ReadoutParams ro;
      ro.C = rng.gaussian_matrix(1, d);
      LossSpec loss{rng.uniform_vector(1, -2.0, 2.0)};
      const GradientBundle full = bptt(p, ro, xs, loss);
      for (std::size_t k = 5; k <= 40; ++k) {
        BpttOptions opts;
        opts.truncation = k;
        const GradientBundle trunc = bptt(p, ro, xs, loss, opts);
        mean_gap[k - 5] +=
            (flatten(full.cell) - flatten(trunc.cell)).norm() / instances;
      }
    }
    std::vector<double> ks;
    for (std::size_t k = 5; k <= 40; ++k) ks.push_back(double(k));
    const double slope = log_slope(ks, mean_gap);
    // the extra ln-k term in k*lambda^k contributes at most +0.05 on k>=5
    c.expect(slope <= std::log(lambda) + 0.05,
             "gradient-gap slope " + num(slope) + " above " +
                 num(std::log(lambda) + 0.05) + " at lambda " + num(lambda));
  }
}

// ---- criterion 4: weight-divergence figure ---------------------------------

void criterion_divergence_figure() {
  Criterion c("4. weight-divergence figure: zero start, schedule ordering, "
              "flattening, 2*lambda ceiling");
  DivergenceConfig cfg;  // pinned defaults: 10 seeds, 3 schedules, lds+rnn
  cfg.jobs = std::min<std::size_t>(
      std::max(1u, std::thread::hardware_concurrency()), 8);
  const fs::path out = scratch_dir("acceptance_divergence");
  const ExperimentReport rep = run_divergence_figure(cfg, out);
  c.expect(rep.warnings.empty(),
           "aborted units: " + std::to_string(rep.warnings.size()));

  // (a) paired runs share their initialization; (d) stay under 2*lambda = 1.5
  double max_div = 0.0;
  bool zero_start = true;
  for (const fs::path& f : rep.files) {
    if (f.filename().string().find("_seed") == std::string::npos) continue;
    const Csv csv = read_csv(f);
    const std::vector<double> div = csv.column("divergence");
    if (div.empty() || div.front() != 0.0) zero_start = false;
    for (double v : div) max_div = std::max(max_div, v);
  }
  c.expect(zero_start, "divergence at step 0 must be exactly 0");
  c.expect(max_div < 1.5, "max divergence " + num(max_div) + " >= 1.5");

  // (b) faster-decaying schedules diverge strictly less, pooled over families
  auto pooled = [&](const char* sched) {
    return (rep.summary.at(std::string("final_mean_lds_") + sched) +
            rep.summary.at(std::string("final_mean_rnn_") + sched)) / 2.0;
  };
  const double p_it = pooled("inverse_t");
  const double p_is = pooled("inverse_sqrt_t");
  const double p_c = pooled("constant");
  c.expect(p_it < p_is && p_is < p_c,
           "pooled final divergence not ordered: 1/t " + num(p_it) +
               ", 1/sqrt(t) " + num(p_is) + ", constant " + num(p_c));
  const double l_it = rep.summary.at("final_mean_lds_inverse_t");
  const double l_is = rep.summary.at("final_mean_lds_inverse_sqrt_t");
  const double l_c = rep.summary.at("final_mean_lds_constant");
  c.expect(l_it < l_is && l_is < l_c,
           "linear-model final divergence not ordered: " + num(l_it) + ", " +
               num(l_is) + ", " + num(l_c));

  // (c) the 1/t mean curve flattens: at most 10% growth over any 50 later steps
  for (const char* fam : {"lds", "rnn"}) {
    const Csv agg = read_csv(rep.dir / (std::string("divergence_") + fam +
                                        "_inverse_t_agg.csv"));
    const std::vector<double> mean = agg.column("mean_divergence");
    for (std::size_t t = 20; t + 50 < mean.size(); ++t)
      if (mean[t + 50] > 1.1 * mean[t] + 1e-12) {
        c.expect(false, std::string(fam) + " 1/t curve still growing at step " +
                            std::to_string(t));
        break;
      }
  }
}

// ---- criterion 5: scalar gradient-descent counterexample ------------------

void criterion_counterexample() {
  Criterion c("5. scalar counterexample: unstable start diverges, stable "
              "start converges, closed-form gradient checks out");
  const CounterexampleTrace bad = scalar_descent(1.5, 50, 500);
  c.expect(bad.diverged, "a0 = 1.5 under the 1/t schedule must diverge");

  const CounterexampleTrace good =
      scalar_descent(0.5, 50, 10000, Schedule::constant, 0.1);
  c.expect(!good.diverged && std::abs(good.grad.back()) < 1e-6,
           "a0 = 0.5 must reach |gradient| < 1e-6, got " +
               num(std::abs(good.grad.back())));

  Rng rng(7);
  double worst = 0.0;
  for (int i = 0; i < 20; ++i) {
    const double a = rng.uniform(-1.5, 1.5);
    const std::size_t T = 2 + rng.next_u64() % 9;
    const double h = 1e-6;
    const double fd =
        (scalar_lds_loss(a + h, T) - scalar_lds_loss(a - h, T)) / (2 * h);
    const double g = scalar_lds_gradient(a, T);
    worst = std::max(worst, std::abs(g - fd) / std::max(1.0, std::abs(g)));
  }
  c.expect(worst <= 1e-7,
           "closed-form gradient FD error " + num(worst) + " > 1e-7");
}

// ---- criterion 6: lstm projection certifies and contracts -----------------

void criterion_lstm_certificate() {
  Criterion c("6. lstm projection: forget-gate bound < 0.64, certificates "
              "hold, iterated map contracts");
  const LstmStabilityConfig caps;
  const double f_inf =
      1.0 / (1.0 + std::exp(-(caps.cap_Wf + caps.cap_Uf * caps.B_x + caps.cap_bf)));
  c.expect(f_inf < 0.64, "forget-gate bound " + num(f_inf) + " >= 0.64");

  std::size_t certified = 0, violations = 0;
  for (int draw = 0; draw < 100; ++draw) {
    Rng rng(1000 + draw);
    const LstmParams raw =
        std::get<LstmParams>(random_cell(Family::lstm, 4, 3, rng, 1.0));
    const LstmParams stable = project_lstm_stable(raw);
    const StabilityCertificate cert = check_lstm_certificate(stable, caps.B_x);
    if (cert.certified && cert.margin > 0.0) ++certified;
    const double cell_bound = cert.detail.at("cell_bound");
    const CellParams p = stable;
    // the r-fold composition must be non-expansive in l2 on the certified box
    for (int pair = 0; pair < 1000; ++pair) {
      State a, b;
      a.h = rng.uniform_vector(4, -1.0, 1.0);
      b.h = rng.uniform_vector(4, -1.0, 1.0);
      a.c = rng.uniform_vector(4, -cell_bound, cell_bound);
      b.c = rng.uniform_vector(4, -cell_bound, cell_bound);
      const Vector x = rng.uniform_vector(3, -caps.B_x, caps.B_x);
      const double before = state_distance(a, b);
      for (std::size_t i = 0; i < cert.iterations; ++i) {
        a = step(p, a, x);
        b = step(p, b, x);
      }
      if (state_distance(a, b) > before) ++violations;
    }
  }
  c.expect(certified == 100,
           std::to_string(certified) + "/100 projected draws certified");
  c.expect(violations == 0,
           std::to_string(violations) + " contraction violations (want 0)");
}

// ---- criterion 7: spectral machinery ---------------------------------------

void criterion_spectral() {
  Criterion c("7. svd reconstruction <= 1e-10, spectral projection idempotent "
              "and certificate-valid");
  Rng rng(77);
  double worst_recon = 0.0, worst_idem = 0.0;
  bool certs_ok = true;
  for (int trial = 0; trial < 500; ++trial) {
    const Index rows = 1 + static_cast<Index>(rng.next_u64() % 64);
    const Index cols = 1 + static_cast<Index>(rng.next_u64() % 64);
    const Matrix A = rng.gaussian_matrix(rows, cols);
    const SvdResult d = svd(A);
    worst_recon = std::max(
        worst_recon, (d.U * d.S.asDiagonal() * d.V.transpose() - A).norm());
    if (rows == cols) {
      const double cap = 0.999;
      const Matrix P = project_spectral(A, cap);
      worst_idem = std::max(
          worst_idem, (project_spectral(P, cap) - P).cwiseAbs().maxCoeff());
      const StabilityCertificate cert =
          check_rnn_certificate(LdsParams{P, Matrix::Identity(rows, 1)});
      if (!cert.certified || cert.lambda > cap + 1e-9) certs_ok = false;
    }
  }
  c.expect(worst_recon <= 1e-10, "worst reconstruction " + num(worst_recon));
  c.expect(worst_idem <= 1e-12, "worst idempotence gap " + num(worst_idem));
  c.expect(certs_ok, "a projected matrix failed its certificate");
}

// ---- criterion 8: data-dependent stability estimate ------------------------

void criterion_stability_estimate() {
  Criterion c("8. ascent estimate recovers planted expansion rates within 1%");
  for (double sigma : {0.3, 0.9, 1.2}) {
    Rng rng(11);
    const Matrix U = random_orthogonal(8, rng);
    const Matrix V = random_orthogonal(8, rng);
    Vector sv(8);
    for (int i = 0; i < 8; ++i)
      sv[i] = (i == 0) ? sigma : rng.uniform(0.0, 0.8 * sigma);
    const CellParams p =
        LdsParams{U * sv.asDiagonal() * V.transpose(), rng.gaussian_matrix(8, 4)};
    const std::vector<Vector> xs = {rng.gaussian_vector(4)};
    AscentConfig ac;
    ac.seed = 5;
    const double hat = estimate_stability(p, xs, ac);
    c.expect(std::abs(hat - sigma) / sigma <= 0.01,
             "planted " + num(sigma) + " estimated as " + num(hat));
  }
  // on a tanh cell the estimate can never beat the spectral-norm certificate
  Rng rng(13);
  const Matrix W = rng.gaussian_matrix(8, 8, 0.4);
  const CellParams p = RnnParams{W, rng.gaussian_matrix(8, 4, 0.4)};
  std::vector<Vector> xs;
  for (int i = 0; i < 4; ++i) xs.push_back(rng.gaussian_vector(4));
  AscentConfig ac;
  ac.seed = 3;
  const double hat = estimate_stability(p, xs, ac);
  c.expect(hat <= spectral_norm(W) + 1e-6,
           "estimate " + num(hat) + " above the certificate " +
               num(spectral_norm(W)));
}

// ---- criterion 9: vanishing-gradient profile --------------------------------

void criterion_vanishing() {
  Criterion c("9. input-gradient profile of a certified model decays "
              "geometrically (ratio <= 0.77)");
  VanishProfileConfig cfg;  // pinned defaults
  const ExperimentReport rep =
      run_vanishing_profile(cfg, scratch_dir("acceptance_vanish"));
  const double ratio = rep.summary.at("fitted_ratio");
  c.expect(ratio > 0.0 && ratio <= 0.77,
           "fitted per-step ratio " + num(ratio) + " outside (0, 0.77]");
}

// ---- criterion 10: reproducibility ------------------------------------------

void criterion_reproducibility() {
  Criterion c("10. runs are byte-identical across worker counts and config "
              "echo round trips");
  DivergenceConfig cfg;
  cfg.seeds = {1, 2, 3};
  cfg.T = 50;
  cfg.d_in = 8;
  cfg.d_h = 8;
  cfg.k = 8;
  cfg.steps = 50;
  cfg.jobs = 1;
  const ExperimentReport serial =
      run_divergence_figure(cfg, scratch_dir("acceptance_repro1"));
  cfg.jobs = 4;
  const ExperimentReport parallel =
      run_divergence_figure(cfg, scratch_dir("acceptance_repro4"));
  bool same = serial.files.size() == parallel.files.size();
  if (same)
    for (std::size_t i = 0; i < serial.files.size(); ++i)
      same = same &&
             serial.files[i].filename() == parallel.files[i].filename() &&
             read_file(serial.files[i]) == read_file(parallel.files[i]);
  c.expect(same, "jobs=1 and jobs=4 outputs differ");

  // the echoed config must reproduce the run verbatim
  const DivergenceConfig echoed = DivergenceConfig::from_kv(
      read_config_file(serial.dir / "config.txt"));
  const ExperimentReport replay =
      run_divergence_figure(echoed, scratch_dir("acceptance_repro_echo"));
  bool replay_same = serial.files.size() == replay.files.size();
  if (replay_same)
    for (std::size_t i = 0; i < serial.files.size(); ++i)
      replay_same = replay_same &&
                    read_file(serial.files[i]) == read_file(replay.files[i]);
  c.expect(replay_same, "replay from the echoed config differs");
}

}  // namespace

int main() {
  criterion_gradients();
  criterion_state_envelope();
  criterion_gradient_gap();
  criterion_divergence_figure();
  criterion_counterexample();
  criterion_lstm_certificate();
  criterion_spectral();
  criterion_stability_estimate();
  criterion_vanishing();
  criterion_reproducibility();
  if (g_failures == 0)
    std::printf("all acceptance criteria passed\n");
  else
    std::printf("%d acceptance criteria FAILED\n", g_failures);
  return g_failures;
}
