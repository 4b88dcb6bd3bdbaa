// stablerec command-line harness.
//
// Subcommands:
//   grad-check   analytic-vs-finite-difference gradient audit
//   run          seeded experiment runner (CSV + manifest output)
//   project      stability projection of a weight file, certificate to stdout
//
// Exit codes: 0 success, 2 configuration error, 3 numeric failure,
//             4 check failure.

#include "stablerec/experiments.hpp"
#include "stablerec/io.hpp"
#include "stablerec/numerics.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <iostream>

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitNumeric = 3;
constexpr int kExitCheck = 4;

using namespace stablerec;

struct GradCheckArgs {
  std::size_t dims = 8;
  std::size_t T = 20;
  std::size_t trials = 60;
  std::uint64_t seed = 1;
  bool corrupt = false;  // negative-control hook: perturbs the analytic grad
};

int cmd_grad_check(const GradCheckArgs& a) {
  if (a.trials == 0) {
    std::cout << "grad-check: no trials requested, nothing to verify\n";
    return kExitOk;
  }
  if (a.dims < 1 || a.T < 2) {
    std::cerr << "grad-check: dims >= 1 and T >= 2 required\n";
    return kExitConfig;
  }
  const Family families[] = {Family::lds, Family::rnn, Family::lstm};
  double worst = 0.0;
  std::size_t worst_trial = 0;

  for (std::size_t trial = 0; trial < a.trials; ++trial) {
    Rng rng(a.seed * 0x9e3779b97f4a7c15ULL + trial);
    const Family family = families[trial % 3];
    const Index d_h = 1 + static_cast<Index>(rng.next_u64() % a.dims);
    const Index d_in = 1 + static_cast<Index>(rng.next_u64() % a.dims);
    const std::size_t T = 2 + rng.next_u64() % (a.T - 1);
    const Index d_out = 1 + static_cast<Index>(rng.next_u64() % 3);

    const CellParams params = random_cell(family, d_h, d_in, rng, 0.5);
    ReadoutParams readout;
    readout.C = rng.gaussian_matrix(d_out, d_h);
    if (rng.next_u64() % 2) readout.D = rng.gaussian_matrix(d_out, d_in);
    std::vector<Vector> inputs;
    for (std::size_t t = 0; t < T; ++t)
      inputs.push_back(rng.gaussian_vector(d_in));
    const LossSpec loss{rng.gaussian_vector(d_out)};

    BpttOptions opts;
    if (trial % 2) opts.truncation = 1 + rng.next_u64() % T;

    GradientBundle g = bptt(params, readout, inputs, loss, opts);
    if (a.corrupt) {
      Vector flat = flatten(g.cell);
      flat[0] += 1e-3;
      g.cell = unflatten_like(g.cell, flat);
    }
    const GradientBundle fd =
        finite_diff_grad(params, readout, inputs, loss, opts.truncation);
    const double err = max_relative_error(g, fd);
    if (err > worst) {
      worst = err;
      worst_trial = trial;
    }
  }
  std::cout << "grad-check: " << a.trials
            << " trials, max relative error " << fmt_g17(worst) << "\n";
  if (worst > 1e-5) {
    std::cerr << "grad-check FAILED at trial " << worst_trial << " (seed "
              << a.seed << ")\n";
    return kExitCheck;
  }
  return kExitOk;
}

// --- run -------------------------------------------------------------------

// Pull-and-consume view over a key=value map; leftovers are config errors.
class KvArgs {
 public:
  explicit KvArgs(KeyValues kv) : kv_(std::move(kv)) {}

  bool has(const std::string& key) const { return kv_.count(key) > 0; }

  std::string take(const std::string& key, const std::string& def) {
    auto it = kv_.find(key);
    if (it == kv_.end()) return def;
    std::string v = it->second;
    kv_.erase(it);
    return v;
  }

  void finish() const {
    if (kv_.empty()) return;
    std::string msg = "unknown config key(s):";
    for (const auto& [k, v] : kv_) msg += " " + k;
    throw std::invalid_argument(msg);
  }

 private:
  KeyValues kv_;
};

std::string seed_range(std::uint64_t start, std::size_t n) {
  std::string out;
  for (std::size_t i = 0; i < n; ++i) {
    if (i) out += ",";
    out += std::to_string(start + i);
  }
  return out;
}

struct RunArgs {
  std::string experiment;
  std::string config_path;
  std::string out_root;
  std::uint64_t seed = 0;
  bool seed_given = false;
  std::size_t jobs = 0;
  std::vector<std::string> sets;
};

KeyValues resolve_kv(const RunArgs& a) {
  KeyValues kv;
  if (!a.config_path.empty()) kv = read_config_file(a.config_path);
  for (const std::string& s : a.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos || eq == 0)
      throw std::invalid_argument("--set expects key=value, got '" + s + "'");
    kv[s.substr(0, eq)] = s.substr(eq + 1);
  }
  if (a.jobs > 0) kv["jobs"] = std::to_string(a.jobs);
  return kv;
}

std::filesystem::path out_root(const RunArgs& a) {
  if (!a.out_root.empty()) return a.out_root;
  if (const char* env = std::getenv("STABLEREC_OUT")) return env;
  return "runs";
}

void print_report(const ExperimentReport& rep) {
  std::cout << "run directory: " << rep.dir.string() << "\n";
  std::cout << "resolved config:\n";
  for (const auto& [k, v] : rep.config) std::cout << "  " << k << "=" << v << "\n";
  for (const auto& [k, v] : rep.summary)
    std::cout << "summary " << k << " = " << fmt_g17(v) << "\n";
  for (const std::string& w : rep.warnings) std::cout << "warning: " << w << "\n";
}

int run_stability_from_kv(const KeyValues& kv_in,
                          const std::filesystem::path& root) {
  KvArgs kv(kv_in);
  const std::string weights = kv.take("weights", "");
  const Family family = family_from_name(kv.take("family", "lds"));
  const std::size_t T = parse_double(kv.take("T", "100"));
  const Index d_in = static_cast<Index>(parse_double(kv.take("d_in", "8")));
  const Index d_h = static_cast<Index>(parse_double(kv.take("d_h", "8")));
  const double lambda = parse_double(kv.take("lambda", "0.75"));

  StabilityReportConfig cfg;
  cfg.ascent.restarts = parse_double(kv.take("restarts", "20"));
  cfg.ascent.steps = parse_double(kv.take("steps", "1000"));
  cfg.ascent.learning_rate = parse_double(kv.take("learning_rate", "0.9"));
  cfg.ascent.init_scale = parse_double(kv.take("init_scale", "0.1"));
  cfg.ascent.seed = parse_double(kv.take("seed", "0"));
  cfg.B_x = parse_double(kv.take("B_x", "0.75"));
  {
    const std::string grid = kv.take("r_grid", "");
    std::istringstream is(grid);
    std::string part;
    while (std::getline(is, part, ','))
      if (!part.empty()) cfg.r_grid.push_back(parse_double(part));
  }
  kv.take("jobs", "1");  // accepted for interface symmetry; run is sequential
  kv.finish();

  CellParams params{LdsParams{}};
  if (!weights.empty()) {
    params = load_weights(weights).cell;
    cfg.extra["weights"] = weights;
  } else {
    params = gen_instance(cfg.ascent.seed, family, 1, d_in, d_h, lambda).params;
    cfg.extra["family"] = family_name(family);
    cfg.extra["d_in"] = std::to_string(d_in);
    cfg.extra["d_h"] = std::to_string(d_h);
    cfg.extra["lambda"] = fmt_g17(lambda);
  }
  cfg.extra["T"] = std::to_string(T);

  Rng rng(cfg.ascent.seed * 0x9e3779b97f4a7c15ULL + 0xd1b54a32d192ed03ULL);
  std::vector<Vector> inputs;
  for (std::size_t t = 0; t < std::max<std::size_t>(1, T); ++t)
    inputs.push_back(rng.gaussian_vector(input_dim(params), 2.0));
  if (family_of(params) == Family::lstm) inputs = clip_inputs(inputs, cfg.B_x);

  print_report(run_stability_report(params, inputs, cfg, root));
  return kExitOk;
}

int cmd_run(const RunArgs& a) {
  KeyValues kv = resolve_kv(a);
  const std::filesystem::path root = out_root(a);

  if (a.experiment == "divergence") {
    if (!kv.count("seeds") && a.seed_given) kv["seeds"] = seed_range(a.seed, 10);
    print_report(run_divergence_figure(DivergenceConfig::from_kv(kv), root));
    return kExitOk;
  }
  if (a.experiment == "counterexample") {
    print_report(run_counterexample(CounterexampleConfig::from_kv(kv), root));
    return kExitOk;
  }
  if (a.experiment == "trunc-sweep") {
    if (!kv.count("seeds") && a.seed_given) kv["seeds"] = seed_range(a.seed, 10);
    print_report(run_truncation_sweep(TruncSweepConfig::from_kv(kv), root));
    return kExitOk;
  }
  if (a.experiment == "vanish-profile") {
    if (!kv.count("seeds") && a.seed_given) kv["seeds"] = seed_range(a.seed, 5);
    print_report(run_vanishing_profile(VanishProfileConfig::from_kv(kv), root));
    return kExitOk;
  }
  if (a.experiment == "stability-report") {
    if (!kv.count("seed") && a.seed_given) kv["seed"] = std::to_string(a.seed);
    return run_stability_from_kv(kv, root);
  }
  std::cerr << "unknown experiment '" << a.experiment
            << "' (expected divergence, counterexample, trunc-sweep, "
               "vanish-profile, stability-report)\n";
  return kExitConfig;
}

// --- project ---------------------------------------------------------------

struct ProjectArgs {
  std::string weights;
  std::string scheme = "spectral";
  double cap = 0.999;
  double B_x = 0.75;
  std::string out;
};

int cmd_project(const ProjectArgs& a) {
  LoadedWeights lw = load_weights(a.weights);
  if (a.scheme == "spectral") {
    if (auto* lds = std::get_if<LdsParams>(&lw.cell)) {
      lds->W = project_spectral(lds->W, a.cap);
    } else if (auto* rnn = std::get_if<RnnParams>(&lw.cell)) {
      rnn->W = project_spectral(rnn->W, a.cap);
    } else {
      std::cerr << "scheme 'spectral' applies to lds/rnn weights\n";
      return kExitConfig;
    }
  } else if (a.scheme == "lstm") {
    auto* lstm = std::get_if<LstmParams>(&lw.cell);
    if (!lstm) {
      std::cerr << "scheme 'lstm' applies to lstm weights\n";
      return kExitConfig;
    }
    *lstm = project_lstm_stable(*lstm);
  } else {
    std::cerr << "unknown scheme '" << a.scheme << "' (spectral or lstm)\n";
    return kExitConfig;
  }
  save_weights(a.out, lw.cell, lw.readout ? &*lw.readout : nullptr);
  std::cout << check_certificate(lw.cell, a.B_x).to_text();
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"stable recurrent models: gradients, projections, experiments"};
  app.require_subcommand(1);

  GradCheckArgs gc;
  CLI::App* gsub = app.add_subcommand(
      "grad-check", "compare analytic BPTT with central finite differences");
  gsub->add_option("--dims", gc.dims, "max state/input dimension");
  gsub->add_option("--T", gc.T, "max sequence length");
  gsub->add_option("--trials", gc.trials, "number of random instances");
  gsub->add_option("--seed", gc.seed, "base seed");
  gsub->add_flag("--corrupt", gc.corrupt,
                 "negative control: perturb the analytic gradient");

  RunArgs ra;
  CLI::App* rsub = app.add_subcommand("run", "execute a seeded experiment");
  rsub->add_option("experiment", ra.experiment,
                   "divergence | counterexample | trunc-sweep | "
                   "vanish-profile | stability-report")
      ->required();
  rsub->add_option("--config", ra.config_path, "key=value config file");
  CLI::Option* seed_opt =
      rsub->add_option("--seed", ra.seed, "master seed (expands to seed lists)");
  rsub->add_option("--out", ra.out_root,
                   "output root (default $STABLEREC_OUT or ./runs)");
  rsub->add_option("--jobs", ra.jobs, "parallel seed runs");
  rsub->add_option("--set", ra.sets, "config override key=value (repeatable)");

  ProjectArgs pa;
  CLI::App* psub =
      app.add_subcommand("project", "project weights onto a stable set");
  psub->add_option("--weights", pa.weights, "input weight file")->required();
  psub->add_option("--scheme", pa.scheme, "spectral | lstm");
  psub->add_option("--cap", pa.cap, "spectral-norm cap for scheme=spectral");
  psub->add_option("--B-x", pa.B_x, "input bound used by the certificate");
  psub->add_option("--out", pa.out, "output weight file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  ra.seed_given = seed_opt->count() > 0;
  try {
    if (gsub->parsed()) return cmd_grad_check(gc);
    if (rsub->parsed()) return cmd_run(ra);
    if (psub->parsed()) return cmd_project(pa);
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitNumeric;
  }
  return kExitConfig;
}
