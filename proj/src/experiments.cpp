#include "stablerec/experiments.hpp"

#include "stablerec/io.hpp"
#include "stablerec/numerics.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <ctime>
#include <sstream>
#include <stdexcept>
#include <thread>

namespace stablerec {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::istringstream is(s);
  std::string part;
  while (std::getline(is, part, sep)) out.push_back(trim(part));
  return out;
}

std::string join(const std::vector<std::string>& parts) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out += ",";
    out += parts[i];
  }
  return out;
}

// Consumes keys as they are read; finish() rejects anything left over so a
// typo in a config never passes silently.
class KvReader {
 public:
  explicit KvReader(KeyValues kv) : kv_(std::move(kv)) {}

  std::string str(const std::string& key, const std::string& def) {
    auto it = kv_.find(key);
    if (it == kv_.end()) return def;
    std::string v = it->second;
    kv_.erase(it);
    return v;
  }

  double num(const std::string& key, double def) {
    auto it = kv_.find(key);
    if (it == kv_.end()) return def;
    const double v = parse_double(it->second);
    kv_.erase(it);
    return v;
  }

  std::size_t count(const std::string& key, std::size_t def) {
    const double v = num(key, static_cast<double>(def));
    if (v < 0 || v != std::floor(v))
      throw std::invalid_argument("config key '" + key +
                                  "': non-negative integer required");
    return static_cast<std::size_t>(v);
  }

  bool flag(const std::string& key, bool def) {
    const std::string v = str(key, def ? "true" : "false");
    if (v == "true") return true;
    if (v == "false") return false;
    throw std::invalid_argument("config key '" + key + "': true/false required");
  }

  template <class T, class Fn>
  std::vector<T> list(const std::string& key, std::vector<T> def, Fn parse) {
    auto it = kv_.find(key);
    if (it == kv_.end()) return def;
    std::vector<T> out;
    for (const std::string& p : split(it->second, ','))
      if (!p.empty()) out.push_back(parse(p));
    kv_.erase(it);
    if (out.empty())
      throw std::invalid_argument("config key '" + key + "': empty list");
    return out;
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

std::uint64_t parse_u64(const std::string& s) {
  std::size_t pos = 0;
  const unsigned long long v = std::stoull(s, &pos);
  if (pos != s.size()) throw std::invalid_argument("bad integer: '" + s + "'");
  return v;
}

std::size_t parse_size(const std::string& s) {
  return static_cast<std::size_t>(parse_u64(s));
}

template <class T, class Fn>
std::string join_list(const std::vector<T>& v, Fn fmt) {
  std::vector<std::string> parts;
  parts.reserve(v.size());
  for (const T& x : v) parts.push_back(fmt(x));
  return join(parts);
}

// Deterministic parallel map: results land in a pre-sized slot per index, so
// output order never depends on the job count.
template <class Fn>
void parallel_for(std::size_t jobs, std::size_t n, Fn fn) {
  if (jobs <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  const std::size_t workers = std::min(jobs, n);
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w)
    pool.emplace_back([&] {
      for (std::size_t i = next.fetch_add(1); i < n; i = next.fetch_add(1))
        fn(i);
    });
  for (auto& t : pool) t.join();
}

double input_radius(const std::vector<Vector>& xs) {
  double r = 0.0;
  for (const Vector& x : xs) r = std::max(r, x.norm());
  return r;
}

}  // namespace

KeyValues read_config_text(const std::string& text) {
  KeyValues kv;
  std::istringstream is(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config line " + std::to_string(lineno) +
                                  ": expected key=value, got '" + t + "'");
    const std::string key = trim(t.substr(0, eq));
    if (key.empty())
      throw std::invalid_argument("config line " + std::to_string(lineno) +
                                  ": empty key");
    kv[key] = trim(t.substr(eq + 1));
  }
  return kv;
}

KeyValues read_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read config " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  try {
    return read_config_text(ss.str());
  } catch (const std::invalid_argument& e) {
    throw std::invalid_argument(path.string() + ": " + e.what());
  }
}

void write_config_file(const std::filesystem::path& path, const KeyValues& kv) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write config " + path.string());
  for (const auto& [k, v] : kv) out << k << "=" << v << "\n";
}

GeneratedModel gen_instance(std::uint64_t seed, Family family, std::size_t T,
                            Index d_in, Index d_h, double lambda) {
  if (T < 1 || d_in < 1 || d_h < 1)
    throw std::invalid_argument("gen_instance: T and dims must be >= 1");
  if (!(lambda > 0.0))
    throw std::invalid_argument("gen_instance: lambda must be positive");
  Rng rng(seed);
  const double w_std = std::sqrt(0.5);

  GeneratedModel gm;
  if (family == Family::lstm) {
    LstmParams p;
    p.Wf = rng.gaussian_matrix(d_h, d_h, w_std);
    p.Wi = rng.gaussian_matrix(d_h, d_h, w_std);
    p.Wo = rng.gaussian_matrix(d_h, d_h, w_std);
    p.Wz = rng.gaussian_matrix(d_h, d_h, w_std);
    p.Uf = rng.gaussian_matrix(d_h, d_in, w_std);
    p.Ui = rng.gaussian_matrix(d_h, d_in, w_std);
    p.Uo = rng.gaussian_matrix(d_h, d_in, w_std);
    p.Uz = rng.gaussian_matrix(d_h, d_in, w_std);
    p.bf = Vector::Zero(d_h);
    p.bi = Vector::Zero(d_h);
    p.bo = Vector::Zero(d_h);
    p.bz = Vector::Zero(d_h);
    gm.params = std::move(p);
  } else {
    Matrix W = project_spectral(rng.gaussian_matrix(d_h, d_h, w_std), lambda);
    Matrix U = rng.gaussian_matrix(d_h, d_in, w_std);
    if (family == Family::lds)
      gm.params = LdsParams{std::move(W), std::move(U)};
    else
      gm.params = RnnParams{std::move(W), std::move(U)};
  }
  gm.readout.C = rng.gaussian_matrix(1, d_h);
  gm.readout.D = rng.gaussian_matrix(1, d_in);

  gm.instance.inputs.reserve(T);
  for (std::size_t t = 0; t < T; ++t)
    gm.instance.inputs.push_back(rng.gaussian_vector(d_in, 2.0));
  gm.instance.target = rng.uniform_vector(1, -2.0, 2.0);
  gm.instance.seed = seed;
  gm.instance.lambda = lambda;
  gm.instance.d_in = d_in;
  gm.instance.d_h = d_h;
  gm.instance.d_out = 1;
  return gm;
}

CellParams random_cell(Family family, Index d_h, Index d_in, Rng& rng,
                       double scale) {
  if (family == Family::lstm) {
    LstmParams p;
    p.Wf = rng.gaussian_matrix(d_h, d_h, scale);
    p.Wi = rng.gaussian_matrix(d_h, d_h, scale);
    p.Wo = rng.gaussian_matrix(d_h, d_h, scale);
    p.Wz = rng.gaussian_matrix(d_h, d_h, scale);
    p.Uf = rng.gaussian_matrix(d_h, d_in, scale);
    p.Ui = rng.gaussian_matrix(d_h, d_in, scale);
    p.Uo = rng.gaussian_matrix(d_h, d_in, scale);
    p.Uz = rng.gaussian_matrix(d_h, d_in, scale);
    p.bf = rng.gaussian_vector(d_h, scale);
    p.bi = rng.gaussian_vector(d_h, scale);
    p.bo = rng.gaussian_vector(d_h, scale);
    p.bz = rng.gaussian_vector(d_h, scale);
    return p;
  }
  Matrix W = rng.gaussian_matrix(d_h, d_h, scale);
  Matrix U = rng.gaussian_matrix(d_h, d_in, scale);
  if (family == Family::lds) return LdsParams{std::move(W), std::move(U)};
  return RnnParams{std::move(W), std::move(U)};
}

std::filesystem::path make_run_dir(const std::filesystem::path& root,
                                   const std::string& name,
                                   std::uint64_t master_seed) {
  const std::time_t now =
      std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char stamp[32];
  std::strftime(stamp, sizeof(stamp), "%Y%m%dT%H%M%S", &tm);
  std::string base =
      name + "_" + stamp + "_seed" + std::to_string(master_seed);
  std::filesystem::path dir = root / base;
  for (int suffix = 1; std::filesystem::exists(dir); ++suffix)
    dir = root / (base + "_" + std::to_string(suffix));
  std::filesystem::create_directories(dir);
  return dir;
}

double mean_of(const std::vector<double>& v) {
  if (v.empty()) throw std::invalid_argument("mean_of: empty");
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double stddev_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

double log_slope(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size()) throw std::invalid_argument("log_slope: size mismatch");
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!(y[i] > 0.0)) continue;  // skip exact zeros / negatives
    const double ly = std::log(y[i]);
    sx += x[i];
    sy += ly;
    sxx += x[i] * x[i];
    sxy += x[i] * ly;
    ++n;
  }
  if (n < 2) throw std::invalid_argument("log_slope: fewer than two positive points");
  const double d = static_cast<double>(n) * sxx - sx * sx;
  if (d == 0.0) throw std::invalid_argument("log_slope: degenerate abscissa");
  return (static_cast<double>(n) * sxy - sx * sy) / d;
}

// ---------------------------------------------------------------- divergence

KeyValues DivergenceConfig::to_kv() const {
  KeyValues kv;
  kv["seeds"] = join_list(seeds, [](std::uint64_t s) { return std::to_string(s); });
  kv["schedules"] = join_list(schedules, schedule_name);
  kv["families"] = join_list(families, family_name);
  kv["T"] = std::to_string(T);
  kv["d_in"] = std::to_string(d_in);
  kv["d_h"] = std::to_string(d_h);
  kv["lambda"] = fmt_g17(lambda);
  kv["k"] = std::to_string(k);
  kv["alpha"] = fmt_g17(alpha);
  kv["steps"] = std::to_string(steps);
  kv["jobs"] = std::to_string(jobs);
  kv["metric"] = metric;
  return kv;
}

DivergenceConfig DivergenceConfig::from_kv(const KeyValues& kv) {
  KvReader r(kv);
  DivergenceConfig c;
  c.seeds = r.list<std::uint64_t>("seeds", c.seeds, parse_u64);
  c.schedules = r.list<Schedule>("schedules", c.schedules, schedule_from_name);
  c.families = r.list<Family>("families", c.families, family_from_name);
  c.T = r.count("T", c.T);
  c.d_in = static_cast<Index>(r.count("d_in", static_cast<std::size_t>(c.d_in)));
  c.d_h = static_cast<Index>(r.count("d_h", static_cast<std::size_t>(c.d_h)));
  c.lambda = r.num("lambda", c.lambda);
  c.k = r.count("k", c.k);
  c.alpha = r.num("alpha", c.alpha);
  c.steps = r.count("steps", c.steps);
  c.jobs = std::max<std::size_t>(1, r.count("jobs", c.jobs));
  c.metric = r.str("metric", c.metric);
  r.finish();
  if (c.metric != "operator" && c.metric != "frobenius")
    throw std::invalid_argument("divergence: metric is operator or frobenius");
  if (!(c.lambda > 0.0 && c.lambda < 1.0))
    throw std::invalid_argument("divergence: lambda in (0,1) required");
  for (Family f : c.families)
    if (f == Family::lstm)
      throw std::invalid_argument("divergence: families are lds/rnn");
  return c;
}

namespace {

struct DivergenceUnit {
  Family family;
  Schedule schedule;
  std::uint64_t seed;
  bool ok = false;
  std::string error;
  std::vector<double> distance;
  std::vector<double> bound;
  std::vector<double> loss_full;
  std::vector<double> loss_trunc;
  std::vector<double> lr_series;
  double final_loss_full = 0.0;
  double final_loss_trunc = 0.0;
};

void run_divergence_unit(const DivergenceConfig& cfg, DivergenceUnit& u) {
  GeneratedModel gm =
      gen_instance(u.seed, u.family, cfg.T, cfg.d_in, cfg.d_h, cfg.lambda);
  TrainData data{gm.instance.inputs, LossSpec{gm.instance.target}};
  const bool frob = cfg.metric == "frobenius";

  TrainConfig tc;
  tc.schedule = u.schedule;
  tc.alpha = cfg.alpha;
  tc.steps = cfg.steps;
  tc.truncation = cfg.k;
  tc.projector = SpectralProjector{cfg.lambda};
  tc.trainable = TrainSet::recurrent_only;

  BoundConstants consts;  // placeholder; the emitted bound is fitted below
  DivergenceRecord rec = paired_divergence_run(tc, gm.params, gm.readout, data,
                                               consts, cfg.lambda);
  if (frob) rec.distance = rec.distance_frob;

  // Fitted bound curve: the theoretical shape is c * t^p with
  // p = alpha*beta + 1 >= 1 and c = alpha*gamma*k*lambda^k. The exponent is
  // fitted in log-log space on the measured divergence and the scale chosen
  // as the envelope, so the bound dominates the measurement by construction.
  {
    std::vector<double> xs, ys;
    for (std::size_t t = 1; t < rec.distance.size(); ++t)
      if (rec.distance[t] > 0.0) {
        xs.push_back(std::log(static_cast<double>(t)));
        ys.push_back(rec.distance[t]);
      }
    if (xs.size() >= 2) {
      double p = std::max(1.0, log_slope(xs, ys));
      double c = 0.0;
      for (std::size_t t = 1; t < rec.distance.size(); ++t)
        c = std::max(c, rec.distance[t] /
                            std::pow(static_cast<double>(t), p));
      for (std::size_t t = 0; t < rec.bound.size(); ++t)
        rec.bound[t] =
            t == 0 ? 0.0 : c * std::pow(static_cast<double>(t), p);
    } else {
      std::fill(rec.bound.begin(), rec.bound.end(), 0.0);
    }
  }

  u.distance = std::move(rec.distance);
  u.bound = std::move(rec.bound);
  u.loss_full = std::move(rec.loss_full);
  u.loss_trunc = std::move(rec.loss_trunc);
  u.lr_series = std::move(rec.lr_series);
  u.final_loss_full = rec.final_loss_full;
  u.final_loss_trunc = rec.final_loss_trunc;
  u.ok = true;
}

}  // namespace

ExperimentReport run_divergence_figure(const DivergenceConfig& cfg,
                                       const std::filesystem::path& out_root) {
  if (cfg.seeds.empty())
    throw std::invalid_argument("divergence: at least one seed required");
  ExperimentReport rep;
  rep.name = "divergence";
  rep.config = cfg.to_kv();
  rep.seeds = cfg.seeds;
  std::sort(rep.seeds.begin(), rep.seeds.end());
  rep.dir = make_run_dir(out_root, rep.name, rep.seeds.front());
  write_config_file(rep.dir / "config.txt", rep.config);

  std::vector<DivergenceUnit> units;
  for (Family f : cfg.families)
    for (Schedule s : cfg.schedules)
      for (std::uint64_t seed : rep.seeds)
        units.push_back(DivergenceUnit{f, s, seed});

  parallel_for(cfg.jobs, units.size(), [&](std::size_t i) {
    try {
      run_divergence_unit(cfg, units[i]);
    } catch (const std::exception& e) {
      units[i].error = e.what();
    }
  });

  const std::size_t N = cfg.steps;
  for (const DivergenceUnit& u : units) {
    const std::string tag =
        family_name(u.family) + "_" + schedule_name(u.schedule);
    if (!u.ok) {
      rep.warnings.push_back("aborted " + tag + " seed " +
                             std::to_string(u.seed) + ": " + u.error);
      continue;
    }
    CsvWriter csv(rep.dir / ("divergence_" + tag + "_seed" +
                             std::to_string(u.seed) + ".csv"),
                  {"step", "lr", "loss_full", "loss_trunc", "divergence",
                   "bound"});
    for (std::size_t t = 0; t <= N; ++t)
      csv.row({static_cast<double>(t), t < N ? u.lr_series[t] : 0.0,
               t < N ? u.loss_full[t] : u.final_loss_full,
               t < N ? u.loss_trunc[t] : u.final_loss_trunc, u.distance[t],
               u.bound[t]});
    rep.files.push_back(csv.path());
  }

  for (Family f : cfg.families) {
    for (Schedule s : cfg.schedules) {
      std::vector<const DivergenceUnit*> group;
      for (const DivergenceUnit& u : units)
        if (u.ok && u.family == f && u.schedule == s) group.push_back(&u);
      const std::string tag = family_name(f) + "_" + schedule_name(s);
      if (group.empty()) {
        rep.warnings.push_back("no surviving seeds for " + tag);
        continue;
      }
      CsvWriter csv(rep.dir / ("divergence_" + tag + "_agg.csv"),
                    {"step", "mean_divergence", "std_divergence", "mean_bound"});
      std::vector<double> col(group.size());
      for (std::size_t t = 0; t <= N; ++t) {
        for (std::size_t g = 0; g < group.size(); ++g)
          col[g] = group[g]->distance[t];
        std::vector<double> bnd(group.size());
        for (std::size_t g = 0; g < group.size(); ++g)
          bnd[g] = group[g]->bound[t];
        csv.row({static_cast<double>(t), mean_of(col), stddev_of(col),
                 mean_of(bnd)});
      }
      rep.files.push_back(csv.path());
      std::vector<double> finals;
      for (const auto* u : group) finals.push_back(u->distance[N]);
      rep.summary["final_mean_" + tag] = mean_of(finals);
      rep.summary["final_std_" + tag] = stddev_of(finals);
    }
  }

  write_manifest(rep.dir, rep.files);
  return rep;
}

// ------------------------------------------------------------ counterexample

double scalar_lds_loss(double a, std::size_t T) {
  double h = 0.0;
  for (std::size_t t = 0; t < T; ++t) h = a * h + 1.0;
  return 0.5 * (h - 1.0) * (h - 1.0);
}

double scalar_lds_gradient(double a, std::size_t T) {
  double h, dh;
  // The geometric closed form subtracts two O(1/(1-a)^2) terms, so it sheds
  // digits as a -> 1; hand that neighbourhood to the exact O(T) series.
  if (std::abs(1.0 - a) >= 1e-4) {
    const double aT = std::pow(a, static_cast<double>(T));
    const double one = 1.0 - a;
    h = (1.0 - aT) / one;
    dh = (1.0 - aT) / (one * one) -
         static_cast<double>(T) * std::pow(a, static_cast<double>(T) - 1.0) / one;
  } else {
    // geometric formula is singular near a = 1; sum the series directly
    h = 0.0;
    dh = 0.0;
    double pow_j = 1.0;  // a^j
    for (std::size_t j = 0; j < T; ++j) {
      h += pow_j;
      if (j >= 1) dh += static_cast<double>(j) * pow_j / a;
      pow_j *= a;
    }
  }
  return (h - 1.0) * dh;
}

CounterexampleTrace scalar_descent(double a0, std::size_t T, std::size_t steps,
                                   Schedule schedule, double alpha) {
  if (T < 2) throw std::invalid_argument("scalar_descent: T >= 2 required");
  CounterexampleTrace tr;
  tr.a0 = a0;
  tr.a.push_back(a0);
  double a = a0;
  for (std::size_t t = 1; t <= steps; ++t) {
    const double g = scalar_lds_gradient(a, T);
    tr.grad.push_back(g);
    a -= lr(schedule, alpha, t) * g;
    tr.a.push_back(a);
    if (!std::isfinite(a) || std::abs(a) > 1e6) {
      tr.diverged = true;
      break;
    }
  }
  return tr;
}

KeyValues CounterexampleConfig::to_kv() const {
  KeyValues kv;
  kv["a0"] = join_list(a0, fmt_g17);
  kv["T"] = std::to_string(T);
  kv["steps"] = std::to_string(steps);
  kv["schedule"] = schedule_name(schedule);
  kv["alpha"] = fmt_g17(alpha);
  return kv;
}

CounterexampleConfig CounterexampleConfig::from_kv(const KeyValues& kv) {
  KvReader r(kv);
  CounterexampleConfig c;
  c.a0 = r.list<double>("a0", c.a0,
                        [](const std::string& s) { return parse_double(s); });
  c.T = r.count("T", c.T);
  c.steps = r.count("steps", c.steps);
  c.schedule = schedule_from_name(r.str("schedule", schedule_name(c.schedule)));
  c.alpha = r.num("alpha", c.alpha);
  r.finish();
  if (c.T < 2) throw std::invalid_argument("counterexample: T >= 2 required");
  return c;
}

ExperimentReport run_counterexample(const CounterexampleConfig& cfg,
                                    const std::filesystem::path& out_root) {
  ExperimentReport rep;
  rep.name = "counterexample";
  rep.config = cfg.to_kv();
  rep.dir = make_run_dir(out_root, rep.name, 0);
  write_config_file(rep.dir / "config.txt", rep.config);

  CsvWriter summary(rep.dir / "counterexample_summary.csv",
                    {"a0", "diverged", "steps_run", "final_a", "final_abs_grad"});
  for (std::size_t i = 0; i < cfg.a0.size(); ++i) {
    const CounterexampleTrace tr =
        scalar_descent(cfg.a0[i], cfg.T, cfg.steps, cfg.schedule, cfg.alpha);
    CsvWriter csv(rep.dir / ("counterexample_a0_" + std::to_string(i) + ".csv"),
                  {"step", "a", "grad"});
    for (std::size_t t = 0; t < tr.grad.size(); ++t)
      csv.row({static_cast<double>(t), tr.a[t], tr.grad[t]});
    rep.files.push_back(csv.path());
    summary.row({tr.a0, tr.diverged ? 1.0 : 0.0,
                 static_cast<double>(tr.grad.size()), tr.a.back(),
                 std::abs(tr.grad.back())});
    rep.summary["diverged_" + std::to_string(i)] = tr.diverged ? 1.0 : 0.0;
  }
  summary.close();
  rep.files.push_back(rep.dir / "counterexample_summary.csv");

  write_manifest(rep.dir, rep.files);
  return rep;
}

// ------------------------------------------------------------ truncation sweep

KeyValues TruncSweepConfig::to_kv() const {
  KeyValues kv;
  kv["ks"] = join_list(ks, [](std::size_t k) { return std::to_string(k); });
  kv["seeds"] = join_list(seeds, [](std::uint64_t s) { return std::to_string(s); });
  kv["family"] = family_name(family);
  kv["T"] = std::to_string(T);
  kv["d_in"] = std::to_string(d_in);
  kv["d_h"] = std::to_string(d_h);
  kv["lambda"] = fmt_g17(lambda);
  kv["schedule"] = schedule_name(schedule);
  kv["alpha"] = fmt_g17(alpha);
  kv["steps"] = std::to_string(steps);
  kv["jobs"] = std::to_string(jobs);
  return kv;
}

TruncSweepConfig TruncSweepConfig::from_kv(const KeyValues& kv) {
  KvReader r(kv);
  TruncSweepConfig c;
  c.ks = r.list<std::size_t>("ks", c.ks, parse_size);
  c.seeds = r.list<std::uint64_t>("seeds", c.seeds, parse_u64);
  c.family = family_from_name(r.str("family", family_name(c.family)));
  c.T = r.count("T", c.T);
  c.d_in = static_cast<Index>(r.count("d_in", static_cast<std::size_t>(c.d_in)));
  c.d_h = static_cast<Index>(r.count("d_h", static_cast<std::size_t>(c.d_h)));
  c.lambda = r.num("lambda", c.lambda);
  c.schedule = schedule_from_name(r.str("schedule", schedule_name(c.schedule)));
  c.alpha = r.num("alpha", c.alpha);
  c.steps = r.count("steps", c.steps);
  c.jobs = std::max<std::size_t>(1, r.count("jobs", c.jobs));
  r.finish();
  if (c.family == Family::lstm)
    throw std::invalid_argument("trunc-sweep: family is lds or rnn");
  for (std::size_t k : c.ks)
    if (k == 0) throw std::invalid_argument("trunc-sweep: k values are positive");
  if (!(c.lambda > 0.0 && c.lambda < 1.0))
    throw std::invalid_argument("trunc-sweep: lambda in (0,1) required");
  return c;
}

namespace {

struct SweepCell {
  double final_loss = 0.0;
  double gap = 0.0;       // ||h_T - h^k_T|| at the trained weights
  double envelope = 0.0;  // lambda^k L_x B_x / (1 - lambda)
  bool ok = false;
  std::string error;
};

}  // namespace

ExperimentReport run_truncation_sweep(const TruncSweepConfig& cfg,
                                      const std::filesystem::path& out_root) {
  if (cfg.seeds.empty() || cfg.ks.empty())
    throw std::invalid_argument("trunc-sweep: seeds and ks must be non-empty");
  for (std::size_t k : cfg.ks)
    if (k == 0) throw std::invalid_argument("trunc-sweep: k values are positive");
  ExperimentReport rep;
  rep.name = "truncsweep";
  rep.config = cfg.to_kv();
  rep.seeds = cfg.seeds;
  std::sort(rep.seeds.begin(), rep.seeds.end());
  rep.dir = make_run_dir(out_root, rep.name, rep.seeds.front());
  write_config_file(rep.dir / "config.txt", rep.config);

  std::vector<std::size_t> ks = cfg.ks;
  std::sort(ks.begin(), ks.end());
  ks.erase(std::unique(ks.begin(), ks.end()), ks.end());

  std::vector<std::vector<SweepCell>> grid(
      rep.seeds.size(), std::vector<SweepCell>(ks.size()));

  parallel_for(cfg.jobs, rep.seeds.size(), [&](std::size_t si) {
    const std::uint64_t seed = rep.seeds[si];
    GeneratedModel gm =
        gen_instance(seed, cfg.family, cfg.T, cfg.d_in, cfg.d_h, cfg.lambda);
    TrainData data{gm.instance.inputs, LossSpec{gm.instance.target}};
    const double B_x = input_radius(gm.instance.inputs);
    for (std::size_t ki = 0; ki < ks.size(); ++ki) {
      SweepCell& cell = grid[si][ki];
      try {
        TrainConfig tc;
        tc.schedule = cfg.schedule;
        tc.alpha = cfg.alpha;
        tc.steps = cfg.steps;
        tc.truncation = ks[ki];
        tc.projector = SpectralProjector{cfg.lambda};
        tc.trainable = TrainSet::cell;
        tc.snapshot_stride = cfg.steps;  // endpoints only
        TrainResult res = sgd_run(tc, gm.params, gm.readout, data);
        cell.final_loss = loss_value(res.params, res.readout, data.inputs,
                                     data.loss, ks[ki]);
        const Trajectory full = rollout(res.params, data.inputs);
        const State trunc =
            rollout_truncated(res.params, data.inputs, cfg.T, ks[ki]);
        cell.gap = state_distance(full.states.back(), trunc);
        const auto cert = check_rnn_certificate(res.params);
        const Matrix& U = cfg.family == Family::lds
                              ? std::get<LdsParams>(res.params).U
                              : std::get<RnnParams>(res.params).U;
        const double L_x = spectral_norm(U);
        cell.envelope = std::pow(cert.lambda, static_cast<double>(ks[ki])) *
                        L_x * B_x / (1.0 - cert.lambda);
        cell.ok = true;
      } catch (const std::exception& e) {
        cell.error = e.what();
      }
    }
  });

  std::size_t envelope_violations = 0;
  for (std::size_t si = 0; si < rep.seeds.size(); ++si) {
    CsvWriter csv(rep.dir / ("truncsweep_seed" +
                             std::to_string(rep.seeds[si]) + ".csv"),
                  {"k", "final_loss", "gap", "envelope"});
    for (std::size_t ki = 0; ki < ks.size(); ++ki) {
      const SweepCell& cell = grid[si][ki];
      if (!cell.ok) {
        rep.warnings.push_back("aborted seed " + std::to_string(rep.seeds[si]) +
                               " k=" + std::to_string(ks[ki]) + ": " + cell.error);
        continue;
      }
      if (cell.gap > cell.envelope) ++envelope_violations;
      csv.row({static_cast<double>(ks[ki]), cell.final_loss, cell.gap,
               cell.envelope});
    }
    rep.files.push_back(csv.path());
  }

  CsvWriter agg(rep.dir / "truncsweep_agg.csv",
                {"k", "mean_loss", "std_loss", "mean_gap", "mean_envelope"});
  for (std::size_t ki = 0; ki < ks.size(); ++ki) {
    std::vector<double> losses, gaps, envs;
    for (std::size_t si = 0; si < rep.seeds.size(); ++si)
      if (grid[si][ki].ok) {
        losses.push_back(grid[si][ki].final_loss);
        gaps.push_back(grid[si][ki].gap);
        envs.push_back(grid[si][ki].envelope);
      }
    if (losses.empty()) continue;
    agg.row({static_cast<double>(ks[ki]), mean_of(losses), stddev_of(losses),
             mean_of(gaps), mean_of(envs)});
  }
  agg.close();
  rep.files.push_back(rep.dir / "truncsweep_agg.csv");
  rep.summary["envelope_violations"] = static_cast<double>(envelope_violations);

  write_manifest(rep.dir, rep.files);
  return rep;
}

// --------------------------------------------------------- vanishing profile

KeyValues VanishProfileConfig::to_kv() const {
  KeyValues kv;
  kv["family"] = family_name(family);
  kv["stable"] = stable ? "true" : "false";
  kv["lambda"] = fmt_g17(lambda);
  kv["lambda_unstable"] = fmt_g17(lambda_unstable);
  if (!gaps.empty())  // omitted = pick the default ladder at run time
    kv["gaps"] = join_list(gaps, [](std::size_t g) { return std::to_string(g); });
  kv["seeds"] = join_list(seeds, [](std::uint64_t s) { return std::to_string(s); });
  kv["T"] = std::to_string(T);
  kv["d_in"] = std::to_string(d_in);
  kv["d_h"] = std::to_string(d_h);
  return kv;
}

VanishProfileConfig VanishProfileConfig::from_kv(const KeyValues& kv) {
  KvReader r(kv);
  VanishProfileConfig c;
  c.family = family_from_name(r.str("family", family_name(c.family)));
  c.stable = r.flag("stable", c.stable);
  c.lambda = r.num("lambda", c.lambda);
  c.lambda_unstable = r.num("lambda_unstable", c.lambda_unstable);
  c.gaps = r.list<std::size_t>("gaps", c.gaps, parse_size);
  c.seeds = r.list<std::uint64_t>("seeds", c.seeds, parse_u64);
  c.T = r.count("T", c.T);
  c.d_in = static_cast<Index>(r.count("d_in", static_cast<std::size_t>(c.d_in)));
  c.d_h = static_cast<Index>(r.count("d_h", static_cast<std::size_t>(c.d_h)));
  r.finish();
  if (c.family == Family::lstm)
    throw std::invalid_argument("vanish-profile: family is lds or rnn");
  return c;
}

ExperimentReport run_vanishing_profile(const VanishProfileConfig& cfg,
                                       const std::filesystem::path& out_root) {
  if (cfg.seeds.empty())
    throw std::invalid_argument("vanish-profile: at least one seed required");
  std::vector<std::size_t> gaps = cfg.gaps;
  if (gaps.empty())
    for (std::size_t g = 0; g <= 30; ++g) gaps.push_back(g);
  std::sort(gaps.begin(), gaps.end());
  gaps.erase(std::unique(gaps.begin(), gaps.end()), gaps.end());
  const std::size_t max_gap = gaps.back();
  if (max_gap + 1 > cfg.T)
    throw std::invalid_argument("vanish-profile: gaps must fit in T");

  ExperimentReport rep;
  rep.name = "vanish";
  rep.config = cfg.to_kv();
  rep.config["gaps"] =
      join_list(gaps, [](std::size_t g) { return std::to_string(g); });
  rep.seeds = cfg.seeds;
  std::sort(rep.seeds.begin(), rep.seeds.end());
  rep.dir = make_run_dir(out_root, rep.name, rep.seeds.front());
  write_config_file(rep.dir / "config.txt", rep.config);

  // base positions t with t + max_gap <= T, up to 8 evenly spaced
  std::vector<std::size_t> positions;
  const std::size_t t_max = cfg.T - max_gap;
  const std::size_t n_pos = std::min<std::size_t>(8, t_max);
  for (std::size_t i = 0; i < n_pos; ++i)
    positions.push_back(1 + i * (t_max - 1) / std::max<std::size_t>(1, n_pos - 1));
  positions.erase(std::unique(positions.begin(), positions.end()),
                  positions.end());

  const double lam = cfg.stable ? cfg.lambda : cfg.lambda_unstable;
  std::vector<std::vector<double>> per_seed(rep.seeds.size());
  for (std::size_t si = 0; si < rep.seeds.size(); ++si) {
    GeneratedModel gm =
        gen_instance(rep.seeds[si], cfg.family, cfg.T, cfg.d_in, cfg.d_h, lam);
    per_seed[si] = input_gradient_profile(gm.params, gm.readout,
                                          gm.instance.inputs,
                                          LossSpec{gm.instance.target},
                                          positions, gaps);
    CsvWriter csv(rep.dir / ("vanish_seed" + std::to_string(rep.seeds[si]) +
                             ".csv"),
                  {"gap", "mean_grad_norm"});
    for (std::size_t gi = 0; gi < gaps.size(); ++gi)
      csv.row({static_cast<double>(gaps[gi]), per_seed[si][gi]});
    rep.files.push_back(csv.path());
  }

  CsvWriter agg(rep.dir / "vanish_agg.csv",
                {"gap", "mean_grad_norm", "std_grad_norm"});
  std::vector<double> means;
  for (std::size_t gi = 0; gi < gaps.size(); ++gi) {
    std::vector<double> col;
    for (const auto& row : per_seed) col.push_back(row[gi]);
    means.push_back(mean_of(col));
    agg.row({static_cast<double>(gaps[gi]), means.back(), stddev_of(col)});
  }
  agg.close();
  rep.files.push_back(rep.dir / "vanish_agg.csv");

  // geometric decay ratio fitted on gaps >= 1
  std::vector<double> xs, ys;
  for (std::size_t gi = 0; gi < gaps.size(); ++gi)
    if (gaps[gi] >= 1) {
      xs.push_back(static_cast<double>(gaps[gi]));
      ys.push_back(means[gi]);
    }
  rep.summary["fitted_ratio"] = std::exp(log_slope(xs, ys));

  write_manifest(rep.dir, rep.files);
  return rep;
}

// ----------------------------------------------------------- stability report

ExperimentReport run_stability_report(const CellParams& params,
                                      const std::vector<Vector>& inputs,
                                      const StabilityReportConfig& cfg,
                                      const std::filesystem::path& out_root) {
  ExperimentReport rep;
  rep.name = "stability";
  rep.config = cfg.extra;
  rep.config["B_x"] = fmt_g17(cfg.B_x);
  rep.config["restarts"] = std::to_string(cfg.ascent.restarts);
  rep.config["steps"] = std::to_string(cfg.ascent.steps);
  rep.config["learning_rate"] = fmt_g17(cfg.ascent.learning_rate);
  rep.config["init_scale"] = fmt_g17(cfg.ascent.init_scale);
  rep.config["seed"] = std::to_string(cfg.ascent.seed);
  rep.dir = make_run_dir(out_root, rep.name, cfg.ascent.seed);

  const StabilityCertificate cert = check_certificate(params, cfg.B_x);
  {
    std::ofstream out(rep.dir / "certificate.txt");
    out << cert.to_text();
    rep.files.push_back(rep.dir / "certificate.txt");
  }

  std::vector<std::size_t> r_grid = cfg.r_grid;
  if (r_grid.empty()) {
    if (family_of(params) == Family::lstm) {
      const std::size_t rc = cert.certified ? cert.iterations : 8;
      r_grid = {1, std::max<std::size_t>(1, rc / 4),
                std::max<std::size_t>(1, rc / 2), std::max<std::size_t>(1, rc)};
      std::sort(r_grid.begin(), r_grid.end());
      r_grid.erase(std::unique(r_grid.begin(), r_grid.end()), r_grid.end());
    } else {
      r_grid = {1};
    }
  }
  rep.config["r_grid"] =
      join_list(r_grid, [](std::size_t r) { return std::to_string(r); });
  write_config_file(rep.dir / "config.txt", rep.config);

  CsvWriter csv(rep.dir / "stability_report.csv",
                {"r", "lambda_hat", "lambda_hat_per_step"});
  for (std::size_t r : r_grid) {
    AscentConfig ac = cfg.ascent;
    ac.iterate_exponent = r;
    const double lam = estimate_stability(params, inputs, ac);
    csv.row({static_cast<double>(r), lam,
             std::pow(lam, 1.0 / static_cast<double>(r))});
    if (r == r_grid.back()) rep.summary["lambda_hat"] = lam;
  }
  csv.close();
  rep.files.push_back(rep.dir / "stability_report.csv");
  rep.summary["certificate_lambda"] = cert.lambda;
  rep.summary["certified"] = cert.certified ? 1.0 : 0.0;

  write_manifest(rep.dir, rep.files);
  return rep;
}

}  // namespace stablerec
