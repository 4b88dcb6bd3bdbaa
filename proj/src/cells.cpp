#include "stablerec/cells.hpp"

#include <cmath>
#include <stdexcept>

namespace stablerec {

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

Vector sigmoid(const Vector& v) { return v.unaryExpr([](double x) { return sigmoid(x); }); }

void check_dims(const CellParams& p, const State& s, const Vector& x) {
  if (s.h.size() != state_dim(p))
    throw std::invalid_argument("step: state dimension mismatch");
  if (x.size() != input_dim(p))
    throw std::invalid_argument("step: input dimension mismatch");
  if (family_of(p) == Family::lstm && s.c.size() != state_dim(p))
    throw std::invalid_argument("step: LSTM state requires a cell vector");
}

}  // namespace

std::string family_name(Family f) {
  switch (f) {
    case Family::lds: return "lds";
    case Family::rnn: return "rnn";
    case Family::lstm: return "lstm";
  }
  return "?";
}

Family family_from_name(const std::string& name) {
  if (name == "lds") return Family::lds;
  if (name == "rnn") return Family::rnn;
  if (name == "lstm") return Family::lstm;
  throw std::invalid_argument("unknown model family: " + name);
}

Family family_of(const CellParams& p) {
  if (std::holds_alternative<LdsParams>(p)) return Family::lds;
  if (std::holds_alternative<RnnParams>(p)) return Family::rnn;
  return Family::lstm;
}

Index state_dim(const CellParams& p) {
  return std::visit([](const auto& q) -> Index {
    using T = std::decay_t<decltype(q)>;
    if constexpr (std::is_same_v<T, LstmParams>) return q.Wf.rows();
    else return q.W.rows();
  }, p);
}

Index input_dim(const CellParams& p) {
  return std::visit([](const auto& q) -> Index {
    using T = std::decay_t<decltype(q)>;
    if constexpr (std::is_same_v<T, LstmParams>) return q.Uf.cols();
    else return q.U.cols();
  }, p);
}

Index param_count(const CellParams& p) {
  return std::visit([](const auto& q) -> Index {
    using T = std::decay_t<decltype(q)>;
    if constexpr (std::is_same_v<T, LstmParams>) {
      return 4 * (q.Wf.size() + q.Uf.size() + q.bf.size());
    } else {
      return q.W.size() + q.U.size();
    }
  }, p);
}

namespace {

template <typename Fn>
void for_each_block(const CellParams& p, Fn&& fn) {
  std::visit([&](const auto& q) {
    using T = std::decay_t<decltype(q)>;
    if constexpr (std::is_same_v<T, LstmParams>) {
      fn(q.Wf); fn(q.Wi); fn(q.Wo); fn(q.Wz);
      fn(q.Uf); fn(q.Ui); fn(q.Uo); fn(q.Uz);
      fn(q.bf); fn(q.bi); fn(q.bo); fn(q.bz);
    } else {
      fn(q.W); fn(q.U);
    }
  }, p);
}

template <typename Fn>
void for_each_block(CellParams& p, Fn&& fn) {
  std::visit([&](auto& q) {
    using T = std::decay_t<decltype(q)>;
    if constexpr (std::is_same_v<T, LstmParams>) {
      fn(q.Wf); fn(q.Wi); fn(q.Wo); fn(q.Wz);
      fn(q.Uf); fn(q.Ui); fn(q.Uo); fn(q.Uz);
      fn(q.bf); fn(q.bi); fn(q.bo); fn(q.bz);
    } else {
      fn(q.W); fn(q.U);
    }
  }, p);
}

}  // namespace

Vector flatten(const CellParams& p) {
  Vector out(param_count(p));
  Index at = 0;
  for_each_block(p, [&](const auto& block) {
    out.segment(at, block.size()) =
        Eigen::Map<const Vector>(block.data(), block.size());
    at += block.size();
  });
  return out;
}

CellParams unflatten_like(const CellParams& shape, const Vector& flat) {
  if (flat.size() != param_count(shape))
    throw std::invalid_argument("unflatten_like: size mismatch");
  CellParams out = shape;
  Index at = 0;
  for_each_block(out, [&](auto& block) {
    Eigen::Map<Vector>(block.data(), block.size()) =
        flat.segment(at, block.size());
    at += block.size();
  });
  return out;
}

void axpy(double a, const CellParams& g, CellParams& p) {
  if (family_of(g) != family_of(p))
    throw std::invalid_argument("axpy: family mismatch");
  Index at = 0;
  const Vector gf = flatten(g);
  for_each_block(p, [&](auto& block) {
    Eigen::Map<Vector>(block.data(), block.size()) +=
        a * gf.segment(at, block.size());
    at += block.size();
  });
}

double param_distance(const CellParams& a, const CellParams& b) {
  return (flatten(a) - flatten(b)).norm();
}

double recurrent_distance(const CellParams& a, const CellParams& b) {
  if (family_of(a) != family_of(b))
    throw std::invalid_argument("recurrent_distance: family mismatch");
  if (const auto* la = std::get_if<LstmParams>(&a)) {
    const auto& lb = std::get<LstmParams>(b);
    double s = (la->Wf - lb.Wf).squaredNorm() + (la->Wi - lb.Wi).squaredNorm() +
               (la->Wo - lb.Wo).squaredNorm() + (la->Wz - lb.Wz).squaredNorm();
    return std::sqrt(s);
  }
  const Matrix& Wa = std::holds_alternative<LdsParams>(a)
                         ? std::get<LdsParams>(a).W
                         : std::get<RnnParams>(a).W;
  const Matrix& Wb = std::holds_alternative<LdsParams>(b)
                         ? std::get<LdsParams>(b).W
                         : std::get<RnnParams>(b).W;
  return (Wa - Wb).norm();
}

State zero_state(const CellParams& p) {
  State s;
  s.h = Vector::Zero(state_dim(p));
  if (family_of(p) == Family::lstm) s.c = Vector::Zero(state_dim(p));
  return s;
}

double state_distance(const State& a, const State& b) {
  double s = (a.h - b.h).squaredNorm();
  if (a.c.size() > 0 || b.c.size() > 0) s += (a.c - b.c).squaredNorm();
  return std::sqrt(s);
}

double state_distance_inf(const State& a, const State& b) {
  double m = (a.h - b.h).cwiseAbs().maxCoeff();
  if (a.c.size() > 0 || b.c.size() > 0)
    m = std::max(m, (a.c - b.c).cwiseAbs().maxCoeff());
  return m;
}

State step(const CellParams& p, const State& s, const Vector& x,
           StepCache* cache) {
  check_dims(p, s, x);
  State out;
  if (const auto* lds = std::get_if<LdsParams>(&p)) {
    Vector pre = lds->W * s.h + lds->U * x;
    out.h = pre;
    if (cache) cache->pre = std::move(pre);
  } else if (const auto* rnn = std::get_if<RnnParams>(&p)) {
    Vector pre = rnn->W * s.h + rnn->U * x;
    out.h = pre.array().tanh();
    if (cache) {
      cache->pre = std::move(pre);
      cache->act = out.h;
    }
  } else {
    const auto& q = std::get<LstmParams>(p);
    Vector f = sigmoid(q.Wf * s.h + q.Uf * x + q.bf);
    Vector i = sigmoid(q.Wi * s.h + q.Ui * x + q.bi);
    Vector o = sigmoid(q.Wo * s.h + q.Uo * x + q.bo);
    Vector z = (q.Wz * s.h + q.Uz * x + q.bz).array().tanh();
    Vector c = i.cwiseProduct(z) + f.cwiseProduct(s.c);
    Vector tc = c.array().tanh();
    out.c = c;
    out.h = o.cwiseProduct(tc);
    if (cache) {
      cache->f = std::move(f);
      cache->i = std::move(i);
      cache->o = std::move(o);
      cache->z = std::move(z);
      cache->c_prev = s.c;
      cache->c = std::move(c);
      cache->tanh_c = std::move(tc);
    }
  }
  return out;
}

Trajectory rollout(const CellParams& p, const std::vector<Vector>& inputs,
                   const State& init) {
  Trajectory traj;
  traj.inputs = inputs;
  traj.states.reserve(inputs.size() + 1);
  traj.caches.resize(inputs.size());
  traj.states.push_back(init);
  for (std::size_t t = 0; t < inputs.size(); ++t)
    traj.states.push_back(step(p, traj.states.back(), inputs[t], &traj.caches[t]));
  return traj;
}

Trajectory rollout(const CellParams& p, const std::vector<Vector>& inputs) {
  return rollout(p, inputs, zero_state(p));
}

State rollout_truncated(const CellParams& p, const std::vector<Vector>& inputs,
                        std::size_t t, std::size_t k) {
  if (t > inputs.size())
    throw std::invalid_argument("rollout_truncated: step index beyond inputs");
  const std::size_t start = k >= t ? 0 : t - k;
  State s = zero_state(p);
  for (std::size_t i = start; i < t; ++i) s = step(p, s, inputs[i]);
  return s;
}

Vector predict(const ReadoutParams& r, const State& s, const Vector& x) {
  if (r.C.cols() != s.h.size())
    throw std::invalid_argument("predict: readout/state dimension mismatch");
  Vector y = r.C * s.h;
  if (r.has_input_term()) {
    if (r.D.cols() != x.size())
      throw std::invalid_argument("predict: readout/input dimension mismatch");
    y += r.D * x;
  }
  return y;
}

}  // namespace stablerec
