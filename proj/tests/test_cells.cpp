#include "stablerec/cells.hpp"
#include "test_util.hpp"

#include <doctest.h>

#include <cmath>
#include <vector>

using namespace stablerec;

namespace {

std::vector<Vector> constant_inputs(std::size_t T, Index d, double value) {
  return std::vector<Vector>(T, Vector::Constant(d, value));
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Scalar-loop LSTM step, written without any Eigen products so it cannot
// share a bug with the library implementation.
State lstm_step_oracle(const LstmParams& q, const State& s, const Vector& x) {
  const Index n = q.Wf.rows();
  State out;
  out.h = Vector::Zero(n);
  out.c = Vector::Zero(n);
  for (Index r = 0; r < n; ++r) {
    double af = q.bf[r], ai = q.bi[r], ao = q.bo[r], az = q.bz[r];
    for (Index c = 0; c < n; ++c) {
      af += q.Wf(r, c) * s.h[c];
      ai += q.Wi(r, c) * s.h[c];
      ao += q.Wo(r, c) * s.h[c];
      az += q.Wz(r, c) * s.h[c];
    }
    for (Index c = 0; c < x.size(); ++c) {
      af += q.Uf(r, c) * x[c];
      ai += q.Ui(r, c) * x[c];
      ao += q.Uo(r, c) * x[c];
      az += q.Uz(r, c) * x[c];
    }
    const double f = sigmoid(af), i = sigmoid(ai), o = sigmoid(ao);
    const double z = std::tanh(az);
    out.c[r] = i * z + f * s.c[r];
    out.h[r] = o * std::tanh(out.c[r]);
  }
  return out;
}

LstmParams random_lstm(Index d_h, Index d_in, Rng& rng) {
  LstmParams q;
  q.Wf = rng.gaussian_matrix(d_h, d_h);
  q.Wi = rng.gaussian_matrix(d_h, d_h);
  q.Wo = rng.gaussian_matrix(d_h, d_h);
  q.Wz = rng.gaussian_matrix(d_h, d_h);
  q.Uf = rng.gaussian_matrix(d_h, d_in);
  q.Ui = rng.gaussian_matrix(d_h, d_in);
  q.Uo = rng.gaussian_matrix(d_h, d_in);
  q.Uz = rng.gaussian_matrix(d_h, d_in);
  q.bf = rng.gaussian_vector(d_h);
  q.bi = rng.gaussian_vector(d_h);
  q.bo = rng.gaussian_vector(d_h);
  q.bz = rng.gaussian_vector(d_h);
  return q;
}

}  // namespace

TEST_CASE("scalar linear rollout matches the hand-computed recursion") {
  // h_t = 0.5 h_{t-1} + x_t with x = 1: 1, 1.5, 1.75
  LdsParams p;
  p.W = Matrix::Constant(1, 1, 0.5);
  p.U = Matrix::Constant(1, 1, 1.0);
  const Trajectory traj = rollout(CellParams(p), constant_inputs(3, 1, 1.0));
  REQUIRE(traj.states.size() == 4);
  CHECK(traj.states[0].h[0] == 0.0);
  CHECK(traj.states[1].h[0] == doctest::Approx(1.0));
  CHECK(traj.states[2].h[0] == doctest::Approx(1.5));
  CHECK(traj.states[3].h[0] == doctest::Approx(1.75));
}

TEST_CASE("tanh cell equals tanh of the linear pre-activation") {
  Rng rng(3);
  RnnParams p{rng.gaussian_matrix(4, 4), rng.gaussian_matrix(4, 3)};
  LdsParams lin{p.W, p.U};
  State s;
  s.h = rng.gaussian_vector(4);
  const Vector x = rng.gaussian_vector(3);
  const State a = step(CellParams(p), s, x);
  const State b = step(CellParams(lin), s, x);
  CHECK((a.h - b.h.array().tanh().matrix()).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("lstm step matches a scalar-loop reference implementation") {
  Rng rng(11);
  for (int trial = 0; trial < 10; ++trial) {
    const Index d_h = 1 + static_cast<Index>(rng.next_u64() % 6);
    const Index d_in = 1 + static_cast<Index>(rng.next_u64() % 4);
    const LstmParams q = random_lstm(d_h, d_in, rng);
    State s;
    s.h = rng.gaussian_vector(d_h);
    s.c = rng.gaussian_vector(d_h);
    const Vector x = rng.gaussian_vector(d_in);
    const State got = step(CellParams(q), s, x);
    const State want = lstm_step_oracle(q, s, x);
    CHECK((got.h - want.h).cwiseAbs().maxCoeff() < 1e-14);
    CHECK((got.c - want.c).cwiseAbs().maxCoeff() < 1e-14);
  }
}

TEST_CASE("flatten and unflatten round trip bitwise for every family") {
  Rng rng(5);
  std::vector<CellParams> models;
  models.emplace_back(LdsParams{rng.gaussian_matrix(3, 3), rng.gaussian_matrix(3, 2)});
  models.emplace_back(RnnParams{rng.gaussian_matrix(4, 4), rng.gaussian_matrix(4, 3)});
  models.emplace_back(random_lstm(3, 2, rng));
  for (const CellParams& p : models) {
    const Vector flat = flatten(p);
    CHECK(flat.size() == param_count(p));
    const CellParams back = unflatten_like(p, flat);
    CHECK((flatten(back) - flat).cwiseAbs().maxCoeff() == 0.0);
    CHECK(param_distance(p, back) == 0.0);
  }
  CHECK_THROWS_AS(unflatten_like(models[0], Vector::Zero(1)),
                  std::invalid_argument);
}

TEST_CASE("axpy accumulates a scaled gradient into the parameters") {
  Rng rng(9);
  CellParams p = RnnParams{rng.gaussian_matrix(3, 3), rng.gaussian_matrix(3, 2)};
  const CellParams g = RnnParams{rng.gaussian_matrix(3, 3), rng.gaussian_matrix(3, 2)};
  const Vector want = flatten(p) - 0.25 * flatten(g);
  axpy(-0.25, g, p);
  CHECK((flatten(p) - want).cwiseAbs().maxCoeff() == 0.0);
  CellParams other = LdsParams{Matrix::Zero(3, 3), Matrix::Zero(3, 2)};
  CHECK_THROWS_AS(axpy(1.0, g, other), std::invalid_argument);
}

TEST_CASE("truncated rollout restarts from a zero state k steps back") {
  Rng rng(17);
  const CellParams p =
      RnnParams{0.3 * rng.gaussian_matrix(4, 4), rng.gaussian_matrix(4, 2)};
  std::vector<Vector> inputs;
  for (int t = 0; t < 12; ++t) inputs.push_back(rng.gaussian_vector(2));
  const Trajectory full = rollout(p, inputs);

  SUBCASE("window covering the whole history equals the full state") {
    for (std::size_t k : {12u, 13u, 100u}) {
      const State s = rollout_truncated(p, inputs, 12, k);
      CHECK(state_distance(s, full.states[12]) == 0.0);
    }
  }
  SUBCASE("zero-length window gives the zero state") {
    const State s = rollout_truncated(p, inputs, 12, 0);
    CHECK(s.h.cwiseAbs().maxCoeff() == 0.0);
  }
  SUBCASE("window of length k replays exactly the last k inputs") {
    const State s = rollout_truncated(p, inputs, 10, 3);
    State ref = zero_state(p);
    for (std::size_t i = 7; i < 10; ++i) ref = step(p, ref, inputs[i]);
    CHECK(state_distance(s, ref) == 0.0);
  }
  SUBCASE("step index beyond the sequence is rejected") {
    CHECK_THROWS_AS(rollout_truncated(p, inputs, 13, 2), std::invalid_argument);
  }
}

TEST_CASE("readout applies the optional input term") {
  ReadoutParams r;
  r.C = Matrix::Constant(1, 2, 1.0);
  State s;
  s.h = Vector::Constant(2, 3.0);
  const Vector x = Vector::Constant(1, 5.0);
  CHECK(predict(r, s, x)[0] == doctest::Approx(6.0));
  r.D = Matrix::Constant(1, 1, 2.0);
  CHECK(predict(r, s, x)[0] == doctest::Approx(16.0));
}

TEST_CASE("family names round trip and bad names are rejected") {
  for (Family f : {Family::lds, Family::rnn, Family::lstm})
    CHECK(family_from_name(family_name(f)) == f);
  CHECK_THROWS_AS(family_from_name("gru"), std::invalid_argument);
}

TEST_CASE("recurrent distance covers hidden-to-hidden blocks only") {
  Rng rng(23);
  LdsParams a{rng.gaussian_matrix(3, 3), rng.gaussian_matrix(3, 2)};
  LdsParams b = a;
  b.U += Matrix::Constant(3, 2, 1.0);  // input map differs, W identical
  CHECK(recurrent_distance(CellParams(a), CellParams(b)) == 0.0);
  b.W(0, 0) += 2.0;
  CHECK(recurrent_distance(CellParams(a), CellParams(b)) == doctest::Approx(2.0));
}
