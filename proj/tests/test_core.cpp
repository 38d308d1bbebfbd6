#include <cmath>

#include "doctest.h"
#include "skad/errors.hpp"
#include "skad/ops.hpp"
#include "skad/optim.hpp"
#include "support.hpp"

using namespace skad;
using skad::test::gradcheck;
using skad::test::probe;
using skad::test::random_tensor;

TEST_CASE("tensor construction validates sizes") {
  Tensor t({2, 3}, 1.5);
  CHECK(t.size() == 6);
  CHECK(t.rank() == 2);
  CHECK(t[5] == 1.5);
  CHECK_THROWS_AS(Tensor({2, 2}, std::vector<double>{1, 2, 3}), DimensionError);
  CHECK_THROWS_AS(t.reshaped({4}), DimensionError);
  CHECK(t.reshaped({3, 2}).shape() == Shape{3, 2});
  CHECK_THROWS_AS(t.item(), DimensionError);
}

TEST_CASE("matmul hand cases") {
  Tape tape;
  Var i2 = tape.constant(Tensor::identity(2));
  Var m = tape.constant(Tensor({2, 2}, {1, 2, 3, 4}));
  CHECK(tape.value(matmul(tape, i2, m)) == tape.value(m));
  Var a = tape.constant(Tensor({1, 2}, {1, 2}));
  Var b = tape.constant(Tensor({2, 1}, {3, 4}));
  CHECK(tape.value(matmul(tape, a, b)).item() == 11.0);
  CHECK_THROWS_WITH_AS(matmul(tape, a, a), doctest::Contains("[1,2]"), DimensionError);
}

TEST_CASE("contractions on hand cases") {
  Tape tape;
  Var swap = tape.constant(Tensor({1, 2, 2}, {0, 1, 1, 0}));
  Var xs = tape.constant(Tensor({1, 2, 1}, {1, 2}));  // T=1,V=2,C=1
  CHECK(tape.value(contract_spatial(tape, swap, xs)).values() == std::vector<double>{2, 1});
  Var xt = tape.constant(Tensor({2, 1, 1}, {1, 3}));  // T=2,V=1,C=1
  CHECK(tape.value(contract_temporal(tape, swap, xt)).values() == std::vector<double>{3, 1});

  skad::test::Gen g(1);
  Var x = tape.constant(random_tensor({3, 4, 2}, g));
  CHECK(tape.value(contract_spatial(tape, tape.constant(Tensor::identity_stack(3, 4)), x)) == tape.value(x));
  CHECK(tape.value(contract_temporal(tape, tape.constant(Tensor::identity_stack(4, 3)), x)) == tape.value(x));
  CHECK_THROWS_AS(contract_spatial(tape, tape.constant(Tensor::identity_stack(2, 4)), x), DimensionError);
  CHECK_THROWS_AS(contract_temporal(tape, tape.constant(Tensor::identity_stack(4, 4)), x), DimensionError);
}

TEST_CASE("batched contractions equal per-sample contractions") {
  skad::test::Gen g(2);
  const Tensor as = random_tensor({3, 4, 4}, g), at = random_tensor({4, 3, 3}, g);
  const Tensor xb = random_tensor({5, 3, 4, 2}, g);
  Tape tape;
  const Tensor both = tape.value(contract_spatial(tape, tape.constant(as), contract_temporal(tape, tape.constant(at), tape.constant(xb))));
  for (std::size_t n = 0; n < 5; ++n) {
    Tensor xn({3, 4, 2});
    std::copy_n(xb.values().begin() + static_cast<long>(n * 24), 24, xn.values().begin());
    const Tensor one = tape.value(contract_spatial(tape, tape.constant(as), contract_temporal(tape, tape.constant(at), tape.constant(xn))));
    for (std::size_t k = 0; k < 24; ++k) CHECK(both[n * 24 + k] == doctest::Approx(one[k]).epsilon(1e-14));
  }
}

TEST_CASE("activations and the relu convention at zero") {
  Tape tape;
  Var x = tape.variable(Tensor({3}, {-1, 0, 2}));
  Var r = activation(tape, x, Activation::relu);
  CHECK(tape.value(r).values() == std::vector<double>{0, 0, 2});
  Var s = reshape(tape, matmul(tape, reshape(tape, r, {1, 3}), tape.constant(Tensor({3, 1}, 1.0))), {1});
  tape.backward(s);
  CHECK(tape.grad(x).values() == std::vector<double>{0, 0, 1});

  Tape t2;
  Var z = t2.variable(Tensor({1}, {0.0}));
  CHECK(t2.value(activation(t2, z, Activation::tanh)).item() == 0.0);
  Var h = t2.variable(Tensor({1}, {0.5}));
  t2.backward(activation(t2, h, Activation::tanh));
  CHECK(t2.grad(h).item() == doctest::Approx(0.786448).epsilon(1e-6));
  CHECK(t2.grad(h).item() == doctest::Approx(1.0 - std::tanh(0.5) * std::tanh(0.5)).epsilon(1e-15));
  CHECK_THROWS_AS(parse_activation("gelu"), ConfigError);
}

TEST_CASE("gradient checks of every tape operation") {
  skad::test::Gen g(3);
  for (int rep = 0; rep < 5; ++rep) {
    CAPTURE(rep);
    CHECK(gradcheck([](Tape& t, const auto& v) { return probe(t, matmul(t, v[0], v[1])); },
                    {random_tensor({3, 4}, g), random_tensor({4, 2}, g)}) < 1e-6);
    CHECK(gradcheck([](Tape& t, const auto& v) { return probe(t, channel_mix(t, v[0], v[1])); },
                    {random_tensor({2, 3, 4, 2}, g), random_tensor({2, 3}, g)}) < 1e-6);
    CHECK(gradcheck([](Tape& t, const auto& v) { return probe(t, add_bias(t, v[0], v[1])); },
                    {random_tensor({4, 3}, g), random_tensor({3}, g)}) < 1e-6);
    CHECK(gradcheck([](Tape& t, const auto& v) { return probe(t, contract_spatial(t, v[0], v[1])); },
                    {random_tensor({3, 4, 4}, g), random_tensor({3, 4, 2}, g)}) < 1e-6);
    CHECK(gradcheck([](Tape& t, const auto& v) { return probe(t, contract_temporal(t, v[0], v[1])); },
                    {random_tensor({3, 4, 4}, g), random_tensor({4, 3, 2}, g)}) < 1e-6);
    CHECK(gradcheck([](Tape& t, const auto& v) { return probe(t, contract_spatial(t, v[0], v[1])); },
                    {random_tensor({3, 4, 4}, g), random_tensor({2, 3, 4, 2}, g)}) < 1e-6);
    CHECK(gradcheck([](Tape& t, const auto& v) { return probe(t, contract_temporal(t, v[0], v[1])); },
                    {random_tensor({4, 3, 3}, g), random_tensor({2, 3, 4, 2}, g)}) < 1e-6);
    // keep inputs away from the relu kink
    Tensor x = random_tensor({3, 4}, g);
    for (double& e : x.values()) e += e > 0 ? 0.1 : -0.1;
    CHECK(gradcheck([](Tape& t, const auto& v) { return probe(t, activation(t, v[0], Activation::relu)); }, {x}) < 1e-6);
    CHECK(gradcheck([](Tape& t, const auto& v) { return probe(t, activation(t, v[0], Activation::tanh)); }, {x}) < 1e-6);
    CHECK(gradcheck([](Tape& t, const auto& v) { return probe(t, add(t, v[0], v[1])); },
                    {random_tensor({2, 3}, g), random_tensor({2, 3}, g)}) < 1e-6);
    CHECK(gradcheck([](Tape& t, const auto& v) { return probe(t, scale(t, v[0], -2.5)); }, {random_tensor({5}, g)}) < 1e-6);
    CHECK(gradcheck([](Tape& t, const auto& v) { return probe(t, mean_pool_nodes(t, v[0])); },
                    {random_tensor({2, 3, 4, 3}, g)}) < 1e-6);
    CHECK(gradcheck([](Tape& t, const auto& v) { return probe(t, broadcast_nodes(t, v[0], 3, 2)); },
                    {random_tensor({2, 4}, g)}) < 1e-6);
    CHECK(gradcheck([](Tape& t, const auto& v) { return mean(t, v[0]); }, {random_tensor({3, 2}, g)}) < 1e-6);
    CHECK(gradcheck([](Tape& t, const auto& v) { return sum_squares(t, v[0]); }, {random_tensor({3, 2}, g)}) < 1e-6);
    CHECK(gradcheck([](Tape& t, const auto& v) { return mse(t, v[0], v[1]); },
                    {random_tensor({2, 3, 2}, g), random_tensor({2, 3, 2}, g)}) < 1e-6);
    CHECK(gradcheck([](Tape& t, const auto& v) { return probe(t, row_mse(t, v[0], v[1])); },
                    {random_tensor({3, 2, 2}, g), random_tensor({3, 2, 2}, g)}) < 1e-6);
  }
}

TEST_CASE("a tensor feeding two consumers accumulates both gradients") {
  skad::test::Gen g(4);
  const Tensor a = random_tensor({3, 3}, g);
  Tape t1;
  Var x = t1.variable(a);
  t1.backward(sum_squares(t1, matmul(t1, x, x)));
  Tape t2;
  Var x1 = t2.variable(a);
  Var x2 = t2.variable(a);
  t2.backward(sum_squares(t2, matmul(t2, x1, x2)));
  Tensor expected = t2.grad(x1);
  expected += t2.grad(x2);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(t1.grad(x)[i] == doctest::Approx(expected[i]).epsilon(1e-14));
}

TEST_CASE("backward visits each recorded node once") {
  Tape tape;
  Var x = tape.variable(Tensor({2}, {1, 2}));
  Var y = scale(tape, x, 2.0);
  Var z = add(tape, y, y);
  Var loss = sum_squares(tape, z);
  CHECK(tape.backward(loss) == 3);
  CHECK_THROWS_AS(tape.backward(z), DimensionError);
}

TEST_CASE("batchnorm train mode normalizes and updates running stats") {
  skad::test::Gen g(5);
  const Tensor x = random_tensor({8, 3}, g, -3.0, 5.0);
  BatchNormBuffers buf(3);
  Tape tape;
  Var out = batchnorm(tape, tape.constant(x), tape.constant(Tensor({3}, 1.0)), tape.constant(Tensor({3}, 0.0)), buf,
                      Mode::train);
  const Tensor& y = tape.value(out);
  for (std::size_t j = 0; j < 3; ++j) {
    double m = 0, v = 0, raw_mean = 0, raw_ss = 0;
    for (std::size_t i = 0; i < 8; ++i) {
      m += y[i * 3 + j] / 8;
      raw_mean += x[i * 3 + j] / 8;
    }
    for (std::size_t i = 0; i < 8; ++i) {
      v += (y[i * 3 + j] - m) * (y[i * 3 + j] - m) / 8;
      raw_ss += (x[i * 3 + j] - raw_mean) * (x[i * 3 + j] - raw_mean);
    }
    CHECK(std::abs(m) < 1e-12);
    const double raw_var = raw_ss / 8;
    CHECK(v == doctest::Approx(raw_var / (raw_var + 1e-5)).epsilon(1e-12));
    CHECK(std::abs(v - 1.0) < 1e-5 / raw_var + 1e-12);
    CHECK(buf.running_mean[j] == doctest::Approx(0.1 * raw_mean).epsilon(1e-14));
    CHECK(buf.running_var[j] == doctest::Approx(0.9 + 0.1 * raw_ss / 7).epsilon(1e-14));
  }
  Tape t1;
  BatchNormBuffers one(3);
  CHECK_THROWS_AS(batchnorm(t1, t1.constant(Tensor({1, 3})), t1.constant(Tensor({3}, 1.0)), t1.constant(Tensor({3})),
                            one, Mode::train),
                  BatchSizeError);
}

TEST_CASE("batchnorm infer mode uses running statistics per sample") {
  BatchNormBuffers buf(2);
  buf.running_mean = Tensor({2}, {1.0, -2.0});
  buf.running_var = Tensor({2}, {4.0, 0.25});
  Tape tape;
  Var y = batchnorm(tape, tape.constant(Tensor({1, 2}, {3.0, -1.0})), tape.constant(Tensor({2}, {2.0, 1.0})),
                    tape.constant(Tensor({2}, {0.5, 0.0})), buf, Mode::infer);
  CHECK(tape.value(y)[0] == doctest::Approx(2.0 * 2.0 / std::sqrt(4.0 + 1e-5) + 0.5).epsilon(1e-15));
  CHECK(tape.value(y)[1] == doctest::Approx(1.0 / std::sqrt(0.25 + 1e-5)).epsilon(1e-15));
  CHECK(buf.running_mean[0] == 1.0);
}

TEST_CASE("batchnorm gradients in both modes") {
  skad::test::Gen g(6);
  for (Mode mode : {Mode::train, Mode::infer}) {
    CHECK(gradcheck(
              [mode](Tape& t, const auto& v) {
                BatchNormBuffers buf(3);
                buf.running_var = Tensor({3}, 2.0);
                return probe(t, batchnorm(t, v[0], v[1], v[2], buf, mode));
              },
              {random_tensor({8, 3}, g), random_tensor({3}, g, 0.5, 1.5), random_tensor({3}, g)}) < 1e-5);
  }
}

TEST_CASE("adam first step, zero gradient and descent direction") {
  AdamConfig cfg{0.1};
  std::vector<double> p{1.0}, grad{1.0};
  AdamMoments m;
  adam_step(p, grad, m, cfg, 1);
  CHECK(p[0] == doctest::Approx(1.0 - 0.1 / (1.0 + 1e-8)).epsilon(1e-15));

  std::vector<double> q{2.0, -1.0}, zero{0.0, 0.0};
  AdamMoments mz;
  adam_step(q, zero, mz, cfg, 1);
  CHECK(q == std::vector<double>{2.0, -1.0});
  CHECK(mz.m == std::vector<double>{0.0, 0.0});

  std::vector<double> r{0.0};
  AdamMoments mr;
  double prev = 0.0;
  for (long s = 1; s <= 50; ++s) {
    const std::vector<double> gneg{-3.0};
    adam_step(r, gneg, mr, cfg, s);
    CHECK(r[0] > prev);
    prev = r[0];
  }
  std::vector<double> bad{1.0, 2.0};
  CHECK_THROWS_AS(adam_step(bad, grad, m, cfg, 2), DimensionError);
  CHECK_THROWS_AS(adam_step(p, grad, m, cfg, 0), StateError);
}

TEST_CASE("parameter sets bind to a tape and collect gradients") {
  ParamSet ps;
  ps.add("w", Tensor({2}, {1.0, 2.0}));
  ps.add("b", Tensor({1}, {0.0}), false);
  CHECK(ps.scalar_count() == 3);
  CHECK_FALSE(ps.at("b").decay);
  CHECK_THROWS(ps.add("w", Tensor({1})));
  Tape tape;
  BoundParams bound = bind(tape, ps, true);
  tape.backward(sum_squares(tape, bound["w"]));
  ps.zero_grad();
  accumulate_grads(tape, bound, ps);
  CHECK(ps.at("w").grad.values() == std::vector<double>{2.0, 4.0});
  CHECK(ps.at("b").grad.values() == std::vector<double>{0.0});
  Adam adam(AdamConfig{0.5});
  adam.step(ps);
  CHECK(adam.steps() == 1);
  CHECK(ps.at("w").value[0] == doctest::Approx(0.5).epsilon(1e-7));
  CHECK(ps.at("b").value[0] == 0.0);
}
