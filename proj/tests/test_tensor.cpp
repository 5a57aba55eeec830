#include <cmath>
#include <stdexcept>
#include <vector>

#include <gtest/gtest.h>

#include "fincast/autograd.hpp"
#include "fincast/gradcheck.hpp"
#include "fincast/tensor.hpp"

using namespace fincast;
using ag::Tape;
using ag::Value;

namespace {

// test-local op: the tape API is open for custom nodes
Value sin_op(Tape& t, Value a) {
  Tensor c = t.val(a);
  for (auto& x : c.data) x = std::sin(x);
  return t.push(std::move(c), [a](Tape& tp, const Tensor& g) {
    const Tensor& in = tp.val(a);
    Tensor ga = g;
    for (size_t i = 0; i < ga.data.size(); ++i) ga.data[i] *= std::cos(in.data[i]);
    tp.accum(a, std::move(ga));
  });
}

}  // namespace

TEST(Tensor, ShapeChecks) {
  EXPECT_THROW(Tensor({2, 3}, {1.0, 2.0}), std::invalid_argument);
  Tensor t({2, 2}, {1, 2, 3, 4});
  EXPECT_EQ(t.numel(), 4u);
  EXPECT_DOUBLE_EQ(t.at(1, 0), 3.0);
}

TEST(ForwardOps, SoftmaxSymmetry) {
  Tape tape;
  Value x = tape.leaf(Tensor({1, 4}, {0, 0, 0, 0}));
  const Tensor& s = tape.val(ag::softmax_last(tape, x));
  for (double v : s.data) EXPECT_DOUBLE_EQ(v, 0.25);
}

TEST(ForwardOps, SoftmaxIsProbabilityVector) {
  Rng rng(11);
  Tape tape;
  Value x = tape.leaf(rng.normal_tensor({17, 9}, 0.0, 30.0));
  const Tensor& s = tape.val(ag::softmax_last(tape, x));
  for (int i = 0; i < s.rows(); ++i) {
    double sum = 0.0;
    for (int j = 0; j < s.cols(); ++j) {
      EXPECT_GE(s.at(i, j), 0.0);
      sum += s.at(i, j);
    }
    EXPECT_NEAR(sum, 1.0, 1e-12);
  }
}

TEST(ForwardOps, SoftplusClosedForm) {
  Tape tape;
  Value x = tape.leaf(Tensor({1}, {0.0}));
  EXPECT_NEAR(tape.val(ag::softplus(tape, x)).data[0], std::log(2.0), 1e-15);
}

TEST(ForwardOps, MatmulIdentity) {
  Tape tape;
  Tensor eye({3, 3});
  for (int i = 0; i < 3; ++i) eye.at(i, i) = 1.0;
  Rng rng(3);
  Tensor a = rng.normal_tensor({3, 5}, 0.0, 1.0);
  Value r = ag::matmul(tape, tape.leaf(eye), tape.leaf(a));
  const Tensor& out = tape.val(r);
  for (size_t i = 0; i < a.data.size(); ++i) EXPECT_DOUBLE_EQ(out.data[i], a.data[i]);
}

TEST(ForwardOps, ShapeMismatchNamesBothShapes) {
  Tape tape;
  Value a = tape.leaf(Tensor({2, 3}));
  Value b = tape.leaf(Tensor({4, 2}));
  try {
    ag::matmul(tape, a, b);
    FAIL() << "expected shape mismatch";
  } catch (const std::invalid_argument& e) {
    std::string msg = e.what();
    EXPECT_NE(msg.find("[2x3]"), std::string::npos) << msg;
    EXPECT_NE(msg.find("[4x2]"), std::string::npos) << msg;
  }
}

TEST(Backward, SumOfSquares) {
  Tape tape;
  Value w = tape.leaf(Tensor({2}, {1, 2}));
  Value loss = ag::sum_all(tape, ag::mul(tape, w, w));
  tape.backward(loss);
  Tensor g = tape.grad(w);
  EXPECT_DOUBLE_EQ(g.data[0], 2.0);
  EXPECT_DOUBLE_EQ(g.data[1], 4.0);
}

TEST(Backward, UntouchedParameterHasZeroGradient) {
  Tape tape;
  Value w = tape.leaf(Tensor({3}, {1, 2, 3}));
  Value u = tape.leaf(Tensor({2}, {5, 6}));
  Value loss = ag::mean_all(tape, ag::mul(tape, w, w));
  tape.backward(loss);
  Tensor gu = tape.grad(u);
  ASSERT_EQ(gu.shape, (std::vector<int>{2}));
  EXPECT_DOUBLE_EQ(gu.data[0], 0.0);
  EXPECT_DOUBLE_EQ(gu.data[1], 0.0);
}

TEST(Backward, NonScalarLossRejected) {
  Tape tape;
  Value w = tape.leaf(Tensor({2}, {1, 2}));
  EXPECT_THROW(tape.backward(ag::mul(tape, w, w)), std::invalid_argument);
}

TEST(GradCheck, AnalyticExample) {
  // f(w) = sin(w0) + w1^2, gradient (cos w0, 2 w1)
  auto f = [](Tape& t, Value th) {
    Value s = sin_op(t, ag::slice_cols(t, ag::reshape(t, th, {1, 2}), 0, 1));
    Value q = ag::square(t, ag::slice_cols(t, ag::reshape(t, th, {1, 2}), 1, 2));
    return ag::sum_all(t, ag::add(t, s, q));
  };
  Tensor theta({2}, {0.3, -1.2});
  auto rep = grad_check(f, theta, 1e-3);
  EXPECT_TRUE(rep.pass(1e-6)) << rep.max_rel_err;

  // cross-check against the closed form
  Tape tape;
  Value th = tape.leaf(theta);
  tape.backward(f(tape, th));
  Tensor g = tape.grad(th);
  EXPECT_NEAR(g.data[0], std::cos(0.3), 1e-12);
  EXPECT_NEAR(g.data[1], -2.4, 1e-12);
}

TEST(GradCheck, ConstantFunctionPasses) {
  auto f = [](Tape& t, Value th) {
    Value zero = ag::scale(t, th, 0.0);
    return ag::sum_all(t, zero);
  };
  Tensor theta({3}, {1, 2, 3});
  auto rep = grad_check(f, theta, 1e-3);
  EXPECT_TRUE(rep.pass(1e-12));
  EXPECT_DOUBLE_EQ(rep.max_rel_err, 0.0);
}

TEST(GradCheck, NonFiniteIsFlagged) {
  // sqrt probes negative territory at theta - h
  auto f = [](Tape& t, Value th) { return ag::sum_all(t, ag::sqrt_elem(t, th)); };
  Tensor theta({1}, {1e-9});
  EXPECT_THROW(grad_check(f, theta, 1e-3), std::invalid_argument);  // forward itself throws on negative
}

// Every differentiable op, exercised through small random compositions.
TEST(GradCheck, AllOpsRandomizedShapes) {
  Rng rng(7);
  using Fn = std::function<Value(Tape&, Value)>;
  std::vector<std::pair<const char*, Fn>> cases;

  cases.emplace_back("matmul_transpose", [](Tape& t, Value th) {
    Value m = ag::reshape(t, th, {2, 6});
    Value a = ag::slice_cols(t, m, 0, 3);
    Value b = ag::transpose(t, ag::slice_cols(t, m, 3, 6));
    return ag::mean_all(t, ag::matmul(t, a, b));
  });
  cases.emplace_back("add_sub_mul_scale", [](Tape& t, Value th) {
    Value m = ag::reshape(t, th, {3, 4});
    Value u = ag::mul(t, m, ag::scale(t, m, 0.5));
    return ag::sum_all(t, ag::sub(t, u, m));
  });
  cases.emplace_back("softmax_mean_last", [](Tape& t, Value th) {
    Value m = ag::reshape(t, th, {3, 4});
    Value s = ag::softmax_last(t, m);
    Value q = ag::square(t, s);
    return ag::sum_all(t, ag::mean_last(t, q));
  });
  cases.emplace_back("softplus_silu", [](Tape& t, Value th) {
    return ag::mean_all(t, ag::silu(t, ag::softplus(t, th)));
  });
  cases.emplace_back("sqrt_div_per_row", [](Tape& t, Value th) {
    Value m = ag::reshape(t, th, {3, 4});
    Value sp = ag::softplus(t, m);  // keep strictly positive
    Value r = ag::sqrt_elem(t, ag::mean_last(t, sp));
    return ag::sum_all(t, ag::div_per_row(t, sp, r));
  });
  cases.emplace_back("row_vector_ops", [](Tape& t, Value th) {
    Value m = ag::reshape(t, ag::slice_rows(t, ag::reshape(t, th, {6, 2}), 0, 4), {2, 4});
    Value v = ag::reshape(t, ag::slice_rows(t, ag::reshape(t, th, {6, 2}), 4, 6), {4});
    Value x = ag::add_row_vector(t, m, v);
    Value y = ag::mul_row_vector(t, x, v);
    return ag::mean_all(t, y);
  });
  cases.emplace_back("per_row_and_logsumexp", [](Tape& t, Value th) {
    Value m = ag::reshape(t, ag::slice_cols(t, ag::reshape(t, th, {1, 12}), 0, 8), {2, 4});
    Value v = ag::reshape(t, ag::slice_cols(t, ag::reshape(t, th, {1, 12}), 8, 10), {2});
    Value x = ag::mul_per_row(t, m, v);
    Value l = ag::logsumexp_last(t, x);
    return ag::sum_all(t, ag::square(t, l));
  });
  cases.emplace_back("concat_select_scatter", [](Tape& t, Value th) {
    Value m = ag::reshape(t, th, {4, 3});
    Value top = ag::slice_rows(t, m, 0, 2);
    Value bot = ag::slice_rows(t, m, 2, 4);
    Value c = ag::concat_rows(t, {bot, top});
    Value cc = ag::concat_cols(t, {c, c});
    Value sel = ag::select_rows(t, cc, {3, 1, 1});
    Value sc = ag::scatter_rows(t, sel, {0, 2, 2}, 4);
    return ag::mean_all(t, ag::mul(t, sc, sc));
  });
  cases.emplace_back("masked_select_const_ops", [](Tape& t, Value th) {
    std::vector<uint8_t> mask = {1, 0, 1, 1, 0, 1, 0, 1, 1, 0, 1, 1};
    Value kept = ag::masked_select(t, th, mask);
    Tensor k = Tensor::full({8}, 0.75);
    Value x = ag::mul_const(t, ag::add_const(t, kept, Tensor::full({8}, 0.1)), std::move(k));
    return ag::mean_all(t, ag::square(t, x));
  });

  for (auto& [name, fn] : cases) {
    Tensor theta = rng.normal_tensor({12}, 0.0, 1.0);
    auto rep = grad_check(fn, theta, 1e-5);
    EXPECT_TRUE(rep.pass(1e-4)) << name << ": max rel err " << rep.max_rel_err << " at coord " << rep.worst.index;
  }
}

TEST(Determinism, SeededDrawsAreReproducible) {
  Rng a(123), b(123);
  Tensor ta = a.normal_tensor({64}, 0.0, 1.0);
  Tensor tb = b.normal_tensor({64}, 0.0, 1.0);
  for (size_t i = 0; i < ta.data.size(); ++i) EXPECT_EQ(ta.data[i], tb.data[i]);
}

TEST(Determinism, ForwardIsDeterministic) {
  Rng rng(5);
  Tensor a = rng.normal_tensor({8, 8}, 0.0, 1.0);
  Tensor b = rng.normal_tensor({8, 8}, 0.0, 1.0);
  Tape t1, t2;
  const Tensor& r1 = t1.val(ag::matmul(t1, t1.leaf(a), t1.leaf(b)));
  const Tensor& r2 = t2.val(ag::matmul(t2, t2.leaf(a), t2.leaf(b)));
  for (size_t i = 0; i < r1.data.size(); ++i) EXPECT_EQ(r1.data[i], r2.data[i]);
}
