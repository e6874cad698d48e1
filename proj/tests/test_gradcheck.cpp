#include "timt/loss/gradcheck.hpp"
#include "timt/loss/losses.hpp"

#include <doctest.h>

#include <cmath>

using namespace timt;
using namespace timt::loss;
using nn::Graph;
using nn::Var;

TEST_CASE("quadratic probe gradient is exact") {
  nn::Param theta;
  theta.name = "theta";
  Rng rng(5);
  theta.value.resize(3, 4);
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 4; ++c) theta.value(r, c) = rng.uniform(-1, 1);
  }
  theta.grad = Mat::Zero(3, 4);

  auto fn = [&](bool grads) {
    Graph g(grads);
    Var p = g.param(theta);
    Var loss = g.scale(g.sum_all(g.mul(p, p)), 0.5);
    const double v = g.scalar(loss);
    if (grads) g.backward(loss);
    return v;
  };
  GradCheckResult res = gradient_check(fn, {&theta}, 1e-5, 9);
  CHECK(res.max_rel_err < 1e-8);
  CHECK(res.n_checked == 12);
  // analytic gradient is theta itself
  CHECK((theta.grad - theta.value).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("gradient_check rejects bad inputs") {
  nn::Param theta;
  theta.name = "theta";
  theta.value = Mat::Constant(1, 1, 1.0);
  theta.grad = Mat::Zero(1, 1);
  auto nan_fn = [&](bool) { return std::nan(""); };
  CHECK_THROWS_AS(gradient_check(nan_fn, {&theta}, 1e-4, 1), std::runtime_error);
  auto ok_fn = [&](bool) { return 1.0; };
  CHECK_THROWS_AS(gradient_check(ok_fn, {&theta}, 0.0, 1), std::invalid_argument);
}

TEST_CASE("every loss passes the finite-difference oracle at toy dims") {
  std::vector<LossCheck> checks = check_all_losses(1e-4, 42);
  REQUIRE(checks.size() == 9);
  for (const LossCheck& c : checks) {
    INFO(c.name, " max_rel_err=", c.result.max_rel_err);
    CHECK(c.result.max_rel_err < 1e-4);
    CHECK(c.result.n_checked > 0);
  }
}

TEST_CASE("token KD at student == teacher sits at the subgradient zero") {
  Graph g;
  Mat same(2, 3);
  same << 1, 2, 3, 4, 5, 6;
  nn::Param p;
  p.name = "student";
  p.value = same;
  p.grad = Mat::Zero(2, 3);

  model::FeatureSeq student;
  student.data = g.param(p);
  student.batch = 1;
  student.len = 2;
  student.mask = {1, 1};
  model::FeatureSeqValue teacher;
  teacher.data = same;
  teacher.batch = 1;
  teacher.len = 2;
  teacher.mask = {1, 1};

  Var l = token_kd_l2(g, student, teacher);
  CHECK(g.scalar(l) == 0.0);
  g.backward(l);
  CHECK(p.grad.isZero());  // kink handled as zero subgradient
}
