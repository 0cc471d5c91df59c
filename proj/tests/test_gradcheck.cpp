#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "ccdc/gradcheck.hpp"
#include "ccdc/ops.hpp"
#include "test_support.hpp"

using namespace ccdc;
using testsup::to_array;

TEST_CASE("analytic gradients of a quadratic pass the finite-difference probe") {
  ParameterStore store;
  Parameter& a = store.create("quad.a", {3});
  Parameter& b = store.create("quad.b", {3});
  a.value = to_array({1.0, -2.0, 0.5});
  b.value = to_array({0.3, 0.7, -1.1});

  auto eval = [&](bool with_grad) {
    Tape tape;
    Tensor ta = tape.bind(a);
    Tensor tb = tape.bind(b);
    Tensor loss = sum_all(mul(add(ta, tb), add(ta, tb)));
    if (with_grad) backward(loss);
    return loss.scalar();
  };

  GradCheckReport rep = grad_check(store, eval);
  CHECK(rep.worst_rel_err < 1e-9);
  CHECK_FALSE(rep.any_non_finite);
  REQUIRE(rep.groups.size() == 1);  // both share the "quad" prefix
  CHECK(rep.groups[0].name == "quad");
  CHECK(rep.groups[0].has_grad_path);
  CHECK(rep.groups[0].coords_checked == 6);
}

TEST_CASE("a corrupted adjoint is flagged with a large relative error") {
  ParameterStore store;
  Parameter& w = store.create("w.v", {4});
  w.value = to_array({0.2, -0.4, 1.0, 0.8});

  auto eval = [&](bool with_grad) {
    Tape tape;
    Tensor tw = tape.bind(w);
    Tensor loss = sum_all(mul(tw, tw));
    if (with_grad) {
      backward(loss);
      w.grad *= 3.0;  // simulated wrong backward rule
    }
    return loss.scalar();
  };

  GradCheckReport rep = grad_check(store, eval);
  CHECK(rep.worst_rel_err > 1e-2);
}

TEST_CASE("parameters without a gradient path are reported, not failed") {
  ParameterStore store;
  Parameter& used = store.create("used.w", {2});
  Parameter& orphan = store.create("orphan.w", {2});
  used.value = to_array({1.0, 2.0});
  orphan.value = to_array({3.0, 4.0});

  auto eval = [&](bool with_grad) {
    Tape tape;
    Tensor tu = tape.bind(used);
    tape.bind(orphan);
    Tensor loss = sum_all(mul(tu, tu));
    if (with_grad) backward(loss);
    return loss.scalar();
  };

  GradCheckReport rep = grad_check(store, eval);
  REQUIRE(rep.groups.size() == 2);
  bool saw_orphan = false;
  for (const auto& g : rep.groups) {
    if (g.name == "orphan") {
      saw_orphan = true;
      CHECK_FALSE(g.has_grad_path);
    } else {
      CHECK(g.has_grad_path);
      CHECK(g.worst_rel_err < 1e-9);
    }
  }
  CHECK(saw_orphan);
  CHECK(rep.worst_rel_err < 1e-9);  // orphan group excluded from the headline number
}

TEST_CASE("coordinate sampling stays within budget on large parameters") {
  ParameterStore store;
  Parameter& big = store.create("big.w", {1000});
  for (Index i = 0; i < 1000; ++i) big.value[i] = 0.5 + 0.001 * static_cast<double>(i);

  int fwd_calls = 0;
  auto eval = [&](bool with_grad) {
    Tape tape;
    Tensor tb = tape.bind(big);
    Tensor loss = sum_all(mul(tb, tb));
    if (with_grad)
      backward(loss);
    else
      ++fwd_calls;
    return loss.scalar();
  };

  GradCheckOptions opts;
  opts.max_coords_per_param = 5;
  GradCheckReport rep = grad_check(store, eval, opts);
  CHECK(rep.groups[0].coords_checked == 5);
  CHECK(fwd_calls == 20);  // two probe widths, two evaluations each, per coordinate
  CHECK(rep.worst_rel_err < 1e-5);  // difference noise grows with the 1000-term reduction
}

TEST_CASE("non-finite losses are surfaced") {
  ParameterStore store;
  Parameter& w = store.create("w.v", {1});
  w.value = to_array({1e200});

  auto eval = [&](bool with_grad) {
    Tape tape;
    Tensor tw = tape.bind(w);
    Tensor loss = mul(mul(tw, tw), mul(tw, tw));  // overflows to inf
    if (with_grad) backward(loss);
    return loss.scalar();
  };

  GradCheckReport rep = grad_check(store, eval);
  CHECK(rep.any_non_finite);
}
