#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "trot/tape.hpp"

using namespace trot;

namespace {

TensorD random_tensor(std::vector<int64_t> shape, Rng& rng, double scale = 1.0) {
  TensorD t(std::move(shape));
  for (auto& v : t.data) v = uniform(rng, -scale, scale);
  return t;
}

// Central finite differences on every element of every input against the
// tape's analytic gradient.
template <typename F>
void check_grads_fd(std::vector<TensorD> inputs, F build, double h = 1e-6, double tol = 1e-6) {
  TapeD tape;
  std::vector<TapeD::Var> vars;
  for (auto& in : inputs) vars.push_back(tape.leaf(in));
  auto loss = build(tape, vars);
  tape.backward(loss);
  std::vector<TensorD> grads;
  for (auto v : vars) grads.push_back(tape.grad_or_zero(v));

  auto eval = [&](const std::vector<TensorD>& xs) {
    TapeD t2;
    std::vector<TapeD::Var> vs;
    for (const auto& x : xs) vs.push_back(t2.leaf(x));
    return t2.val(build(t2, vs))[0];
  };

  for (size_t i = 0; i < inputs.size(); ++i) {
    for (int64_t j = 0; j < inputs[i].numel(); ++j) {
      auto plus = inputs, minus = inputs;
      plus[i][j] += h;
      minus[i][j] -= h;
      double fd = (eval(plus) - eval(minus)) / (2 * h);
      double an = grads[i][j];
      double denom = std::max({std::abs(fd), std::abs(an), 1e-4});
      CAPTURE(i);
      CAPTURE(j);
      CHECK(std::abs(fd - an) / denom < tol);
    }
  }
}

}  // namespace

TEST_CASE("matmul matches a naive triple loop") {
  Rng rng(1);
  TensorD a = random_tensor({3, 4}, rng), b = random_tensor({4, 5}, rng);
  TapeD tape;
  auto c = tape.matmul(tape.constant(a), tape.constant(b));
  for (int64_t i = 0; i < 3; ++i)
    for (int64_t j = 0; j < 5; ++j) {
      double acc = 0;
      for (int64_t k = 0; k < 4; ++k) acc += a.at2(i, k) * b.at2(k, j);
      CHECK(tape.val(c).at2(i, j) == doctest::Approx(acc).epsilon(1e-12));
    }
}

TEST_CASE("elementwise and reduction gradients") {
  Rng rng(2);
  check_grads_fd({random_tensor({2, 3}, rng), random_tensor({2, 3}, rng)},
                 [](TapeD& t, const std::vector<TapeD::Var>& v) {
                   return t.mean_all(t.mul(t.add(v[0], v[1]), t.sub(v[0], v[1])));
                 });
  check_grads_fd({random_tensor({2, 3}, rng), random_tensor({2, 3}, rng, 0.5)},
                 [](TapeD& t, const std::vector<TapeD::Var>& v) {
                   return t.sum_all(t.div(v[0], t.add_scalar(v[1], 2.0)));
                 });
  check_grads_fd({random_tensor({6}, rng)}, [](TapeD& t, const std::vector<TapeD::Var>& v) {
    return t.mean_all(t.exp(t.scale(v[0], 0.7)));
  });
  check_grads_fd({random_tensor({5}, rng)}, [](TapeD& t, const std::vector<TapeD::Var>& v) {
    return t.sum_all(t.log(t.add_scalar(t.mul(v[0], v[0]), 1.0)));
  });
  check_grads_fd({random_tensor({3, 4}, rng)}, [](TapeD& t, const std::vector<TapeD::Var>& v) {
    return t.mean_all(t.gelu(v[0]));
  });
}

TEST_CASE("matmul family gradients") {
  Rng rng(3);
  check_grads_fd({random_tensor({3, 4}, rng), random_tensor({4, 2}, rng)},
                 [](TapeD& t, const std::vector<TapeD::Var>& v) {
                   return t.mean_all(t.matmul(v[0], v[1]));
                 });
  check_grads_fd({random_tensor({3, 4}, rng), random_tensor({5, 4}, rng)},
                 [](TapeD& t, const std::vector<TapeD::Var>& v) {
                   return t.mean_all(t.matmul_nt(v[0], v[1]));
                 });
  check_grads_fd(
      {random_tensor({4, 3}, rng), random_tensor({3, 2}, rng), random_tensor({2}, rng)},
      [](TapeD& t, const std::vector<TapeD::Var>& v) {
        return t.mean_all(t.linear(v[0], v[1], v[2]));
      });
  check_grads_fd({random_tensor({2, 3, 4}, rng), random_tensor({2, 4, 3}, rng)},
                 [](TapeD& t, const std::vector<TapeD::Var>& v) {
                   return t.mean_all(t.bmm(v[0], v[1]));
                 });
  check_grads_fd({random_tensor({2, 3, 4}, rng), random_tensor({2, 5, 4}, rng)},
                 [](TapeD& t, const std::vector<TapeD::Var>& v) {
                   return t.mean_all(t.bmm_nt(v[0], v[1]));
                 });
  // matmul_nt with the same node on both sides (similarity matrices)
  check_grads_fd({random_tensor({4, 3}, rng)}, [](TapeD& t, const std::vector<TapeD::Var>& v) {
    return t.mean_all(t.matmul_nt(v[0], v[0]));
  });
}

TEST_CASE("normalization gradients") {
  Rng rng(4);
  check_grads_fd(
      {random_tensor({3, 5}, rng), random_tensor({5}, rng), random_tensor({5}, rng)},
      [](TapeD& t, const std::vector<TapeD::Var>& v) {
        return t.mean_all(t.mul(t.layernorm(v[0], v[1], v[2]), v[0]));
      },
      1e-6, 1e-5);
  check_grads_fd({random_tensor({4, 6}, rng)}, [](TapeD& t, const std::vector<TapeD::Var>& v) {
    auto s = t.softmax_lastdim(v[0]);
    return t.mean_all(t.mul(s, t.add_scalar(v[0], 1.0)));
  });
  check_grads_fd({random_tensor({3, 4}, rng)}, [](TapeD& t, const std::vector<TapeD::Var>& v) {
    auto n = t.rownormalize(v[0]);
    return t.mean_all(t.mul(n, t.add_scalar(n, 0.5)));
  });
}

TEST_CASE("softmax rows sum to one") {
  Rng rng(5);
  TapeD tape;
  auto s = tape.softmax_lastdim(tape.constant(random_tensor({7, 9}, rng, 3.0)));
  for (int64_t r = 0; r < 7; ++r) {
    double sum = 0;
    for (int64_t c = 0; c < 9; ++c) sum += tape.val(s).at2(r, c);
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("gather scatters gradients back through the index map") {
  Rng rng(6);
  TensorD x = random_tensor({6}, rng);
  auto map = std::make_shared<const std::vector<int64_t>>(std::vector<int64_t>{2, 2, 0, -1, 5});
  TapeD tape;
  auto xv = tape.leaf(x);
  auto g = tape.gather(xv, map, {5});
  CHECK(tape.val(g)[0] == x[2]);
  CHECK(tape.val(g)[1] == x[2]);
  CHECK(tape.val(g)[3] == 0.0);  // -1 reads zero
  auto loss = tape.sum_all(g);
  tape.backward(loss);
  auto gx = tape.grad(xv);
  CHECK(gx[2] == doctest::Approx(2.0));  // duplicated read accumulates
  CHECK(gx[0] == doctest::Approx(1.0));
  CHECK(gx[1] == doctest::Approx(0.0));
  CHECK(gx[5] == doctest::Approx(1.0));
}

TEST_CASE("reduction and concat gradients") {
  Rng rng(7);
  check_grads_fd({random_tensor({4, 3}, rng)}, [](TapeD& t, const std::vector<TapeD::Var>& v) {
    return t.mean_all(t.colmean(v[0]));
  });
  check_grads_fd({random_tensor({4, 3}, rng)}, [](TapeD& t, const std::vector<TapeD::Var>& v) {
    return t.mean_all(t.mul(t.rowsum(v[0]), t.rowsum(v[0])));
  });
  check_grads_fd({random_tensor({2, 3}, rng), random_tensor({4, 3}, rng)},
                 [](TapeD& t, const std::vector<TapeD::Var>& v) {
                   auto c = t.concat_rows(v[0], v[1]);
                   return t.mean_all(t.mul(c, c));
                 });
  check_grads_fd({random_tensor({3, 5}, rng)}, [](TapeD& t, const std::vector<TapeD::Var>& v) {
    return t.mean_all(t.colsum(v[0]));
  });
}

TEST_CASE("weighted lse and pair gather gradients") {
  Rng rng(8);
  auto w = std::make_shared<TensorD>(TensorD::full({4, 4}, 1.0));
  for (int64_t i = 0; i < 4; ++i) w->at2(i, i) = 0.0;
  w->at2(0, 2) = 5.0;
  auto pairs = std::make_shared<std::vector<std::pair<int64_t, int64_t>>>(
      std::vector<std::pair<int64_t, int64_t>>{{0, 1}, {1, 0}, {2, 3}, {3, 2}});
  check_grads_fd({random_tensor({4, 4}, rng)}, [&](TapeD& t, const std::vector<TapeD::Var>& v) {
    auto lse = t.weighted_lse_rows(v[0], w);
    auto pos = t.gather_pairs(v[0], pairs);
    return t.mean_all(t.sub(lse, pos));
  });
}

TEST_CASE("detach blocks gradient flow") {
  Rng rng(9);
  TensorD x = random_tensor({3, 3}, rng);
  TapeD tape;
  auto xv = tape.leaf(x);
  auto d = tape.detach(xv);
  auto loss = tape.mean_all(tape.mul(d, d));
  tape.backward(loss);
  CHECK(tape.grad_or_zero(xv).data == TensorD({3, 3}).data);
}

TEST_CASE("conv3d_k3 gradients") {
  Rng rng(10);
  check_grads_fd(
      {random_tensor({2, 3, 3, 3}, rng), random_tensor({2, 2, 3, 3, 3}, rng, 0.5),
       random_tensor({2}, rng)},
      [](TapeD& t, const std::vector<TapeD::Var>& v) {
        auto y = t.conv3d_k3(v[0], v[1], v[2]);
        return t.mean_all(t.mul(y, y));
      },
      1e-6, 1e-5);
}

TEST_CASE("tconv3d_p gradients and shape") {
  Rng rng(11);
  {
    TapeD tape;
    auto x = tape.constant(random_tensor({3, 2, 2, 2}, rng));
    auto w = tape.constant(random_tensor({3, 4, 2, 2, 2}, rng));
    auto b = tape.constant(random_tensor({4}, rng));
    auto y = tape.tconv3d_p(x, w, b, {2, 2, 2});
    CHECK(tape.val(y).shape == std::vector<int64_t>{4, 4, 4, 4});
  }
  check_grads_fd(
      {random_tensor({2, 2, 2, 2}, rng), random_tensor({2, 3, 2, 1, 2}, rng, 0.5),
       random_tensor({3}, rng)},
      [](TapeD& t, const std::vector<TapeD::Var>& v) {
        auto y = t.tconv3d_p(v[0], v[1], v[2], {2, 1, 2});
        return t.mean_all(t.mul(y, y));
      },
      1e-6, 1e-5);
}
