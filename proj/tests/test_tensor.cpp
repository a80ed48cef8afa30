#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <functional>

#include "xreg/rng.hpp"
#include "xreg/tensor.hpp"

using namespace xreg;

namespace {

Tensor random_tensor(Rng& rng, std::vector<std::size_t> shape, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.data) v = rng.uniform(lo, hi);
  return t;
}

// Central finite differences of a scalar-valued builder against the analytic
// gradients of every listed leaf.
double max_rel_grad_error(const std::vector<Tensor>& leaves,
                          const std::function<int(Graph&, const std::vector<int>&)>& build,
                          double step = 1e-5) {
  Graph g;
  std::vector<int> ids;
  for (const Tensor& t : leaves) ids.push_back(g.leaf(t, true));
  const int root = build(g, ids);
  g.backward(root);

  double worst = 0.0;
  for (std::size_t li = 0; li < leaves.size(); ++li) {
    const Tensor& analytic = g.grad(ids[li]);
    for (std::size_t e = 0; e < leaves[li].numel(); ++e) {
      auto eval = [&](double delta) {
        std::vector<Tensor> shifted = leaves;
        shifted[li].data[e] += delta;
        Graph g2;
        std::vector<int> ids2;
        for (const Tensor& t : shifted) ids2.push_back(g2.leaf(t, false));
        return g2.value(build(g2, ids2)).data[0];
      };
      const double numeric = (eval(step) - eval(-step)) / (2 * step);
      const double denom = std::max({std::abs(numeric), std::abs(analytic.data[e]), 1e-8});
      worst = std::max(worst, std::abs(numeric - analytic.data[e]) / denom);
    }
  }
  return worst;
}

}  // namespace

TEST_CASE("matmul forward matches a naive triple loop") {
  Rng rng(1);
  const Tensor a = random_tensor(rng, {3, 5});
  const Tensor b = random_tensor(rng, {5, 4});
  Graph g;
  const int c = g.matmul(g.leaf(a), g.leaf(b));
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 4; ++j) {
      double s = 0.0;
      for (std::size_t l = 0; l < 5; ++l) s += a.at(i, l) * b.at(l, j);
      CHECK(g.value(c).at(i, j) == doctest::Approx(s).epsilon(1e-13));
    }
  }
}

TEST_CASE("gradients of arithmetic and matmul ops pass finite differences") {
  Rng rng(2);
  const Tensor a = random_tensor(rng, {3, 4});
  const Tensor b = random_tensor(rng, {3, 4});
  const Tensor w = random_tensor(rng, {4, 6});
  const Tensor bias = random_tensor(rng, {6});

  CHECK(max_rel_grad_error({a, b}, [](Graph& g, const std::vector<int>& ids) {
          return g.mean_all(g.mul(g.add(ids[0], ids[1]), g.sub(ids[0], ids[1])));
        }) < 1e-4);

  CHECK(max_rel_grad_error({a, w, bias}, [](Graph& g, const std::vector<int>& ids) {
          return g.mean_all(g.relu(g.linear(ids[0], ids[1], ids[2])));
        }) < 1e-4);

  CHECK(max_rel_grad_error({a, b}, [](Graph& g, const std::vector<int>& ids) {
          return g.sum_all(g.matmul_nt(ids[0], ids[1]));
        }) < 1e-4);

  CHECK(max_rel_grad_error({a}, [](Graph& g, const std::vector<int>& ids) {
          return g.mean_all(g.scale(g.transpose2d(ids[0]), 2.5));
        }) < 1e-4);
}

TEST_CASE("softmax rows sum to one and gradients check out") {
  Rng rng(3);
  const Tensor a = random_tensor(rng, {5, 7}, -3.0, 3.0);
  Graph g;
  const int y = g.softmax_rows(g.leaf(a));
  for (std::size_t r = 0; r < 5; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < 7; ++c) s += g.value(y).at(r, c);
    CHECK(std::abs(s - 1.0) < 1e-12);
  }
  const Tensor probe = random_tensor(rng, {5, 7});
  CHECK(max_rel_grad_error({a}, [&](Graph& gg, const std::vector<int>& ids) {
          return gg.sum_all(gg.mul(gg.softmax_rows(ids[0]), gg.leaf(probe)));
        }) < 1e-4);
}

TEST_CASE("l2_normalize_rows produces unit rows, rejects zero rows, grads pass") {
  Rng rng(4);
  const Tensor a = random_tensor(rng, {6, 5}, 0.1, 2.0);
  Graph g;
  const int y = g.l2_normalize_rows(g.leaf(a));
  for (std::size_t r = 0; r < 6; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < 5; ++c) s += g.value(y).at(r, c) * g.value(y).at(r, c);
    CHECK(std::abs(std::sqrt(s) - 1.0) < 1e-12);
  }

  Tensor zero({2, 3});
  Graph g2;
  CHECK_THROWS_AS(g2.l2_normalize_rows(g2.leaf(zero)), ZeroVector);

  const Tensor probe = random_tensor(rng, {6, 5});
  CHECK(max_rel_grad_error({a}, [&](Graph& gg, const std::vector<int>& ids) {
          return gg.sum_all(gg.mul(gg.l2_normalize_rows(ids[0]), gg.leaf(probe)));
        }) < 1e-4);
}

TEST_CASE("slice/concat/gather/segment ops gradcheck") {
  Rng rng(5);
  const Tensor a = random_tensor(rng, {4, 8});
  const Tensor b = random_tensor(rng, {4, 3});

  CHECK(max_rel_grad_error({a}, [](Graph& g, const std::vector<int>& ids) {
          return g.mean_all(g.slice_cols(ids[0], 2, 6));
        }) < 1e-4);

  CHECK(max_rel_grad_error({a, b}, [](Graph& g, const std::vector<int>& ids) {
          return g.mean_all(g.concat_cols({ids[0], ids[1]}));
        }) < 1e-4);

  CHECK(max_rel_grad_error({a, b}, [](Graph& g, const std::vector<int>& ids) {
          return g.mean_all(g.concat_rows({g.slice_cols(ids[0], 0, 3), ids[1]}));
        }) < 1e-4);

  CHECK(max_rel_grad_error({a}, [](Graph& g, const std::vector<int>& ids) {
          return g.mean_all(g.gather_rows(ids[0], {2, 0, 2, 3}));
        }) < 1e-4);

  CHECK(max_rel_grad_error({a}, [](Graph& g, const std::vector<int>& ids) {
          return g.mean_all(g.segment_mean(ids[0], {1, 0, 1, 1}, 2));
        }) < 1e-4);
}

TEST_CASE("conv2d matches direct evaluation and gradchecks") {
  Rng rng(6);
  const Tensor x = random_tensor(rng, {2, 6, 7});
  const Tensor w = random_tensor(rng, {3, 2, 3, 3});
  const Tensor b = random_tensor(rng, {3});

  Graph g;
  const int out = g.conv2d(g.leaf(x), g.leaf(w), g.leaf(b), 1, 1);
  REQUIRE(g.value(out).shape == std::vector<std::size_t>{3, 6, 7});
  // Direct evaluation at a few positions.
  for (int probe = 0; probe < 10; ++probe) {
    const std::size_t oc = rng.below(3), oy = rng.below(6), ox = rng.below(7);
    double s = b.data[oc];
    for (std::size_t c = 0; c < 2; ++c)
      for (int ky = 0; ky < 3; ++ky)
        for (int kx = 0; kx < 3; ++kx) {
          const int iy = static_cast<int>(oy) + ky - 1, ix = static_cast<int>(ox) + kx - 1;
          if (iy < 0 || ix < 0 || iy >= 6 || ix >= 7) continue;
          s += x.data[(c * 6 + iy) * 7 + ix] * w.data[((oc * 2 + c) * 3 + ky) * 3 + kx];
        }
    CHECK(g.value(out).data[(oc * 6 + oy) * 7 + ox] == doctest::Approx(s).epsilon(1e-12));
  }

  CHECK(max_rel_grad_error({x, w, b}, [](Graph& gg, const std::vector<int>& ids) {
          return gg.mean_all(gg.relu(gg.conv2d(ids[0], ids[1], ids[2], 2, 1)));
        }) < 1e-4);
}

TEST_CASE("pooling, upsampling and resize ops gradcheck") {
  Rng rng(7);
  const Tensor x = random_tensor(rng, {2, 6, 8});

  Graph g;
  const Tensor ones({2, 6, 8}, std::vector<double>(96, 1.0));
  const int pooled = g.avgpool2(g.leaf(ones));
  for (double v : g.value(pooled).data) CHECK(v == doctest::Approx(1.0));

  CHECK(max_rel_grad_error({x}, [](Graph& gg, const std::vector<int>& ids) {
          return gg.mean_all(gg.avgpool2(ids[0]));
        }) < 1e-4);
  CHECK(max_rel_grad_error({x}, [](Graph& gg, const std::vector<int>& ids) {
          return gg.mean_all(gg.upsample_nearest(ids[0], 2));
        }) < 1e-4);
  CHECK(max_rel_grad_error({x}, [](Graph& gg, const std::vector<int>& ids) {
          return gg.mean_all(gg.resize_bilinear(ids[0], 4, 5));
        }) < 1e-4);

  // Constant field stays constant under bilinear resize.
  Graph g2;
  const int resized = g2.resize_bilinear(g2.leaf(ones), 5, 3);
  for (double v : g2.value(resized).data) CHECK(v == doctest::Approx(1.0));
}

TEST_CASE("pairwise_l2 values and gradients") {
  Rng rng(8);
  const Tensor a = random_tensor(rng, {4, 6});
  const Tensor b = random_tensor(rng, {3, 6});
  Graph g;
  const int d = g.pairwise_l2(g.leaf(a), g.leaf(b));
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t j = 0; j < 3; ++j) {
      double s = 0.0;
      for (std::size_t c = 0; c < 6; ++c) {
        const double diff = a.at(i, c) - b.at(j, c);
        s += diff * diff;
      }
      CHECK(g.value(d).at(i, j) == doctest::Approx(std::sqrt(s)).epsilon(1e-12));
    }
  }
  const Tensor probe = random_tensor(rng, {4, 3});
  CHECK(max_rel_grad_error({a, b}, [&](Graph& gg, const std::vector<int>& ids) {
          return gg.sum_all(gg.mul(gg.pairwise_l2(ids[0], ids[1]), gg.leaf(probe)));
        }) < 1e-4);
}

TEST_CASE("shape errors are reported") {
  Graph g;
  const int a = g.leaf(Tensor({2, 3}));
  const int b = g.leaf(Tensor({3, 2}));
  CHECK_THROWS_AS(g.add(a, b), ShapeError);
  CHECK_THROWS_AS(g.matmul(a, a), ShapeError);
  CHECK_THROWS_AS(g.backward(a), ShapeError);
}
