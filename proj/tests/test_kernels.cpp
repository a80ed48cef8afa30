#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstring>
#include <vector>

#include "xreg/kernels.hpp"
#include "xreg/rng.hpp"

using namespace xreg;

namespace {

std::vector<double> random_vec(Rng& rng, std::size_t n, double lo = -2.0, double hi = 2.0) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(lo, hi);
  return v;
}

bool bits_equal(double a, double b) { return std::memcmp(&a, &b, sizeof(double)) == 0; }

}  // namespace

TEST_CASE("scalar reductions follow the canonical 4-lane order") {
  // dot([1,2,3,4,5], ones) must be (1+5 + 2) + (3 + 4) per the lane layout.
  const std::vector<double> a{1, 2, 3, 4, 5};
  const std::vector<double> ones(5, 1.0);
  const double expect = ((1.0 + 5.0) + 2.0) + (3.0 + 4.0);
  CHECK(kern::scalar_kernels().dot(a.data(), ones.data(), 5) == expect);
  CHECK(kern::scalar_kernels().sum(a.data(), 5) == expect);
}

TEST_CASE("avx2 kernels are bitwise identical to the scalar reference") {
  const kern::Kernels* simd = kern::avx2_kernels();
  if (simd == nullptr) {
    MESSAGE("avx2 not supported on this host; dispatch test only");
    CHECK(std::string(kern::kernels().name) == "scalar");
    return;
  }
  const kern::Kernels& ref = kern::scalar_kernels();

  Rng rng(2024);
  // Cover every tail residue and a few longer lengths.
  std::vector<std::size_t> sizes;
  for (std::size_t n = 1; n <= 20; ++n) sizes.push_back(n);
  for (std::size_t n : {37u, 64u, 100u, 255u, 256u, 1003u}) sizes.push_back(n);

  for (std::size_t n : sizes) {
    for (int rep = 0; rep < 20; ++rep) {
      const auto a = random_vec(rng, n);
      const auto b = random_vec(rng, n);
      CAPTURE(n);
      CHECK(bits_equal(ref.dot(a.data(), b.data(), n), simd->dot(a.data(), b.data(), n)));
      CHECK(bits_equal(ref.sqdist(a.data(), b.data(), n), simd->sqdist(a.data(), b.data(), n)));
      CHECK(bits_equal(ref.sum(a.data(), n), simd->sum(a.data(), n)));

      auto y1 = random_vec(rng, n);
      auto y2 = y1;
      const double alpha = rng.uniform(-3.0, 3.0);
      ref.axpy(y1.data(), alpha, a.data(), n);
      simd->axpy(y2.data(), alpha, a.data(), n);
      CHECK(std::memcmp(y1.data(), y2.data(), n * sizeof(double)) == 0);

      std::vector<double> d1(n), d2(n);
      ref.add(d1.data(), a.data(), b.data(), n);
      simd->add(d2.data(), a.data(), b.data(), n);
      CHECK(std::memcmp(d1.data(), d2.data(), n * sizeof(double)) == 0);
      ref.sub(d1.data(), a.data(), b.data(), n);
      simd->sub(d2.data(), a.data(), b.data(), n);
      CHECK(std::memcmp(d1.data(), d2.data(), n * sizeof(double)) == 0);
      ref.mul(d1.data(), a.data(), b.data(), n);
      simd->mul(d2.data(), a.data(), b.data(), n);
      CHECK(std::memcmp(d1.data(), d2.data(), n * sizeof(double)) == 0);
      ref.scale(d1.data(), a.data(), alpha, n);
      simd->scale(d2.data(), a.data(), alpha, n);
      CHECK(std::memcmp(d1.data(), d2.data(), n * sizeof(double)) == 0);
      ref.relu(d1.data(), a.data(), n);
      simd->relu(d2.data(), a.data(), n);
      CHECK(std::memcmp(d1.data(), d2.data(), n * sizeof(double)) == 0);

      auto g1 = random_vec(rng, n);
      auto g2 = g1;
      ref.relu_backward(g1.data(), b.data(), a.data(), n);
      simd->relu_backward(g2.data(), b.data(), a.data(), n);
      CHECK(std::memcmp(g1.data(), g2.data(), n * sizeof(double)) == 0);
    }
  }
}

TEST_CASE("XREG_KERNEL=scalar forces the reference backend") {
  // kernels() latches on first use, so only check consistency of the name.
  const std::string name = kern::active_kernel_name();
  CHECK((name == "scalar" || name == "avx2"));
}
