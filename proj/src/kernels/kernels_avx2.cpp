// AVX2 variants of the inner-loop kernels. Built with -mavx2 -mno-fma; the
// 4-lane accumulator layout mirrors the scalar reference exactly, so results
// are bitwise identical (tail elements land in the same lane via maskload).

#include "xreg/kernels.hpp"

#if defined(__AVX2__)

#include <immintrin.h>

namespace xreg::kern {
namespace {

alignas(32) constexpr long long kTailMask[4][4] = {
    {0, 0, 0, 0},
    {-1, 0, 0, 0},
    {-1, -1, 0, 0},
    {-1, -1, -1, 0},
};

inline __m256i tail_mask(std::size_t r) {
  return _mm256_load_si256(reinterpret_cast<const __m256i*>(kTailMask[r]));
}

// (acc0 + acc1) + (acc2 + acc3)
inline double combine(__m256d acc) {
  const __m128d lo = _mm256_castpd256_pd128(acc);
  const __m128d hi = _mm256_extractf128_pd(acc, 1);
  const __m128d pairs = _mm_hadd_pd(lo, hi);
  return _mm_cvtsd_f64(pairs) + _mm_cvtsd_f64(_mm_unpackhi_pd(pairs, pairs));
}

double dot_avx2(const double* a, const double* b, std::size_t n) {
  __m256d acc = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d va = _mm256_loadu_pd(a + i);
    const __m256d vb = _mm256_loadu_pd(b + i);
    acc = _mm256_add_pd(acc, _mm256_mul_pd(va, vb));
  }
  if (const std::size_t r = n - i) {
    const __m256i m = tail_mask(r);
    const __m256d va = _mm256_maskload_pd(a + i, m);
    const __m256d vb = _mm256_maskload_pd(b + i, m);
    acc = _mm256_add_pd(acc, _mm256_mul_pd(va, vb));
  }
  return combine(acc);
}

double sqdist_avx2(const double* a, const double* b, std::size_t n) {
  __m256d acc = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d d = _mm256_sub_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i));
    acc = _mm256_add_pd(acc, _mm256_mul_pd(d, d));
  }
  if (const std::size_t r = n - i) {
    const __m256i m = tail_mask(r);
    const __m256d d = _mm256_sub_pd(_mm256_maskload_pd(a + i, m), _mm256_maskload_pd(b + i, m));
    acc = _mm256_add_pd(acc, _mm256_mul_pd(d, d));
  }
  return combine(acc);
}

double sum_avx2(const double* a, std::size_t n) {
  __m256d acc = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) acc = _mm256_add_pd(acc, _mm256_loadu_pd(a + i));
  if (const std::size_t r = n - i) acc = _mm256_add_pd(acc, _mm256_maskload_pd(a + i, tail_mask(r)));
  return combine(acc);
}

void axpy_avx2(double* y, double alpha, const double* x, std::size_t n) {
  const __m256d va = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d v = _mm256_add_pd(_mm256_loadu_pd(y + i), _mm256_mul_pd(va, _mm256_loadu_pd(x + i)));
    _mm256_storeu_pd(y + i, v);
  }
  for (; i < n; ++i) y[i] += alpha * x[i];
}

void add_avx2(double* dst, const double* a, const double* b, std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(dst + i, _mm256_add_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
  for (; i < n; ++i) dst[i] = a[i] + b[i];
}

void sub_avx2(double* dst, const double* a, const double* b, std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(dst + i, _mm256_sub_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
  for (; i < n; ++i) dst[i] = a[i] - b[i];
}

void mul_avx2(double* dst, const double* a, const double* b, std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(dst + i, _mm256_mul_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
  for (; i < n; ++i) dst[i] = a[i] * b[i];
}

void scale_avx2(double* dst, const double* a, double s, std::size_t n) {
  const __m256d vs = _mm256_set1_pd(s);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) _mm256_storeu_pd(dst + i, _mm256_mul_pd(_mm256_loadu_pd(a + i), vs));
  for (; i < n; ++i) dst[i] = a[i] * s;
}

void relu_avx2(double* dst, const double* a, std::size_t n) {
  const __m256d zero = _mm256_setzero_pd();
  std::size_t i = 0;
  // max(a, 0) returns the second operand for NaN and -0.0, matching scalar.
  for (; i + 4 <= n; i += 4) _mm256_storeu_pd(dst + i, _mm256_max_pd(_mm256_loadu_pd(a + i), zero));
  for (; i < n; ++i) dst[i] = a[i] > 0.0 ? a[i] : 0.0;
}

void relu_backward_avx2(double* grad_in, const double* grad_out, const double* input, std::size_t n) {
  const __m256d zero = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d mask = _mm256_cmp_pd(_mm256_loadu_pd(input + i), zero, _CMP_GT_OQ);
    const __m256d g = _mm256_and_pd(_mm256_loadu_pd(grad_out + i), mask);
    _mm256_storeu_pd(grad_in + i, _mm256_add_pd(_mm256_loadu_pd(grad_in + i), g));
  }
  for (; i < n; ++i) {
    if (input[i] > 0.0) grad_in[i] += grad_out[i];
  }
}

}  // namespace

const Kernels* avx2_kernels() {
  static const Kernels k = {
      "avx2",     dot_avx2, sqdist_avx2, sum_avx2,  axpy_avx2,
      add_avx2,   sub_avx2, mul_avx2,    scale_avx2, relu_avx2,
      relu_backward_avx2,
  };
#if defined(__x86_64__) || defined(__i386__)
  if (__builtin_cpu_supports("avx2")) return &k;
#endif
  return nullptr;
}

}  // namespace xreg::kern

#else

namespace xreg::kern {
const Kernels* avx2_kernels() { return nullptr; }
}  // namespace xreg::kern

#endif
