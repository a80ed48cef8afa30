#pragma once

#include <cstddef>
#include <string>

namespace xreg::kern {

// Data-parallel inner loops behind the tensor and matching code. Every
// reduction uses a canonical 4-lane accumulation order:
//
//   acc[l] += term(i)  for l = i % 4,  result = (acc0 + acc1) + (acc2 + acc3)
//
// so the scalar reference and the SIMD variants produce bitwise-identical
// results (the library is compiled with -ffp-contract=off; no kernel uses
// FMA). Equivalence is asserted in tests/test_kernels.cpp.
struct Kernels {
  const char* name;

  double (*dot)(const double* a, const double* b, std::size_t n);
  double (*sqdist)(const double* a, const double* b, std::size_t n);
  double (*sum)(const double* a, std::size_t n);
  // y += alpha * x
  void (*axpy)(double* y, double alpha, const double* x, std::size_t n);
  void (*add)(double* dst, const double* a, const double* b, std::size_t n);
  void (*sub)(double* dst, const double* a, const double* b, std::size_t n);
  void (*mul)(double* dst, const double* a, const double* b, std::size_t n);
  void (*scale)(double* dst, const double* a, double s, std::size_t n);
  void (*relu)(double* dst, const double* a, std::size_t n);
  // grad_in += grad_out where activation input was > 0
  void (*relu_backward)(double* grad_in, const double* grad_out, const double* input, std::size_t n);
};

// Reference implementation; always available.
const Kernels& scalar_kernels();

// AVX2 variant; nullptr when the CPU (or build) does not support it.
const Kernels* avx2_kernels();

// Active backend, resolved once: honors XREG_KERNEL=scalar|avx2, otherwise
// picks the best supported variant.
const Kernels& kernels();

std::string active_kernel_name();

}  // namespace xreg::kern
