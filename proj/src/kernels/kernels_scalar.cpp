#include "xreg/kernels.hpp"

namespace xreg::kern {
namespace {

double dot_scalar(const double* a, const double* b, std::size_t n) {
  double acc[4] = {0.0, 0.0, 0.0, 0.0};
  for (std::size_t i = 0; i < n; ++i) acc[i & 3] += a[i] * b[i];
  return (acc[0] + acc[1]) + (acc[2] + acc[3]);
}

double sqdist_scalar(const double* a, const double* b, std::size_t n) {
  double acc[4] = {0.0, 0.0, 0.0, 0.0};
  for (std::size_t i = 0; i < n; ++i) {
    const double d = a[i] - b[i];
    acc[i & 3] += d * d;
  }
  return (acc[0] + acc[1]) + (acc[2] + acc[3]);
}

double sum_scalar(const double* a, std::size_t n) {
  double acc[4] = {0.0, 0.0, 0.0, 0.0};
  for (std::size_t i = 0; i < n; ++i) acc[i & 3] += a[i];
  return (acc[0] + acc[1]) + (acc[2] + acc[3]);
}

void axpy_scalar(double* y, double alpha, const double* x, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void add_scalar(double* dst, const double* a, const double* b, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) dst[i] = a[i] + b[i];
}

void sub_scalar(double* dst, const double* a, const double* b, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) dst[i] = a[i] - b[i];
}

void mul_scalar(double* dst, const double* a, const double* b, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) dst[i] = a[i] * b[i];
}

void scale_scalar(double* dst, const double* a, double s, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) dst[i] = a[i] * s;
}

void relu_scalar(double* dst, const double* a, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) dst[i] = a[i] > 0.0 ? a[i] : 0.0;
}

void relu_backward_scalar(double* grad_in, const double* grad_out, const double* input, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    if (input[i] > 0.0) grad_in[i] += grad_out[i];
  }
}

}  // namespace

const Kernels& scalar_kernels() {
  static const Kernels k = {
      "scalar",     dot_scalar, sqdist_scalar, sum_scalar,  axpy_scalar,
      add_scalar,   sub_scalar, mul_scalar,    scale_scalar, relu_scalar,
      relu_backward_scalar,
  };
  return k;
}

}  // namespace xreg::kern
