#include "xreg/kernels.hpp"

#include <cstdlib>
#include <cstring>

namespace xreg::kern {
namespace {

const Kernels& select() {
  const char* wanted = std::getenv("XREG_KERNEL");
  if (wanted != nullptr) {
    if (std::strcmp(wanted, "scalar") == 0) return scalar_kernels();
    if (std::strcmp(wanted, "avx2") == 0) {
      if (const Kernels* k = avx2_kernels()) return *k;
      return scalar_kernels();
    }
  }
  if (const Kernels* k = avx2_kernels()) return *k;
  return scalar_kernels();
}

}  // namespace

const Kernels& kernels() {
  static const Kernels& active = select();
  return active;
}

std::string active_kernel_name() { return kernels().name; }

}  // namespace xreg::kern
