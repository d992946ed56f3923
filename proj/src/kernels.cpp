#include "rtp/kernels.hpp"

#include <atomic>
#include <cstdlib>
#include <cstring>

namespace rtp::kern {

namespace {
std::atomic<const Kernels*> g_forced{nullptr};

const Kernels* select_default() {
  if (const char* env = std::getenv("RTP_KERNELS")) {
    if (std::strcmp(env, "scalar") == 0) return &scalar_kernels();
    if (std::strcmp(env, "avx2") == 0 && avx2_kernels()) return avx2_kernels();
    return &scalar_kernels();
  }
  if (const Kernels* k = avx2_kernels()) return k;
  return &scalar_kernels();
}
}  // namespace

const Kernels& active() {
  if (const Kernels* f = g_forced.load(std::memory_order_relaxed)) return *f;
  static const Kernels* selected = select_default();
  return *selected;
}

void force_kernels(const Kernels* k) { g_forced.store(k, std::memory_order_relaxed); }

}  // namespace rtp::kern
