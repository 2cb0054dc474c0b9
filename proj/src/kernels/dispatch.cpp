#include <atomic>
#include <cstdlib>
#include <stdexcept>
#include <string>

#include "differ/kernels.hpp"

namespace differ::kernels {
namespace {

Isa initial_isa() {
  if (const char* env = std::getenv("DIFFER_ISA")) {
    const std::string_view want(env);
    for (Isa isa : {Isa::scalar, Isa::avx2, Isa::neon}) {
      if (to_string(isa) == want && isa_supported(isa)) return isa;
    }
  }
  return best_isa();
}

std::atomic<Isa>& current() {
  static std::atomic<Isa> isa{initial_isa()};
  return isa;
}

}  // namespace

std::string_view to_string(Isa isa) {
  switch (isa) {
    case Isa::scalar: return "scalar";
    case Isa::avx2: return "avx2";
    case Isa::neon: return "neon";
  }
  return "?";
}

bool isa_supported(Isa isa) {
  switch (isa) {
    case Isa::scalar:
      return true;
    case Isa::avx2:
#if defined(DIFFER_HAVE_AVX2)
      return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
      return false;
#endif
    case Isa::neon:
#if defined(DIFFER_HAVE_NEON)
      return true;
#else
      return false;
#endif
  }
  return false;
}

Isa best_isa() {
  if (isa_supported(Isa::avx2)) return Isa::avx2;
  if (isa_supported(Isa::neon)) return Isa::neon;
  return Isa::scalar;
}

Isa active_isa() { return current().load(std::memory_order_relaxed); }

void set_active_isa(Isa isa) {
  if (!isa_supported(isa)) {
    throw std::invalid_argument("kernel ISA not supported here: " + std::string(to_string(isa)));
  }
  current().store(isa, std::memory_order_relaxed);
}

template <class T>
const Table<T>& table(Isa isa) {
  switch (isa) {
    case Isa::scalar:
      return detail::scalar_table<T>();
    case Isa::avx2:
#if defined(DIFFER_HAVE_AVX2)
      if (isa_supported(isa)) return detail::avx2_table<T>();
#endif
      break;
    case Isa::neon:
#if defined(DIFFER_HAVE_NEON)
      return detail::neon_table<T>();
#endif
      break;
  }
  throw std::invalid_argument("kernel ISA not supported here: " + std::string(to_string(isa)));
}

template const Table<float>& table<float>(Isa);
template const Table<double>& table<double>(Isa);

}  // namespace differ::kernels
