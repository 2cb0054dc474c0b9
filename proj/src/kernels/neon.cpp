// NEON variants for AArch64, where Advanced SIMD (including f64 lanes and
// fused multiply-add) is architecturally guaranteed.

#include <arm_neon.h>

#include <type_traits>

#include "simd_impl.hpp"

namespace differ::kernels::detail {
namespace {

struct NeonF32 {
  using T = float;
  using reg = float32x4_t;
  static constexpr std::size_t width = 4;
  static reg zero() { return vdupq_n_f32(0.0f); }
  static reg set1(T x) { return vdupq_n_f32(x); }
  static reg load(const T* p) { return vld1q_f32(p); }
  static void store(T* p, reg x) { vst1q_f32(p, x); }
  static reg fma(reg a, reg b, reg c) { return vfmaq_f32(c, a, b); }
  static reg add(reg a, reg b) { return vaddq_f32(a, b); }
  static reg sub(reg a, reg b) { return vsubq_f32(a, b); }
  static reg mul(reg a, reg b) { return vmulq_f32(a, b); }
  static reg div(reg a, reg b) { return vdivq_f32(a, b); }
  static reg sqrt(reg a) { return vsqrtq_f32(a); }
  static T hsum(reg x) { return vaddvq_f32(x); }
};

struct NeonF64 {
  using T = double;
  using reg = float64x2_t;
  static constexpr std::size_t width = 2;
  static reg zero() { return vdupq_n_f64(0.0); }
  static reg set1(T x) { return vdupq_n_f64(x); }
  static reg load(const T* p) { return vld1q_f64(p); }
  static void store(T* p, reg x) { vst1q_f64(p, x); }
  static reg fma(reg a, reg b, reg c) { return vfmaq_f64(c, a, b); }
  static reg add(reg a, reg b) { return vaddq_f64(a, b); }
  static reg sub(reg a, reg b) { return vsubq_f64(a, b); }
  static reg mul(reg a, reg b) { return vmulq_f64(a, b); }
  static reg div(reg a, reg b) { return vdivq_f64(a, b); }
  static reg sqrt(reg a) { return vsqrtq_f64(a); }
  static T hsum(reg x) { return vaddvq_f64(x); }
};

}  // namespace

template <class T>
const Table<T>& neon_table() {
  using V = std::conditional_t<std::is_same_v<T, float>, NeonF32, NeonF64>;
  static constexpr Table<T> kTable = make_simd_table<V>(Isa::neon);
  return kTable;
}

template const Table<float>& neon_table<float>();
template const Table<double>& neon_table<double>();

}  // namespace differ::kernels::detail
