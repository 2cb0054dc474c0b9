#pragma once

// Dense inner loops used by the denoiser and the optimizer.
//
// Every kernel has a scalar reference implementation; SIMD variants (AVX2+FMA
// on x86-64, NEON on AArch64) are compiled in separate translation units and
// selected once at runtime from CPU capabilities. DIFFER_ISA=scalar|avx2|neon
// overrides the choice. Variants agree with the reference up to
// floating-point reassociation; tests/test_kernels.cpp pins the tolerance.
//
// Matrices are dense row-major with contiguous rows.

#include <cstddef>
#include <span>
#include <string_view>

namespace differ::kernels {

enum class Isa { scalar, avx2, neon };

std::string_view to_string(Isa isa);

template <class T>
struct AdamWParams {
  T lr;             // effective rate for this step (schedule applied)
  T beta1;
  T beta2;
  T eps;
  T weight_decay;   // decoupled; 0 disables
  T bias_correction1;  // 1 - beta1^step
  T bias_correction2;  // 1 - beta2^step
};

template <class T>
struct Table {
  Isa isa;
  T (*dot)(const T* a, const T* b, std::size_t n);
  // y += alpha * x
  void (*axpy)(T alpha, const T* x, T* y, std::size_t n);
  // out[rows x m] = a[rows x k] * b[m x k]^T (+ bias[m] if non-null)
  void (*matmul_nt)(T* out, const T* a, const T* b, const T* bias, std::size_t rows,
                    std::size_t m, std::size_t k);
  // out[rows x k] += a[rows x m] * b[m x k]
  void (*matmul_nn_acc)(T* out, const T* a, const T* b, std::size_t rows, std::size_t m,
                        std::size_t k);
  // out[m x k] += a[rows x m]^T * b[rows x k]
  void (*matmul_tn_acc)(T* out, const T* a, const T* b, std::size_t rows, std::size_t m,
                        std::size_t k);
  void (*adamw)(T* param, const T* grad, T* m, T* v, std::size_t n, const AdamWParams<T>& p);
};

bool isa_supported(Isa isa);
Isa best_isa();

// The dispatch target for all free functions below. Defaults to DIFFER_ISA
// when set and supported, otherwise best_isa().
Isa active_isa();
void set_active_isa(Isa isa);  // throws std::invalid_argument if unsupported

template <class T>
const Table<T>& table(Isa isa);  // throws std::invalid_argument if unsupported

template <class T>
const Table<T>& active() {
  return table<T>(active_isa());
}

template <class T>
T dot(std::span<const T> a, std::span<const T> b) {
  return active<T>().dot(a.data(), b.data(), a.size());
}

template <class T>
void axpy(T alpha, std::span<const T> x, std::span<T> y) {
  active<T>().axpy(alpha, x.data(), y.data(), x.size());
}

template <class T>
void matmul_nt(std::span<T> out, std::span<const T> a, std::span<const T> b,
               std::span<const T> bias, std::size_t rows, std::size_t m, std::size_t k) {
  active<T>().matmul_nt(out.data(), a.data(), b.data(), bias.empty() ? nullptr : bias.data(),
                        rows, m, k);
}

template <class T>
void matmul_nn_acc(std::span<T> out, std::span<const T> a, std::span<const T> b,
                   std::size_t rows, std::size_t m, std::size_t k) {
  active<T>().matmul_nn_acc(out.data(), a.data(), b.data(), rows, m, k);
}

template <class T>
void matmul_tn_acc(std::span<T> out, std::span<const T> a, std::span<const T> b,
                   std::size_t rows, std::size_t m, std::size_t k) {
  active<T>().matmul_tn_acc(out.data(), a.data(), b.data(), rows, m, k);
}

template <class T>
void adamw(std::span<T> param, std::span<const T> grad, std::span<T> m, std::span<T> v,
           const AdamWParams<T>& p) {
  active<T>().adamw(param.data(), grad.data(), m.data(), v.data(), param.size(), p);
}

namespace detail {
template <class T> const Table<T>& scalar_table();
#if defined(DIFFER_HAVE_AVX2)
template <class T> const Table<T>& avx2_table();
#endif
#if defined(DIFFER_HAVE_NEON)
template <class T> const Table<T>& neon_table();
#endif
}  // namespace detail

}  // namespace differ::kernels
