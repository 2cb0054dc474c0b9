// Reference kernels. Plain loops in the obvious summation order; the SIMD
// variants are tested against these.

#include <cmath>

#include "differ/kernels.hpp"

namespace differ::kernels::detail {
namespace {

template <class T>
T dot(const T* a, const T* b, std::size_t n) {
  T s = 0;
  for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

template <class T>
void axpy(T alpha, const T* x, T* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

template <class T>
void matmul_nt(T* out, const T* a, const T* b, const T* bias, std::size_t rows, std::size_t m,
               std::size_t k) {
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < m; ++j) {
      T s = bias ? bias[j] : T(0);
      s += dot(a + r * k, b + j * k, k);
      out[r * m + j] = s;
    }
  }
}

template <class T>
void matmul_nn_acc(T* out, const T* a, const T* b, std::size_t rows, std::size_t m,
                   std::size_t k) {
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < m; ++j) axpy(a[r * m + j], b + j * k, out + r * k, k);
  }
}

template <class T>
void matmul_tn_acc(T* out, const T* a, const T* b, std::size_t rows, std::size_t m,
                   std::size_t k) {
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < m; ++j) axpy(a[r * m + j], b + r * k, out + j * k, k);
  }
}

template <class T>
void adamw(T* param, const T* grad, T* m, T* v, std::size_t n, const AdamWParams<T>& p) {
  for (std::size_t i = 0; i < n; ++i) {
    const T g = grad[i];
    m[i] = p.beta1 * m[i] + (T(1) - p.beta1) * g;
    v[i] = p.beta2 * v[i] + (T(1) - p.beta2) * g * g;
    const T m_hat = m[i] / p.bias_correction1;
    const T v_hat = v[i] / p.bias_correction2;
    param[i] -= p.lr * (m_hat / (std::sqrt(v_hat) + p.eps) + p.weight_decay * param[i]);
  }
}

template <class T>
constexpr Table<T> make_table() {
  return {Isa::scalar, &dot<T>, &axpy<T>, &matmul_nt<T>, &matmul_nn_acc<T>, &matmul_tn_acc<T>,
          &adamw<T>};
}

}  // namespace

template <class T>
const Table<T>& scalar_table() {
  static constexpr Table<T> kTable = make_table<T>();
  return kTable;
}

template const Table<float>& scalar_table<float>();
template const Table<double>& scalar_table<double>();

}  // namespace differ::kernels::detail
