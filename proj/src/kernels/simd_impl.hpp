#pragma once

// Width-generic kernel bodies. Each ISA translation unit supplies a traits
// type V with:
//   using T; using reg; static constexpr std::size_t width;
//   zero(), set1(T), load(const T*), store(T*, reg), fma(a, b, c) = a*b + c,
//   add, mul, div, sqrt, hsum(reg) -> T
// and instantiates make_simd_table<V>().

#include <cmath>
#include <cstddef>

#include "differ/kernels.hpp"

namespace differ::kernels::detail {

template <class V>
struct SimdKernels {
  using T = typename V::T;
  using reg = typename V::reg;
  static constexpr std::size_t W = V::width;

  static T dot(const T* a, const T* b, std::size_t n) {
    reg acc0 = V::zero(), acc1 = V::zero(), acc2 = V::zero(), acc3 = V::zero();
    std::size_t i = 0;
    for (; i + 4 * W <= n; i += 4 * W) {
      acc0 = V::fma(V::load(a + i), V::load(b + i), acc0);
      acc1 = V::fma(V::load(a + i + W), V::load(b + i + W), acc1);
      acc2 = V::fma(V::load(a + i + 2 * W), V::load(b + i + 2 * W), acc2);
      acc3 = V::fma(V::load(a + i + 3 * W), V::load(b + i + 3 * W), acc3);
    }
    for (; i + W <= n; i += W) acc0 = V::fma(V::load(a + i), V::load(b + i), acc0);
    T s = V::hsum(V::add(V::add(acc0, acc1), V::add(acc2, acc3)));
    for (; i < n; ++i) s += a[i] * b[i];
    return s;
  }

  static void axpy(T alpha, const T* x, T* y, std::size_t n) {
    const reg va = V::set1(alpha);
    std::size_t i = 0;
    for (; i + W <= n; i += W) V::store(y + i, V::fma(va, V::load(x + i), V::load(y + i)));
    for (; i < n; ++i) y[i] += alpha * x[i];
  }

  // R rows of a against C rows of b, full length k.
  template <std::size_t R, std::size_t C>
  static void block_nt(T* out, const T* a, const T* b, const T* bias, std::size_t m,
                       std::size_t k) {
    reg acc[R][C];
#pragma GCC unroll 8
    for (std::size_t r = 0; r < R; ++r)
#pragma GCC unroll 8
      for (std::size_t c = 0; c < C; ++c) acc[r][c] = V::zero();
    std::size_t kk = 0;
    for (; kk + W <= k; kk += W) {
      reg bv[C];
#pragma GCC unroll 8
      for (std::size_t c = 0; c < C; ++c) bv[c] = V::load(b + c * k + kk);
#pragma GCC unroll 8
      for (std::size_t r = 0; r < R; ++r) {
        const reg av = V::load(a + r * k + kk);
#pragma GCC unroll 8
        for (std::size_t c = 0; c < C; ++c) acc[r][c] = V::fma(av, bv[c], acc[r][c]);
      }
    }
    for (std::size_t r = 0; r < R; ++r) {
      for (std::size_t c = 0; c < C; ++c) {
        T s = V::hsum(acc[r][c]);
        for (std::size_t t = kk; t < k; ++t) s += a[r * k + t] * b[c * k + t];
        out[r * m + c] = s + (bias ? bias[c] : T(0));
      }
    }
  }

  static void matmul_nt(T* out, const T* a, const T* b, const T* bias, std::size_t rows,
                        std::size_t m, std::size_t k) {
    std::size_t r = 0;
    for (; r + 4 <= rows; r += 4) {
      std::size_t j = 0;
      for (; j + 2 <= m; j += 2) {
        block_nt<4, 2>(out + r * m + j, a + r * k, b + j * k, bias ? bias + j : nullptr, m, k);
      }
      for (; j < m; ++j) {
        block_nt<4, 1>(out + r * m + j, a + r * k, b + j * k, bias ? bias + j : nullptr, m, k);
      }
    }
    for (; r < rows; ++r) {
      std::size_t j = 0;
      for (; j + 4 <= m; j += 4) {
        block_nt<1, 4>(out + r * m + j, a + r * k, b + j * k, bias ? bias + j : nullptr, m, k);
      }
      for (; j < m; ++j) {
        block_nt<1, 1>(out + r * m + j, a + r * k, b + j * k, bias ? bias + j : nullptr, m, k);
      }
    }
  }

  // out[o][:] += sum_t coef(o, t) * src[t][:], coef(o, t) = a[o*so + t*st].
  // R output rows at once, C vectors of columns.
  template <std::size_t R, std::size_t C>
  static void block_acc(T* out, const T* a, std::size_t so, std::size_t st, const T* src,
                        std::size_t inner, std::size_t k, std::size_t col) {
    reg acc[R][C];
#pragma GCC unroll 8
    for (std::size_t r = 0; r < R; ++r)
#pragma GCC unroll 8
      for (std::size_t c = 0; c < C; ++c) acc[r][c] = V::load(out + r * k + col + c * W);
    for (std::size_t t = 0; t < inner; ++t) {
      reg sv[C];
      const T* row = src + t * k + col;
#pragma GCC unroll 8
      for (std::size_t c = 0; c < C; ++c) sv[c] = V::load(row + c * W);
#pragma GCC unroll 8
      for (std::size_t r = 0; r < R; ++r) {
        const reg coef = V::set1(a[r * so + t * st]);
#pragma GCC unroll 8
        for (std::size_t c = 0; c < C; ++c) acc[r][c] = V::fma(coef, sv[c], acc[r][c]);
      }
    }
#pragma GCC unroll 8
    for (std::size_t r = 0; r < R; ++r)
#pragma GCC unroll 8
      for (std::size_t c = 0; c < C; ++c) V::store(out + r * k + col + c * W, acc[r][c]);
  }

  template <std::size_t R>
  static void rows_acc(T* out, const T* a, std::size_t so, std::size_t st, const T* src,
                       std::size_t inner, std::size_t k) {
    std::size_t col = 0;
    for (; col + 4 * W <= k; col += 4 * W) block_acc<R, 4>(out, a, so, st, src, inner, k, col);
    for (; col + W <= k; col += W) block_acc<R, 1>(out, a, so, st, src, inner, k, col);
    for (; col < k; ++col) {
      for (std::size_t r = 0; r < R; ++r) {
        T s = out[r * k + col];
        for (std::size_t t = 0; t < inner; ++t) s += a[r * so + t * st] * src[t * k + col];
        out[r * k + col] = s;
      }
    }
  }

  static void generic_acc(T* out, std::size_t out_rows, const T* a, std::size_t so,
                          std::size_t st, const T* src, std::size_t inner, std::size_t k) {
    std::size_t o = 0;
    for (; o + 2 <= out_rows; o += 2) rows_acc<2>(out + o * k, a + o * so, so, st, src, inner, k);
    for (; o < out_rows; ++o) rows_acc<1>(out + o * k, a + o * so, so, st, src, inner, k);
  }

  static void matmul_nn_acc(T* out, const T* a, const T* b, std::size_t rows, std::size_t m,
                            std::size_t k) {
    generic_acc(out, rows, a, m, 1, b, m, k);
  }

  static void matmul_tn_acc(T* out, const T* a, const T* b, std::size_t rows, std::size_t m,
                            std::size_t k) {
    generic_acc(out, m, a, 1, m, b, rows, k);
  }

  static void adamw(T* param, const T* grad, T* m, T* v, std::size_t n,
                    const AdamWParams<T>& p) {
    const reg b1 = V::set1(p.beta1), c1 = V::set1(T(1) - p.beta1);
    const reg b2 = V::set1(p.beta2), c2 = V::set1(T(1) - p.beta2);
    const reg inv_bc1 = V::set1(T(1) / p.bias_correction1);
    const reg inv_bc2 = V::set1(T(1) / p.bias_correction2);
    const reg eps = V::set1(p.eps), wd = V::set1(p.weight_decay), lr = V::set1(p.lr);
    std::size_t i = 0;
    for (; i + W <= n; i += W) {
      const reg g = V::load(grad + i);
      const reg mi = V::fma(b1, V::load(m + i), V::mul(c1, g));
      const reg vi = V::fma(b2, V::load(v + i), V::mul(c2, V::mul(g, g)));
      V::store(m + i, mi);
      V::store(v + i, vi);
      const reg denom = V::add(V::sqrt(V::mul(vi, inv_bc2)), eps);
      const reg pi = V::load(param + i);
      const reg upd = V::fma(wd, pi, V::div(V::mul(mi, inv_bc1), denom));
      V::store(param + i, V::sub(pi, V::mul(lr, upd)));
    }
    for (; i < n; ++i) {
      const T g = grad[i];
      m[i] = p.beta1 * m[i] + (T(1) - p.beta1) * g;
      v[i] = p.beta2 * v[i] + (T(1) - p.beta2) * g * g;
      const T m_hat = m[i] / p.bias_correction1;
      const T v_hat = v[i] / p.bias_correction2;
      param[i] -= p.lr * (m_hat / (std::sqrt(v_hat) + p.eps) + p.weight_decay * param[i]);
    }
  }
};

template <class V>
constexpr Table<typename V::T> make_simd_table(Isa isa) {
  using K = SimdKernels<V>;
  return {isa,          &K::dot,           &K::axpy, &K::matmul_nt, &K::matmul_nn_acc,
          &K::matmul_tn_acc, &K::adamw};
}

}  // namespace differ::kernels::detail
