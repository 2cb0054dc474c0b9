#include <cmath>
#include <vector>

#include "differ/common.hpp"
#include "differ/kernels.hpp"
#include "doctest.h"

using namespace differ;
using namespace differ::kernels;

namespace {

template <class T>
std::vector<T> random_vec(std::size_t n, Rng& rng) {
  std::vector<T> v(n);
  for (auto& x : v) x = static_cast<T>(rng.uniform() * 2.0 - 1.0);
  return v;
}

template <class T>
double max_rel_diff(const std::vector<T>& a, const std::vector<T>& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i]));
    const double s = std::max(1.0, std::abs(static_cast<double>(b[i])));
    worst = std::max(worst, d / s);
  }
  return worst;
}

std::vector<Isa> simd_isas() {
  std::vector<Isa> out;
  for (Isa isa : {Isa::avx2, Isa::neon}) {
    if (isa_supported(isa)) out.push_back(isa);
  }
  return out;
}

// Sizes straddle every blocking boundary of the SIMD paths.
constexpr std::size_t kSizes[] = {1, 2, 3, 5, 7, 8, 9, 15, 16, 17, 31, 33, 64, 67};

template <class T>
void check_against(const Table<T>& ref, const Table<T>& simd, double tol) {
  Rng rng(11);
  for (std::size_t n : kSizes) {
    auto a = random_vec<T>(n, rng);
    auto b = random_vec<T>(n, rng);
    const double d = std::abs(static_cast<double>(ref.dot(a.data(), b.data(), n)) -
                              static_cast<double>(simd.dot(a.data(), b.data(), n)));
    CHECK(d <= tol * static_cast<double>(n));

    auto y1 = random_vec<T>(n, rng);
    auto y2 = y1;
    ref.axpy(T(0.3), a.data(), y1.data(), n);
    simd.axpy(T(0.3), a.data(), y2.data(), n);
    CHECK(max_rel_diff(y2, y1) <= tol);
  }
  for (std::size_t rows : {1, 3, 4, 5, 9}) {
    for (std::size_t m : {1, 2, 5, 8, 13}) {
      for (std::size_t k : {1, 4, 7, 8, 17, 33}) {
        CAPTURE(rows);
        CAPTURE(m);
        CAPTURE(k);
        auto a = random_vec<T>(rows * k, rng);
        auto b = random_vec<T>(m * k, rng);
        auto bias = random_vec<T>(m, rng);
        std::vector<T> o1(rows * m), o2(rows * m);
        ref.matmul_nt(o1.data(), a.data(), b.data(), bias.data(), rows, m, k);
        simd.matmul_nt(o2.data(), a.data(), b.data(), bias.data(), rows, m, k);
        CHECK(max_rel_diff(o2, o1) <= tol * static_cast<double>(k));
        ref.matmul_nt(o1.data(), a.data(), b.data(), nullptr, rows, m, k);
        simd.matmul_nt(o2.data(), a.data(), b.data(), nullptr, rows, m, k);
        CHECK(max_rel_diff(o2, o1) <= tol * static_cast<double>(k));

        // nn: out[rows x k] += a[rows x m] b[m x k]
        auto an = random_vec<T>(rows * m, rng);
        auto acc1 = random_vec<T>(rows * k, rng);
        auto acc2 = acc1;
        ref.matmul_nn_acc(acc1.data(), an.data(), b.data(), rows, m, k);
        simd.matmul_nn_acc(acc2.data(), an.data(), b.data(), rows, m, k);
        CHECK(max_rel_diff(acc2, acc1) <= tol * static_cast<double>(m));

        // tn: out[m x k] += a[rows x m]^T b[rows x k]
        auto bt = random_vec<T>(rows * k, rng);
        auto t1 = random_vec<T>(m * k, rng);
        auto t2 = t1;
        ref.matmul_tn_acc(t1.data(), an.data(), bt.data(), rows, m, k);
        simd.matmul_tn_acc(t2.data(), an.data(), bt.data(), rows, m, k);
        CHECK(max_rel_diff(t2, t1) <= tol * static_cast<double>(rows));
      }
    }
  }
  for (std::size_t n : kSizes) {
    auto p1 = random_vec<T>(n, rng);
    auto g = random_vec<T>(n, rng);
    auto m1 = random_vec<T>(n, rng);
    auto v1 = random_vec<T>(n, rng);
    for (auto& x : v1) x = std::abs(x);
    auto p2 = p1, m2 = m1, v2 = v1;
    AdamWParams<T> hp{T(1e-2), T(0.9), T(0.999), T(1e-8), T(0.01), T(0.271), T(0.00399)};
    ref.adamw(p1.data(), g.data(), m1.data(), v1.data(), n, hp);
    simd.adamw(p2.data(), g.data(), m2.data(), v2.data(), n, hp);
    CHECK(max_rel_diff(p2, p1) <= tol);
    CHECK(max_rel_diff(m2, m1) <= tol);
    CHECK(max_rel_diff(v2, v1) <= tol);
  }
}

}  // namespace

TEST_CASE("scalar matmuls agree with a naive triple loop") {
  Rng rng(3);
  const std::size_t rows = 5, m = 6, k = 7;
  auto a = random_vec<double>(rows * k, rng);
  auto b = random_vec<double>(m * k, rng);
  auto bias = random_vec<double>(m, rng);
  const auto& t = table<double>(Isa::scalar);

  std::vector<double> out(rows * m);
  t.matmul_nt(out.data(), a.data(), b.data(), bias.data(), rows, m, k);
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      double s = bias[j];
      for (std::size_t p = 0; p < k; ++p) s += a[i * k + p] * b[j * k + p];
      CHECK(out[i * m + j] == doctest::Approx(s).epsilon(1e-12));
    }
  }

  // nn with a[rows x m], b[m x k]
  auto an = random_vec<double>(rows * m, rng);
  auto bn = random_vec<double>(m * k, rng);
  std::vector<double> acc(rows * k, 1.0);
  t.matmul_nn_acc(acc.data(), an.data(), bn.data(), rows, m, k);
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < k; ++j) {
      double s = 1.0;
      for (std::size_t p = 0; p < m; ++p) s += an[i * m + p] * bn[p * k + j];
      CHECK(acc[i * k + j] == doctest::Approx(s).epsilon(1e-12));
    }
  }

  // tn with a[rows x m], b[rows x k]
  auto bt = random_vec<double>(rows * k, rng);
  std::vector<double> tacc(m * k, -1.0);
  t.matmul_tn_acc(tacc.data(), an.data(), bt.data(), rows, m, k);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < k; ++j) {
      double s = -1.0;
      for (std::size_t p = 0; p < rows; ++p) s += an[p * m + i] * bt[p * k + j];
      CHECK(tacc[i * k + j] == doctest::Approx(s).epsilon(1e-12));
    }
  }
}

TEST_CASE("scalar adamw follows the closed-form first step") {
  // First step with zero moments: m_hat = g, v_hat = g^2, so the update is
  // lr * (sign(g) * |g| / (|g| + eps) + wd * p).
  double p = 0.5, m = 0.0, v = 0.0;
  const double g = -0.2;
  AdamWParams<double> hp{1e-3, 0.9, 0.999, 1e-8, 0.1, 1.0 - 0.9, 1.0 - 0.999};
  table<double>(Isa::scalar).adamw(&p, &g, &m, &v, 1, hp);
  const double expect = 0.5 - 1e-3 * (g / (std::abs(g) + 1e-8) + 0.1 * 0.5);
  CHECK(p == doctest::Approx(expect).epsilon(1e-14));
}

TEST_CASE("SIMD kernels match the scalar reference") {
  const auto isas = simd_isas();
  if (isas.empty()) {
    MESSAGE("no SIMD variant available on this machine; only scalar kernels exercised");
  }
  for (Isa isa : isas) {
    CAPTURE(to_string(isa));
    check_against(table<float>(Isa::scalar), table<float>(isa), 2e-6);
    check_against(table<double>(Isa::scalar), table<double>(isa), 1e-14);
  }
}

TEST_CASE("dispatch honours set_active_isa") {
  const Isa before = active_isa();
  set_active_isa(Isa::scalar);
  CHECK(active<float>().isa == Isa::scalar);
  set_active_isa(best_isa());
  CHECK(active<float>().isa == best_isa());
  if (!isa_supported(Isa::neon)) CHECK_THROWS_AS(set_active_isa(Isa::neon), std::invalid_argument);
  set_active_isa(before);
}
