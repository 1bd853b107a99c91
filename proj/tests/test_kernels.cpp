#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstring>
#include <vector>

#include "hywia/kernels.hpp"
#include "hywia/rng.hpp"

using namespace hywia;

namespace {

std::vector<double> random_vec(std::size_t n, Rng& rng) {
    std::vector<double> v(n);
    for (double& x : v) x = rng.normal();
    return v;
}

bool bit_equal(const std::vector<double>& a, const std::vector<double>& b) {
    return a.size() == b.size() &&
           std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

}  // namespace

TEST_CASE("simd variant is available on this machine or scalar is active") {
    CHECK(kernels::scalar_table() != nullptr);
    MESSAGE("active kernels: ", kernels::active_name());
}

TEST_CASE("scalar and simd kernels are bit-identical") {
    const kernels::KernelTable* simd = kernels::simd_table();
    if (simd == nullptr) {
        MESSAGE("no SIMD variant on this machine; skipping equivalence");
        return;
    }
    const kernels::KernelTable* scalar = kernels::scalar_table();
    Rng rng(123);

    SUBCASE("matmul_acc") {
        for (auto [m, k, n] : {std::tuple<int, int, int>{3, 5, 7},
                               {16, 16, 16},
                               {1, 1, 1},
                               {9, 31, 13},
                               {4, 8, 33}}) {
            auto a = random_vec(m * k, rng);
            auto b = random_vec(k * n, rng);
            std::vector<double> c1(m * n, 0.5), c2 = c1;
            scalar->matmul_acc(c1.data(), a.data(), b.data(), m, k, n);
            simd->matmul_acc(c2.data(), a.data(), b.data(), m, k, n);
            CHECK(bit_equal(c1, c2));
        }
    }
    SUBCASE("elementwise") {
        for (std::size_t n : {1u, 4u, 5u, 64u, 1023u}) {
            auto a = random_vec(n, rng);
            auto b = random_vec(n, rng);
            std::vector<double> o1(n), o2(n);
            scalar->add(o1.data(), a.data(), b.data(), n);
            simd->add(o2.data(), a.data(), b.data(), n);
            CHECK(bit_equal(o1, o2));
            scalar->sub(o1.data(), a.data(), b.data(), n);
            simd->sub(o2.data(), a.data(), b.data(), n);
            CHECK(bit_equal(o1, o2));
            scalar->mul(o1.data(), a.data(), b.data(), n);
            simd->mul(o2.data(), a.data(), b.data(), n);
            CHECK(bit_equal(o1, o2));
            scalar->scale(o1.data(), 1.7, a.data(), n);
            simd->scale(o2.data(), 1.7, a.data(), n);
            CHECK(bit_equal(o1, o2));
            std::vector<double> y1 = b, y2 = b;
            scalar->axpy(y1.data(), -0.3, a.data(), n);
            simd->axpy(y2.data(), -0.3, a.data(), n);
            CHECK(bit_equal(y1, y2));
            std::vector<double> s1 = b, s2 = b;
            scalar->acc_sq(s1.data(), a.data(), n);
            simd->acc_sq(s2.data(), a.data(), n);
            CHECK(bit_equal(s1, s2));
        }
    }
    SUBCASE("optimizer updates") {
        const std::size_t n = 257;
        auto g = random_vec(n, rng);
        auto w0 = random_vec(n, rng);
        {
            std::vector<double> w1 = w0, w2 = w0, v1(n, 0.1), v2(n, 0.1);
            scalar->sgd_momentum(w1.data(), v1.data(), g.data(), n, 0.01, 0.9);
            simd->sgd_momentum(w2.data(), v2.data(), g.data(), n, 0.01, 0.9);
            CHECK(bit_equal(w1, w2));
            CHECK(bit_equal(v1, v2));
        }
        {
            std::vector<double> w1 = w0, w2 = w0, m1(n, 0.0), m2(n, 0.0),
                v1(n, 0.0), v2(n, 0.0);
            scalar->adam(w1.data(), m1.data(), v1.data(), g.data(), n, 1e-3,
                         0.9, 0.999, 1e-8);
            simd->adam(w2.data(), m2.data(), v2.data(), g.data(), n, 1e-3, 0.9,
                       0.999, 1e-8);
            CHECK(bit_equal(w1, w2));
            CHECK(bit_equal(m1, m2));
            CHECK(bit_equal(v1, v2));
        }
    }
}

TEST_CASE("matmul_acc matches a triple-loop reference") {
    Rng rng(99);
    const std::size_t m = 3, k = 4, n = 2;
    auto a = random_vec(m * k, rng);
    auto b = random_vec(k * n, rng);
    std::vector<double> c(m * n, 0.0);
    kernels::active().matmul_acc(c.data(), a.data(), b.data(), m, k, n);
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            double ref = 0.0;
            for (std::size_t p = 0; p < k; ++p) ref += a[i * k + p] * b[p * n + j];
            CHECK(c[i * n + j] == doctest::Approx(ref).epsilon(1e-12));
        }
    }
}
