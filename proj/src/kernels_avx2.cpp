// AVX2 kernels. Compiled with -mavx2 in this translation unit only; the
// dispatcher checks for CPU support before handing out the table.
//
// Vectorization is over independent output elements only (the j loop of the
// matmul, plain element maps) and uses mul+add instead of fma, so every
// element sees the same operations in the same order as the scalar kernel.
#include "hywia/kernels.hpp"

#if defined(__x86_64__) || defined(_M_X64) || defined(__i386__)
#define HYWIA_HAVE_AVX2_TU 1
#include <immintrin.h>

#include <cmath>
#endif

namespace hywia::kernels {

#if defined(HYWIA_HAVE_AVX2_TU)
namespace {

void matmul_acc_avx2(double* c, const double* a, const double* b,
                     std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        double* crow = c + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = arow[p];
            const double* brow = b + p * n;
            const __m256d avv = _mm256_set1_pd(av);
            std::size_t j = 0;
            for (; j + 8 <= n; j += 8) {
                __m256d c0 = _mm256_loadu_pd(crow + j);
                __m256d c1 = _mm256_loadu_pd(crow + j + 4);
                __m256d b0 = _mm256_loadu_pd(brow + j);
                __m256d b1 = _mm256_loadu_pd(brow + j + 4);
                c0 = _mm256_add_pd(c0, _mm256_mul_pd(avv, b0));
                c1 = _mm256_add_pd(c1, _mm256_mul_pd(avv, b1));
                _mm256_storeu_pd(crow + j, c0);
                _mm256_storeu_pd(crow + j + 4, c1);
            }
            for (; j + 4 <= n; j += 4) {
                __m256d c0 = _mm256_loadu_pd(crow + j);
                __m256d b0 = _mm256_loadu_pd(brow + j);
                _mm256_storeu_pd(crow + j, _mm256_add_pd(c0, _mm256_mul_pd(avv, b0)));
            }
            for (; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

void axpy_avx2(double* y, double alpha, const double* x, std::size_t n) {
    const __m256d av = _mm256_set1_pd(alpha);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        __m256d yv = _mm256_loadu_pd(y + i);
        __m256d xv = _mm256_loadu_pd(x + i);
        _mm256_storeu_pd(y + i, _mm256_add_pd(yv, _mm256_mul_pd(av, xv)));
    }
    for (; i < n; ++i) y[i] += alpha * x[i];
}

void add_avx2(double* out, const double* a, const double* b, std::size_t n) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        _mm256_storeu_pd(out + i, _mm256_add_pd(_mm256_loadu_pd(a + i),
                                                _mm256_loadu_pd(b + i)));
    }
    for (; i < n; ++i) out[i] = a[i] + b[i];
}

void sub_avx2(double* out, const double* a, const double* b, std::size_t n) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        _mm256_storeu_pd(out + i, _mm256_sub_pd(_mm256_loadu_pd(a + i),
                                                _mm256_loadu_pd(b + i)));
    }
    for (; i < n; ++i) out[i] = a[i] - b[i];
}

void mul_avx2(double* out, const double* a, const double* b, std::size_t n) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        _mm256_storeu_pd(out + i, _mm256_mul_pd(_mm256_loadu_pd(a + i),
                                                _mm256_loadu_pd(b + i)));
    }
    for (; i < n; ++i) out[i] = a[i] * b[i];
}

void scale_avx2(double* out, double alpha, const double* x, std::size_t n) {
    const __m256d av = _mm256_set1_pd(alpha);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        _mm256_storeu_pd(out + i, _mm256_mul_pd(av, _mm256_loadu_pd(x + i)));
    }
    for (; i < n; ++i) out[i] = alpha * x[i];
}

void acc_sq_avx2(double* acc, const double* g, std::size_t n) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        __m256d gv = _mm256_loadu_pd(g + i);
        __m256d av = _mm256_loadu_pd(acc + i);
        _mm256_storeu_pd(acc + i, _mm256_add_pd(av, _mm256_mul_pd(gv, gv)));
    }
    for (; i < n; ++i) acc[i] += g[i] * g[i];
}

void sgd_momentum_avx2(double* w, double* v, const double* g, std::size_t n,
                       double lr, double mu) {
    const __m256d muv = _mm256_set1_pd(mu);
    const __m256d lrv = _mm256_set1_pd(lr);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        __m256d vv = _mm256_loadu_pd(v + i);
        vv = _mm256_add_pd(_mm256_mul_pd(muv, vv), _mm256_loadu_pd(g + i));
        _mm256_storeu_pd(v + i, vv);
        __m256d wv = _mm256_loadu_pd(w + i);
        _mm256_storeu_pd(w + i, _mm256_sub_pd(wv, _mm256_mul_pd(lrv, vv)));
    }
    for (; i < n; ++i) {
        v[i] = mu * v[i] + g[i];
        w[i] -= lr * v[i];
    }
}

void adam_avx2(double* w, double* m, double* v, const double* g, std::size_t n,
               double lr_t, double beta1, double beta2, double eps) {
    const __m256d b1 = _mm256_set1_pd(beta1);
    const __m256d b2 = _mm256_set1_pd(beta2);
    const __m256d omb1 = _mm256_set1_pd(1.0 - beta1);
    const __m256d omb2 = _mm256_set1_pd(1.0 - beta2);
    const __m256d lrv = _mm256_set1_pd(lr_t);
    const __m256d epsv = _mm256_set1_pd(eps);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        __m256d gv = _mm256_loadu_pd(g + i);
        __m256d mv = _mm256_add_pd(_mm256_mul_pd(b1, _mm256_loadu_pd(m + i)),
                                   _mm256_mul_pd(omb1, gv));
        __m256d vv = _mm256_add_pd(_mm256_mul_pd(b2, _mm256_loadu_pd(v + i)),
                                   _mm256_mul_pd(omb2, _mm256_mul_pd(gv, gv)));
        _mm256_storeu_pd(m + i, mv);
        _mm256_storeu_pd(v + i, vv);
        __m256d denom = _mm256_add_pd(_mm256_sqrt_pd(vv), epsv);
        __m256d step = _mm256_div_pd(_mm256_mul_pd(lrv, mv), denom);
        _mm256_storeu_pd(w + i, _mm256_sub_pd(_mm256_loadu_pd(w + i), step));
    }
    for (; i < n; ++i) {
        m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
        v[i] = beta2 * v[i] + (1.0 - beta2) * (g[i] * g[i]);
        w[i] -= lr_t * m[i] / (std::sqrt(v[i]) + eps);
    }
}

}  // namespace

const KernelTable kAvx2Table = {
    matmul_acc_avx2, axpy_avx2,  add_avx2,
    sub_avx2,        mul_avx2,   scale_avx2,
    acc_sq_avx2,     sgd_momentum_avx2, adam_avx2,
    "avx2",
};
const bool kHaveAvx2Build = true;
#else
const KernelTable kAvx2Table = {};
const bool kHaveAvx2Build = false;
#endif

}  // namespace hywia::kernels
