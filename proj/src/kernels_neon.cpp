// NEON kernels (aarch64). Same ordering contract as the AVX2 variant:
// vectorize only independent elements, mul+add without fusing.
#include "hywia/kernels.hpp"

#if defined(__aarch64__) || defined(__ARM_NEON)
#define HYWIA_HAVE_NEON_TU 1
#include <arm_neon.h>

#include <cmath>
#endif

namespace hywia::kernels {

#if defined(HYWIA_HAVE_NEON_TU)
namespace {

void matmul_acc_neon(double* c, const double* a, const double* b,
                     std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        double* crow = c + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = arow[p];
            const double* brow = b + p * n;
            const float64x2_t avv = vdupq_n_f64(av);
            std::size_t j = 0;
            for (; j + 2 <= n; j += 2) {
                float64x2_t cv = vld1q_f64(crow + j);
                float64x2_t bv = vld1q_f64(brow + j);
                vst1q_f64(crow + j, vaddq_f64(cv, vmulq_f64(avv, bv)));
            }
            for (; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

void axpy_neon(double* y, double alpha, const double* x, std::size_t n) {
    const float64x2_t av = vdupq_n_f64(alpha);
    std::size_t i = 0;
    for (; i + 2 <= n; i += 2) {
        float64x2_t yv = vld1q_f64(y + i);
        float64x2_t xv = vld1q_f64(x + i);
        vst1q_f64(y + i, vaddq_f64(yv, vmulq_f64(av, xv)));
    }
    for (; i < n; ++i) y[i] += alpha * x[i];
}

void add_neon(double* out, const double* a, const double* b, std::size_t n) {
    std::size_t i = 0;
    for (; i + 2 <= n; i += 2)
        vst1q_f64(out + i, vaddq_f64(vld1q_f64(a + i), vld1q_f64(b + i)));
    for (; i < n; ++i) out[i] = a[i] + b[i];
}

void sub_neon(double* out, const double* a, const double* b, std::size_t n) {
    std::size_t i = 0;
    for (; i + 2 <= n; i += 2)
        vst1q_f64(out + i, vsubq_f64(vld1q_f64(a + i), vld1q_f64(b + i)));
    for (; i < n; ++i) out[i] = a[i] - b[i];
}

void mul_neon(double* out, const double* a, const double* b, std::size_t n) {
    std::size_t i = 0;
    for (; i + 2 <= n; i += 2)
        vst1q_f64(out + i, vmulq_f64(vld1q_f64(a + i), vld1q_f64(b + i)));
    for (; i < n; ++i) out[i] = a[i] * b[i];
}

void scale_neon(double* out, double alpha, const double* x, std::size_t n) {
    const float64x2_t av = vdupq_n_f64(alpha);
    std::size_t i = 0;
    for (; i + 2 <= n; i += 2)
        vst1q_f64(out + i, vmulq_f64(av, vld1q_f64(x + i)));
    for (; i < n; ++i) out[i] = alpha * x[i];
}

void acc_sq_neon(double* acc, const double* g, std::size_t n) {
    std::size_t i = 0;
    for (; i + 2 <= n; i += 2) {
        float64x2_t gv = vld1q_f64(g + i);
        float64x2_t av = vld1q_f64(acc + i);
        vst1q_f64(acc + i, vaddq_f64(av, vmulq_f64(gv, gv)));
    }
    for (; i < n; ++i) acc[i] += g[i] * g[i];
}

void sgd_momentum_neon(double* w, double* v, const double* g, std::size_t n,
                       double lr, double mu) {
    for (std::size_t i = 0; i < n; ++i) {
        v[i] = mu * v[i] + g[i];
        w[i] -= lr * v[i];
    }
}

void adam_neon(double* w, double* m, double* v, const double* g, std::size_t n,
               double lr_t, double beta1, double beta2, double eps) {
    for (std::size_t i = 0; i < n; ++i) {
        m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
        v[i] = beta2 * v[i] + (1.0 - beta2) * (g[i] * g[i]);
        w[i] -= lr_t * m[i] / (std::sqrt(v[i]) + eps);
    }
}

}  // namespace

const KernelTable kNeonTable = {
    matmul_acc_neon, axpy_neon,  add_neon,
    sub_neon,        mul_neon,   scale_neon,
    acc_sq_neon,     sgd_momentum_neon, adam_neon,
    "neon",
};
const bool kHaveNeonBuild = true;
#else
const KernelTable kNeonTable = {};
const bool kHaveNeonBuild = false;
#endif

}  // namespace hywia::kernels
