// Scalar reference kernels. These define the numeric behaviour; the SIMD
// variants must match them bit-for-bit.
#include "hywia/kernels.hpp"

#include <cmath>

namespace hywia::kernels {
namespace {

void matmul_acc_scalar(double* c, const double* a, const double* b,
                       std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        double* crow = c + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = arow[p];
            const double* brow = b + p * n;
            for (std::size_t j = 0; j < n; ++j) {
                crow[j] += av * brow[j];
            }
        }
    }
}

void axpy_scalar(double* y, double alpha, const double* x, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void add_scalar(double* out, const double* a, const double* b, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = a[i] + b[i];
}

void sub_scalar(double* out, const double* a, const double* b, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = a[i] - b[i];
}

void mul_scalar(double* out, const double* a, const double* b, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
}

void scale_scalar(double* out, double alpha, const double* x, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = alpha * x[i];
}

void acc_sq_scalar(double* acc, const double* g, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) acc[i] += g[i] * g[i];
}

void sgd_momentum_scalar(double* w, double* v, const double* g, std::size_t n,
                         double lr, double mu) {
    for (std::size_t i = 0; i < n; ++i) {
        v[i] = mu * v[i] + g[i];
        w[i] -= lr * v[i];
    }
}

void adam_scalar(double* w, double* m, double* v, const double* g,
                 std::size_t n, double lr_t, double beta1, double beta2,
                 double eps) {
    for (std::size_t i = 0; i < n; ++i) {
        m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
        v[i] = beta2 * v[i] + (1.0 - beta2) * (g[i] * g[i]);
        w[i] -= lr_t * m[i] / (std::sqrt(v[i]) + eps);
    }
}

}  // namespace

const KernelTable kScalarTable = {
    matmul_acc_scalar, axpy_scalar,  add_scalar,
    sub_scalar,        mul_scalar,   scale_scalar,
    acc_sq_scalar,     sgd_momentum_scalar, adam_scalar,
    "scalar",
};

}  // namespace hywia::kernels
