// Dispatch table for the fp64 inner loops. A scalar reference implementation
// always exists; AVX2 (x86) and NEON (aarch64) variants are selected at
// runtime. Every vectorized kernel keeps the exact per-element accumulation
// order of its scalar twin and avoids fused multiply-add, so all variants are
// bit-identical on the same inputs.
#pragma once

#include <cstddef>
#include <string>

namespace hywia::kernels {

struct KernelTable {
    // c[m x n] += a[m x k] * b[k x n], row-major, i-k-j loop order.
    void (*matmul_acc)(double* c, const double* a, const double* b,
                       std::size_t m, std::size_t k, std::size_t n);
    // y[i] += alpha * x[i]
    void (*axpy)(double* y, double alpha, const double* x, std::size_t n);
    // out[i] = a[i] + b[i] / a[i] - b[i] / a[i] * b[i]
    void (*add)(double* out, const double* a, const double* b, std::size_t n);
    void (*sub)(double* out, const double* a, const double* b, std::size_t n);
    void (*mul)(double* out, const double* a, const double* b, std::size_t n);
    // out[i] = alpha * x[i]
    void (*scale)(double* out, double alpha, const double* x, std::size_t n);
    // acc[i] += g[i] * g[i]
    void (*acc_sq)(double* acc, const double* g, std::size_t n);
    // SGD with momentum: v = mu*v + g; w -= lr*v
    void (*sgd_momentum)(double* w, double* v, const double* g, std::size_t n,
                         double lr, double mu);
    // Adam step with bias correction folded into lr_t.
    void (*adam)(double* w, double* m, double* v, const double* g,
                 std::size_t n, double lr_t, double beta1, double beta2,
                 double eps);
    const char* name;
};

// Active table. Chosen once at startup from CPU features; the HYWIA_KERNELS
// environment variable ("scalar", "avx2", "neon", "auto") overrides.
const KernelTable& active();

// Named tables for equivalence tests. Returns nullptr when the variant is not
// compiled in or not supported by this CPU.
const KernelTable* scalar_table();
const KernelTable* simd_table();

// Name of the variant in use ("scalar", "avx2", "neon").
std::string active_name();

// Variant tables (internal; defined in their own translation units).
extern const KernelTable kScalarTable;
extern const KernelTable kAvx2Table;
extern const bool kHaveAvx2Build;
extern const KernelTable kNeonTable;
extern const bool kHaveNeonBuild;

}  // namespace hywia::kernels
