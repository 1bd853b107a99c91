#include "hywia/kernels.hpp"

#include <cstdlib>
#include <cstring>

namespace hywia::kernels {

namespace {

bool cpu_has_avx2() {
#if defined(__x86_64__) || defined(_M_X64) || defined(__i386__)
    return __builtin_cpu_supports("avx2");
#else
    return false;
#endif
}

const KernelTable* pick() {
    const char* env = std::getenv("HYWIA_KERNELS");
    if (env != nullptr) {
        if (std::strcmp(env, "scalar") == 0) return &kScalarTable;
        if (std::strcmp(env, "avx2") == 0 && kHaveAvx2Build && cpu_has_avx2())
            return &kAvx2Table;
        if (std::strcmp(env, "neon") == 0 && kHaveNeonBuild) return &kNeonTable;
        // unknown or unavailable value falls through to auto
    }
    if (kHaveAvx2Build && cpu_has_avx2()) return &kAvx2Table;
    if (kHaveNeonBuild) return &kNeonTable;
    return &kScalarTable;
}

}  // namespace

const KernelTable& active() {
    static const KernelTable* table = pick();
    return *table;
}

const KernelTable* scalar_table() { return &kScalarTable; }

const KernelTable* simd_table() {
    if (kHaveAvx2Build && cpu_has_avx2()) return &kAvx2Table;
    if (kHaveNeonBuild) return &kNeonTable;
    return nullptr;
}

std::string active_name() { return active().name; }

}  // namespace hywia::kernels
