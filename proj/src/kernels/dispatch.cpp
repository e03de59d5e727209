#include "lremap/kernels.hpp"

#include <atomic>
#include <cstdlib>
#include <string>

namespace lremap::kernels {

#if defined(LREMAP_HAVE_AVX2)
const KernelTable& avx2_table_unchecked();
#endif
#if defined(LREMAP_HAVE_NEON)
const KernelTable& neon_table_unchecked();
#endif

std::string_view isa_name(Isa isa) {
    switch (isa) {
        case Isa::scalar: return "scalar";
        case Isa::avx2: return "avx2";
        case Isa::neon: return "neon";
    }
    return "unknown";
}

const KernelTable* avx2_table() {
#if defined(LREMAP_HAVE_AVX2)
    static const bool ok = __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
    return ok ? &avx2_table_unchecked() : nullptr;
#else
    return nullptr;
#endif
}

const KernelTable* neon_table() {
#if defined(LREMAP_HAVE_NEON)
    return &neon_table_unchecked();
#else
    return nullptr;
#endif
}

namespace {

const KernelTable* initial_table() {
    if (const char* env = std::getenv("LATENT_REMAP_SIMD")) {
        const std::string want(env);
        if (want == "scalar") return &scalar_table();
        if (want == "avx2" && avx2_table()) return avx2_table();
        if (want == "neon" && neon_table()) return neon_table();
    }
    if (const KernelTable* t = avx2_table()) return t;
    if (const KernelTable* t = neon_table()) return t;
    return &scalar_table();
}

std::atomic<const KernelTable*>& current() {
    static std::atomic<const KernelTable*> table{initial_table()};
    return table;
}

}  // namespace

const KernelTable& active() { return *current().load(std::memory_order_acquire); }

bool select(Isa isa) {
    const KernelTable* t = nullptr;
    switch (isa) {
        case Isa::scalar: t = &scalar_table(); break;
        case Isa::avx2: t = avx2_table(); break;
        case Isa::neon: t = neon_table(); break;
    }
    if (!t) return false;
    current().store(t, std::memory_order_release);
    return true;
}

}  // namespace lremap::kernels
