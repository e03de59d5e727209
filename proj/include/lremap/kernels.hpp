#pragma once

// Dense f64 inner-loop kernels.
//
// Every kernel has a scalar reference implementation. Vector variants (AVX2+FMA
// on x86-64, NEON on aarch64) are compiled into separate translation units and
// picked once at startup from the CPU feature bits. The environment variable
// LATENT_REMAP_SIMD=scalar|avx2|neon overrides the choice.
//
// Matrices are row-major, `rows x cols`, contiguous.

#include <cstddef>
#include <string_view>

namespace lremap::kernels {

enum class Isa { scalar, avx2, neon };

std::string_view isa_name(Isa isa);

struct KernelTable {
    Isa isa;

    double (*dot)(const double* a, const double* b, std::size_t n);

    // sum_i (a_i - b_i)^2
    double (*sq_dist)(const double* a, const double* b, std::size_t n);

    // y += alpha * x
    void (*axpy)(double alpha, const double* x, double* y, std::size_t n);

    // y = W x + b   (b may be null)
    void (*gemv)(const double* w, std::size_t rows, std::size_t cols, const double* x,
                 const double* b, double* y);

    // dx += W^T u
    void (*gemv_t_acc)(const double* w, std::size_t rows, std::size_t cols, const double* u,
                       double* dx);

    // dW += u x^T
    void (*ger_acc)(double* dw, std::size_t rows, std::size_t cols, const double* u,
                    const double* x);

    // One Adam step over n entries. bc1/bc2 are the bias-correction denominators
    // (1 - beta^t).
    void (*adam_update)(double* p, const double* g, double* m, double* v, std::size_t n,
                        double lr, double beta1, double beta2, double eps, double bc1,
                        double bc2);
};

const KernelTable& scalar_table();

// Null when the variant is not compiled in or the CPU lacks the feature.
const KernelTable* avx2_table();
const KernelTable* neon_table();

// Currently dispatched table.
const KernelTable& active();

// Force a variant. Returns false (and leaves the selection unchanged) when the
// variant is unavailable.
bool select(Isa isa);

}  // namespace lremap::kernels
