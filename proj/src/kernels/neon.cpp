// aarch64 only. Advanced SIMD is mandatory there, so no runtime probe is needed.

#include "lremap/kernels.hpp"

#include <arm_neon.h>

#include <cmath>

namespace lremap::kernels {
namespace {

double dot_neon(const double* a, const double* b, std::size_t n) {
    float64x2_t acc0 = vdupq_n_f64(0.0);
    float64x2_t acc1 = vdupq_n_f64(0.0);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        acc0 = vfmaq_f64(acc0, vld1q_f64(a + i), vld1q_f64(b + i));
        acc1 = vfmaq_f64(acc1, vld1q_f64(a + i + 2), vld1q_f64(b + i + 2));
    }
    double s = vaddvq_f64(vaddq_f64(acc0, acc1));
    for (; i < n; ++i) s += a[i] * b[i];
    return s;
}

double sq_dist_neon(const double* a, const double* b, std::size_t n) {
    float64x2_t acc0 = vdupq_n_f64(0.0);
    float64x2_t acc1 = vdupq_n_f64(0.0);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const float64x2_t d0 = vsubq_f64(vld1q_f64(a + i), vld1q_f64(b + i));
        const float64x2_t d1 = vsubq_f64(vld1q_f64(a + i + 2), vld1q_f64(b + i + 2));
        acc0 = vfmaq_f64(acc0, d0, d0);
        acc1 = vfmaq_f64(acc1, d1, d1);
    }
    double s = vaddvq_f64(vaddq_f64(acc0, acc1));
    for (; i < n; ++i) {
        const double t = a[i] - b[i];
        s += t * t;
    }
    return s;
}

void axpy_neon(double alpha, const double* x, double* y, std::size_t n) {
    const float64x2_t va = vdupq_n_f64(alpha);
    std::size_t i = 0;
    for (; i + 2 <= n; i += 2) vst1q_f64(y + i, vfmaq_f64(vld1q_f64(y + i), va, vld1q_f64(x + i)));
    for (; i < n; ++i) y[i] += alpha * x[i];
}

void gemv_neon(const double* w, std::size_t rows, std::size_t cols, const double* x,
               const double* b, double* y) {
    for (std::size_t r = 0; r < rows; ++r) {
        const double s = dot_neon(w + r * cols, x, cols);
        y[r] = b ? s + b[r] : s;
    }
}

void gemv_t_acc_neon(const double* w, std::size_t rows, std::size_t cols, const double* u,
                     double* dx) {
    for (std::size_t r = 0; r < rows; ++r) axpy_neon(u[r], w + r * cols, dx, cols);
}

void ger_acc_neon(double* dw, std::size_t rows, std::size_t cols, const double* u,
                  const double* x) {
    for (std::size_t r = 0; r < rows; ++r) axpy_neon(u[r], x, dw + r * cols, cols);
}

void adam_update_neon(double* p, const double* g, double* m, double* v, std::size_t n,
                      double lr, double beta1, double beta2, double eps, double bc1,
                      double bc2) {
    const float64x2_t b1 = vdupq_n_f64(beta1);
    const float64x2_t b2 = vdupq_n_f64(beta2);
    const float64x2_t c1 = vdupq_n_f64(1.0 - beta1);
    const float64x2_t c2 = vdupq_n_f64(1.0 - beta2);
    const float64x2_t vbc1 = vdupq_n_f64(bc1);
    const float64x2_t vbc2 = vdupq_n_f64(bc2);
    const float64x2_t vlr = vdupq_n_f64(lr);
    const float64x2_t veps = vdupq_n_f64(eps);
    std::size_t i = 0;
    for (; i + 2 <= n; i += 2) {
        const float64x2_t gi = vld1q_f64(g + i);
        const float64x2_t mi = vaddq_f64(vmulq_f64(b1, vld1q_f64(m + i)), vmulq_f64(c1, gi));
        const float64x2_t vi =
            vaddq_f64(vmulq_f64(b2, vld1q_f64(v + i)), vmulq_f64(c2, vmulq_f64(gi, gi)));
        vst1q_f64(m + i, mi);
        vst1q_f64(v + i, vi);
        const float64x2_t denom = vaddq_f64(vsqrtq_f64(vdivq_f64(vi, vbc2)), veps);
        const float64x2_t step = vdivq_f64(vmulq_f64(vlr, vdivq_f64(mi, vbc1)), denom);
        vst1q_f64(p + i, vsubq_f64(vld1q_f64(p + i), step));
    }
    for (; i < n; ++i) {
        m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
        v[i] = beta2 * v[i] + (1.0 - beta2) * (g[i] * g[i]);
        p[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps);
    }
}

}  // namespace

const KernelTable& neon_table_unchecked() {
    static const KernelTable table{
        Isa::neon, dot_neon,       sq_dist_neon,     axpy_neon,
        gemv_neon, gemv_t_acc_neon, ger_acc_neon, adam_update_neon,
    };
    return table;
}

}  // namespace lremap::kernels
