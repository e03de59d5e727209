#include "lremap/kernels.hpp"

#include <cmath>

namespace lremap::kernels {
namespace {

double dot_scalar(const double* a, const double* b, std::size_t n) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
    return s;
}

double sq_dist_scalar(const double* a, const double* b, std::size_t n) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double t = a[i] - b[i];
        s += t * t;
    }
    return s;
}

void axpy_scalar(double alpha, const double* x, double* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void gemv_scalar(const double* w, std::size_t rows, std::size_t cols, const double* x,
                 const double* b, double* y) {
    for (std::size_t r = 0; r < rows; ++r) {
        const double* row = w + r * cols;
        double s = 0.0;
        for (std::size_t c = 0; c < cols; ++c) s += row[c] * x[c];
        y[r] = b ? s + b[r] : s;
    }
}

void gemv_t_acc_scalar(const double* w, std::size_t rows, std::size_t cols, const double* u,
                       double* dx) {
    for (std::size_t r = 0; r < rows; ++r) {
        const double ur = u[r];
        const double* row = w + r * cols;
        for (std::size_t c = 0; c < cols; ++c) dx[c] += ur * row[c];
    }
}

void ger_acc_scalar(double* dw, std::size_t rows, std::size_t cols, const double* u,
                    const double* x) {
    for (std::size_t r = 0; r < rows; ++r) {
        const double ur = u[r];
        double* row = dw + r * cols;
        for (std::size_t c = 0; c < cols; ++c) row[c] += ur * x[c];
    }
}

void adam_update_scalar(double* p, const double* g, double* m, double* v, std::size_t n,
                        double lr, double beta1, double beta2, double eps, double bc1,
                        double bc2) {
    for (std::size_t i = 0; i < n; ++i) {
        m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
        v[i] = beta2 * v[i] + (1.0 - beta2) * (g[i] * g[i]);
        const double mhat = m[i] / bc1;
        const double vhat = v[i] / bc2;
        p[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
}

}  // namespace

const KernelTable& scalar_table() {
    static const KernelTable table{
        Isa::scalar,     dot_scalar,     sq_dist_scalar,     axpy_scalar,
        gemv_scalar,     gemv_t_acc_scalar, ger_acc_scalar, adam_update_scalar,
    };
    return table;
}

}  // namespace lremap::kernels
